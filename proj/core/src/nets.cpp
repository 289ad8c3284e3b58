#include "etp/nets.hpp"

#include <cctype>
#include <cmath>
#include <utility>

namespace etp {

namespace {

// He-uniform: U(-sqrt(6/fan_in), sqrt(6/fan_in)), elements in row-major order.
Tensor he_uniform(const Shape& shape, int fan_in, Rng& rng) {
    const double limit = std::sqrt(6.0 / fan_in);
    Tensor t = Tensor::zeros(shape, true);
    for (double& v : t.raw_values()) v = rng.uniform(-limit, limit);
    t.quantize_f32();
    return t;
}

// Affine-layer init: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
Tensor affine_uniform(const Shape& shape, int fan_in, Rng& rng) {
    const double limit = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Tensor t = Tensor::zeros(shape, true);
    for (double& v : t.raw_values()) v = rng.uniform(-limit, limit);
    t.quantize_f32();
    return t;
}

ConvBn make_conv_bn(int cin, int cout, int k, Rng& rng, bool zero_gamma) {
    ConvBn cb;
    cb.weight = he_uniform({cout, cin, k}, cin * k, rng);
    cb.gamma = Tensor::full({cout}, zero_gamma ? 0.0 : 1.0, true);
    cb.beta = Tensor::zeros({cout}, true);
    cb.stats.running_mean = Tensor::zeros({cout});
    cb.stats.running_var = Tensor::full({cout}, 1.0);
    return cb;
}

void register_conv_bn(ConvBn& cb, ParamStore& params, const std::string& prefix) {
    params.add(prefix + ".w", cb.weight);
    params.add(prefix + ".gamma", cb.gamma);
    params.add(prefix + ".beta", cb.beta);
}

void register_conv_bn_buffers(ConvBn& cb, ParamStore& buffers, const std::string& prefix) {
    buffers.add(prefix + ".running_mean", cb.stats.running_mean);
    buffers.add(prefix + ".running_var", cb.stats.running_var);
}

}  // namespace

// ---------------------------------------------------------------------------
// Configs

EcgEncoderConfig EcgEncoderConfig::full() {
    EcgEncoderConfig cfg;
    cfg.stage_channels = {64, 128, 256, 512};
    return cfg;
}

EcgEncoderConfig EcgEncoderConfig::tiny() {
    EcgEncoderConfig cfg;
    cfg.stage_channels = {8, 16, 32, 64};
    return cfg;
}

void EcgEncoderConfig::validate() const {
    if (in_leads < 1) throw ConfigError("ecg encoder: in_leads must be >= 1");
    for (int c : stage_channels)
        if (c < 1) throw ConfigError("ecg encoder: stage channels must be >= 1");
    for (int i = 0; i + 1 < 4; ++i)
        if (stage_channels[i] > stage_channels[i + 1])
            throw ConfigError("ecg encoder: stage channels must be non-decreasing");
    if (blocks_per_stage < 1) throw ConfigError("ecg encoder: blocks_per_stage must be >= 1");
    if (stem_kernel < 1 || stem_kernel % 2 == 0 || block_kernel < 1 || block_kernel % 2 == 0)
        throw ConfigError("ecg encoder: kernels must be odd and positive");
}

void TextEncoderConfig::validate() const {
    if (vocab_size < 4) throw ConfigError("text encoder: vocab_size must be >= 4 (reserved ids)");
    if (embed_dim < 1) throw ConfigError("text encoder: embed_dim must be >= 1");
}

void ModelConfig::validate() const {
    ecg.validate();
    text.validate();
    if (proj_dim < 1) throw ConfigError("model: proj_dim must be >= 1");
}

// ---------------------------------------------------------------------------
// Vocabulary

Vocabulary::Vocabulary() {
    id_to_token_ = {"<pad>", "<unk>", "<bos>", "<eos>"};
    for (int i = 0; i < 4; ++i) token_to_id_[id_to_token_[i]] = i;
}

std::vector<std::string> Vocabulary::tokenize(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (unsigned char c : text) {
        if (std::isalnum(c)) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else if (!cur.empty()) {
            out.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

Vocabulary Vocabulary::build(const std::vector<std::string>& texts) {
    Vocabulary v;
    for (const std::string& text : texts)
        for (std::string& tok : tokenize(text))
            if (!v.token_to_id_.count(tok)) {
                v.token_to_id_[tok] = v.size();
                v.id_to_token_.push_back(std::move(tok));
            }
    return v;
}

Vocabulary Vocabulary::from_tokens(const std::vector<std::string>& tokens) {
    Vocabulary v;
    for (const std::string& tok : tokens) {
        if (v.token_to_id_.count(tok))
            throw ContractError("vocabulary: duplicate token '" + tok + "'");
        v.token_to_id_[tok] = v.size();
        v.id_to_token_.push_back(tok);
    }
    return v;
}

int Vocabulary::id(const std::string& token) const {
    auto it = token_to_id_.find(token);
    return it == token_to_id_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(int id) const {
    if (id < 0 || id >= size())
        throw LookupError("vocabulary: id " + std::to_string(id) + " out of range");
    return id_to_token_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocabulary::encode(const std::string& text) const {
    std::vector<int> out;
    for (const std::string& tok : tokenize(text)) out.push_back(id(tok));
    return out;
}

std::vector<std::string> Vocabulary::tokens() const {
    return {id_to_token_.begin() + 4, id_to_token_.end()};
}

TokenBatch tokenize_batch(const Vocabulary& vocab, const std::vector<std::string>& texts,
                          int max_tokens) {
    if (max_tokens < 1) throw ContractError("tokenize_batch: max_tokens must be >= 1");
    TokenBatch batch;
    std::size_t longest = 0;
    for (const std::string& text : texts) {
        std::vector<int> ids = vocab.encode(text);
        if (ids.empty()) ids.push_back(Vocabulary::kUnk);
        if (static_cast<int>(ids.size()) > max_tokens) ids.resize(max_tokens);
        longest = std::max(longest, ids.size());
        batch.ids.push_back(std::move(ids));
    }
    for (auto& row : batch.ids) {
        std::vector<int> mask(longest, 0);
        for (std::size_t i = 0; i < row.size(); ++i) mask[i] = 1;
        row.resize(longest, Vocabulary::kPad);
        batch.mask.push_back(std::move(mask));
    }
    return batch;
}

// ---------------------------------------------------------------------------
// ParamStore

void ParamStore::add(std::string name, Tensor t) {
    if (!t.defined()) throw ContractError("param store: undefined tensor for '" + name + "'");
    if (index_.count(name)) throw ContractError("param store: duplicate name '" + name + "'");
    index_[name] = items_.size();
    items_.emplace_back(std::move(name), std::move(t));
}

bool ParamStore::contains(const std::string& name) const { return index_.count(name) > 0; }

Tensor& ParamStore::get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw LookupError("param store: no tensor named '" + name + "'");
    return items_[it->second].second;
}

const Tensor& ParamStore::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw LookupError("param store: no tensor named '" + name + "'");
    return items_[it->second].second;
}

std::int64_t ParamStore::total_elements() const {
    std::int64_t n = 0;
    for (const auto& [name, t] : items_) n += t.size();
    return n;
}

// ---------------------------------------------------------------------------
// EcgEncoder

EcgEncoder::EcgEncoder(const EcgEncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    stem_ = make_conv_bn(cfg_.in_leads, cfg_.stage_channels[0], cfg_.stem_kernel, rng, false);
    int in_ch = cfg_.stage_channels[0];
    for (int s = 0; s < 4; ++s) {
        const int out_ch = cfg_.stage_channels[s];
        std::vector<BasicBlock> blocks;
        for (int b = 0; b < cfg_.blocks_per_stage; ++b) {
            BasicBlock blk;
            blk.stride = (s > 0 && b == 0) ? 2 : 1;
            blk.conv1 = make_conv_bn(in_ch, out_ch, cfg_.block_kernel, rng, false);
            // Zero gamma on each block's final BN: the residual branch starts
            // as an identity map, which stabilizes early training.
            blk.conv2 = make_conv_bn(out_ch, out_ch, cfg_.block_kernel, rng, true);
            blk.has_downsample = blk.stride != 1 || in_ch != out_ch;
            if (blk.has_downsample) blk.down = make_conv_bn(in_ch, out_ch, 1, rng, false);
            blocks.push_back(std::move(blk));
            in_ch = out_ch;
        }
        stages_.push_back(std::move(blocks));
    }
}

Tensor EcgEncoder::forward(Graph& g, const Tensor& signal, Mode mode) {
    if (!signal.defined() || signal.rank() != 3)
        throw DimensionError("ecg encoder: expects [B, leads, L]");
    if (signal.dim(1) != cfg_.in_leads)
        throw DimensionError("ecg encoder: got " + std::to_string(signal.dim(1)) +
                             " leads, config says " + std::to_string(cfg_.in_leads));
    if (signal.dim(2) < 32)
        throw DimensionError("ecg encoder: input length " + std::to_string(signal.dim(2)) +
                             " is shorter than the minimum 32");

    Tensor x = g.conv1d(signal, stem_.weight, Tensor(), 2, cfg_.stem_kernel / 2);
    x = g.batchnorm1d(x, stem_.gamma, stem_.beta, stem_.stats, mode);
    x = g.relu(x);
    x = g.max_pool1d(x, 3, 2, 1);

    for (auto& stage : stages_)
        for (auto& blk : stage) {
            Tensor shortcut = x;
            Tensor y = g.conv1d(x, blk.conv1.weight, Tensor(), blk.stride, cfg_.block_kernel / 2);
            y = g.batchnorm1d(y, blk.conv1.gamma, blk.conv1.beta, blk.conv1.stats, mode);
            y = g.relu(y);
            y = g.conv1d(y, blk.conv2.weight, Tensor(), 1, cfg_.block_kernel / 2);
            y = g.batchnorm1d(y, blk.conv2.gamma, blk.conv2.beta, blk.conv2.stats, mode);
            if (blk.has_downsample) {
                shortcut = g.conv1d(x, blk.down.weight, Tensor(), blk.stride, 0);
                shortcut = g.batchnorm1d(shortcut, blk.down.gamma, blk.down.beta, blk.down.stats,
                                         mode);
            }
            x = g.relu(g.add(y, shortcut));
        }
    return g.global_avg_pool(x);
}

void EcgEncoder::register_params(ParamStore& params, const std::string& prefix) {
    register_conv_bn(stem_, params, prefix + ".stem");
    for (std::size_t s = 0; s < stages_.size(); ++s)
        for (std::size_t b = 0; b < stages_[s].size(); ++b) {
            const std::string base =
                prefix + ".s" + std::to_string(s + 1) + ".b" + std::to_string(b + 1);
            register_conv_bn(stages_[s][b].conv1, params, base + ".c1");
            register_conv_bn(stages_[s][b].conv2, params, base + ".c2");
            if (stages_[s][b].has_downsample)
                register_conv_bn(stages_[s][b].down, params, base + ".down");
        }
}

void EcgEncoder::register_buffers(ParamStore& buffers, const std::string& prefix) {
    register_conv_bn_buffers(stem_, buffers, prefix + ".stem");
    for (std::size_t s = 0; s < stages_.size(); ++s)
        for (std::size_t b = 0; b < stages_[s].size(); ++b) {
            const std::string base =
                prefix + ".s" + std::to_string(s + 1) + ".b" + std::to_string(b + 1);
            register_conv_bn_buffers(stages_[s][b].conv1, buffers, base + ".c1");
            register_conv_bn_buffers(stages_[s][b].conv2, buffers, base + ".c2");
            if (stages_[s][b].has_downsample)
                register_conv_bn_buffers(stages_[s][b].down, buffers, base + ".down");
        }
}

// ---------------------------------------------------------------------------
// TextEncoder

TextEncoder::TextEncoder(const TextEncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    table_ = affine_uniform({cfg_.vocab_size, cfg_.embed_dim}, cfg_.embed_dim, rng);
    table_.set_requires_grad(!cfg_.frozen);
}

Tensor TextEncoder::forward(Graph& g, const TokenBatch& batch) {
    return g.embedding_mean(table_, batch.ids, batch.mask);
}

void TextEncoder::register_params(ParamStore& params, const std::string& prefix) {
    params.add(prefix + ".table", table_);
}

// ---------------------------------------------------------------------------
// ProjectionHead

ProjectionHead::ProjectionHead(int in_dim, int out_dim, bool nonlinear, Rng& rng)
    : in_dim_(in_dim), out_dim_(out_dim), nonlinear_(nonlinear) {
    if (in_dim < 1 || out_dim < 1) throw ConfigError("projection head: dims must be >= 1");
    if (nonlinear_) {
        w1_ = affine_uniform({in_dim, in_dim}, in_dim, rng);
        b1_ = affine_uniform({in_dim}, in_dim, rng);
    }
    w_ = affine_uniform({in_dim, out_dim}, in_dim, rng);
    b_ = affine_uniform({out_dim}, in_dim, rng);
}

Tensor ProjectionHead::forward(Graph& g, const Tensor& features) const {
    if (!features.defined() || features.rank() != 2 || features.dim(1) != in_dim_)
        throw DimensionError("projection head: expects [B," + std::to_string(in_dim_) + "]");
    Tensor h = features;
    if (nonlinear_) h = g.relu(g.add_bias_rows(g.matmul(h, w1_), b1_));
    return g.add_bias_rows(g.matmul(h, w_), b_);
}

void ProjectionHead::register_params(ParamStore& params, const std::string& prefix) {
    if (nonlinear_) {
        params.add(prefix + ".w1", w1_);
        params.add(prefix + ".b1", b1_);
    }
    params.add(prefix + ".w", w_);
    params.add(prefix + ".b", b_);
}

// ---------------------------------------------------------------------------
// External embeddings

Tensor encode_text_external(const ExternalEmbeddingTable& table, const std::string& text_id) {
    auto it = table.entries.find(text_id);
    if (it == table.entries.end())
        throw LookupError("external embeddings: no entry for id '" + text_id + "'");
    std::vector<double> values(it->second.begin(), it->second.end());
    return Tensor::from_data({table.dim}, std::move(values));
}

// ---------------------------------------------------------------------------
// EtpModel

namespace {
ModelConfig with_vocab_size(ModelConfig cfg, int vocab_size) {
    cfg.text.vocab_size = vocab_size;
    cfg.validate();
    return cfg;
}
}  // namespace

EtpModel::EtpModel(ModelConfig cfg, Vocabulary vocab)
    : cfg_(with_vocab_size(std::move(cfg), vocab.size())),
      vocab_(std::move(vocab)),
      init_rng_(cfg_.init_seed),
      ecg_(cfg_.ecg, init_rng_),
      text_(cfg_.text, init_rng_),
      proj_ecg_(cfg_.ecg.feature_dim(), cfg_.proj_dim, cfg_.proj_nonlinear, init_rng_),
      proj_text_(cfg_.text.feature_dim(), cfg_.proj_dim, cfg_.proj_nonlinear, init_rng_) {
    ecg_.register_params(params_, "ecg");
    text_.register_params(params_, "text");
    proj_ecg_.register_params(params_, "proj_ecg");
    proj_text_.register_params(params_, "proj_text");
    ecg_.register_buffers(buffers_, "ecg");
}

Tensor EtpModel::ecg_features(Graph& g, const Tensor& signal, Mode mode) {
    return ecg_.forward(g, signal, mode);
}

Tensor EtpModel::project_ecg(Graph& g, const Tensor& features) {
    return proj_ecg_.forward(g, features);
}

Tensor EtpModel::text_features(Graph& g, const TokenBatch& batch) {
    return text_.forward(g, batch);
}

Tensor EtpModel::project_text(Graph& g, const Tensor& features) {
    return proj_text_.forward(g, features);
}

Tensor EtpModel::embed_ecg(Graph& g, const Tensor& signal, Mode mode) {
    return g.l2_normalize(project_ecg(g, ecg_features(g, signal, mode)));
}

Tensor EtpModel::embed_text(Graph& g, const TokenBatch& batch) {
    return g.l2_normalize(project_text(g, text_features(g, batch)));
}

std::vector<std::pair<std::string, Tensor>> EtpModel::trainable_params() const {
    std::vector<std::pair<std::string, Tensor>> out;
    for (const auto& item : params_.items())
        if (item.second.requires_grad()) out.push_back(item);
    return out;
}

std::vector<std::pair<std::string, Tensor>> EtpModel::ecg_path_params() const {
    std::vector<std::pair<std::string, Tensor>> out;
    for (const auto& item : params_.items())
        if (item.first.rfind("ecg.", 0) == 0 || item.first.rfind("proj_ecg.", 0) == 0)
            out.push_back(item);
    return out;
}

std::int64_t EtpModel::trainable_param_count() const {
    std::int64_t n = 0;
    for (const auto& [name, t] : trainable_params()) n += t.size();
    return n;
}

}  // namespace etp
