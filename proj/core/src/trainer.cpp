#include "etp/trainer.hpp"

#include <chrono>
#include <cmath>
#include <utility>

#include "etp/rng.hpp"
#include "etp/runconfig.hpp"

namespace etp {

namespace {
// Stream tags for deriving per-purpose RNG streams from (seed, epoch, batch).
constexpr std::uint64_t kShuffleTag = 0x5u;
constexpr std::uint64_t kAugmentTag = 0xAu;
}  // namespace

// ---------------------------------------------------------------------------
// Adam

Adam::Adam(std::vector<std::pair<std::string, Tensor>> params, AdamConfig cfg)
    : cfg_(cfg), params_(std::move(params)) {
    if (!(cfg_.lr > 0.0)) throw ConfigError("adam: lr must be positive");
    if (cfg_.weight_decay < 0.0) throw ConfigError("adam: weight_decay must be >= 0");
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& [name, t] : params_) {
        if (!t.defined()) throw ContractError("adam: undefined parameter '" + name + "'");
        m_.push_back(Tensor::zeros(t.shape()));
        v_.push_back(Tensor::zeros(t.shape()));
    }
}

void Adam::step() {
    // Validate every gradient before touching any parameter, so divergence
    // leaves the model at its pre-step state.
    for (const auto& [name, t] : params_) {
        if (!t.has_grad()) continue;
        for (double gv : t.grad())
            if (!std::isfinite(gv))
                throw DivergedError("adam: non-finite gradient in '" + name + "'");
    }
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor& t = params_[i].second;
        auto p = t.raw_values();
        auto m = m_[i].raw_values();
        auto v = v_[i].raw_values();
        const auto grads = t.grad();  // empty when the loss never touched it
        for (std::size_t j = 0; j < p.size(); ++j) {
            const double g = (grads.empty() ? 0.0 : grads[j]) + cfg_.weight_decay * p[j];
            m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g;
            v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g * g;
            const double m_hat = m[j] / bc1;
            const double v_hat = v[j] / bc2;
            p[j] -= cfg_.lr * m_hat / (std::sqrt(v_hat) + cfg_.eps);
        }
        // All persistent training state stays on the float32 grid so
        // checkpoints round-trip bitwise and resume matches bitwise.
        t.quantize_f32();
        m_[i].quantize_f32();
        v_[i].quantize_f32();
    }
}

void Adam::zero_grad() {
    for (auto& [name, t] : params_) t.zero_grad();
}

std::vector<std::pair<std::string, Tensor>> Adam::state_tensors() const {
    std::vector<std::pair<std::string, Tensor>> out;
    out.reserve(params_.size() * 2);
    for (std::size_t i = 0; i < params_.size(); ++i) {
        out.emplace_back("adam.m." + params_[i].first, m_[i]);
        out.emplace_back("adam.v." + params_[i].first, v_[i]);
    }
    return out;
}

void Adam::load_state_tensor(const std::string& name, const Tensor& value) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
        for (const auto& [prefix, buffers] :
             {std::pair<std::string, std::vector<Tensor>*>{"adam.m.", &m_},
              std::pair<std::string, std::vector<Tensor>*>{"adam.v.", &v_}}) {
            if (name != prefix + params_[i].first) continue;
            Tensor& dst = (*buffers)[i];
            if (value.shape() != dst.shape())
                throw CheckpointError("adam state '" + name + "' has mismatched shape");
            auto out = dst.raw_values();
            const auto in = value.values();
            for (std::size_t j = 0; j < out.size(); ++j) out[j] = in[j];
            return;
        }
    }
    throw LookupError("adam has no state tensor named '" + name + "'");
}

// ---------------------------------------------------------------------------
// TrainConfig

void TrainConfig::validate() const {
    if (objective != "etp" && objective != "ssl")
        throw ConfigError("train: objective must be etp or ssl, got '" + objective + "'");
    if (epochs < 0) throw ConfigError("train: epochs must be >= 0");
    if (batch_size < 2) throw ConfigError("train: batch_size must be >= 2");
    if (!(lr > 0.0)) throw ConfigError("train: lr must be positive");
    if (weight_decay < 0.0) throw ConfigError("train: weight_decay must be >= 0");
    if (checkpoint_every < 0) throw ConfigError("train: checkpoint_every must be >= 0");
    if (max_text_tokens < 1) throw ConfigError("train: max_text_tokens must be >= 1");
    contrastive.validate();
    augmentation.validate();
}

// ---------------------------------------------------------------------------
// Batch assembly

Tensor batch_signals(const std::vector<EcgRecord>& records, const std::vector<int>& order,
                     int first, int count) {
    if (count < 1 || first < 0 || first + count > static_cast<int>(order.size()))
        throw ContractError("batch_signals: bad batch window");
    const EcgRecord& head = records[order[first]];
    std::vector<double> flat;
    flat.reserve(static_cast<std::size_t>(count) * head.leads * head.length);
    for (int i = 0; i < count; ++i) {
        const EcgRecord& r = records[order[first + i]];
        if (r.leads != head.leads || r.length != head.length)
            throw DimensionError("batch_signals: record '" + r.id +
                                 "' shape differs within the batch");
        flat.insert(flat.end(), r.signal.begin(), r.signal.end());
    }
    return Tensor::from_data({count, head.leads, head.length}, std::move(flat));
}

// ---------------------------------------------------------------------------
// Trainer

Trainer::Trainer(EtpModel& model, TrainConfig cfg, std::uint64_t completed_epochs,
                 std::int64_t global_step)
    : model_(model),
      cfg_(std::move(cfg)),
      adam_(cfg_.objective == "ssl" ? model.ecg_path_params() : model.trainable_params(),
            AdamConfig{cfg_.lr, 0.9, 0.999, 1e-8, cfg_.weight_decay}),
      completed_epochs_(completed_epochs),
      global_step_(global_step) {
    cfg_.validate();
    adam_.set_step_count(global_step_);
}

void Trainer::run(const std::vector<EcgRecord>& corpus,
                  const std::function<void(const EpochLog&)>& on_epoch) {
    if (static_cast<int>(corpus.size()) < cfg_.batch_size)
        throw ContractError("trainer: corpus of " + std::to_string(corpus.size()) +
                            " records is smaller than one batch of " +
                            std::to_string(cfg_.batch_size));
    if (cfg_.objective == "etp")
        for (const EcgRecord& r : corpus)
            if (r.report.empty())
                throw ContractError("trainer: record '" + r.id + "' has an empty report");

    for (std::uint64_t epoch = completed_epochs_; epoch < static_cast<std::uint64_t>(cfg_.epochs);
         ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        const double mean_loss = cfg_.objective == "etp" ? run_epoch_etp(corpus, epoch)
                                                         : run_epoch_ssl(corpus, epoch);
        completed_epochs_ = epoch + 1;
        epoch_losses_.push_back(mean_loss);
        if (on_epoch) {
            EpochLog log;
            log.epoch = static_cast<int>(epoch + 1);
            log.mean_loss = mean_loss;
            log.wall_seconds =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            log.lr = cfg_.lr;
            on_epoch(log);
        }
    }
}

double Trainer::run_epoch_etp(const std::vector<EcgRecord>& corpus, std::uint64_t epoch) {
    const int n = static_cast<int>(corpus.size());
    const int B = cfg_.batch_size;
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    Rng shuffle_rng = Rng::derive(cfg_.seed, {kShuffleTag, epoch});
    shuffle_rng.shuffle(order);

    const int num_batches = n / B;  // the last incomplete batch is dropped
    double loss_sum = 0.0;
    for (int b = 0; b < num_batches; ++b) {
        Tensor signals = batch_signals(corpus, order, b * B, B);
        std::vector<std::string> reports;
        reports.reserve(B);
        for (int i = 0; i < B; ++i) reports.push_back(corpus[order[b * B + i]].report);
        TokenBatch tokens = tokenize_batch(model_.vocab(), reports, cfg_.max_text_tokens);

        Graph g;
        Tensor e_hat = model_.embed_ecg(g, signals, Mode::Train);
        Tensor t_hat = model_.embed_text(g, tokens);
        Tensor loss = cross_modal_loss(g, e_hat, t_hat, cfg_.contrastive);
        const double value = loss.item();
        if (!std::isfinite(value)) throw DivergedError("trainer: non-finite loss");
        g.backward(loss);
        adam_.step();
        adam_.zero_grad();
        ++global_step_;
        loss_sum += value;
    }
    return loss_sum / num_batches;
}

double Trainer::run_epoch_ssl(const std::vector<EcgRecord>& corpus, std::uint64_t epoch) {
    const int n = static_cast<int>(corpus.size());
    const int B = cfg_.batch_size;
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    Rng shuffle_rng = Rng::derive(cfg_.seed, {kShuffleTag, epoch});
    shuffle_rng.shuffle(order);

    const int num_batches = n / B;
    double loss_sum = 0.0;
    for (int b = 0; b < num_batches; ++b) {
        Rng aug_rng =
            Rng::derive(cfg_.seed, {kAugmentTag, epoch, static_cast<std::uint64_t>(b)});
        const EcgRecord& head = corpus[order[b * B]];
        std::vector<double> weak_flat, strong_flat;
        weak_flat.reserve(static_cast<std::size_t>(B) * head.leads * head.length);
        strong_flat.reserve(weak_flat.capacity());
        for (int i = 0; i < B; ++i) {
            const EcgRecord& r = corpus[order[b * B + i]];
            if (r.leads != head.leads || r.length != head.length)
                throw DimensionError("trainer: record '" + r.id +
                                     "' shape differs within the batch");
            Tensor sig = Tensor::from_data({r.leads, r.length}, r.signal);
            auto [weak, strong] = augment_pair(sig, cfg_.augmentation, aug_rng);
            const auto wv = weak.values(), sv = strong.values();
            weak_flat.insert(weak_flat.end(), wv.begin(), wv.end());
            strong_flat.insert(strong_flat.end(), sv.begin(), sv.end());
        }
        Tensor weak =
            Tensor::from_data({B, head.leads, head.length}, std::move(weak_flat));
        Tensor strong =
            Tensor::from_data({B, head.leads, head.length}, std::move(strong_flat));

        Graph g;
        // Both views share the ECG pathway; BN sees the weak batch first,
        // then the strong one.
        Tensor e_hat = model_.embed_ecg(g, weak, Mode::Train);
        Tensor e_prime = model_.embed_ecg(g, strong, Mode::Train);
        Tensor loss = ssl_loss(g, e_hat, e_prime, cfg_.contrastive);
        const double value = loss.item();
        if (!std::isfinite(value)) throw DivergedError("trainer: non-finite loss");
        g.backward(loss);
        adam_.step();
        adam_.zero_grad();
        ++global_step_;
        loss_sum += value;
    }
    return loss_sum / num_batches;
}

Checkpoint Trainer::make_checkpoint(const std::string& config_json) const {
    Checkpoint ckpt;
    ckpt.completed_epochs = completed_epochs_;
    ckpt.global_step = static_cast<std::uint64_t>(global_step_);
    ckpt.rng_state = Rng::derive(cfg_.seed, {kShuffleTag, completed_epochs_}).state();
    ckpt.config_json = config_json;
    ckpt.vocab_tokens = model_.vocab().tokens();
    for (const auto& item : model_.params().items()) ckpt.tensors.push_back(item);
    for (const auto& item : model_.buffers().items()) ckpt.tensors.push_back(item);
    for (const auto& item : adam_.state_tensors()) ckpt.tensors.push_back(item);
    return ckpt;
}

namespace {

void copy_named(const Checkpoint& ckpt, const std::string& name, Tensor& dst) {
    const Tensor& src = ckpt.tensor(name);
    if (src.shape() != dst.shape())
        throw CheckpointError("checkpoint tensor '" + name + "' has mismatched shape");
    auto out = dst.raw_values();
    const auto in = src.values();
    for (std::size_t j = 0; j < out.size(); ++j) out[j] = in[j];
}

void restore_model(EtpModel& model, const Checkpoint& ckpt) {
    for (auto& [name, t] : model.params().items()) {
        Tensor dst = t;  // shared handle; writes hit the model's buffer
        copy_named(ckpt, name, dst);
    }
    for (auto& [name, t] : model.buffers().items()) {
        Tensor dst = t;
        copy_named(ckpt, name, dst);
    }
}

}  // namespace

void Trainer::restore(EtpModel& model, Adam& adam, const Checkpoint& ckpt) {
    restore_model(model, ckpt);
    for (const auto& [name, t] : adam.state_tensors())
        adam.load_state_tensor(name, ckpt.tensor(name));
    adam.set_step_count(static_cast<std::int64_t>(ckpt.global_step));
}

EtpModel model_from_checkpoint(const Checkpoint& ckpt) {
    const ModelConfig cfg = model_config_from_json(ckpt.config_json);
    Vocabulary vocab = Vocabulary::from_tokens(ckpt.vocab_tokens);
    if (cfg.text.vocab_size != vocab.size())
        throw CheckpointError("checkpoint vocab has " + std::to_string(vocab.size()) +
                              " entries but the config says " +
                              std::to_string(cfg.text.vocab_size));
    EtpModel model(cfg, std::move(vocab));
    restore_model(model, ckpt);
    return model;
}

}  // namespace etp
