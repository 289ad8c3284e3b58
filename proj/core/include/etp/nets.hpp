#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "etp/data.hpp"
#include "etp/rng.hpp"
#include "etp/tensor.hpp"

namespace etp {

/// ResNet18-style 1-D trunk: stem conv -> BN -> relu -> max-pool, then four
/// stages of two basic residual blocks each, then global average pooling.
/// The first block of stages 2-4 halves the temporal resolution.
struct EcgEncoderConfig {
    int in_leads = 12;
    std::array<int, 4> stage_channels{8, 16, 32, 64};
    int blocks_per_stage = 2;
    int stem_kernel = 7;
    int block_kernel = 3;

    static EcgEncoderConfig full();  ///< channels 64/128/256/512
    static EcgEncoderConfig tiny();  ///< channels 8/16/32/64

    int feature_dim() const { return stage_channels[3]; }
    void validate() const;  ///< channels non-decreasing, kernels odd
};

/// Token-embedding text encoder with masked mean pooling. Ids 0-3 are
/// reserved (pad, unk, bos, eos). When frozen, the embedding table takes
/// no gradient and is excluded from the trainable set.
struct TextEncoderConfig {
    int vocab_size = 4;
    int embed_dim = 64;
    bool frozen = false;

    int feature_dim() const { return embed_dim; }
    void validate() const;
};

/// Whitespace-free deterministic tokenizer + id table: lowercase, split on
/// non-alphanumeric runs, first-appearance ordering, min frequency 1.
class Vocabulary {
  public:
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;
    static constexpr int kBos = 2;
    static constexpr int kEos = 3;

    Vocabulary();  ///< reserved ids only

    static std::vector<std::string> tokenize(const std::string& text);
    static Vocabulary build(const std::vector<std::string>& texts);
    /// Rebuild from a stored token list (everything after the reserved ids,
    /// in id order). Inverse of tokens().
    static Vocabulary from_tokens(const std::vector<std::string>& tokens);

    int size() const { return static_cast<int>(id_to_token_.size()); }
    int id(const std::string& token) const;  ///< kUnk when unknown
    const std::string& token(int id) const;  ///< LookupError when out of range
    std::vector<int> encode(const std::string& text) const;
    /// Tokens beyond the reserved ids, in id order.
    std::vector<std::string> tokens() const;

  private:
    std::vector<std::string> id_to_token_;
    std::unordered_map<std::string, int> token_to_id_;
};

/// Padded id/mask batch for the text encoder. mask[b][t] = 1 for real
/// tokens, 0 for padding.
struct TokenBatch {
    std::vector<std::vector<int>> ids;
    std::vector<std::vector<int>> mask;
};

/// Tokenize and pad a batch of texts to the longest row, truncated to
/// max_tokens. A text with no tokens at all is encoded as a single unk so
/// every row keeps at least one unmasked position.
TokenBatch tokenize_batch(const Vocabulary& vocab, const std::vector<std::string>& texts,
                          int max_tokens);

/// Insertion-ordered named tensor collection. The order is the contract:
/// optimizers and checkpoints walk it to get deterministic layouts.
class ParamStore {
  public:
    void add(std::string name, Tensor t);
    bool contains(const std::string& name) const;
    Tensor& get(const std::string& name);
    const Tensor& get(const std::string& name) const;
    std::size_t size() const { return items_.size(); }
    std::int64_t total_elements() const;
    const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }

  private:
    std::vector<std::pair<std::string, Tensor>> items_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// One conv + batchnorm unit (convs carry no bias; BN provides the shift).
struct ConvBn {
    Tensor weight;  // [Cout, Cin, k]
    Tensor gamma, beta;
    BatchNormStats stats;
};

struct BasicBlock {
    ConvBn conv1, conv2;
    bool has_downsample = false;
    ConvBn down;  // 1x1 stride-s conv on the shortcut when shape changes
    int stride = 1;
};

class EcgEncoder {
  public:
    EcgEncoder(const EcgEncoderConfig& cfg, Rng& rng);

    /// [B, in_leads, L] -> [B, feature_dim]; L must be >= 32 so the five
    /// stride-2 halvings leave at least one sample.
    Tensor forward(Graph& g, const Tensor& signal, Mode mode);

    void register_params(ParamStore& params, const std::string& prefix);
    void register_buffers(ParamStore& buffers, const std::string& prefix);
    const EcgEncoderConfig& config() const { return cfg_; }

  private:
    EcgEncoderConfig cfg_;
    ConvBn stem_;
    std::vector<std::vector<BasicBlock>> stages_;
};

class TextEncoder {
  public:
    TextEncoder(const TextEncoderConfig& cfg, Rng& rng);

    /// Masked mean of embedding rows -> [B, embed_dim].
    Tensor forward(Graph& g, const TokenBatch& batch);

    void register_params(ParamStore& params, const std::string& prefix);
    const TextEncoderConfig& config() const { return cfg_; }

  private:
    TextEncoderConfig cfg_;
    Tensor table_;  // [vocab_size, embed_dim]
};

/// Affine map to the shared embedding space; optionally a relu MLP
/// (hidden width = input width) behind the nonlinear flag.
class ProjectionHead {
  public:
    ProjectionHead(int in_dim, int out_dim, bool nonlinear, Rng& rng);

    Tensor forward(Graph& g, const Tensor& features) const;

    void register_params(ParamStore& params, const std::string& prefix);
    int out_dim() const { return out_dim_; }

  private:
    int in_dim_ = 0, out_dim_ = 0;
    bool nonlinear_ = false;
    Tensor w1_, b1_;  // hidden layer, only when nonlinear
    Tensor w_, b_;
};

/// Returns the stored vector verbatim as a [dim] tensor; never trainable.
Tensor encode_text_external(const ExternalEmbeddingTable& table, const std::string& text_id);

struct ModelConfig {
    EcgEncoderConfig ecg = EcgEncoderConfig::tiny();
    TextEncoderConfig text;
    int proj_dim = 32;
    bool proj_nonlinear = false;
    std::uint64_t init_seed = 0;

    void validate() const;
};

/// The two encoders plus their projection heads, with every persistent
/// tensor registered under a stable name:
///   ecg.*        ECG trunk weights / BN affine parameters
///   text.table   token embedding table
///   proj_ecg.*, proj_text.*   projection heads
/// BN running statistics live in buffers() under ecg.*.running_{mean,var}.
/// Initialization draws from one seeded stream in registration order, and
/// all persistent tensors are kept on the float32 grid.
class EtpModel {
  public:
    EtpModel(ModelConfig cfg, Vocabulary vocab);

    const ModelConfig& config() const { return cfg_; }
    const Vocabulary& vocab() const { return vocab_; }

    Tensor ecg_features(Graph& g, const Tensor& signal, Mode mode);  ///< [B, feat]
    Tensor project_ecg(Graph& g, const Tensor& features);            ///< [B, d]
    Tensor text_features(Graph& g, const TokenBatch& batch);         ///< [B, embed]
    Tensor project_text(Graph& g, const Tensor& features);           ///< [B, d]

    /// L2-normalized joint-space embeddings (composition of the above).
    Tensor embed_ecg(Graph& g, const Tensor& signal, Mode mode);
    Tensor embed_text(Graph& g, const TokenBatch& batch);

    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }
    ParamStore& buffers() { return buffers_; }
    const ParamStore& buffers() const { return buffers_; }

    /// Parameters that take gradients (excludes a frozen text table).
    std::vector<std::pair<std::string, Tensor>> trainable_params() const;
    /// The ECG pathway only (ecg.* and proj_ecg.*): what SSL training updates.
    std::vector<std::pair<std::string, Tensor>> ecg_path_params() const;
    std::int64_t trainable_param_count() const;

  private:
    ModelConfig cfg_;
    Vocabulary vocab_;
    Rng init_rng_;  // consumed during member construction, in declaration order
    EcgEncoder ecg_;
    TextEncoder text_;
    ProjectionHead proj_ecg_, proj_text_;
    ParamStore params_, buffers_;
};

}  // namespace etp
