#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "etp/checkpoint.hpp"
#include "etp/data.hpp"
#include "etp/nets.hpp"
#include "etp/objectives.hpp"
#include "etp/tensor.hpp"

namespace etp {

struct AdamConfig {
    double lr = 2e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-5;  ///< classic L2: added to the gradient
};

/// Adam over a fixed list of named parameters. step() reads each
/// parameter's accumulated gradient, applies the bias-corrected update in
/// double precision, then rounds parameters and both moment buffers back to
/// the float32 grid (so checkpoints round-trip bitwise and resume matches
/// an uninterrupted run). A non-finite gradient raises DivergedError before
/// any parameter is touched.
class Adam {
  public:
    Adam(std::vector<std::pair<std::string, Tensor>> params, AdamConfig cfg);

    void step();
    void zero_grad();

    std::int64_t step_count() const { return step_; }
    void set_step_count(std::int64_t step) { step_ = step; }
    const AdamConfig& config() const { return cfg_; }
    const std::vector<std::pair<std::string, Tensor>>& params() const { return params_; }
    /// Moment buffers as named tensors ("adam.m.<param>", "adam.v.<param>"),
    /// in parameter order; used by checkpointing.
    std::vector<std::pair<std::string, Tensor>> state_tensors() const;
    /// Restore a moment buffer by its state-tensor name.
    void load_state_tensor(const std::string& name, const Tensor& value);

  private:
    AdamConfig cfg_;
    std::vector<std::pair<std::string, Tensor>> params_;
    std::vector<Tensor> m_, v_;
    std::int64_t step_ = 0;
};

struct TrainConfig {
    std::string objective = "etp";  ///< "etp" | "ssl"
    int epochs = 50;
    int batch_size = 32;
    double lr = 2e-3;
    double weight_decay = 1e-5;
    std::uint64_t seed = 0;
    ContrastiveConfig contrastive;
    AugmentationConfig augmentation;  ///< ssl only
    int checkpoint_every = 0;         ///< epochs between periodic saves; 0 = final only
    int max_text_tokens = 64;

    void validate() const;
};

struct EpochLog {
    int epoch = 0;          ///< 1-based
    double mean_loss = 0.0;
    double wall_seconds = 0.0;
    double lr = 0.0;
};

/// Optimization loop shared by the two objectives.
///
/// Per epoch: shuffle the corpus under a stream derived from (seed, epoch),
/// walk full batches (the last incomplete batch is dropped), build the
/// batch, compute the objective, backprop, Adam step. ETP pairs each signal
/// with its report through both encoders and cross_modal_loss; SSL pairs
/// two augmented views of each signal through the ECG pathway and ssl_loss
/// (the text encoder is neither evaluated nor updated). All randomness is
/// derived from (seed, epoch, batch), so resuming from an epoch-boundary
/// checkpoint reproduces the uninterrupted run bitwise.
class Trainer {
  public:
    /// completed_epochs > 0 resumes counting from there (used after a
    /// checkpoint load); the optimizer must carry the matching step count.
    Trainer(EtpModel& model, TrainConfig cfg, std::uint64_t completed_epochs = 0,
            std::int64_t global_step = 0);

    /// Runs epochs [completed, cfg.epochs). Calls on_epoch after each epoch
    /// (for logging / periodic checkpoints). Throws DivergedError on a
    /// non-finite loss or gradient; the model is left at its pre-batch state
    /// for checkpoint retention.
    void run(const std::vector<EcgRecord>& corpus,
             const std::function<void(const EpochLog&)>& on_epoch = nullptr);

    std::uint64_t completed_epochs() const { return completed_epochs_; }
    std::int64_t global_step() const { return global_step_; }
    Adam& optimizer() { return adam_; }
    const std::vector<double>& epoch_losses() const { return epoch_losses_; }

    /// Snapshot of model + optimizer + progress, ready to save.
    Checkpoint make_checkpoint(const std::string& config_json) const;
    /// Restores model/optimizer tensors and progress counters from a loaded
    /// checkpoint. Shapes must match the constructed model (CheckpointError).
    static void restore(EtpModel& model, Adam& adam, const Checkpoint& ckpt);

  private:
    double run_epoch_etp(const std::vector<EcgRecord>& corpus, std::uint64_t epoch);
    double run_epoch_ssl(const std::vector<EcgRecord>& corpus, std::uint64_t epoch);

    EtpModel& model_;
    TrainConfig cfg_;
    Adam adam_;
    std::uint64_t completed_epochs_ = 0;
    std::int64_t global_step_ = 0;
    std::vector<double> epoch_losses_;
};

/// Stacks [B, leads, L] out of records[first..first+count); all records in
/// a batch must share lead count and length.
Tensor batch_signals(const std::vector<EcgRecord>& records, const std::vector<int>& order,
                     int first, int count);

/// Rebuilds the model a checkpoint was saved from: parses the "model"
/// object of the config echo, restores the vocabulary, then overwrites
/// every parameter/buffer tensor. The optimizer is NOT restored here (eval
/// paths don't need one); training resume goes through Trainer::restore.
EtpModel model_from_checkpoint(const Checkpoint& ckpt);

}  // namespace etp
