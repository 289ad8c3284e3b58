#pragma once

#include <string>

#include "etp/nets.hpp"
#include "etp/trainer.hpp"

namespace etp {

/// Flat `key = value` run configuration (UTF-8, '#' comments, blank lines
/// ignored). Unknown keys are rejected. CLI flags apply on top via set(),
/// last writer wins. Keys:
///   objective, epochs, batch_size, lr, weight_decay, seed, tau_cross,
///   tau_ssl, checkpoint_every, max_text_tokens, jitter_sigma, scale_lo,
///   scale_hi, num_segments, invert_prob, model_preset (tiny|full),
///   in_leads, proj_dim, proj_nonlinear, text_embed_dim, text_frozen
struct RunConfig {
    std::string model_preset = "tiny";
    ModelConfig model;
    TrainConfig train;

    static RunConfig defaults();
    static RunConfig from_file(const std::string& path);

    /// Applies one key=value pair. ConfigError on unknown key or bad value.
    void set(const std::string& key, const std::string& value);

    /// Model config ready for construction: preset + overrides, with
    /// init_seed filled from the training seed.
    ModelConfig resolved_model(int vocab_size) const;

    /// Fully resolved echo: {"model_preset":..., "model":{...},
    /// "train":{...}}. Written to run.json and into checkpoints.
    std::string to_json() const;
};

/// Parse the "model" object out of a config echo produced by
/// RunConfig::to_json (used when rebuilding a model from a checkpoint).
ModelConfig model_config_from_json(const std::string& config_json);

}  // namespace etp
