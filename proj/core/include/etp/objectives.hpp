#pragma once

#include <utility>

#include "etp/rng.hpp"
#include "etp/tensor.hpp"

namespace etp {

struct ContrastiveConfig {
    double tau_cross = 0.07;  ///< temperature on the cross-modal softmax
    double tau_ssl = 0.07;    ///< temperature on the uni-modal softmax

    void validate() const;  ///< 0 < tau <= 1
};

/// Symmetric cross-modal InfoNCE over a batch of paired embeddings.
///
/// Builds the cosine-similarity grid r = e_hat * t_hat^T, treats the
/// diagonal as the positive in each direction, and averages the two
/// per-direction cross-entropies: loss = (1/2B) * sum_i (L^{e2t}_i +
/// L^{t2e}_i). Softmax terms are evaluated in log-sum-exp form, so the loss
/// never produces NaN for bounded inputs.
///
/// Exact invariances (not merely approximate): swapping the two arguments
/// returns the identical double, and permuting both batches by the same
/// permutation leaves the value bit-identical.
///
/// pre: rows L2-normalized within 1e-5; B >= 2 (a contrastive loss needs
/// negatives). Violations raise ContractError.
Tensor cross_modal_loss(Graph& g, const Tensor& e_hat, const Tensor& t_hat,
                        const ContrastiveConfig& cfg);

/// Single-direction InfoNCE between two augmented-view embeddings of the
/// same signals: loss = -(1/B) * sum_i log softmax_j(r_{i,j}/tau)[i] with
/// r = e_hat * e_hat_prime^T. Deliberately asymmetric in its arguments.
Tensor ssl_loss(Graph& g, const Tensor& e_hat, const Tensor& e_hat_prime,
                const ContrastiveConfig& cfg);

struct AugmentationConfig {
    double jitter_sigma = 0.05;  ///< additive noise std, as a fraction of per-lead std
    double scale_lo = 0.8;      ///< weak-view global amplitude scale range
    double scale_hi = 1.2;
    int num_segments = 8;       ///< strong-view segment permutation granularity
    double invert_prob = 0.5;   ///< strong-view amplitude negation probability

    void validate() const;
};

/// Two stochastic views of one [leads, L] signal.
///
/// weak   = (signal + jitter) * scale, scale ~ U(scale_lo, scale_hi)
/// strong = maybe_negate(permute_segments(signal) + jitter)
///
/// The time axis is cut into num_segments near-equal runs (the first
/// L mod num_segments runs get the extra sample) and the runs are shuffled.
/// Scale, permutation, and inversion are drawn once and shared across all
/// leads; jitter is per sample with sigma = jitter_sigma * that lead's std.
/// Draw order is pinned: scale, permutation, inversion, weak noise, strong
/// noise — so a given RNG stream always produces the same pair.
std::pair<Tensor, Tensor> augment_pair(const Tensor& signal, const AugmentationConfig& cfg,
                                       Rng& rng);

}  // namespace etp
