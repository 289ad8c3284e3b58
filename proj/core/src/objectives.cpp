#include "etp/objectives.hpp"

#include <cmath>
#include <numeric>
#include <string>
#include <vector>

namespace etp {

void ContrastiveConfig::validate() const {
    if (!(tau_cross > 0.0 && tau_cross <= 1.0) || !(tau_ssl > 0.0 && tau_ssl <= 1.0))
        throw ConfigError("contrastive config: temperatures must lie in (0, 1]");
}

namespace {

void check_contrastive_inputs(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.defined() || !b.defined() || a.rank() != 2 || b.rank() != 2)
        throw DimensionError(std::string(op) + ": expects two [B,d] tensors");
    if (a.shape() != b.shape()) throw DimensionError(std::string(op) + ": shape mismatch");
    if (a.dim(0) < 2)
        throw ContractError(std::string(op) + ": batch of " + std::to_string(a.dim(0)) +
                            " has no negatives; need B >= 2");
    for (const Tensor* t : {&a, &b}) {
        const int B = t->dim(0), d = t->dim(1);
        const auto values = t->values();
        for (int i = 0; i < B; ++i) {
            double sq = 0.0;
            for (int j = 0; j < d; ++j) {
                const double v = values[static_cast<std::size_t>(i) * d + j];
                sq += v * v;
            }
            if (std::abs(std::sqrt(sq) - 1.0) > 1e-5)
                throw ContractError(std::string(op) + ": row " + std::to_string(i) +
                                    " is not L2-normalized");
        }
    }
}

// Mean over the batch of (log-sum-exp of a row of logits minus its diagonal
// entry): the InfoNCE cross-entropy for one direction.
Tensor direction_loss(Graph& g, const Tensor& logits) {
    return g.mean(g.sub(g.log_sum_exp_rows(logits), g.diagonal(logits)));
}

}  // namespace

Tensor cross_modal_loss(Graph& g, const Tensor& e_hat, const Tensor& t_hat,
                        const ContrastiveConfig& cfg) {
    cfg.validate();
    check_contrastive_inputs(e_hat, t_hat, "cross_modal_loss");
    Tensor logits = g.scale(g.matmul(e_hat, g.transpose(t_hat)), 1.0 / cfg.tau_cross);
    // The t->e direction scores are the transpose of the e->t scores, so the
    // two direction losses commute under an argument swap and the average is
    // exactly symmetric.
    Tensor l_e2t = direction_loss(g, logits);
    Tensor l_t2e = direction_loss(g, g.transpose(logits));
    return g.scale(g.add(l_e2t, l_t2e), 0.5);
}

Tensor ssl_loss(Graph& g, const Tensor& e_hat, const Tensor& e_hat_prime,
                const ContrastiveConfig& cfg) {
    cfg.validate();
    check_contrastive_inputs(e_hat, e_hat_prime, "ssl_loss");
    Tensor logits = g.scale(g.matmul(e_hat, g.transpose(e_hat_prime)), 1.0 / cfg.tau_ssl);
    return direction_loss(g, logits);
}

// ---------------------------------------------------------------------------
// Augmentations

void AugmentationConfig::validate() const {
    if (jitter_sigma < 0.0) throw ConfigError("augmentation: jitter_sigma must be >= 0");
    if (!(scale_lo > 0.0) || scale_hi < scale_lo)
        throw ConfigError("augmentation: scale range must be positive with lo <= hi");
    if (num_segments < 2) throw ConfigError("augmentation: num_segments must be >= 2");
    if (invert_prob < 0.0 || invert_prob > 1.0)
        throw ConfigError("augmentation: invert_prob must lie in [0, 1]");
}

std::pair<Tensor, Tensor> augment_pair(const Tensor& signal, const AugmentationConfig& cfg,
                                       Rng& rng) {
    cfg.validate();
    if (!signal.defined() || signal.rank() != 2)
        throw DimensionError("augment_pair: expects a [leads, L] signal");
    const int leads = signal.dim(0), L = signal.dim(1);
    if (cfg.num_segments > L)
        throw ContractError("augment_pair: num_segments " + std::to_string(cfg.num_segments) +
                            " exceeds signal length " + std::to_string(L));

    // Pinned draw order: scale, segment permutation, inversion, weak noise,
    // strong noise. Everything but the noise is shared across leads.
    const double scale = rng.uniform(cfg.scale_lo, cfg.scale_hi);

    const int S = cfg.num_segments;
    std::vector<int> seg_order(S);
    std::iota(seg_order.begin(), seg_order.end(), 0);
    rng.shuffle(seg_order);

    const bool invert = rng.uniform() < cfg.invert_prob;

    // Per-lead population std for the jitter scale.
    const auto x = signal.values();
    std::vector<double> lead_sigma(leads, 0.0);
    if (cfg.jitter_sigma > 0.0)
        for (int c = 0; c < leads; ++c) {
            const double* row = x.data() + static_cast<std::size_t>(c) * L;
            double mean = 0.0;
            for (int i = 0; i < L; ++i) mean += row[i];
            mean /= L;
            double var = 0.0;
            for (int i = 0; i < L; ++i) var += (row[i] - mean) * (row[i] - mean);
            lead_sigma[c] = cfg.jitter_sigma * std::sqrt(var / L);
        }

    std::vector<double> weak(x.begin(), x.end());
    if (cfg.jitter_sigma > 0.0)
        for (int c = 0; c < leads; ++c)
            for (int i = 0; i < L; ++i)
                weak[static_cast<std::size_t>(c) * L + i] += lead_sigma[c] * rng.normal();
    for (double& v : weak) v *= scale;

    // Near-equal segment bounds: the first L mod S segments get one extra.
    const int base = L / S, extra = L % S;
    std::vector<int> seg_start(S + 1, 0);
    for (int s = 0; s < S; ++s) seg_start[s + 1] = seg_start[s] + base + (s < extra ? 1 : 0);

    std::vector<double> strong(static_cast<std::size_t>(leads) * L);
    for (int c = 0; c < leads; ++c) {
        double* out = strong.data() + static_cast<std::size_t>(c) * L;
        const double* row = x.data() + static_cast<std::size_t>(c) * L;
        int pos = 0;
        for (int s = 0; s < S; ++s) {
            const int src = seg_order[s];
            for (int i = seg_start[src]; i < seg_start[src + 1]; ++i) out[pos++] = row[i];
        }
    }
    if (cfg.jitter_sigma > 0.0)
        for (int c = 0; c < leads; ++c)
            for (int i = 0; i < L; ++i)
                strong[static_cast<std::size_t>(c) * L + i] += lead_sigma[c] * rng.normal();
    if (invert)
        for (double& v : strong) v = -v;

    return {Tensor::from_data(signal.shape(), std::move(weak)),
            Tensor::from_data(signal.shape(), std::move(strong))};
}

}  // namespace etp
