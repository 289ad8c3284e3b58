#pragma once

// Central finite-difference gradient checker. Every differentiable op is
// validated against the same oracle: central differences at h = 1e-5 in
// float64, compared by relative error with an absolute floor of 1.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "etp/tensor.hpp"

namespace etp::test {

inline double rel_err(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max({1.0, std::abs(analytic), std::abs(numeric)});
}

struct GradCheckResult {
    double worst = 0.0;   // max relative error over every input element
    std::string where;    // "leaf <i> element <j>" for the worst offender
};

// scalar_fn must rebuild its computation from the given leaves on every
// call; it is invoked once on a fresh graph for the analytic pass and twice
// per input element for the numeric passes.
inline GradCheckResult gradcheck(
    const std::function<Tensor(Graph&, const std::vector<Tensor>&)>& scalar_fn,
    std::vector<Tensor> leaves, double h = 1e-5) {
    for (auto& leaf : leaves) {
        leaf.set_requires_grad(true);
        leaf.zero_grad();
    }
    Graph g;
    Tensor loss = scalar_fn(g, leaves);
    g.backward(loss);

    std::vector<std::vector<double>> analytic;
    for (auto& leaf : leaves) {
        auto span = leaf.grad();
        if (span.empty())
            analytic.emplace_back(static_cast<std::size_t>(leaf.size()), 0.0);
        else
            analytic.emplace_back(span.begin(), span.end());
    }

    GradCheckResult result;
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        auto vals = leaves[li].raw_values();
        for (std::size_t i = 0; i < vals.size(); ++i) {
            const double keep = vals[i];
            vals[i] = keep + h;
            Graph gp;
            const double up = scalar_fn(gp, leaves).item();
            vals[i] = keep - h;
            Graph gm;
            const double down = scalar_fn(gm, leaves).item();
            vals[i] = keep;
            const double numeric = (up - down) / (2.0 * h);
            const double err = rel_err(analytic[li][i], numeric);
            if (err > result.worst) {
                result.worst = err;
                result.where =
                    "leaf " + std::to_string(li) + " element " + std::to_string(i);
            }
        }
    }
    return result;
}

}  // namespace etp::test
