// Microbenchmarks for the hot paths: convolution forward/backward, the
// encoder trunk, the contrastive loss, and augmentation. Run via
// `./benchmarks/etp_bench` (google-benchmark CLI flags apply).

#include <benchmark/benchmark.h>

#include <utility>
#include <vector>

#include "etp/nets.hpp"
#include "etp/objectives.hpp"
#include "etp/rng.hpp"
#include "etp/tensor.hpp"

namespace {

using namespace etp;

Tensor random_tensor(const Shape& shape, Rng& rng, double scale = 1.0) {
    std::int64_t n = 1;
    for (int d : shape) n *= d;
    std::vector<double> values(static_cast<std::size_t>(n));
    for (double& v : values) v = scale * rng.normal();
    return Tensor::from_data(shape, std::move(values));
}

Tensor random_unit_rows(int rows, int dim, Rng& rng) {
    Tensor t = random_tensor({rows, dim}, rng);
    Graph g;
    return g.l2_normalize(t);
}

void BM_Conv1dForward(benchmark::State& state) {
    Rng rng(1);
    const Tensor x = random_tensor({32, 12, 512}, rng);
    const Tensor w = random_tensor({8, 12, 7}, rng, 0.3);
    for (auto _ : state) {
        Graph g;
        benchmark::DoNotOptimize(g.conv1d(x, w, Tensor(), 2, 3));
    }
}
BENCHMARK(BM_Conv1dForward);

void BM_Conv1dBackward(benchmark::State& state) {
    Rng rng(1);
    Tensor x = random_tensor({32, 12, 512}, rng);
    Tensor w = random_tensor({8, 12, 7}, rng, 0.3);
    x.set_requires_grad(true);
    w.set_requires_grad(true);
    for (auto _ : state) {
        x.zero_grad();
        w.zero_grad();
        Graph g;
        g.backward(g.sum(g.conv1d(x, w, Tensor(), 2, 3)));
    }
}
BENCHMARK(BM_Conv1dBackward);

void BM_TinyEncoderForward(benchmark::State& state) {
    Rng init(2);
    EcgEncoder encoder(EcgEncoderConfig::tiny(), init);
    Rng rng(3);
    const Tensor x = random_tensor({8, 12, 512}, rng, 0.4);
    for (auto _ : state) {
        Graph g;
        benchmark::DoNotOptimize(encoder.forward(g, x, Mode::Eval));
    }
}
BENCHMARK(BM_TinyEncoderForward);

void BM_CrossModalLossBackward(benchmark::State& state) {
    Rng rng(4);
    Tensor e = random_unit_rows(32, 32, rng);
    Tensor t = random_unit_rows(32, 32, rng);
    e.set_requires_grad(true);
    t.set_requires_grad(true);
    const ContrastiveConfig cfg;
    for (auto _ : state) {
        e.zero_grad();
        t.zero_grad();
        Graph g;
        g.backward(cross_modal_loss(g, e, t, cfg));
    }
}
BENCHMARK(BM_CrossModalLossBackward);

void BM_AugmentPair(benchmark::State& state) {
    Rng rng(5);
    const Tensor signal = random_tensor({12, 512}, rng, 0.4);
    const AugmentationConfig cfg;
    Rng draws(6);
    for (auto _ : state) {
        benchmark::DoNotOptimize(augment_pair(signal, cfg, draws));
    }
}
BENCHMARK(BM_AugmentPair);

}  // namespace

BENCHMARK_MAIN();
