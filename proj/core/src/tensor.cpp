#include "etp/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <utility>

namespace etp {

namespace detail {

struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until a backward pass touches it
    bool requires_grad = false;
    const Graph* producer = nullptr;  // graph that recorded this tensor's op

    std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
};

struct Node {
    const char* kind;
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    std::shared_ptr<TensorImpl> output;
    std::function<void()> backward;
};

}  // namespace detail

using detail::TensorImpl;

namespace {

std::int64_t shape_numel(const Shape& shape) {
    std::int64_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw DimensionError("tensor dimensions must be positive");
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

void require_defined(const Tensor& t, const char* op) {
    if (!t.defined()) throw ContractError(std::string(op) + ": undefined tensor");
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
}

std::vector<double>& ensure_grad(TensorImpl& t) {
    if (t.grad.empty()) t.grad.assign(t.data.size(), 0.0);
    return t.grad;
}

}  // namespace

double canonical_sum(std::span<const double> values) {
    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    double acc = 0.0;
    for (double v : sorted) acc += v;
    return acc;
}

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
    return full(shape, 0.0, requires_grad);
}

Tensor Tensor::full(const Shape& shape, double value, bool requires_grad) {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = shape;
    impl->data.assign(static_cast<std::size_t>(shape_numel(shape)), value);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::from_data(const Shape& shape, std::vector<double> values, bool requires_grad) {
    if (shape_numel(shape) != static_cast<std::int64_t>(values.size()))
        throw DimensionError("from_data: " + shape_str(shape) + " needs " +
                             std::to_string(shape_numel(shape)) + " values, got " +
                             std::to_string(values.size()));
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = shape;
    impl->data = std::move(values);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from_data({}, {value}, requires_grad);
}

const Shape& Tensor::shape() const {
    if (!impl_) throw ContractError("shape(): undefined tensor");
    return impl_->shape;
}

int Tensor::rank() const { return static_cast<int>(shape().size()); }

int Tensor::dim(int axis) const {
    const Shape& s = shape();
    if (axis < 0 || axis >= static_cast<int>(s.size()))
        throw DimensionError("dim(): axis out of range");
    return s[axis];
}

std::int64_t Tensor::size() const {
    if (!impl_) throw ContractError("size(): undefined tensor");
    return impl_->size();
}

std::span<const double> Tensor::values() const {
    if (!impl_) throw ContractError("values(): undefined tensor");
    return impl_->data;
}

std::span<double> Tensor::raw_values() {
    if (!impl_) throw ContractError("raw_values(): undefined tensor");
    return impl_->data;
}

double Tensor::item() const {
    if (size() != 1) throw ContractError("item(): tensor has " + std::to_string(size()) +
                                         " elements, expected 1");
    return impl_->data[0];
}

double Tensor::at(std::initializer_list<int> idx) const {
    const Shape& s = shape();
    if (idx.size() != s.size()) throw DimensionError("at(): index rank mismatch");
    std::int64_t off = 0;
    int axis = 0;
    for (int i : idx) {
        if (i < 0 || i >= s[axis]) throw DimensionError("at(): index out of range");
        off = off * s[axis] + i;
        ++axis;
    }
    return impl_->data[static_cast<std::size_t>(off)];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

void Tensor::set_requires_grad(bool value) {
    if (!impl_) throw ContractError("set_requires_grad(): undefined tensor");
    impl_->requires_grad = value;
}

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::span<const double> Tensor::grad() const {
    if (!impl_) throw ContractError("grad(): undefined tensor");
    return impl_->grad;
}

void Tensor::zero_grad() {
    if (!impl_) throw ContractError("zero_grad(): undefined tensor");
    impl_->grad.clear();
}

void Tensor::quantize_f32() {
    if (!impl_) throw ContractError("quantize_f32(): undefined tensor");
    for (double& v : impl_->data) v = static_cast<double>(static_cast<float>(v));
}

// ---------------------------------------------------------------------------
// Graph plumbing

Graph::Graph() = default;
Graph::~Graph() = default;

std::size_t Graph::node_count() const { return nodes_.size(); }

Tensor Graph::make_output(Shape shape, std::vector<double> values, bool requires_grad) {
    Tensor out = Tensor::from_data(shape, std::move(values), requires_grad);
    return out;
}

void Graph::record(const char* kind, std::vector<Tensor> inputs, const Tensor& output,
                   std::function<void()> backward_fn) {
    detail::Node node;
    node.kind = kind;
    node.inputs.reserve(inputs.size());
    for (const Tensor& t : inputs) node.inputs.push_back(t.impl_);
    node.output = output.impl_;
    node.backward = std::move(backward_fn);
    output.impl_->producer = this;
    nodes_.push_back(std::move(node));
}

void Graph::clear() { nodes_.clear(); }

void Graph::backward(const Tensor& loss) {
    require_defined(loss, "backward");
    if (loss.size() != 1)
        throw ContractError("backward: loss must be a single element, got " +
                            shape_str(loss.shape()));
    if (loss.impl_->producer != this)
        throw ContractError("backward: loss was not produced by this graph");

    // Reset every intermediate grad so repeated backward calls re-derive them
    // while leaf grads keep accumulating.
    for (detail::Node& node : nodes_) node.output->grad.clear();

    ensure_grad(*loss.impl_)[0] = 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        if (it->output->grad.empty()) continue;  // not on a path to the loss
        it->backward();
    }
}

// ---------------------------------------------------------------------------
// Elementwise ops

Tensor Graph::add(const Tensor& a, const Tensor& b) {
    require_defined(a, "add");
    require_defined(b, "add");
    require_same_shape(a, b, "add");
    const auto xa = a.values(), xb = b.values();
    std::vector<double> out(xa.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xa[i] + xb[i];
    Tensor y = make_output(a.shape(), std::move(out), a.requires_grad() || b.requires_grad());
    if (y.requires_grad()) {
        auto ai = a.impl_, bi = b.impl_, yi = y.impl_;
        record("add", {a, b}, y, [ai, bi, yi] {
            const auto& gy = yi->grad;
            if (ai->requires_grad) {
                auto& ga = ensure_grad(*ai);
                for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
            }
            if (bi->requires_grad) {
                auto& gb = ensure_grad(*bi);
                for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i];
            }
        });
    }
    return y;
}

Tensor Graph::sub(const Tensor& a, const Tensor& b) {
    require_defined(a, "sub");
    require_defined(b, "sub");
    require_same_shape(a, b, "sub");
    const auto xa = a.values(), xb = b.values();
    std::vector<double> out(xa.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xa[i] - xb[i];
    Tensor y = make_output(a.shape(), std::move(out), a.requires_grad() || b.requires_grad());
    if (y.requires_grad()) {
        auto ai = a.impl_, bi = b.impl_, yi = y.impl_;
        record("sub", {a, b}, y, [ai, bi, yi] {
            const auto& gy = yi->grad;
            if (ai->requires_grad) {
                auto& ga = ensure_grad(*ai);
                for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
            }
            if (bi->requires_grad) {
                auto& gb = ensure_grad(*bi);
                for (std::size_t i = 0; i < gy.size(); ++i) gb[i] -= gy[i];
            }
        });
    }
    return y;
}

Tensor Graph::mul(const Tensor& a, const Tensor& b) {
    require_defined(a, "mul");
    require_defined(b, "mul");
    require_same_shape(a, b, "mul");
    const auto xa = a.values(), xb = b.values();
    std::vector<double> out(xa.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xa[i] * xb[i];
    Tensor y = make_output(a.shape(), std::move(out), a.requires_grad() || b.requires_grad());
    if (y.requires_grad()) {
        auto ai = a.impl_, bi = b.impl_, yi = y.impl_;
        record("mul", {a, b}, y, [ai, bi, yi] {
            const auto& gy = yi->grad;
            if (ai->requires_grad) {
                auto& ga = ensure_grad(*ai);
                for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * bi->data[i];
            }
            if (bi->requires_grad) {
                auto& gb = ensure_grad(*bi);
                for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i] * ai->data[i];
            }
        });
    }
    return y;
}

Tensor Graph::add_scalar(const Tensor& t, double c) {
    require_defined(t, "add_scalar");
    const auto x = t.values();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + c;
    Tensor y = make_output(t.shape(), std::move(out), t.requires_grad());
    if (y.requires_grad()) {
        auto ti = t.impl_, yi = y.impl_;
        record("add_scalar", {t}, y, [ti, yi] {
            auto& gx = ensure_grad(*ti);
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += yi->grad[i];
        });
    }
    return y;
}

Tensor Graph::scale(const Tensor& t, double c) {
    require_defined(t, "scale");
    const auto x = t.values();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * c;
    Tensor y = make_output(t.shape(), std::move(out), t.requires_grad());
    if (y.requires_grad()) {
        auto ti = t.impl_, yi = y.impl_;
        record("scale", {t}, y, [ti, yi, c] {
            auto& gx = ensure_grad(*ti);
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += yi->grad[i] * c;
        });
    }
    return y;
}

Tensor Graph::neg(const Tensor& t) { return scale(t, -1.0); }

Tensor Graph::relu(const Tensor& t) {
    require_defined(t, "relu");
    const auto x = t.values();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
    Tensor y = make_output(t.shape(), std::move(out), t.requires_grad());
    if (y.requires_grad()) {
        auto ti = t.impl_, yi = y.impl_;
        record("relu", {t}, y, [ti, yi] {
            auto& gx = ensure_grad(*ti);
            for (std::size_t i = 0; i < gx.size(); ++i)
                if (ti->data[i] > 0.0) gx[i] += yi->grad[i];
        });
    }
    return y;
}

Tensor Graph::exp(const Tensor& t) {
    require_defined(t, "exp");
    const auto x = t.values();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(x[i]);
    Tensor y = make_output(t.shape(), std::move(out), t.requires_grad());
    if (y.requires_grad()) {
        auto ti = t.impl_, yi = y.impl_;
        record("exp", {t}, y, [ti, yi] {
            auto& gx = ensure_grad(*ti);
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += yi->grad[i] * yi->data[i];
        });
    }
    return y;
}

Tensor Graph::log(const Tensor& t) {
    require_defined(t, "log");
    const auto x = t.values();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (x[i] <= 0.0)
            throw NumericDomainError("log: non-positive input " + std::to_string(x[i]));
        out[i] = std::log(x[i]);
    }
    Tensor y = make_output(t.shape(), std::move(out), t.requires_grad());
    if (y.requires_grad()) {
        auto ti = t.impl_, yi = y.impl_;
        record("log", {t}, y, [ti, yi] {
            auto& gx = ensure_grad(*ti);
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += yi->grad[i] / ti->data[i];
        });
    }
    return y;
}

// ---------------------------------------------------------------------------
// Linear algebra

Tensor Graph::matmul(const Tensor& a, const Tensor& b) {
    require_defined(a, "matmul");
    require_defined(b, "matmul");
    if (a.rank() != 2 || b.rank() != 2) throw DimensionError("matmul: expects rank-2 tensors");
    const int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
    if (k != k2)
        throw DimensionError("matmul: inner dimensions disagree, " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
    std::vector<double> out(static_cast<std::size_t>(m) * n, 0.0);
    {
        const double* pa = a.values().data();
        const double* pb = b.values().data();
        double* po = out.data();
        for (int i = 0; i < m; ++i)
            for (int kk = 0; kk < k; ++kk) {
                const double aik = pa[i * k + kk];
                const double* brow = pb + static_cast<std::size_t>(kk) * n;
                double* orow = po + static_cast<std::size_t>(i) * n;
                for (int j = 0; j < n; ++j) orow[j] += aik * brow[j];
            }
    }
    Tensor y = make_output({m, n}, std::move(out), a.requires_grad() || b.requires_grad());
    if (y.requires_grad()) {
        auto ai = a.impl_, bi = b.impl_, yi = y.impl_;
        record("matmul", {a, b}, y, [ai, bi, yi, m, k, n] {
            const double* gy = yi->grad.data();
            if (ai->requires_grad) {
                double* ga = ensure_grad(*ai).data();
                const double* pb = bi->data.data();
                for (int i = 0; i < m; ++i)
                    for (int kk = 0; kk < k; ++kk) {
                        double acc = 0.0;
                        const double* grow = gy + static_cast<std::size_t>(i) * n;
                        const double* brow = pb + static_cast<std::size_t>(kk) * n;
                        for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
                        ga[i * k + kk] += acc;
                    }
            }
            if (bi->requires_grad) {
                double* gb = ensure_grad(*bi).data();
                const double* pa = ai->data.data();
                for (int i = 0; i < m; ++i)
                    for (int kk = 0; kk < k; ++kk) {
                        const double aik = pa[i * k + kk];
                        const double* grow = gy + static_cast<std::size_t>(i) * n;
                        double* gbrow = gb + static_cast<std::size_t>(kk) * n;
                        for (int j = 0; j < n; ++j) gbrow[j] += aik * grow[j];
                    }
            }
        });
    }
    return y;
}

Tensor Graph::transpose(const Tensor& t) {
    require_defined(t, "transpose");
    if (t.rank() != 2) throw DimensionError("transpose: expects rank-2 tensor");
    const int m = t.dim(0), n = t.dim(1);
    const auto x = t.values();
    std::vector<double> out(x.size());
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out[static_cast<std::size_t>(j) * m + i] = x[i * n + j];
    Tensor y = make_output({n, m}, std::move(out), t.requires_grad());
    if (y.requires_grad()) {
        auto ti = t.impl_, yi = y.impl_;
        record("transpose", {t}, y, [ti, yi, m, n] {
            auto& gx = ensure_grad(*ti);
            const auto& gy = yi->grad;
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j)
                    gx[static_cast<std::size_t>(i) * n + j] +=
                        gy[static_cast<std::size_t>(j) * m + i];
        });
    }
    return y;
}

Tensor Graph::add_bias_rows(const Tensor& x, const Tensor& bias) {
    require_defined(x, "add_bias_rows");
    require_defined(bias, "add_bias_rows");
    if (x.rank() != 2 || bias.rank() != 1) throw DimensionError("add_bias_rows: expects [m,n] and [n]");
    const int m = x.dim(0), n = x.dim(1);
    if (bias.dim(0) != n) throw DimensionError("add_bias_rows: bias length mismatch");
    const auto px = x.values();
    const auto pb = bias.values();
    std::vector<double> out(px.size());
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            out[static_cast<std::size_t>(i) * n + j] = px[i * n + j] + pb[j];
    Tensor y = make_output({m, n}, std::move(out), x.requires_grad() || bias.requires_grad());
    if (y.requires_grad()) {
        auto xi = x.impl_, bi = bias.impl_, yi = y.impl_;
        record("add_bias_rows", {x, bias}, y, [xi, bi, yi, m, n] {
            const auto& gy = yi->grad;
            if (xi->requires_grad) {
                auto& gx = ensure_grad(*xi);
                for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
            }
            if (bi->requires_grad) {
                auto& gb = ensure_grad(*bi);
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < n; ++j) gb[j] += gy[static_cast<std::size_t>(i) * n + j];
            }
        });
    }
    return y;
}

// ---------------------------------------------------------------------------
// Convolution / pooling / batchnorm

Tensor Graph::conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride,
                     int padding) {
    require_defined(x, "conv1d");
    require_defined(weight, "conv1d");
    if (x.rank() != 3 || weight.rank() != 3)
        throw DimensionError("conv1d: expects input [B,Cin,L] and weight [Cout,Cin,k]");
    const int B = x.dim(0), Cin = x.dim(1), L = x.dim(2);
    const int Cout = weight.dim(0), k = weight.dim(2);
    if (weight.dim(1) != Cin)
        throw DimensionError("conv1d: input has " + std::to_string(Cin) +
                             " channels but weight expects " + std::to_string(weight.dim(1)));
    if (stride < 1) throw ContractError("conv1d: stride must be >= 1");
    if (padding < 0) throw ContractError("conv1d: padding must be >= 0");
    if (L + 2 * padding < k)
        throw DimensionError("conv1d: kernel " + std::to_string(k) + " does not fit length " +
                             std::to_string(L) + " with padding " + std::to_string(padding));
    const bool has_bias = bias.defined();
    if (has_bias && (bias.rank() != 1 || bias.dim(0) != Cout))
        throw DimensionError("conv1d: bias must be [Cout]");
    const int Lo = (L + 2 * padding - k) / stride + 1;

    std::vector<double> out(static_cast<std::size_t>(B) * Cout * Lo, 0.0);
    const double* px = x.values().data();
    const double* pw = weight.values().data();
    for (int b = 0; b < B; ++b) {
        for (int co = 0; co < Cout; ++co) {
            double* orow = out.data() + (static_cast<std::size_t>(b) * Cout + co) * Lo;
            if (has_bias) {
                const double bb = bias.values()[co];
                for (int t = 0; t < Lo; ++t) orow[t] = bb;
            }
            for (int ci = 0; ci < Cin; ++ci) {
                const double* xrow = px + (static_cast<std::size_t>(b) * Cin + ci) * L;
                const double* wrow = pw + (static_cast<std::size_t>(co) * Cin + ci) * k;
                for (int j = 0; j < k; ++j) {
                    const double wj = wrow[j];
                    const int base = j - padding;
                    // valid t where 0 <= t*stride + base < L
                    int t0 = base < 0 ? (-base + stride - 1) / stride : 0;
                    int t1 = (L - 1 - base) / stride;  // inclusive
                    if (t1 > Lo - 1) t1 = Lo - 1;
                    if (stride == 1) {
                        const double* xs = xrow + base + t0;
                        for (int t = t0; t <= t1; ++t) orow[t] += wj * *xs++;
                    } else {
                        for (int t = t0; t <= t1; ++t) orow[t] += wj * xrow[t * stride + base];
                    }
                }
            }
        }
    }
    const bool needs_grad =
        x.requires_grad() || weight.requires_grad() || (has_bias && bias.requires_grad());
    Tensor y = make_output({B, Cout, Lo}, std::move(out), needs_grad);
    if (needs_grad) {
        auto xi = x.impl_, wi = weight.impl_, yi = y.impl_;
        auto bi = has_bias ? bias.impl_ : nullptr;
        std::vector<Tensor> inputs{x, weight};
        if (has_bias) inputs.push_back(bias);
        record("conv1d", std::move(inputs), y, [xi, wi, bi, yi, B, Cin, Cout, L, Lo, k, stride,
                                                padding] {
            const double* gy = yi->grad.data();
            if (bi && bi->requires_grad) {
                double* gb = ensure_grad(*bi).data();
                for (int b = 0; b < B; ++b)
                    for (int co = 0; co < Cout; ++co) {
                        const double* grow = gy + (static_cast<std::size_t>(b) * Cout + co) * Lo;
                        double acc = 0.0;
                        for (int t = 0; t < Lo; ++t) acc += grow[t];
                        gb[co] += acc;
                    }
            }
            if (wi->requires_grad) {
                double* gw = ensure_grad(*wi).data();
                const double* px = xi->data.data();
                for (int b = 0; b < B; ++b)
                    for (int co = 0; co < Cout; ++co) {
                        const double* grow = gy + (static_cast<std::size_t>(b) * Cout + co) * Lo;
                        for (int ci = 0; ci < Cin; ++ci) {
                            const double* xrow = px + (static_cast<std::size_t>(b) * Cin + ci) * L;
                            double* gwrow = gw + (static_cast<std::size_t>(co) * Cin + ci) * k;
                            for (int j = 0; j < k; ++j) {
                                const int base = j - padding;
                                int t0 = base < 0 ? (-base + stride - 1) / stride : 0;
                                int t1 = (L - 1 - base) / stride;
                                if (t1 > Lo - 1) t1 = Lo - 1;
                                double acc = 0.0;
                                if (stride == 1) {
                                    const double* xs = xrow + base + t0;
                                    for (int t = t0; t <= t1; ++t) acc += grow[t] * *xs++;
                                } else {
                                    for (int t = t0; t <= t1; ++t)
                                        acc += grow[t] * xrow[t * stride + base];
                                }
                                gwrow[j] += acc;
                            }
                        }
                    }
            }
            if (xi->requires_grad) {
                double* gx = ensure_grad(*xi).data();
                const double* pw = wi->data.data();
                for (int b = 0; b < B; ++b)
                    for (int co = 0; co < Cout; ++co) {
                        const double* grow = gy + (static_cast<std::size_t>(b) * Cout + co) * Lo;
                        for (int ci = 0; ci < Cin; ++ci) {
                            double* gxrow = gx + (static_cast<std::size_t>(b) * Cin + ci) * L;
                            const double* wrow = pw + (static_cast<std::size_t>(co) * Cin + ci) * k;
                            for (int j = 0; j < k; ++j) {
                                const double wj = wrow[j];
                                const int base = j - padding;
                                int t0 = base < 0 ? (-base + stride - 1) / stride : 0;
                                int t1 = (L - 1 - base) / stride;
                                if (t1 > Lo - 1) t1 = Lo - 1;
                                if (stride == 1) {
                                    double* xs = gxrow + base + t0;
                                    for (int t = t0; t <= t1; ++t) *xs++ += wj * grow[t];
                                } else {
                                    for (int t = t0; t <= t1; ++t)
                                        gxrow[t * stride + base] += wj * grow[t];
                                }
                            }
                        }
                    }
            }
        });
    }
    return y;
}

Tensor Graph::max_pool1d(const Tensor& t, int kernel, int stride, int padding) {
    require_defined(t, "max_pool1d");
    const bool flat = t.rank() == 1;
    if (!flat && t.rank() != 3) throw DimensionError("max_pool1d: expects [B,C,L] or [L]");
    const int B = flat ? 1 : t.dim(0);
    const int C = flat ? 1 : t.dim(1);
    const int L = flat ? t.dim(0) : t.dim(2);
    if (kernel < 1 || stride < 1) throw ContractError("max_pool1d: kernel and stride must be >= 1");
    if (padding < 0 || padding >= kernel)
        throw ContractError("max_pool1d: padding must satisfy 0 <= padding < kernel");
    if (L + 2 * padding < kernel)
        throw DimensionError("max_pool1d: window does not fit input length");
    const int Lo = (L + 2 * padding - kernel) / stride + 1;

    std::vector<double> out(static_cast<std::size_t>(B) * C * Lo);
    std::vector<int> argmax(out.size());
    const double* px = t.values().data();
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            const double* xrow = px + (static_cast<std::size_t>(b) * C + c) * L;
            const std::size_t obase = (static_cast<std::size_t>(b) * C + c) * Lo;
            for (int to = 0; to < Lo; ++to) {
                const int start = to * stride - padding;
                double best = -std::numeric_limits<double>::infinity();
                int best_i = -1;
                for (int j = 0; j < kernel; ++j) {
                    const int i = start + j;
                    if (i < 0 || i >= L) continue;  // padded position, never wins
                    if (xrow[i] > best) {
                        best = xrow[i];
                        best_i = i;
                    }
                }
                out[obase + to] = best;
                argmax[obase + to] = best_i;
            }
        }
    Shape out_shape = flat ? Shape{Lo} : Shape{B, C, Lo};
    Tensor y = make_output(std::move(out_shape), std::move(out), t.requires_grad());
    if (y.requires_grad()) {
        auto ti = t.impl_, yi = y.impl_;
        record("max_pool1d", {t}, y, [ti, yi, B, C, L, Lo, argmax = std::move(argmax)] {
            auto& gx = ensure_grad(*ti);
            const auto& gy = yi->grad;
            for (int b = 0; b < B; ++b)
                for (int c = 0; c < C; ++c) {
                    const std::size_t obase = (static_cast<std::size_t>(b) * C + c) * Lo;
                    const std::size_t xbase = (static_cast<std::size_t>(b) * C + c) * L;
                    for (int to = 0; to < Lo; ++to)
                        gx[xbase + argmax[obase + to]] += gy[obase + to];
                }
        });
    }
    return y;
}

Tensor Graph::global_avg_pool(const Tensor& t) {
    require_defined(t, "global_avg_pool");
    if (t.rank() != 3) throw DimensionError("global_avg_pool: expects [B,C,L]");
    const int B = t.dim(0), C = t.dim(1), L = t.dim(2);
    const double* px = t.values().data();
    std::vector<double> out(static_cast<std::size_t>(B) * C);
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            const double* xrow = px + (static_cast<std::size_t>(b) * C + c) * L;
            double acc = 0.0;
            for (int i = 0; i < L; ++i) acc += xrow[i];
            out[static_cast<std::size_t>(b) * C + c] = acc / L;
        }
    Tensor y = make_output({B, C}, std::move(out), t.requires_grad());
    if (y.requires_grad()) {
        auto ti = t.impl_, yi = y.impl_;
        record("global_avg_pool", {t}, y, [ti, yi, B, C, L] {
            auto& gx = ensure_grad(*ti);
            const auto& gy = yi->grad;
            for (int b = 0; b < B; ++b)
                for (int c = 0; c < C; ++c) {
                    const double g = gy[static_cast<std::size_t>(b) * C + c] / L;
                    double* gxrow = gx.data() + (static_cast<std::size_t>(b) * C + c) * L;
                    for (int i = 0; i < L; ++i) gxrow[i] += g;
                }
        });
    }
    return y;
}

Tensor Graph::batchnorm1d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                          BatchNormStats& stats, Mode mode, double momentum, double eps) {
    require_defined(x, "batchnorm1d");
    require_defined(gamma, "batchnorm1d");
    require_defined(beta, "batchnorm1d");
    if (x.rank() != 3) throw DimensionError("batchnorm1d: expects [B,C,L]");
    const int B = x.dim(0), C = x.dim(1), L = x.dim(2);
    if (gamma.rank() != 1 || gamma.dim(0) != C || beta.rank() != 1 || beta.dim(0) != C)
        throw DimensionError("batchnorm1d: gamma/beta must be [C]");
    if (!stats.running_mean.defined() || !stats.running_var.defined() ||
        stats.running_mean.size() != C || stats.running_var.size() != C)
        throw DimensionError("batchnorm1d: running stats must be [C]");
    const std::int64_t n = static_cast<std::int64_t>(B) * L;
    if (mode == Mode::Train && n <= 1)
        throw ContractError("batchnorm1d: degenerate batch, B*L must exceed 1 in train mode");

    const double* px = x.values().data();
    const double* pg = gamma.values().data();
    const double* pb = beta.values().data();
    std::vector<double> mean(C, 0.0), invstd(C, 0.0), xhat_mean_cache;
    if (mode == Mode::Train) {
        std::vector<double> var(C, 0.0);
        for (int c = 0; c < C; ++c) {
            double acc = 0.0;
            for (int b = 0; b < B; ++b) {
                const double* xrow = px + (static_cast<std::size_t>(b) * C + c) * L;
                for (int i = 0; i < L; ++i) acc += xrow[i];
            }
            mean[c] = acc / static_cast<double>(n);
            double vacc = 0.0;
            for (int b = 0; b < B; ++b) {
                const double* xrow = px + (static_cast<std::size_t>(b) * C + c) * L;
                for (int i = 0; i < L; ++i) {
                    const double d = xrow[i] - mean[c];
                    vacc += d * d;
                }
            }
            var[c] = vacc / static_cast<double>(n);
            invstd[c] = 1.0 / std::sqrt(var[c] + eps);
        }
        // Running stats track the batch statistics (variance unbiased), and
        // stay on the float32 grid like all other persistent training state.
        auto rm = stats.running_mean.raw_values();
        auto rv = stats.running_var.raw_values();
        const double unbias = static_cast<double>(n) / static_cast<double>(n - 1);
        for (int c = 0; c < C; ++c) {
            rm[c] = static_cast<double>(
                static_cast<float>((1.0 - momentum) * rm[c] + momentum * mean[c]));
            rv[c] = static_cast<double>(
                static_cast<float>((1.0 - momentum) * rv[c] + momentum * var[c] * unbias));
        }
    } else {
        const auto rm = stats.running_mean.values();
        const auto rv = stats.running_var.values();
        for (int c = 0; c < C; ++c) {
            mean[c] = rm[c];
            invstd[c] = 1.0 / std::sqrt(rv[c] + eps);
        }
    }

    std::vector<double> out(static_cast<std::size_t>(B) * C * L);
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            const double* xrow = px + (static_cast<std::size_t>(b) * C + c) * L;
            double* orow = out.data() + (static_cast<std::size_t>(b) * C + c) * L;
            const double m = mean[c], is = invstd[c], g = pg[c], bb = pb[c];
            for (int i = 0; i < L; ++i) orow[i] = g * (xrow[i] - m) * is + bb;
        }
    const bool needs_grad = x.requires_grad() || gamma.requires_grad() || beta.requires_grad();
    Tensor y = make_output({B, C, L}, std::move(out), needs_grad);
    if (needs_grad) {
        auto xi = x.impl_, gi = gamma.impl_, bi = beta.impl_, yi = y.impl_;
        const bool train = mode == Mode::Train;
        record("batchnorm1d", {x, gamma, beta}, y,
               [xi, gi, bi, yi, B, C, L, n, train, mean = std::move(mean),
                invstd = std::move(invstd)] {
                   const double* gy = yi->grad.data();
                   const double* px = xi->data.data();
                   for (int c = 0; c < C; ++c) {
                       const double m = mean[c], is = invstd[c];
                       // channel-wise sums of gy and gy*xhat
                       double sum_gy = 0.0, sum_gyx = 0.0;
                       for (int b = 0; b < B; ++b) {
                           const std::size_t base = (static_cast<std::size_t>(b) * C + c) * L;
                           for (int i = 0; i < L; ++i) {
                               const double xh = (px[base + i] - m) * is;
                               sum_gy += gy[base + i];
                               sum_gyx += gy[base + i] * xh;
                           }
                       }
                       if (bi->requires_grad) ensure_grad(*bi)[c] += sum_gy;
                       if (gi->requires_grad) ensure_grad(*gi)[c] += sum_gyx;
                       if (xi->requires_grad) {
                           double* gx = ensure_grad(*xi).data();
                           const double g = gi->data[c];
                           if (train) {
                               const double mean_gy = sum_gy / static_cast<double>(n);
                               const double mean_gyx = sum_gyx / static_cast<double>(n);
                               for (int b = 0; b < B; ++b) {
                                   const std::size_t base =
                                       (static_cast<std::size_t>(b) * C + c) * L;
                                   for (int i = 0; i < L; ++i) {
                                       const double xh = (px[base + i] - m) * is;
                                       gx[base + i] +=
                                           g * is * (gy[base + i] - mean_gy - xh * mean_gyx);
                                   }
                               }
                           } else {
                               for (int b = 0; b < B; ++b) {
                                   const std::size_t base =
                                       (static_cast<std::size_t>(b) * C + c) * L;
                                   for (int i = 0; i < L; ++i) gx[base + i] += g * is * gy[base + i];
                               }
                           }
                       }
                   }
               });
    }
    return y;
}

// ---------------------------------------------------------------------------
// Reductions

Tensor Graph::sum(const Tensor& t) {
    require_defined(t, "sum");
    Tensor y = make_output({}, {canonical_sum(t.values())}, t.requires_grad());
    if (y.requires_grad()) {
        auto ti = t.impl_, yi = y.impl_;
        record("sum", {t}, y, [ti, yi] {
            auto& gx = ensure_grad(*ti);
            const double g = yi->grad[0];
            for (double& v : gx) v += g;
        });
    }
    return y;
}

Tensor Graph::sum(const Tensor& t, int axis) {
    require_defined(t, "sum");
    const Shape& s = t.shape();
    if (axis < 0 || axis >= static_cast<int>(s.size()))
        throw DimensionError("sum: axis " + std::to_string(axis) + " out of range for " +
                             shape_str(s));
    std::int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= s[i];
    for (int i = axis + 1; i < static_cast<int>(s.size()); ++i) inner *= s[i];
    const std::int64_t d = s[axis];
    Shape out_shape;
    for (int i = 0; i < static_cast<int>(s.size()); ++i)
        if (i != axis) out_shape.push_back(s[i]);
    std::vector<double> out(static_cast<std::size_t>(outer * inner), 0.0);
    const double* px = t.values().data();
    for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t a = 0; a < d; ++a)
            for (std::int64_t i = 0; i < inner; ++i)
                out[static_cast<std::size_t>(o * inner + i)] += px[(o * d + a) * inner + i];
    Tensor y = make_output(std::move(out_shape), std::move(out), t.requires_grad());
    if (y.requires_grad()) {
        auto ti = t.impl_, yi = y.impl_;
        record("sum_axis", {t}, y, [ti, yi, outer, inner, d] {
            auto& gx = ensure_grad(*ti);
            const auto& gy = yi->grad;
            for (std::int64_t o = 0; o < outer; ++o)
                for (std::int64_t a = 0; a < d; ++a)
                    for (std::int64_t i = 0; i < inner; ++i)
                        gx[static_cast<std::size_t>((o * d + a) * inner + i)] +=
                            gy[static_cast<std::size_t>(o * inner + i)];
        });
    }
    return y;
}

Tensor Graph::mean(const Tensor& t) {
    require_defined(t, "mean");
    const double n = static_cast<double>(t.size());
    Tensor y = make_output({}, {canonical_sum(t.values()) / n}, t.requires_grad());
    if (y.requires_grad()) {
        auto ti = t.impl_, yi = y.impl_;
        record("mean", {t}, y, [ti, yi, n] {
            auto& gx = ensure_grad(*ti);
            const double g = yi->grad[0] / n;
            for (double& v : gx) v += g;
        });
    }
    return y;
}

Tensor Graph::mean(const Tensor& t, int axis) {
    Tensor s = sum(t, axis);
    return scale(s, 1.0 / static_cast<double>(t.shape()[axis]));
}

// ---------------------------------------------------------------------------
// Normalization / loss helpers

Tensor Graph::l2_normalize(const Tensor& t) {
    require_defined(t, "l2_normalize");
    const bool flat = t.rank() == 1;
    if (!flat && t.rank() != 2) throw DimensionError("l2_normalize: expects [B,d] or [d]");
    const int B = flat ? 1 : t.dim(0);
    const int d = flat ? t.dim(0) : t.dim(1);
    const double* px = t.values().data();
    std::vector<double> out(t.values().size());
    std::vector<double> norms(B);
    for (int b = 0; b < B; ++b) {
        const double* row = px + static_cast<std::size_t>(b) * d;
        double acc = 0.0;
        for (int j = 0; j < d; ++j) acc += row[j] * row[j];
        const double norm = std::sqrt(acc);
        if (norm <= 1e-12)
            throw NumericDomainError("l2_normalize: row " + std::to_string(b) +
                                     " has near-zero norm");
        norms[b] = norm;
        double* orow = out.data() + static_cast<std::size_t>(b) * d;
        for (int j = 0; j < d; ++j) orow[j] = row[j] / norm;
    }
    Tensor y = make_output(t.shape(), std::move(out), t.requires_grad());
    if (y.requires_grad()) {
        auto ti = t.impl_, yi = y.impl_;
        record("l2_normalize", {t}, y, [ti, yi, B, d, norms = std::move(norms)] {
            auto& gx = ensure_grad(*ti);
            const auto& gy = yi->grad;
            for (int b = 0; b < B; ++b) {
                const std::size_t base = static_cast<std::size_t>(b) * d;
                double dot = 0.0;
                for (int j = 0; j < d; ++j) dot += gy[base + j] * yi->data[base + j];
                for (int j = 0; j < d; ++j)
                    gx[base + j] += (gy[base + j] - yi->data[base + j] * dot) / norms[b];
            }
        });
    }
    return y;
}

Tensor Graph::log_sum_exp_rows(const Tensor& t) {
    require_defined(t, "log_sum_exp_rows");
    if (t.rank() != 2) throw DimensionError("log_sum_exp_rows: expects [B,n]");
    const int B = t.dim(0), n = t.dim(1);
    const double* px = t.values().data();
    std::vector<double> out(B);
    std::vector<double> scratch(n);
    for (int b = 0; b < B; ++b) {
        const double* row = px + static_cast<std::size_t>(b) * n;
        double m = row[0];
        for (int j = 1; j < n; ++j) m = std::max(m, row[j]);
        for (int j = 0; j < n; ++j) scratch[j] = std::exp(row[j] - m);
        out[b] = m + std::log(canonical_sum(scratch));
    }
    Tensor y = make_output({B}, std::move(out), t.requires_grad());
    if (y.requires_grad()) {
        auto ti = t.impl_, yi = y.impl_;
        record("log_sum_exp_rows", {t}, y, [ti, yi, B, n] {
            auto& gx = ensure_grad(*ti);
            const auto& gy = yi->grad;
            for (int b = 0; b < B; ++b) {
                const std::size_t base = static_cast<std::size_t>(b) * n;
                const double lse = yi->data[b];
                for (int j = 0; j < n; ++j)
                    gx[base + j] += gy[b] * std::exp(ti->data[base + j] - lse);
            }
        });
    }
    return y;
}

Tensor Graph::diagonal(const Tensor& t) {
    require_defined(t, "diagonal");
    if (t.rank() != 2 || t.dim(0) != t.dim(1))
        throw DimensionError("diagonal: expects a square matrix");
    const int B = t.dim(0);
    const double* px = t.values().data();
    std::vector<double> out(B);
    for (int b = 0; b < B; ++b) out[b] = px[static_cast<std::size_t>(b) * B + b];
    Tensor y = make_output({B}, std::move(out), t.requires_grad());
    if (y.requires_grad()) {
        auto ti = t.impl_, yi = y.impl_;
        record("diagonal", {t}, y, [ti, yi, B] {
            auto& gx = ensure_grad(*ti);
            for (int b = 0; b < B; ++b) gx[static_cast<std::size_t>(b) * B + b] += yi->grad[b];
        });
    }
    return y;
}

Tensor Graph::take_per_row(const Tensor& t, const std::vector<int>& cols) {
    require_defined(t, "take_per_row");
    if (t.rank() != 2) throw DimensionError("take_per_row: expects [B,C]");
    const int B = t.dim(0), C = t.dim(1);
    if (static_cast<int>(cols.size()) != B)
        throw DimensionError("take_per_row: need one column index per row");
    for (int c : cols)
        if (c < 0 || c >= C) throw DimensionError("take_per_row: column index out of range");
    const double* px = t.values().data();
    std::vector<double> out(B);
    for (int b = 0; b < B; ++b) out[b] = px[static_cast<std::size_t>(b) * C + cols[b]];
    Tensor y = make_output({B}, std::move(out), t.requires_grad());
    if (y.requires_grad()) {
        auto ti = t.impl_, yi = y.impl_;
        record("take_per_row", {t}, y, [ti, yi, B, C, cols] {
            auto& gx = ensure_grad(*ti);
            for (int b = 0; b < B; ++b)
                gx[static_cast<std::size_t>(b) * C + cols[b]] += yi->grad[b];
        });
    }
    return y;
}

Tensor Graph::embedding_mean(const Tensor& table, const std::vector<std::vector<int>>& ids,
                             const std::vector<std::vector<int>>& mask) {
    require_defined(table, "embedding_mean");
    if (table.rank() != 2) throw DimensionError("embedding_mean: table must be [V,E]");
    const int V = table.dim(0), E = table.dim(1);
    const int B = static_cast<int>(ids.size());
    if (mask.size() != ids.size()) throw DimensionError("embedding_mean: ids/mask size mismatch");
    if (B == 0) throw ContractError("embedding_mean: empty batch");

    const double* pt = table.values().data();
    std::vector<double> out(static_cast<std::size_t>(B) * E, 0.0);
    std::vector<double> counts(B, 0.0);
    for (int b = 0; b < B; ++b) {
        if (ids[b].size() != mask[b].size())
            throw DimensionError("embedding_mean: ids/mask length mismatch in row " +
                                 std::to_string(b));
        double count = 0.0;
        double* orow = out.data() + static_cast<std::size_t>(b) * E;
        for (std::size_t tk = 0; tk < ids[b].size(); ++tk) {
            if (!mask[b][tk]) continue;
            const int id = ids[b][tk];
            if (id < 0 || id >= V)
                throw ContractError("embedding_mean: token id " + std::to_string(id) +
                                    " outside vocabulary of size " + std::to_string(V));
            const double* row = pt + static_cast<std::size_t>(id) * E;
            for (int e = 0; e < E; ++e) orow[e] += row[e];
            count += 1.0;
        }
        if (count == 0.0)
            throw ContractError("embedding_mean: row " + std::to_string(b) +
                                " has every token masked");
        for (int e = 0; e < E; ++e) orow[e] /= count;
        counts[b] = count;
    }
    Tensor y = make_output({B, E}, std::move(out), table.requires_grad());
    if (y.requires_grad()) {
        auto ti = table.impl_, yi = y.impl_;
        record("embedding_mean", {table}, y,
               [ti, yi, B, E, ids, mask, counts = std::move(counts)] {
                   auto& gt = ensure_grad(*ti);
                   const auto& gy = yi->grad;
                   for (int b = 0; b < B; ++b) {
                       const std::size_t base = static_cast<std::size_t>(b) * E;
                       for (std::size_t tk = 0; tk < ids[b].size(); ++tk) {
                           if (!mask[b][tk]) continue;
                           double* grow = gt.data() + static_cast<std::size_t>(ids[b][tk]) * E;
                           for (int e = 0; e < E; ++e) grow[e] += gy[base + e] / counts[b];
                       }
                   }
               });
    }
    return y;
}

}  // namespace etp
