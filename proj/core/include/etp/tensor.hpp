#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "etp/errors.hpp"

namespace etp {

using Shape = std::vector<int>;

enum class Mode { Train, Eval };

namespace detail {
struct TensorImpl;
struct Node;
}  // namespace detail

/// Dense row-major tensor of doubles. Copying a Tensor copies the handle;
/// the buffer is shared. Rank-0 tensors (shape {}) hold a single scalar.
///
/// Gradient-carrying tensors participate in a Graph (see below): ops never
/// mutate their inputs' buffers, and backward() accumulates d(loss)/d(leaf)
/// into each requires-grad leaf.
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(const Shape& shape, bool requires_grad = false);
    static Tensor full(const Shape& shape, double value, bool requires_grad = false);
    static Tensor from_data(const Shape& shape, std::vector<double> values,
                            bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const;
    int rank() const;
    int dim(int axis) const;
    std::int64_t size() const;

    std::span<const double> values() const;
    /// Mutable view of the buffer. Reserved for leaf initialization and
    /// in-place parameter updates between steps; graph ops never call it.
    std::span<double> raw_values();

    double item() const;                    ///< value of a single-element tensor
    double at(std::initializer_list<int> idx) const;

    bool requires_grad() const;
    void set_requires_grad(bool value);
    bool has_grad() const;
    std::span<const double> grad() const;   ///< empty span when no grad accumulated
    void zero_grad();

    /// Rounds every element to the nearest float32 value (kept in double
    /// storage). Training state lives on this grid so checkpoints written
    /// as float32 round-trip bitwise.
    void quantize_f32();

    bool same_buffer_as(const Tensor& other) const { return impl_ == other.impl_; }

  private:
    friend class Graph;
    friend struct detail::TensorImpl;
    explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
    std::shared_ptr<detail::TensorImpl> impl_;
};

/// Running batchnorm statistics. Updated in train mode, read in eval mode;
/// separate from the op's differentiable inputs.
struct BatchNormStats {
    Tensor running_mean;
    Tensor running_var;
};

/// Reverse-mode tape. One Graph records one forward pass; backward() walks
/// the recorded nodes once in reverse topological (= recording) order.
/// Graphs are single-threaded; distinct graphs over distinct tensors may
/// run concurrently.
///
/// Full reductions (sum/mean over all elements) and log_sum_exp_rows
/// accumulate in value-sorted order, so their results do not depend on the
/// layout of the summands. This is what makes the contrastive losses exactly
/// invariant under batch permutation.
class Graph {
  public:
    Graph();
    ~Graph();
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    // Elementwise. add/sub/mul demand equal shapes; scalar variants broadcast.
    Tensor add(const Tensor& a, const Tensor& b);
    Tensor sub(const Tensor& a, const Tensor& b);
    Tensor mul(const Tensor& a, const Tensor& b);
    Tensor add_scalar(const Tensor& t, double c);
    Tensor scale(const Tensor& t, double c);
    Tensor neg(const Tensor& t);
    Tensor relu(const Tensor& t);
    Tensor exp(const Tensor& t);
    Tensor log(const Tensor& t);

    // Linear algebra (rank-2).
    Tensor matmul(const Tensor& a, const Tensor& b);
    Tensor transpose(const Tensor& t);
    Tensor add_bias_rows(const Tensor& x, const Tensor& bias);  ///< [m,n] + [n]

    // Convolution / pooling / normalization.
    /// Cross-correlation over [B,Cin,L] with weight [Cout,Cin,k]. Pass an
    /// undefined Tensor as bias for bias-free convolution.
    Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride,
                  int padding);
    /// Max pooling over the last axis; accepts [B,C,L] or a rank-1 [L].
    /// Ties go to the lowest index. Padded positions never win.
    Tensor max_pool1d(const Tensor& t, int kernel, int stride, int padding = 0);
    Tensor global_avg_pool(const Tensor& t);  ///< [B,C,L] -> [B,C]
    Tensor batchnorm1d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                       BatchNormStats& stats, Mode mode, double momentum = 0.1,
                       double eps = 1e-5);

    // Reductions.
    Tensor sum(const Tensor& t);
    Tensor sum(const Tensor& t, int axis);
    Tensor mean(const Tensor& t);
    Tensor mean(const Tensor& t, int axis);

    // Rows of [B,d] (or one rank-1 vector) to unit L2 norm.
    Tensor l2_normalize(const Tensor& t);
    /// Row-wise log(sum_j exp(x_ij)) evaluated in shifted (log-sum-exp) form.
    Tensor log_sum_exp_rows(const Tensor& t);
    Tensor diagonal(const Tensor& t);  ///< [B,B] -> [B]
    Tensor take_per_row(const Tensor& t, const std::vector<int>& cols);  ///< [B,C],[B] -> [B]

    /// Masked mean of embedding rows: out[b] = mean of table[ids[b][t]] over
    /// unmasked t. Gradient scatter-adds into the table.
    Tensor embedding_mean(const Tensor& table, const std::vector<std::vector<int>>& ids,
                          const std::vector<std::vector<int>>& mask);

    /// Accumulates d(loss)/d(leaf) into every requires-grad leaf reachable
    /// from `loss`. Non-leaf grads are reset first, so calling backward
    /// twice on the same graph doubles the leaf grads.
    void backward(const Tensor& loss);

    std::size_t node_count() const;
    void clear();

  private:
    Tensor make_output(Shape shape, std::vector<double> values, bool requires_grad);
    void record(const char* kind, std::vector<Tensor> inputs, const Tensor& output,
                std::function<void()> backward_fn);

    std::vector<detail::Node> nodes_;
};

/// Sum of `values` accumulated in ascending value order; permutation
/// invariant by construction. Shared by the canonical reductions.
double canonical_sum(std::span<const double> values);

}  // namespace etp
