// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mspt {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tensor;

namespace detail {
struct TensorImpl;
} // namespace detail

// Called during backward with the gradient flowing into the op's output.
// Implementations accumulate into the parents that require a gradient.
using BackwardFn = std::function<void(std::span<const double> out_grad, std::span<Tensor> parents)>;

/// Dense row-major f64 tensor with an optional reverse-mode graph edge.
///
/// A Tensor is a shared handle: copies alias the same storage. Leaves are
/// created with `requires_grad` and accumulate gradients across backward
/// calls until `zero_grad`. Op results record their parents only when at
/// least one parent requires a gradient, so eval-mode passes build no graph.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const noexcept { return impl_ != nullptr; }
    const Shape& shape() const;
    std::size_t dim(std::size_t axis) const;
    std::size_t rank() const { return shape().size(); }
    std::size_t numel() const;

    std::span<const double> values() const;
    // Mutable access is meant for leaves (optimizer updates, finite differences).
    std::span<double> mutable_values();
    double item() const;

    bool requires_grad() const;
    void set_requires_grad(bool on);
    bool is_leaf() const;

    bool has_grad() const;
    std::span<const double> grad() const;
    // Returns the gradient buffer, allocating zeros on first use.
    std::span<double> grad_buffer();
    void zero_grad();

    // Copy of the values with no graph linkage.
    Tensor detach() const;

    /// Reverse-mode sweep from a scalar root. Leaf gradients accumulate;
    /// interior gradients are recomputed from zero on every call.
    void backward() const;

    // Builds an op result. `parents` are retained only if one of them requires
    // a gradient; otherwise `fn` is dropped and the result is a constant.
    static Tensor make_result(Shape shape, std::vector<double> values, std::vector<Tensor> parents,
                              BackwardFn fn);

    bool same_storage(const Tensor& other) const noexcept { return impl_ == other.impl_; }

private:
    explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
    std::shared_ptr<detail::TensorImpl> impl_;
};

// While alive, op results on this thread record no graph (inference passes).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

// ---------------------------------------------------------------------------
// Ops. Every op validates shapes and throws InvalidArgument naming the
// offending dimension.

struct Conv2dOptions {
    std::size_t stride = 1;
    std::size_t padding = 0;
    std::size_t groups = 1;
};

/// NCHW convolution with zero padding. `bias` may be an undefined Tensor.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, Conv2dOptions opts = {});

enum class BnMode { train, eval };

struct RunningStats {
    std::vector<double> mean;
    std::vector<double> var;
    bool initialized = false;

    static RunningStats fresh(std::size_t channels);
};

struct BatchNormOptions {
    BnMode mode = BnMode::train;
    double momentum = 0.1;
    double epsilon = 1e-5;
    // When false, train mode normalizes by batch moments but leaves `stats` alone.
    bool update_stats = true;
};

/// Per-channel batch normalization over (N, H, W). In train mode running
/// stats move as run <- (1 - momentum) * run + momentum * batch, using the
/// unbiased batch variance for the running estimate.
Tensor batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta, RunningStats& stats,
                  const BatchNormOptions& opts);

enum class Activation { relu, hard_swish, hard_sigmoid, sigmoid, identity };

const char* activation_name(Activation kind);

/// Elementwise activation. At kinks the derivative takes the left-hand piece,
/// so relu'(0) = 0 and hard_swish'(-3) = 0.
Tensor apply_activation(Activation kind, const Tensor& input);

Tensor global_avg_pool(const Tensor& input);

/// [N, F_in] x [F_out, F_in]^T + [F_out]
Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias);

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor sum(const Tensor& input);
Tensor reshape(const Tensor& input, Shape shape);

/// x[n, c, h, w] * gate[n, c]; the squeeze-excite rescale.
Tensor channel_scale(const Tensor& input, const Tensor& gate);

// ---------------------------------------------------------------------------
// Finite-difference verification.

struct GradReport {
    std::string op_name;
    double max_relative_error = 0.0;
    std::vector<double> errors;
    std::vector<double> analytic;
    std::vector<double> numeric;

    bool passed(double tol) const { return max_relative_error < tol; }
};

double relative_error(double a, double b);

/// Compares the analytic gradient of `builder(x)` at `point` against central
/// differences (f(x+h) - f(x-h)) / 2h.
GradReport grad_check(const std::string& op_name, const std::function<Tensor(const Tensor&)>& builder,
                      const Tensor& point, double h);

/// Same check, but perturbs an existing leaf in place (e.g. a model
/// parameter). `loss` must rebuild the graph on every call. The leaf's values
/// are restored and its gradient cleared before returning.
GradReport grad_check_leaf(const std::string& op_name, const std::function<Tensor()>& loss, Tensor leaf,
                           double h);

} // namespace mspt
