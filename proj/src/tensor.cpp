// SPDX-License-Identifier: Apache-2.0
#include "mspt/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "mspt/errors.hpp"

namespace mspt {

namespace detail {

struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<Tensor> parents;
    BackwardFn backward_fn;
};

thread_local bool grad_disabled = false;

} // namespace detail

NoGradGuard::NoGradGuard() : previous_(detail::grad_disabled) { detail::grad_disabled = true; }

NoGradGuard::~NoGradGuard() { detail::grad_disabled = previous_; }

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ", ";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

namespace {

void check_shape(const Shape& shape, std::size_t count) {
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (shape[i] == 0) throw InvalidArgument("tensor dim " + std::to_string(i) + " must be positive");
    }
    if (shape_numel(shape) != count) {
        throw InvalidArgument("tensor shape " + shape_str(shape) + " does not hold " + std::to_string(count) +
                              " values");
    }
}

} // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    const auto n = shape_numel(shape);
    return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
    check_shape(shape, values.size());
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(values);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({1}, {value}, requires_grad); }

const Shape& Tensor::shape() const { return impl_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= impl_->shape.size()) {
        throw InvalidArgument("axis " + std::to_string(axis) + " out of range for " + shape_str(impl_->shape));
    }
    return impl_->shape[axis];
}

std::size_t Tensor::numel() const { return impl_->data.size(); }

std::span<const double> Tensor::values() const { return impl_->data; }

std::span<double> Tensor::mutable_values() { return impl_->data; }

double Tensor::item() const {
    if (impl_->data.size() != 1) throw InvalidArgument("item() on non-scalar " + shape_str(impl_->shape));
    return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_->requires_grad; }

void Tensor::set_requires_grad(bool on) { impl_->requires_grad = on; }

bool Tensor::is_leaf() const { return !impl_->backward_fn; }

bool Tensor::has_grad() const { return !impl_->grad.empty(); }

std::span<const double> Tensor::grad() const { return impl_->grad; }

std::span<double> Tensor::grad_buffer() {
    if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
    return impl_->grad;
}

void Tensor::zero_grad() { impl_->grad.clear(); }

Tensor Tensor::detach() const { return from(impl_->shape, impl_->data, false); }

Tensor Tensor::make_result(Shape shape, std::vector<double> values, std::vector<Tensor> parents, BackwardFn fn) {
    Tensor out = from(std::move(shape), std::move(values), false);
    const bool tracked = !detail::grad_disabled &&
        std::any_of(parents.begin(), parents.end(), [](const Tensor& p) { return p.defined() && p.requires_grad(); });
    if (tracked) {
        out.impl_->requires_grad = true;
        out.impl_->parents = std::move(parents);
        out.impl_->backward_fn = std::move(fn);
    }
    return out;
}

void Tensor::backward() const {
    if (impl_->data.size() != 1) {
        throw InvalidArgument("backward() needs a scalar root, got " + shape_str(impl_->shape));
    }
    if (!impl_->requires_grad) return;

    // Iterative post-order DFS gives a topological order (parents first).
    std::vector<detail::TensorImpl*> order;
    std::unordered_set<detail::TensorImpl*> seen;
    std::vector<std::pair<detail::TensorImpl*, std::size_t>> stack{{impl_.get(), 0}};
    seen.insert(impl_.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            auto* parent = node->parents[next++].impl_.get();
            if (parent && parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (auto* node : order) {
        if (node->backward_fn) node->grad.assign(node->data.size(), 0.0);
    }
    if (impl_->grad.empty()) impl_->grad.assign(1, 0.0);
    impl_->grad[0] += 1.0;

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        auto* node = *it;
        if (node->backward_fn) node->backward_fn(node->grad, node->parents);
    }
}

RunningStats RunningStats::fresh(std::size_t channels) {
    return RunningStats{std::vector<double>(channels, 0.0), std::vector<double>(channels, 1.0), true};
}

// ---------------------------------------------------------------------------

double relative_error(double a, double b) {
    const double denom = std::max({std::abs(a), std::abs(b), 1e-8});
    return std::abs(a - b) / denom;
}

GradReport grad_check_leaf(const std::string& op_name, const std::function<Tensor()>& loss, Tensor leaf,
                           double h) {
    if (!(h > 0.0)) throw InvalidArgument("grad_check step h must be positive");
    const bool had_requires = leaf.requires_grad();
    leaf.set_requires_grad(true);
    leaf.zero_grad();

    Tensor root = loss();
    root.backward();

    GradReport report;
    report.op_name = op_name;
    const auto n = leaf.numel();
    report.analytic.assign(n, 0.0);
    if (leaf.has_grad()) std::copy(leaf.grad().begin(), leaf.grad().end(), report.analytic.begin());

    auto values = leaf.mutable_values();
    for (std::size_t i = 0; i < n; ++i) {
        const double x0 = values[i];
        values[i] = x0 + h;
        const double up = loss().item();
        values[i] = x0 - h;
        const double down = loss().item();
        values[i] = x0;
        report.numeric.push_back((up - down) / (2.0 * h));
        report.errors.push_back(relative_error(report.analytic[i], report.numeric.back()));
        report.max_relative_error = std::max(report.max_relative_error, report.errors.back());
    }

    leaf.zero_grad();
    leaf.set_requires_grad(had_requires);
    return report;
}

GradReport grad_check(const std::string& op_name, const std::function<Tensor(const Tensor&)>& builder,
                      const Tensor& point, double h) {
    Tensor x = point.detach();
    x.set_requires_grad(true);
    return grad_check_leaf(op_name, [&] { return builder(x); }, x, h);
}

} // namespace mspt
