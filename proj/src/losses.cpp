// SPDX-License-Identifier: Apache-2.0
#include "mspt/losses.hpp"

#include <cmath>

#include "mspt/errors.hpp"

namespace mspt {

namespace {

void check_pair(const char* op, const Tensor& pred, const Tensor& target) {
    if (!pred.defined() || !target.defined()) throw InvalidArgument(std::string(op) + ": undefined operand");
    if (pred.shape() != target.shape()) {
        throw InvalidArgument(std::string(op) + ": pred shape " + shape_str(pred.shape()) + " != target shape " +
                              shape_str(target.shape()));
    }
}

double sign_or_zero(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

} // namespace

Tensor mae_loss(const Tensor& pred, const Tensor& target) {
    check_pair("mae_loss", pred, target);
    const auto p = pred.values();
    const auto y = target.values();
    const std::size_t n = p.size();
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += std::abs(p[i] - y[i]);
    const double inv_n = 1.0 / static_cast<double>(n);
    return Tensor::make_result({1}, {s * inv_n}, {pred}, [y = std::vector<double>(y.begin(), y.end()), inv_n](
                                                              std::span<const double> gout, std::span<Tensor> ps) {
        const auto p = ps[0].values();
        auto g = ps[0].grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += gout[0] * inv_n * sign_or_zero(p[i] - y[i]);
    });
}

Tensor rank_loss(const Tensor& pred, const Tensor& target) {
    check_pair("rank_loss", pred, target);
    const auto p = pred.values();
    const auto y = target.values();
    const std::size_t n = p.size();
    const double inv_n2 = 1.0 / static_cast<double>(n * n);

    // d loss / d p_i per active pair (i, j): -e_ij on p_i, +e_ij on p_j.
    std::vector<double> slope(n, 0.0);
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            const double e = y[i] >= y[j] ? 1.0 : -1.0;
            const double hinge = std::abs(y[i] - y[j]) - e * (p[i] - p[j]);
            if (hinge > 0.0) {
                s += hinge;
                slope[i] -= e;
                slope[j] += e;
            }
        }
    }
    return Tensor::make_result({1}, {s * inv_n2}, {pred},
                               [slope = std::move(slope), inv_n2](std::span<const double> gout, std::span<Tensor> ps) {
                                   auto g = ps[0].grad_buffer();
                                   for (std::size_t i = 0; i < g.size(); ++i) g[i] += gout[0] * inv_n2 * slope[i];
                               });
}

Tensor l1_rank_loss(const Tensor& pred, const Tensor& target, const LossConfig& cfg) {
    if (!(cfg.lambda >= 0.0)) throw InvalidArgument("l1_rank_loss: lambda must be >= 0");
    Tensor mae = mae_loss(pred, target);
    Tensor rank = rank_loss(pred, target);
    const double value = mae.item() + cfg.lambda * rank.item();
    const double lambda = cfg.lambda;
    return Tensor::make_result({1}, {value}, {mae, rank}, [lambda](std::span<const double> gout, std::span<Tensor> ps) {
        if (ps[0].requires_grad()) ps[0].grad_buffer()[0] += gout[0];
        if (ps[1].requires_grad()) ps[1].grad_buffer()[0] += lambda * gout[0];
    });
}

} // namespace mspt
