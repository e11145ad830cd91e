// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "mspt/tensor.hpp"

namespace mspt {

struct LossConfig {
    double lambda = 1.0;
};

/// (1/N) sum |pred - target|. `target` is treated as a constant.
Tensor mae_loss(const Tensor& pred, const Tensor& target);

/// Pairwise hinge over all ordered pairs of the batch, diagonal included:
///   (1/n^2) sum_ij max(0, |y_i - y_j| - e_ij * (p_i - p_j)),
/// with e_ij = +1 when y_i >= y_j and -1 otherwise.
Tensor rank_loss(const Tensor& pred, const Tensor& target);

/// mae_loss + lambda * rank_loss
Tensor l1_rank_loss(const Tensor& pred, const Tensor& target, const LossConfig& cfg);

} // namespace mspt
