// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace mspt {

struct EvalReport {
    double srcc = 0.0;
    double plcc = 0.0;
    double final_score = 0.0;
    std::size_t n = 0;
};

/// Ascending ranks starting at 1; ties share the mean of their positions.
std::vector<double> ranks(std::span<const double> values);

/// Spearman correlation as the Pearson correlation of fractional ranks.
double srcc(std::span<const double> x, std::span<const double> y);

/// Closed form 1 - 6 sum d^2 / (n (n^2 - 1)). Only valid when neither input
/// has ties; used to cross-check `srcc`.
double srcc_closed_form(std::span<const double> x, std::span<const double> y);

double plcc(std::span<const double> x, std::span<const double> y);

EvalReport make_report(double srcc_value, double plcc_value, std::size_t n);

/// srcc, plcc and their equal-weight average for predictions vs labels.
EvalReport final_score(std::span<const double> predicted, std::span<const double> labels);

} // namespace mspt
