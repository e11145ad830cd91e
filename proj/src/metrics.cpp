// SPDX-License-Identifier: Apache-2.0
#include "mspt/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "mspt/errors.hpp"

namespace mspt {

namespace {

void check_inputs(const char* op, std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) {
        throw InvalidArgument(std::string(op) + ": length mismatch " + std::to_string(x.size()) + " vs " +
                              std::to_string(y.size()));
    }
    if (x.size() < 2) throw InvalidArgument(std::string(op) + ": need at least 2 samples");
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!std::isfinite(x[i]) || !std::isfinite(y[i])) {
            throw InvalidArgument(std::string(op) + ": non-finite value at index " + std::to_string(i));
        }
    }
}

} // namespace

std::vector<double> ranks(std::span<const double> values) {
    if (values.empty()) throw InvalidArgument("ranks: empty input");
    for (double v : values) {
        if (std::isnan(v)) throw InvalidArgument("ranks: NaN input");
    }
    std::vector<std::size_t> order(values.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });

    std::vector<double> out(values.size());
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i + 1;
        while (j < order.size() && values[order[j]] == values[order[i]]) ++j;
        // Positions i+1 .. j (1-based) share their mean.
        const double r = 0.5 * static_cast<double>(i + 1 + j);
        for (std::size_t k = i; k < j; ++k) out[order[k]] = r;
        i = j;
    }
    return out;
}

double plcc(std::span<const double> x, std::span<const double> y) {
    check_inputs("plcc", x, y);
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = x[i] - mx;
        const double dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0) throw UndefinedCorrelation("correlation undefined for a constant input");
    const double r = sxy / std::sqrt(sxx * syy);
    return std::clamp(r, -1.0, 1.0);
}

double srcc(std::span<const double> x, std::span<const double> y) {
    check_inputs("srcc", x, y);
    const auto rx = ranks(x);
    const auto ry = ranks(y);
    return plcc(rx, ry);
}

double srcc_closed_form(std::span<const double> x, std::span<const double> y) {
    check_inputs("srcc_closed_form", x, y);
    const auto rx = ranks(x);
    const auto ry = ranks(y);
    double d2 = 0.0;
    for (std::size_t i = 0; i < rx.size(); ++i) d2 += (rx[i] - ry[i]) * (rx[i] - ry[i]);
    const double n = static_cast<double>(x.size());
    // One rounding of an exactly representable ratio (integer ranks, n small).
    const double denom = n * (n * n - 1.0);
    return (denom - 6.0 * d2) / denom;
}

EvalReport make_report(double srcc_value, double plcc_value, std::size_t n) {
    return EvalReport{srcc_value, plcc_value, 0.5 * srcc_value + 0.5 * plcc_value, n};
}

EvalReport final_score(std::span<const double> predicted, std::span<const double> labels) {
    return make_report(srcc(predicted, labels), plcc(predicted, labels), predicted.size());
}

} // namespace mspt
