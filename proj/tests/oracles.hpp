// SPDX-License-Identifier: Apache-2.0
// Independent reference implementations used by the unit and acceptance tests.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

namespace oracle {

// Direct six-deep loop nest, NCHW, zero padding.
inline std::vector<double> conv2d(const std::vector<double>& x, std::size_t n, std::size_t cin, std::size_t h,
                                  std::size_t w, const std::vector<double>& wt, std::size_t cout, std::size_t k,
                                  const std::vector<double>& bias, std::size_t stride, std::size_t pad,
                                  std::size_t groups) {
    const std::size_t oh = (h + 2 * pad - k) / stride + 1;
    const std::size_t ow = (w + 2 * pad - k) / stride + 1;
    const std::size_t cpg_in = cin / groups;
    const std::size_t cpg_out = cout / groups;
    std::vector<double> y(n * cout * oh * ow, 0.0);
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t co = 0; co < cout; ++co)
            for (std::size_t i = 0; i < oh; ++i)
                for (std::size_t j = 0; j < ow; ++j) {
                    double acc = bias.empty() ? 0.0 : bias[co];
                    const std::size_t g = co / cpg_out;
                    for (std::size_t ci = 0; ci < cpg_in; ++ci)
                        for (std::size_t u = 0; u < k; ++u)
                            for (std::size_t v = 0; v < k; ++v) {
                                const long r = static_cast<long>(i * stride + u) - static_cast<long>(pad);
                                const long c = static_cast<long>(j * stride + v) - static_cast<long>(pad);
                                if (r < 0 || c < 0 || r >= static_cast<long>(h) || c >= static_cast<long>(w)) continue;
                                const std::size_t in_c = g * cpg_in + ci;
                                acc += x[((b * cin + in_c) * h + r) * w + c] * wt[((co * cpg_in + ci) * k + u) * k + v];
                            }
                    y[((b * cout + co) * oh + i) * ow + j] = acc;
                }
    return y;
}

// Rank by counting: 1 + #less + (#equal - 1) / 2.
inline std::vector<double> avg_ranks(const std::vector<double>& v) {
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        double less = 0.0, equal = 0.0;
        for (double u : v) {
            if (u < v[i]) less += 1.0;
            if (u == v[i]) equal += 1.0;
        }
        r[i] = 1.0 + less + (equal - 1.0) / 2.0;
    }
    return r;
}

// Textbook Pearson with two-pass centering.
inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    const double n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    return sxy / std::sqrt(sxx * syy);
}

inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
    return pearson(avg_ranks(x), avg_ranks(y));
}

// Explicit double loop over ordered pairs.
inline double rank_loss(const std::vector<double>& p, const std::vector<double>& y) {
    double total = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i)
        for (std::size_t j = 0; j < p.size(); ++j) {
            const double e = y[i] >= y[j] ? 1.0 : -1.0;
            total += std::max(0.0, std::fabs(y[i] - y[j]) - e * (p[i] - p[j]));
        }
    return total / static_cast<double>(p.size() * p.size());
}

inline double mae(const std::vector<double>& p, const std::vector<double>& y) {
    double total = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) total += std::fabs(p[i] - y[i]);
    return total / static_cast<double>(p.size());
}

// Central difference of a scalar function of a vector.
inline std::vector<double> numeric_grad(const std::function<double(const std::vector<double>&)>& f,
                                        std::vector<double> x, double h) {
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double keep = x[i];
        x[i] = keep + h;
        const double fp = f(x);
        x[i] = keep - h;
        const double fm = f(x);
        x[i] = keep;
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

inline std::vector<double> uniform(std::size_t n, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> d(lo, hi);
    std::vector<double> v(n);
    for (auto& x : v) x = d(rng);
    return v;
}

// Hand-summed parameter ledger of the default desk architecture.
//   stem   conv 3x3 3->8 (216) + bn 8 (16)                              = 232
//   block1 exp 1x1 8->16 (128) + bn (32) + dw 3x3 16 (144) + bn (32)
//          + se 16->4 (68) + 4->16 (80) + proj 16->16 (256) + bn (32)    = 772
//   block2 exp 16->48 (768) + bn (96) + dw 48 (432) + bn (96)
//          + se 48->12 (588) + 12->48 (624) + proj 48->24 (1152) + bn (48) = 3804
//   block3 exp 24->72 (1728) + bn (144) + dw 72 (648) + bn (144)
//          + se 72->18 (1314) + 18->72 (1368) + proj 72->24 (1728) + bn (48) = 7122
//   head   conv 24->64 (1536) + bn (128) + fc 64->32 (2080) + fc 32->1 (33) = 3777
constexpr std::uint64_t kDeskParams = 232 + 772 + 3804 + 7122 + 3777; // 15707

// MACs at 64x64. Spatial: stem 32x32, block1 16x16, block2/3 8x8, head 8x8.
//   stem   8*3*9*1024                                   = 221184
//   block1 exp 16*8*1024 (131072) + dw 16*9*256 (36864)
//          + se 64 + 64 + proj 16*16*256 (65536)          = 233600
//   block2 exp 48*16*256 (196608) + dw 48*9*64 (27648)
//          + se 576 + 576 + proj 24*48*64 (73728)         = 299136
//   block3 exp 72*24*64 (110592) + dw 72*9*64 (41472)
//          + se 1296 + 1296 + proj 24*72*64 (110592)      = 265248
//   head   64*24*64 (98304) + fc 2048 + fc 32            = 100384
constexpr std::uint64_t kDeskMacs64 = 221184 + 233600 + 299136 + 265248 + 100384; // 1119552

} // namespace oracle
