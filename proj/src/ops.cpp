// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>

#include "mspt/errors.hpp"
#include "mspt/tensor.hpp"

namespace mspt {

namespace {

[[noreturn]] void bad_dim(const std::string& op, const std::string& what) {
    throw InvalidArgument(op + ": " + what);
}

void require_rank(const std::string& op, const Tensor& t, std::size_t rank, const char* name) {
    if (!t.defined()) bad_dim(op, std::string(name) + " is undefined");
    if (t.rank() != rank) {
        bad_dim(op, std::string(name) + " must have rank " + std::to_string(rank) + ", got " + shape_str(t.shape()));
    }
}

bool wants_grad(const Tensor& t) { return t.defined() && t.requires_grad(); }

// Four independent accumulators; fixed order keeps results reproducible.
double dot(const double* a, const double* b, std::size_t n) {
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    for (; i < n; ++i) s0 += a[i] * b[i];
    return (s0 + s1) + (s2 + s3);
}

double dot_strided(const double* a, const double* b, std::size_t b_stride, std::size_t n) {
    double s0 = 0.0, s1 = 0.0;
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        s0 += a[i] * b[i * b_stride];
        s1 += a[i + 1] * b[(i + 1) * b_stride];
    }
    for (; i < n; ++i) s0 += a[i] * b[i * b_stride];
    return s0 + s1;
}

struct ConvGeom {
    std::size_t n, cin, h, w;
    std::size_t cout, cin_g, kh, kw;
    std::size_t stride, pad, groups;
    std::size_t oh, ow;

    // Output range [lo, hi) along one axis for which input index o*s + k - p is in [0, extent).
    std::pair<std::size_t, std::size_t> valid(std::size_t k, std::size_t extent, std::size_t out) const {
        const long s = static_cast<long>(stride);
        const long off = static_cast<long>(k) - static_cast<long>(pad);
        long lo = off >= 0 ? 0 : (-off + s - 1) / s;
        long hi = (static_cast<long>(extent) - 1 - off);
        hi = hi < 0 ? 0 : hi / s + 1;
        hi = std::min<long>(hi, static_cast<long>(out));
        lo = std::min<long>(lo, hi);
        return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
    }
    bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
};

// Visits every (output row, input row, output col range) touched by kernel tap (ki, kj).
template <typename F>
void for_each_tap_row(const ConvGeom& g, std::size_t ki, std::size_t kj, F&& f) {
    const auto [r0, r1] = g.valid(ki, g.h, g.oh);
    const auto [c0, c1] = g.valid(kj, g.w, g.ow);
    if (c0 >= c1) return;
    for (std::size_t r = r0; r < r1; ++r) {
        const std::size_t ir = r * g.stride + ki - g.pad;
        const std::size_t ic0 = c0 * g.stride + kj - g.pad;
        f(r, ir, c0, c1, ic0);
    }
}

void conv_forward(const ConvGeom& g, const double* in, const double* wt, const double* bias, double* out) {
    const std::size_t cout_g = g.cout / g.groups;
    const std::size_t in_plane = g.h * g.w;
    const std::size_t out_plane = g.oh * g.ow;
    for (std::size_t n = 0; n < g.n; ++n) {
        for (std::size_t co = 0; co < g.cout; ++co) {
            double* o = out + (n * g.cout + co) * out_plane;
            std::fill(o, o + out_plane, bias ? bias[co] : 0.0);
            const std::size_t grp = co / cout_g;
            for (std::size_t cg = 0; cg < g.cin_g; ++cg) {
                const double* x = in + (n * g.cin + grp * g.cin_g + cg) * in_plane;
                const double* wk = wt + (co * g.cin_g + cg) * g.kh * g.kw;
                if (g.pointwise()) {
                    const double wv = wk[0];
                    for (std::size_t i = 0; i < out_plane; ++i) o[i] += wv * x[i];
                    continue;
                }
                for (std::size_t ki = 0; ki < g.kh; ++ki) {
                    for (std::size_t kj = 0; kj < g.kw; ++kj) {
                        const double wv = wk[ki * g.kw + kj];
                        for_each_tap_row(g, ki, kj, [&](std::size_t r, std::size_t ir, std::size_t c0, std::size_t c1,
                                                        std::size_t ic0) {
                            double* orow = o + r * g.ow;
                            const double* xrow = x + ir * g.w + ic0;
                            if (g.stride == 1) {
                                for (std::size_t c = c0; c < c1; ++c) orow[c] += wv * xrow[c - c0];
                            } else {
                                for (std::size_t c = c0; c < c1; ++c) orow[c] += wv * xrow[(c - c0) * g.stride];
                            }
                        });
                    }
                }
            }
        }
    }
}

void conv_backward(const ConvGeom& g, const double* in, const double* wt, const double* gout, double* gin,
                   double* gw, double* gb) {
    const std::size_t cout_g = g.cout / g.groups;
    const std::size_t in_plane = g.h * g.w;
    const std::size_t out_plane = g.oh * g.ow;
    for (std::size_t n = 0; n < g.n; ++n) {
        for (std::size_t co = 0; co < g.cout; ++co) {
            const double* go = gout + (n * g.cout + co) * out_plane;
            if (gb) {
                double s = 0.0;
                for (std::size_t i = 0; i < out_plane; ++i) s += go[i];
                gb[co] += s;
            }
            const std::size_t grp = co / cout_g;
            for (std::size_t cg = 0; cg < g.cin_g; ++cg) {
                const std::size_t ci = grp * g.cin_g + cg;
                const double* x = in + (n * g.cin + ci) * in_plane;
                double* gx = gin ? gin + (n * g.cin + ci) * in_plane : nullptr;
                const double* wk = wt + (co * g.cin_g + cg) * g.kh * g.kw;
                double* gwk = gw ? gw + (co * g.cin_g + cg) * g.kh * g.kw : nullptr;
                if (g.pointwise()) {
                    if (gwk) gwk[0] += dot(go, x, out_plane);
                    if (gx) {
                        const double wv = wk[0];
                        for (std::size_t i = 0; i < out_plane; ++i) gx[i] += wv * go[i];
                    }
                    continue;
                }
                for (std::size_t ki = 0; ki < g.kh; ++ki) {
                    for (std::size_t kj = 0; kj < g.kw; ++kj) {
                        const double wv = wk[ki * g.kw + kj];
                        double acc = 0.0;
                        for_each_tap_row(g, ki, kj, [&](std::size_t r, std::size_t ir, std::size_t c0, std::size_t c1,
                                                        std::size_t ic0) {
                            const double* grow = go + r * g.ow + c0;
                            const std::size_t len = c1 - c0;
                            if (g.stride == 1) {
                                if (gwk) acc += dot(grow, x + ir * g.w + ic0, len);
                                if (gx) {
                                    double* gxrow = gx + ir * g.w + ic0;
                                    for (std::size_t c = 0; c < len; ++c) gxrow[c] += wv * grow[c];
                                }
                            } else {
                                if (gwk) acc += dot_strided(grow, x + ir * g.w + ic0, g.stride, len);
                                if (gx) {
                                    double* gxrow = gx + ir * g.w + ic0;
                                    for (std::size_t c = 0; c < len; ++c) gxrow[c * g.stride] += wv * grow[c];
                                }
                            }
                        });
                        if (gwk) gwk[ki * g.kw + kj] += acc;
                    }
                }
            }
        }
    }
}

} // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, Conv2dOptions opts) {
    const std::string op = "conv2d";
    require_rank(op, input, 4, "input");
    require_rank(op, weight, 4, "weight");
    if (opts.stride == 0) bad_dim(op, "stride must be positive");
    if (opts.groups == 0) bad_dim(op, "groups must be positive");

    ConvGeom g{};
    g.n = input.dim(0);
    g.cin = input.dim(1);
    g.h = input.dim(2);
    g.w = input.dim(3);
    g.cout = weight.dim(0);
    g.cin_g = weight.dim(1);
    g.kh = weight.dim(2);
    g.kw = weight.dim(3);
    g.stride = opts.stride;
    g.pad = opts.padding;
    g.groups = opts.groups;

    if (g.cin % g.groups != 0) {
        bad_dim(op, "input channels (dim 1) = " + std::to_string(g.cin) + " not divisible by groups " +
                        std::to_string(g.groups));
    }
    if (g.cout % g.groups != 0) {
        bad_dim(op, "output channels (weight dim 0) = " + std::to_string(g.cout) + " not divisible by groups " +
                        std::to_string(g.groups));
    }
    if (g.cin_g != g.cin / g.groups) {
        bad_dim(op, "weight dim 1 = " + std::to_string(g.cin_g) + " but input channels / groups = " +
                        std::to_string(g.cin / g.groups));
    }
    if (g.h + 2 * g.pad < g.kh) bad_dim(op, "padded input height (dim 2) smaller than kernel height");
    if (g.w + 2 * g.pad < g.kw) bad_dim(op, "padded input width (dim 3) smaller than kernel width");
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != g.cout)) {
        bad_dim(op, "bias must have shape [" + std::to_string(g.cout) + "], got " + shape_str(bias.shape()));
    }
    g.oh = (g.h + 2 * g.pad - g.kh) / g.stride + 1;
    g.ow = (g.w + 2 * g.pad - g.kw) / g.stride + 1;

    std::vector<double> out(g.n * g.cout * g.oh * g.ow);
    conv_forward(g, input.values().data(), weight.values().data(),
                 bias.defined() ? bias.values().data() : nullptr, out.data());

    std::vector<Tensor> parents{input, weight};
    if (bias.defined()) parents.push_back(bias);
    return Tensor::make_result(
        {g.n, g.cout, g.oh, g.ow}, std::move(out), std::move(parents),
        [g](std::span<const double> gout, std::span<Tensor> ps) {
            double* gin = wants_grad(ps[0]) ? ps[0].grad_buffer().data() : nullptr;
            double* gw = wants_grad(ps[1]) ? ps[1].grad_buffer().data() : nullptr;
            double* gb = ps.size() > 2 && wants_grad(ps[2]) ? ps[2].grad_buffer().data() : nullptr;
            conv_backward(g, ps[0].values().data(), ps[1].values().data(), gout.data(), gin, gw, gb);
        });
}

Tensor batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta, RunningStats& stats,
                  const BatchNormOptions& opts) {
    const std::string op = "batch_norm";
    require_rank(op, input, 4, "input");
    const std::size_t n = input.dim(0), c = input.dim(1), plane = input.dim(2) * input.dim(3);
    if (gamma.numel() != c) bad_dim(op, "gamma length " + std::to_string(gamma.numel()) + " != channels (dim 1) " + std::to_string(c));
    if (beta.numel() != c) bad_dim(op, "beta length " + std::to_string(beta.numel()) + " != channels (dim 1) " + std::to_string(c));
    if (!(opts.epsilon > 0.0)) throw InvalidArgument(op + ": epsilon must be positive");

    const auto x = input.values();
    const auto gm = gamma.values();
    const auto bt = beta.values();
    const std::size_t count = n * plane;

    std::vector<double> mean(c), invstd(c);
    if (opts.mode == BnMode::train) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            double s = 0.0;
            for (std::size_t b = 0; b < n; ++b) {
                const double* p = x.data() + (b * c + ch) * plane;
                for (std::size_t i = 0; i < plane; ++i) s += p[i];
            }
            const double mu = s / static_cast<double>(count);
            double v = 0.0;
            for (std::size_t b = 0; b < n; ++b) {
                const double* p = x.data() + (b * c + ch) * plane;
                for (std::size_t i = 0; i < plane; ++i) v += (p[i] - mu) * (p[i] - mu);
            }
            const double var = v / static_cast<double>(count);
            mean[ch] = mu;
            invstd[ch] = 1.0 / std::sqrt(var + opts.epsilon);
            if (opts.update_stats) {
                if (stats.mean.size() != c) stats = RunningStats::fresh(c);
                const double unbiased = count > 1 ? v / static_cast<double>(count - 1) : var;
                stats.mean[ch] = (1.0 - opts.momentum) * stats.mean[ch] + opts.momentum * mu;
                stats.var[ch] = (1.0 - opts.momentum) * stats.var[ch] + opts.momentum * unbiased;
            }
        }
        if (opts.update_stats) stats.initialized = true;
    } else {
        if (!stats.initialized) throw StateError(op + ": eval mode with uninitialized running stats");
        if (stats.mean.size() != c) bad_dim(op, "running stats hold " + std::to_string(stats.mean.size()) + " channels, input has " + std::to_string(c));
        for (std::size_t ch = 0; ch < c; ++ch) {
            mean[ch] = stats.mean[ch];
            invstd[ch] = 1.0 / std::sqrt(stats.var[ch] + opts.epsilon);
        }
    }

    std::vector<double> xhat(x.size()), out(x.size());
    for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t base = (b * c + ch) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
                const double xh = (x[base + i] - mean[ch]) * invstd[ch];
                xhat[base + i] = xh;
                out[base + i] = gm[ch] * xh + bt[ch];
            }
        }
    }

    const bool train = opts.mode == BnMode::train;
    return Tensor::make_result(
        input.shape(), std::move(out), {input, gamma, beta},
        [xhat = std::move(xhat), invstd = std::move(invstd), n, c, plane, count, train](
            std::span<const double> gout, std::span<Tensor> ps) {
            const auto gm = ps[1].values();
            std::vector<double> sum_dy(c, 0.0), sum_dy_xhat(c, 0.0);
            for (std::size_t b = 0; b < n; ++b) {
                for (std::size_t ch = 0; ch < c; ++ch) {
                    const std::size_t base = (b * c + ch) * plane;
                    double s = 0.0, sx = 0.0;
                    for (std::size_t i = 0; i < plane; ++i) {
                        s += gout[base + i];
                        sx += gout[base + i] * xhat[base + i];
                    }
                    sum_dy[ch] += s;
                    sum_dy_xhat[ch] += sx;
                }
            }
            if (wants_grad(ps[1])) {
                auto gg = ps[1].grad_buffer();
                for (std::size_t ch = 0; ch < c; ++ch) gg[ch] += sum_dy_xhat[ch];
            }
            if (wants_grad(ps[2])) {
                auto gb = ps[2].grad_buffer();
                for (std::size_t ch = 0; ch < c; ++ch) gb[ch] += sum_dy[ch];
            }
            if (!wants_grad(ps[0])) return;
            auto gx = ps[0].grad_buffer();
            const double m = static_cast<double>(count);
            for (std::size_t b = 0; b < n; ++b) {
                for (std::size_t ch = 0; ch < c; ++ch) {
                    const std::size_t base = (b * c + ch) * plane;
                    const double k = gm[ch] * invstd[ch];
                    if (train) {
                        const double mdy = sum_dy[ch] / m;
                        const double mdyx = sum_dy_xhat[ch] / m;
                        for (std::size_t i = 0; i < plane; ++i) {
                            gx[base + i] += k * (gout[base + i] - mdy - xhat[base + i] * mdyx);
                        }
                    } else {
                        for (std::size_t i = 0; i < plane; ++i) gx[base + i] += k * gout[base + i];
                    }
                }
            }
        });
}

const char* activation_name(Activation kind) {
    switch (kind) {
    case Activation::relu: return "relu";
    case Activation::hard_swish: return "hard_swish";
    case Activation::hard_sigmoid: return "hard_sigmoid";
    case Activation::sigmoid: return "sigmoid";
    case Activation::identity: return "identity";
    }
    return "?";
}

namespace {

double act_value(Activation kind, double x) {
    switch (kind) {
    case Activation::relu: return x > 0.0 ? x : 0.0;
    case Activation::hard_swish: return x * std::min(std::max(x + 3.0, 0.0), 6.0) / 6.0;
    case Activation::hard_sigmoid: return std::min(std::max(x + 3.0, 0.0), 6.0) / 6.0;
    case Activation::sigmoid:
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        else {
            const double e = std::exp(x);
            return e / (1.0 + e);
        }
    case Activation::identity: return x;
    }
    return x;
}

// Derivative given the input x and output y.
double act_slope(Activation kind, double x, double y) {
    switch (kind) {
    case Activation::relu: return x > 0.0 ? 1.0 : 0.0;
    case Activation::hard_swish:
        if (x <= -3.0) return 0.0;
        if (x <= 3.0) return (2.0 * x + 3.0) / 6.0;
        return 1.0;
    case Activation::hard_sigmoid: return (x > -3.0 && x <= 3.0) ? 1.0 / 6.0 : 0.0;
    case Activation::sigmoid: return y * (1.0 - y);
    case Activation::identity: return 1.0;
    }
    return 1.0;
}

} // namespace

Tensor apply_activation(Activation kind, const Tensor& input) {
    if (!input.defined()) throw InvalidArgument("apply_activation: input is undefined");
    const auto x = input.values();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = act_value(kind, x[i]);
    std::vector<double> slope(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) slope[i] = act_slope(kind, x[i], out[i]);
    return Tensor::make_result(input.shape(), std::move(out), {input},
                               [slope = std::move(slope)](std::span<const double> gout, std::span<Tensor> ps) {
                                   auto gx = ps[0].grad_buffer();
                                   for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += slope[i] * gout[i];
                               });
}

Tensor global_avg_pool(const Tensor& input) {
    require_rank("global_avg_pool", input, 4, "input");
    const std::size_t n = input.dim(0), c = input.dim(1), plane = input.dim(2) * input.dim(3);
    const auto x = input.values();
    std::vector<double> out(n * c);
    const double scale = 1.0 / static_cast<double>(plane);
    for (std::size_t i = 0; i < n * c; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < plane; ++j) s += x[i * plane + j];
        out[i] = s * scale;
    }
    return Tensor::make_result({n, c, 1, 1}, std::move(out), {input},
                               [plane, scale](std::span<const double> gout, std::span<Tensor> ps) {
                                   auto gx = ps[0].grad_buffer();
                                   for (std::size_t i = 0; i < gout.size(); ++i) {
                                       const double gv = gout[i] * scale;
                                       for (std::size_t j = 0; j < plane; ++j) gx[i * plane + j] += gv;
                                   }
                               });
}

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
    const std::string op = "linear";
    require_rank(op, input, 2, "input");
    require_rank(op, weight, 2, "weight");
    const std::size_t n = input.dim(0), fin = input.dim(1), fout = weight.dim(0);
    if (weight.dim(1) != fin) {
        bad_dim(op, "weight dim 1 = " + std::to_string(weight.dim(1)) + " does not match input dim 1 = " +
                        std::to_string(fin));
    }
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != fout)) {
        bad_dim(op, "bias must have shape [" + std::to_string(fout) + "], got " + shape_str(bias.shape()));
    }
    const auto x = input.values();
    const auto w = weight.values();
    std::vector<double> out(n * fout);
    for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t o = 0; o < fout; ++o) {
            out[b * fout + o] = (bias.defined() ? bias.values()[o] : 0.0) + dot(w.data() + o * fin, x.data() + b * fin, fin);
        }
    }
    std::vector<Tensor> parents{input, weight};
    if (bias.defined()) parents.push_back(bias);
    return Tensor::make_result({n, fout}, std::move(out), std::move(parents),
                               [n, fin, fout](std::span<const double> gout, std::span<Tensor> ps) {
                                   const auto x = ps[0].values();
                                   const auto w = ps[1].values();
                                   if (wants_grad(ps[0])) {
                                       auto gx = ps[0].grad_buffer();
                                       for (std::size_t b = 0; b < n; ++b)
                                           for (std::size_t o = 0; o < fout; ++o) {
                                               const double gv = gout[b * fout + o];
                                               for (std::size_t i = 0; i < fin; ++i) gx[b * fin + i] += gv * w[o * fin + i];
                                           }
                                   }
                                   if (wants_grad(ps[1])) {
                                       auto gw = ps[1].grad_buffer();
                                       for (std::size_t b = 0; b < n; ++b)
                                           for (std::size_t o = 0; o < fout; ++o) {
                                               const double gv = gout[b * fout + o];
                                               for (std::size_t i = 0; i < fin; ++i) gw[o * fin + i] += gv * x[b * fin + i];
                                           }
                                   }
                                   if (ps.size() > 2 && wants_grad(ps[2])) {
                                       auto gb = ps[2].grad_buffer();
                                       for (std::size_t b = 0; b < n; ++b)
                                           for (std::size_t o = 0; o < fout; ++o) gb[o] += gout[b * fout + o];
                                   }
                               });
}

Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        bad_dim("add", "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    const auto x = a.values();
    const auto y = b.values();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
    return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](std::span<const double> gout, std::span<Tensor> ps) {
        for (auto& p : ps) {
            if (!wants_grad(p)) continue;
            auto g = p.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += gout[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        bad_dim("mul", "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    const auto x = a.values();
    const auto y = b.values();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
    return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](std::span<const double> gout, std::span<Tensor> ps) {
        // Read both operands before writing: a and b may be the same tensor.
        const auto x = ps[0].values();
        const auto y = ps[1].values();
        if (wants_grad(ps[0])) {
            auto g = ps[0].grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += gout[i] * y[i];
        }
        if (wants_grad(ps[1])) {
            auto g = ps[1].grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += gout[i] * x[i];
        }
    });
}

Tensor sum(const Tensor& input) {
    double s = 0.0;
    for (double v : input.values()) s += v;
    return Tensor::make_result({1}, {s}, {input}, [](std::span<const double> gout, std::span<Tensor> ps) {
        auto g = ps[0].grad_buffer();
        for (auto& v : g) v += gout[0];
    });
}

Tensor reshape(const Tensor& input, Shape shape) {
    if (shape_numel(shape) != input.numel()) {
        bad_dim("reshape", "cannot view " + shape_str(input.shape()) + " as " + shape_str(shape));
    }
    std::vector<double> out(input.values().begin(), input.values().end());
    return Tensor::make_result(std::move(shape), std::move(out), {input},
                               [](std::span<const double> gout, std::span<Tensor> ps) {
                                   auto g = ps[0].grad_buffer();
                                   for (std::size_t i = 0; i < g.size(); ++i) g[i] += gout[i];
                               });
}

Tensor channel_scale(const Tensor& input, const Tensor& gate) {
    const std::string op = "channel_scale";
    require_rank(op, input, 4, "input");
    const std::size_t n = input.dim(0), c = input.dim(1), plane = input.dim(2) * input.dim(3);
    if (gate.numel() != n * c || gate.dim(0) != n) {
        bad_dim(op, "gate shape " + shape_str(gate.shape()) + " does not match [N, C] = [" + std::to_string(n) + ", " +
                        std::to_string(c) + "]");
    }
    const auto x = input.values();
    const auto gv = gate.values();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < n * c; ++i)
        for (std::size_t j = 0; j < plane; ++j) out[i * plane + j] = x[i * plane + j] * gv[i];
    return Tensor::make_result(input.shape(), std::move(out), {input, gate},
                               [n, c, plane](std::span<const double> gout, std::span<Tensor> ps) {
                                   const auto x = ps[0].values();
                                   const auto gv = ps[1].values();
                                   if (wants_grad(ps[0])) {
                                       auto gx = ps[0].grad_buffer();
                                       for (std::size_t i = 0; i < n * c; ++i)
                                           for (std::size_t j = 0; j < plane; ++j) gx[i * plane + j] += gout[i * plane + j] * gv[i];
                                   }
                                   if (wants_grad(ps[1])) {
                                       auto gg = ps[1].grad_buffer();
                                       for (std::size_t i = 0; i < n * c; ++i) gg[i] += dot(gout.data() + i * plane, x.data() + i * plane, plane);
                                   }
                               });
}

} // namespace mspt
