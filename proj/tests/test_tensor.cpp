// SPDX-License-Identifier: Apache-2.0
#include <cmath>

#include "doctest.h"

#include "mspt/errors.hpp"
#include "mspt/tensor.hpp"
#include "oracles.hpp"

using namespace mspt;

namespace {

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
    REQUIRE(a.size() == b.size());
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
    return m;
}

Tensor rand_tensor(Shape s, std::uint64_t seed, bool grad = false, double lo = -1.0, double hi = 1.0) {
    const std::size_t n = shape_numel(s);
    return Tensor::from(std::move(s), oracle::uniform(n, seed, lo, hi), grad);
}

// Weighted sum so that every output element carries a distinct gradient.
Tensor probe(const Tensor& y, std::uint64_t seed = 99) {
    const Tensor w = rand_tensor(y.shape(), seed);
    return sum(mul(y, w));
}

} // namespace

TEST_CASE("tensor construction and shape invariants") {
    const Tensor t = Tensor::zeros({2, 3});
    CHECK(t.numel() == 6);
    CHECK(t.values().size() == 6);
    CHECK_THROWS_AS(Tensor::from({2, 2}, {1.0, 2.0, 3.0}), InvalidArgument);
    CHECK(Tensor::scalar(4.0).item() == 4.0);
    CHECK_THROWS_AS(t.item(), InvalidArgument);
}

TEST_CASE("conv2d worked examples") {
    SUBCASE("zero input gives zeros") {
        const Tensor x = Tensor::zeros({1, 1, 3, 3});
        const Tensor w = rand_tensor({5, 1, 3, 3}, 1);
        const Tensor y = conv2d(x, w, Tensor{});
        CHECK(y.shape() == Shape{1, 5, 1, 1});
        for (double v : y.values()) CHECK(v == 0.0);
    }
    SUBCASE("1x1 scale plus bias") {
        const Tensor y = conv2d(Tensor::from({1, 1, 1, 1}, {2.0}), Tensor::from({1, 1, 1, 1}, {3.0}),
                                Tensor::from({1}, {1.0}));
        CHECK(y.item() == 7.0);
    }
}

TEST_CASE("conv2d matches the loop-nest oracle") {
    struct Case {
        std::size_t n, cin, cout, h, w, k, stride, pad, groups;
    };
    const Case cases[] = {
        {2, 4, 3, 8, 8, 3, 1, 1, 1}, {2, 4, 6, 8, 8, 3, 2, 1, 1}, {1, 4, 4, 6, 6, 3, 1, 1, 4},
        {2, 4, 4, 7, 5, 3, 2, 1, 4}, {1, 6, 4, 5, 5, 1, 1, 0, 2}, {2, 3, 8, 8, 8, 1, 1, 0, 1},
        {1, 2, 2, 5, 5, 3, 1, 0, 1},
    };
    std::uint64_t seed = 10;
    for (const auto& c : cases) {
        CAPTURE(c.groups);
        CAPTURE(c.stride);
        const auto xv = oracle::uniform(c.n * c.cin * c.h * c.w, seed++);
        const auto wv = oracle::uniform(c.cout * (c.cin / c.groups) * c.k * c.k, seed++);
        const auto bv = oracle::uniform(c.cout, seed++);
        const Tensor y = conv2d(Tensor::from({c.n, c.cin, c.h, c.w}, xv),
                                Tensor::from({c.cout, c.cin / c.groups, c.k, c.k}, wv), Tensor::from({c.cout}, bv),
                                {c.stride, c.pad, c.groups});
        const auto ref = oracle::conv2d(xv, c.n, c.cin, c.h, c.w, wv, c.cout, c.k, bv, c.stride, c.pad, c.groups);
        CHECK(max_abs_diff(y.values(), ref) < 1e-10);
    }
}

TEST_CASE("depthwise conv keeps channels separate") {
    auto xv = oracle::uniform(4 * 36, 3);
    const Tensor w = rand_tensor({4, 1, 3, 3}, 4);
    const Tensor y0 = conv2d(Tensor::from({1, 4, 6, 6}, xv), w, Tensor{}, {1, 1, 4});
    for (std::size_t i = 2 * 36; i < 3 * 36; ++i) xv[i] += 5.0; // perturb channel 2 only
    const Tensor y1 = conv2d(Tensor::from({1, 4, 6, 6}, xv), w, Tensor{}, {1, 1, 4});
    for (std::size_t c = 0; c < 4; ++c) {
        bool changed = false;
        for (std::size_t i = c * 36; i < (c + 1) * 36; ++i) changed = changed || y0.values()[i] != y1.values()[i];
        CHECK(changed == (c == 2));
    }
}

TEST_CASE("conv2d shape errors name the dimension") {
    const Tensor x = Tensor::zeros({1, 4, 6, 6});
    CHECK_THROWS_WITH_AS(conv2d(x, Tensor::zeros({3, 1, 3, 3}), Tensor{}, {1, 0, 4}), doctest::Contains("out"),
                         InvalidArgument);
    CHECK_THROWS_AS(conv2d(x, Tensor::zeros({4, 3, 3, 3}), Tensor{}), InvalidArgument);
    CHECK_THROWS_AS(conv2d(Tensor::zeros({1, 4, 2, 2}), Tensor::zeros({4, 4, 3, 3}), Tensor{}), InvalidArgument);
    CHECK_THROWS_AS(conv2d(x, Tensor::zeros({4, 4, 3, 3}), Tensor::zeros({3})), InvalidArgument);
    CHECK_THROWS_AS(conv2d(x, Tensor::zeros({4, 4, 3, 3}), Tensor{}, {0, 0, 1}), InvalidArgument);
}

TEST_CASE("batch_norm train and eval") {
    SUBCASE("constant per channel gives zeros") {
        std::vector<double> v(2 * 3 * 4);
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>((i / 4) % 3) * 2.5;
        RunningStats rs = RunningStats::fresh(3);
        const Tensor y = batch_norm(Tensor::from({2, 3, 2, 2}, v), Tensor::full({3}, 1.0), Tensor::zeros({3}), rs, {});
        for (double x : y.values()) CHECK(std::fabs(x) < 1e-12);
    }
    SUBCASE("gamma zero gives beta") {
        RunningStats rs = RunningStats::fresh(3);
        const Tensor beta = Tensor::from({3}, {0.5, -1.0, 2.0});
        const Tensor y = batch_norm(rand_tensor({2, 3, 4, 4}, 5), Tensor::zeros({3}), beta, rs, {});
        for (std::size_t i = 0; i < y.numel(); ++i) CHECK(y.values()[i] == beta.values()[(i / 16) % 3]);
    }
    SUBCASE("output moments equal beta and gamma squared") {
        RunningStats rs = RunningStats::fresh(3);
        const Tensor gamma = Tensor::from({3}, {1.5, 0.5, 2.0});
        const Tensor beta = Tensor::from({3}, {0.1, -0.3, 0.7});
        const Tensor y = batch_norm(rand_tensor({2, 3, 4, 4}, 6, false, -3, 3), gamma, beta, rs, {BnMode::train, 0.1, 1e-12});
        for (std::size_t c = 0; c < 3; ++c) {
            double m = 0.0, s = 0.0;
            for (std::size_t n = 0; n < 2; ++n)
                for (std::size_t i = 0; i < 16; ++i) m += y.values()[(n * 3 + c) * 16 + i];
            m /= 32.0;
            for (std::size_t n = 0; n < 2; ++n)
                for (std::size_t i = 0; i < 16; ++i) {
                    const double d = y.values()[(n * 3 + c) * 16 + i] - m;
                    s += d * d;
                }
            s /= 32.0;
            CHECK(std::fabs(m - beta.values()[c]) < 1e-6);
            CHECK(std::fabs(s - gamma.values()[c] * gamma.values()[c]) < 1e-6);
        }
    }
    SUBCASE("running stats follow the momentum rule") {
        RunningStats rs = RunningStats::fresh(1);
        rs.mean = {1.0};
        rs.var = {2.0};
        rs.initialized = true;
        const Tensor x = Tensor::from({4, 1, 1, 1}, {1.0, 2.0, 3.0, 6.0});
        batch_norm(x, Tensor::full({1}, 1.0), Tensor::zeros({1}), rs, {BnMode::train, 0.25, 1e-5});
        // batch mean 3, unbiased variance (4 + 1 + 0 + 9) / 3
        CHECK(rs.mean[0] == doctest::Approx(0.75 * 1.0 + 0.25 * 3.0));
        CHECK(rs.var[0] == doctest::Approx(0.75 * 2.0 + 0.25 * 14.0 / 3.0));
    }
    SUBCASE("eval uses running stats") {
        RunningStats rs = RunningStats::fresh(1);
        rs.mean = {2.0};
        rs.var = {4.0};
        rs.initialized = true;
        const Tensor y = batch_norm(Tensor::from({1, 1, 1, 2}, {4.0, 0.0}), Tensor::full({1}, 3.0),
                                    Tensor::full({1}, 1.0), rs, {BnMode::eval, 0.1, 1e-12});
        CHECK(y.values()[0] == doctest::Approx(4.0));
        CHECK(y.values()[1] == doctest::Approx(-2.0));
    }
    SUBCASE("eval on uninitialized stats is a state error") {
        RunningStats rs;
        rs.mean = {0.0};
        rs.var = {1.0};
        CHECK_THROWS_AS(batch_norm(Tensor::zeros({1, 1, 2, 2}), Tensor::full({1}, 1.0), Tensor::zeros({1}), rs,
                                   {BnMode::eval, 0.1, 1e-5}),
                        StateError);
    }
    SUBCASE("channel mismatch") {
        RunningStats rs = RunningStats::fresh(2);
        CHECK_THROWS_AS(batch_norm(Tensor::zeros({1, 3, 2, 2}), Tensor::full({2}, 1.0), Tensor::zeros({2}), rs, {}),
                        InvalidArgument);
    }
}

TEST_CASE("activation values") {
    const Tensor x = Tensor::from({6}, {-4.0, -3.0, 0.0, 1.0, 3.0, 4.0});
    const Tensor hs_t = apply_activation(Activation::hard_swish, x);
    const auto hs = hs_t.values();
    CHECK(hs[0] == 0.0);
    CHECK(hs[1] == 0.0);
    CHECK(hs[2] == 0.0);
    CHECK(hs[3] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    CHECK(hs[4] == 3.0);
    CHECK(hs[5] == 4.0);
    const Tensor hg_t = apply_activation(Activation::hard_sigmoid, x);
    const auto hg = hg_t.values();
    CHECK(hg[0] == 0.0);
    CHECK(hg[2] == 0.5);
    CHECK(hg[4] == 1.0);
    CHECK(apply_activation(Activation::sigmoid, Tensor::scalar(0.0)).item() == 0.5);
    const Tensor r_t = apply_activation(Activation::relu, x);
    const auto r = r_t.values();
    CHECK(r[0] == 0.0);
    CHECK(r[5] == 4.0);
}

TEST_CASE("activation derivatives at kinks take the left piece") {
    const Tensor x = Tensor::from({3}, {-3.0, 0.0, 3.0}, true);
    sum(apply_activation(Activation::hard_swish, x)).backward();
    CHECK(x.grad()[0] == 0.0);   // left of -3: constant zero
    CHECK(x.grad()[1] == 0.5);   // smooth point: (2x + 3) / 6
    CHECK(x.grad()[2] == 1.5);   // left of 3: (2x + 3) / 6
    const Tensor z = Tensor::from({1}, {0.0}, true);
    sum(apply_activation(Activation::relu, z)).backward();
    CHECK(z.grad()[0] == 0.0);
}

TEST_CASE("global_avg_pool") {
    CHECK(global_avg_pool(Tensor::full({1, 2, 4, 4}, 1.0)).values()[1] == 1.0);
    CHECK(global_avg_pool(Tensor::from({1, 1, 2, 2}, {1, 2, 3, 4})).item() == 2.5);
    const Tensor x = rand_tensor({1, 2, 3, 5}, 8, true);
    sum(global_avg_pool(x)).backward();
    for (double g : x.grad()) CHECK(g == doctest::Approx(1.0 / 15.0).epsilon(1e-15));
}

TEST_CASE("linear") {
    CHECK(linear(Tensor::from({1, 2}, {1, 2}), Tensor::from({1, 2}, {3, 4}), Tensor::from({1}, {5})).item() == 16.0);
    const Tensor x = rand_tensor({3, 2}, 9);
    const Tensor y = linear(x, Tensor::from({2, 2}, {1, 0, 0, 1}), Tensor::zeros({2}));
    CHECK(max_abs_diff(x.values(), y.values()) == 0.0);
    const Tensor z = linear(Tensor::zeros({2, 2}), rand_tensor({3, 2}, 10), Tensor::from({3}, {1, 2, 3}));
    CHECK(z.values()[4] == 2.0);
    CHECK_THROWS_AS(linear(Tensor::zeros({1, 3}), Tensor::zeros({2, 2}), Tensor::zeros({2})), InvalidArgument);
}

TEST_CASE("backward basics") {
    Tensor x = Tensor::from({3}, {1, 2, 3}, true);
    sum(x).backward();
    for (double g : x.grad()) CHECK(g == 1.0);
    x.zero_grad();
    sum(mul(x, x)).backward();
    CHECK(x.grad()[0] == 2.0);
    CHECK(x.grad()[1] == 4.0);
    CHECK(x.grad()[2] == 6.0);
    SUBCASE("repeated backward accumulates") {
        sum(mul(x, x)).backward();
        CHECK(x.grad()[2] == 12.0);
    }
    SUBCASE("non-scalar root") { CHECK_THROWS_AS(mul(x, x).backward(), InvalidArgument); }
}

TEST_CASE("a leaf feeding two consumers sums both contributions") {
    const Tensor x = Tensor::from({2}, {0.5, -1.5}, true);
    const Tensor a = mul(x, Tensor::from({2}, {3.0, 3.0}));
    const Tensor b = apply_activation(Activation::sigmoid, x);
    sum(add(a, b)).backward();
    for (std::size_t i = 0; i < 2; ++i) {
        const double s = 1.0 / (1.0 + std::exp(-x.values()[i]));
        CHECK(x.grad()[i] == doctest::Approx(3.0 + s * (1.0 - s)).epsilon(1e-14));
    }
}

TEST_CASE("no-grad guard records no graph") {
    const Tensor x = Tensor::from({2}, {1, 2}, true);
    NoGradGuard g;
    const Tensor y = sum(mul(x, x));
    CHECK_FALSE(y.requires_grad());
}

TEST_CASE("relative error definition") {
    CHECK(relative_error(1.0, 1.0) == 0.0);
    CHECK(relative_error(2.0, 1.0) == 0.5);
    CHECK(relative_error(0.0, 0.0) == 0.0);
    CHECK(relative_error(1e-9, 0.0) == doctest::Approx(0.1)); // denominator floor 1e-8
}

TEST_CASE("grad_check on a linear map is exact to roundoff") {
    const Tensor w = rand_tensor({3, 4}, 11);
    const Tensor b = rand_tensor({3}, 12);
    const auto rep = grad_check("linear", [&](const Tensor& x) { return probe(linear(x, w, b)); }, rand_tensor({2, 4}, 13), 1e-5);
    CHECK(rep.max_relative_error < 1e-9);
    CHECK(rep.max_relative_error >= 0.0);
    CHECK(rep.errors.size() == 8);
}

TEST_CASE("op gradients against an independent central difference") {
    // Uses the oracle difference rather than grad_check so the harness itself is cross-checked.
    auto compare = [](const std::function<Tensor(const Tensor&)>& f, const Tensor& point, double tol) {
        const Tensor x = Tensor::from(point.shape(), std::vector<double>(point.values().begin(), point.values().end()), true);
        f(x).backward();
        const auto num = oracle::numeric_grad(
            [&](const std::vector<double>& v) {
                NoGradGuard g;
                return f(Tensor::from(point.shape(), v)).item();
            },
            std::vector<double>(point.values().begin(), point.values().end()), 1e-5);
        double worst = 0.0;
        for (std::size_t i = 0; i < num.size(); ++i) worst = std::max(worst, relative_error(x.grad()[i], num[i]));
        CHECK(worst < tol);
    };
    const Tensor w = rand_tensor({3, 2, 3, 3}, 20);
    compare([&](const Tensor& x) { return probe(conv2d(x, w, Tensor{}, {2, 1, 1})); }, rand_tensor({2, 2, 5, 5}, 21), 1e-6);
    compare([&](const Tensor& x) { return probe(apply_activation(Activation::sigmoid, x)); }, rand_tensor({7}, 22, false, -3, 3), 1e-6);
    compare([&](const Tensor& x) { return probe(global_avg_pool(x)); }, rand_tensor({2, 3, 3, 3}, 23), 1e-6);
    const Tensor gate = rand_tensor({2, 3}, 24);
    compare([&](const Tensor& x) { return probe(channel_scale(x, gate)); }, rand_tensor({2, 3, 2, 2}, 25), 1e-6);
}

TEST_CASE("every op passes grad_check at random points away from kinks") {
    for (std::uint64_t trial = 0; trial < 10; ++trial) {
        CAPTURE(trial);
        const std::uint64_t s = 1000 + trial * 17;
        const Tensor w = rand_tensor({4, 3, 3, 3}, s);
        const Tensor bias = rand_tensor({4}, s + 1);
        CHECK(grad_check("conv2d/input", [&](const Tensor& x) { return probe(conv2d(x, w, bias, {1, 1, 1})); },
                         rand_tensor({2, 3, 5, 5}, s + 2), 1e-3)
                  .max_relative_error < 1e-6);
        const Tensor x = rand_tensor({2, 3, 5, 5}, s + 3);
        CHECK(grad_check("conv2d/weight", [&](const Tensor& k) { return probe(conv2d(x, k, bias, {2, 1, 1})); },
                         rand_tensor({4, 3, 3, 3}, s + 4), 1e-3)
                  .max_relative_error < 1e-6);
        CHECK(grad_check("conv2d/bias", [&](const Tensor& b) { return probe(conv2d(x, w, b, {1, 0, 1})); },
                         rand_tensor({4}, s + 5), 1e-3)
                  .max_relative_error < 1e-6);
        const Tensor dw = rand_tensor({3, 1, 3, 3}, s + 6);
        CHECK(grad_check("conv2d/depthwise", [&](const Tensor& in) { return probe(conv2d(in, dw, Tensor{}, {2, 1, 3})); },
                         rand_tensor({2, 3, 6, 6}, s + 7), 1e-3)
                  .max_relative_error < 1e-6);

        const Tensor gamma = rand_tensor({3}, s + 8, false, 0.5, 1.5);
        const Tensor beta = rand_tensor({3}, s + 9);
        auto bn = [&](const Tensor& in, const Tensor& g, const Tensor& b) {
            RunningStats rs = RunningStats::fresh(3);
            return probe(batch_norm(in, g, b, rs, {BnMode::train, 0.1, 1e-5}));
        };
        CHECK(grad_check("batch_norm/input", [&](const Tensor& in) { return bn(in, gamma, beta); },
                         rand_tensor({2, 3, 3, 3}, s + 10), 1e-5)
                  .max_relative_error < 1e-4);
        CHECK(grad_check("batch_norm/gamma", [&](const Tensor& g) { return bn(x, g, beta); }, gamma, 1e-5)
                  .max_relative_error < 1e-6);
        CHECK(grad_check("batch_norm/beta", [&](const Tensor& b) { return bn(x, gamma, b); }, beta, 1e-5)
                  .max_relative_error < 1e-6);

        // Points kept at least 0.05 away from every kink.
        std::vector<double> pts = oracle::uniform(12, s + 11, -5, 5);
        for (auto& p : pts)
            for (double k : {-3.0, 0.0, 3.0})
                if (std::fabs(p - k) < 0.05) p = k + 0.1;
        const Tensor smooth = Tensor::from({12}, pts);
        for (Activation a : {Activation::relu, Activation::hard_swish, Activation::hard_sigmoid, Activation::sigmoid,
                             Activation::identity}) {
            CAPTURE(activation_name(a));
            CHECK(grad_check(activation_name(a), [&](const Tensor& in) { return probe(apply_activation(a, in)); }, smooth, 1e-5)
                      .max_relative_error < 1e-6);
        }

        const Tensor lw = rand_tensor({3, 4}, s + 12);
        const Tensor lb = rand_tensor({3}, s + 13);
        const Tensor lx = rand_tensor({2, 4}, s + 14);
        CHECK(grad_check("linear/weight", [&](const Tensor& k) { return probe(linear(lx, k, lb)); }, lw, 1e-3)
                  .max_relative_error < 1e-6);
        CHECK(grad_check("linear/bias", [&](const Tensor& k) { return probe(linear(lx, lw, k)); }, lb, 1e-3)
                  .max_relative_error < 1e-6);

        const Tensor other = rand_tensor({2, 3}, s + 15);
        CHECK(grad_check("add", [&](const Tensor& a) { return probe(add(a, other)); }, rand_tensor({2, 3}, s + 16), 1e-3)
                  .max_relative_error < 1e-6);
        CHECK(grad_check("mul", [&](const Tensor& a) { return probe(mul(a, other)); }, rand_tensor({2, 3}, s + 17), 1e-3)
                  .max_relative_error < 1e-6);
        CHECK(grad_check("reshape", [&](const Tensor& a) { return probe(reshape(a, {3, 2})); }, rand_tensor({2, 3}, s + 18), 1e-3)
                  .max_relative_error < 1e-6);
        const Tensor feat = rand_tensor({2, 3, 2, 2}, s + 19);
        CHECK(grad_check("channel_scale/gate", [&](const Tensor& g) { return probe(channel_scale(feat, g)); },
                         rand_tensor({2, 3}, s + 20), 1e-3)
                  .max_relative_error < 1e-6);
        CHECK(grad_check("global_avg_pool", [&](const Tensor& in) { return probe(global_avg_pool(in)); }, feat, 1e-3)
                  .max_relative_error < 1e-6);
    }
}

TEST_CASE("composite conv-bn-hswish-pool-linear chain") {
    const Tensor w = rand_tensor({4, 2, 3, 3}, 30);
    const Tensor gamma = Tensor::full({4}, 1.0);
    const Tensor beta = Tensor::zeros({4});
    const Tensor fw = rand_tensor({1, 4}, 31);
    const Tensor fb = rand_tensor({1}, 32);
    const auto rep = grad_check(
        "chain",
        [&](const Tensor& x) {
            RunningStats rs = RunningStats::fresh(4);
            Tensor h = conv2d(x, w, Tensor{}, {1, 1, 1});
            h = batch_norm(h, gamma, beta, rs, {});
            h = apply_activation(Activation::hard_swish, h);
            h = reshape(global_avg_pool(h), {2, 4});
            return sum(linear(h, fw, fb));
        },
        rand_tensor({2, 2, 4, 4}, 33), 1e-5);
    CHECK(rep.max_relative_error < 1e-4);
}

TEST_CASE("eval-mode forward is pure") {
    const Tensor x = rand_tensor({1, 2, 5, 5}, 40);
    const Tensor w = rand_tensor({3, 2, 3, 3}, 41);
    const Tensor a = conv2d(x, w, Tensor{}, {1, 1, 1});
    const Tensor b = conv2d(x, w, Tensor{}, {1, 1, 1});
    CHECK(std::equal(a.values().begin(), a.values().end(), b.values().begin()));
}
