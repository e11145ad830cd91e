// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"

#include "mspt/errors.hpp"
#include "mspt/losses.hpp"
#include "mspt/micronet.hpp"
#include "mspt/profiler.hpp"
#include "oracles.hpp"

using namespace mspt;
namespace fs = std::filesystem;

namespace {

Tensor images(std::size_t n, std::size_t r, std::uint64_t seed) {
    return Tensor::from({n, 3, r, r}, oracle::uniform(n * 3 * r * r, seed, 0.0, 1.0));
}

ModelState trained_stats(std::uint64_t seed) {
    return recompute_bn_stats(build_model(ArchConfig::desk_default(), seed), {images(4, 32, seed + 100)});
}

fs::path temp_file(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "mspt_unit";
    fs::create_directories(dir);
    return dir / name;
}

ModelState perturbed(const ModelState& m, std::uint64_t seed) {
    ModelState out = m.clone();
    std::uint64_t s = seed;
    for (auto& p : out.params) {
        const auto noise = oracle::uniform(p.value.numel(), s++);
        auto v = p.value.mutable_values();
        for (std::size_t i = 0; i < v.size(); ++i) v[i] += noise[i];
    }
    return out;
}

} // namespace

TEST_CASE("default architecture parameter ledger") {
    const ModelState m = build_model(ArchConfig::desk_default(), 0);
    CHECK(m.num_learnable() == oracle::kDeskParams);
    CHECK(m.num_learnable() == 15707);
    CHECK(count_params(m).total == m.num_learnable());
    CHECK(m.num_learnable() < 50000);
    CHECK(count_macs(m, 64).total < 5'000'000);
}

TEST_CASE("architecture validation") {
    ArchConfig a = ArchConfig::desk_default();
    a.blocks[0].stride = 3;
    CHECK_THROWS_AS(build_model(a, 0), ConfigError);
    a = ArchConfig::desk_default();
    a.blocks[1].in_channels = 17; // does not chain from block 0
    CHECK_THROWS_AS(a.validate(), ConfigError);
}

TEST_CASE("residual edges follow the stride rule") {
    CHECK(BlockSpec{24, 24, 3, 1, true}.has_residual());
    CHECK_FALSE(BlockSpec{24, 24, 3, 2, true}.has_residual());
    CHECK_FALSE(BlockSpec{16, 24, 3, 1, true}.has_residual());
}

TEST_CASE("initialization is deterministic and follows the scheme") {
    const ModelState a = build_model(ArchConfig::desk_default(), 0);
    const ModelState b = build_model(ArchConfig::desk_default(), 0);
    const ModelState c = build_model(ArchConfig::desk_default(), 1);
    CHECK(a.identical_to(b));
    CHECK_FALSE(a.same_params(c));
    for (const auto& p : a.params) {
        CAPTURE(p.name);
        const auto v = p.value.values();
        if (p.name.ends_with(".gamma")) {
            for (double x : v) CHECK(x == 1.0);
        } else if (p.name.ends_with(".beta") || p.name.ends_with(".bias")) {
            for (double x : v) CHECK(x == 0.0);
        } else {
            const auto& s = p.value.shape();
            std::size_t fan_in = 1;
            for (std::size_t i = 1; i < s.size(); ++i) fan_in *= s[i];
            const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
            for (double x : v) CHECK(std::fabs(x) <= bound);
        }
    }
}

TEST_CASE("forward shape, range and resolution independence") {
    ModelState m = trained_stats(3);
    const Tensor y = forward(m, images(4, 48, 1), {});
    CHECK(y.shape() == Shape{4, 1});
    for (double v : y.values()) {
        CHECK(v > 0.0);
        CHECK(v < 1.0);
    }
    const Tensor one48 = images(1, 48, 2);
    const Tensor one64 = images(1, 64, 2);
    for (double v : predict(m, one48).values()) CHECK(std::isfinite(v));
    for (double v : predict(m, one64).values()) CHECK(std::isfinite(v));
    const Tensor p1 = predict(m, one64);
    const Tensor p2 = predict(m, one64);
    CHECK(p1.values()[0] == p2.values()[0]);
}

TEST_CASE("forward input validation") {
    ModelState m = trained_stats(4);
    CHECK_THROWS_AS(predict(m, Tensor::zeros({1, 1, 32, 32})), InvalidArgument);
    CHECK_THROWS_AS(predict(m, Tensor::zeros({1, 3, 8, 8})), InvalidArgument);
    CHECK_THROWS_AS(predict(m, Tensor::zeros({3, 32, 32})), InvalidArgument);
    ModelState stale = average_weights({m});
    CHECK_THROWS_AS(predict(stale, images(1, 32, 5)), StateError);
    // A fresh model starts from running mean 0 and variance 1.
    const ModelState fresh = build_model(ArchConfig::desk_default(), 4);
    for (double v : predict(fresh, images(1, 32, 5)).values()) CHECK(std::isfinite(v));
}

TEST_CASE("train-mode forward updates running stats only") {
    ModelState m = trained_stats(5);
    const ModelState before = m.clone();
    forward(m, images(2, 32, 6), {BnMode::train, 0.1, 1e-5});
    CHECK(m.same_params(before));
    CHECK_FALSE(m.identical_to(before));
}

TEST_CASE("model loss gradient passes grad_check on every parameter") {
    ModelState m = build_model(ArchConfig::desk_default(), 11);
    const Tensor x = images(2, 16, 12);
    const Tensor target = Tensor::from({2, 1}, {0.2, 0.7});
    double worst = 0.0;
    for (auto& p : m.params) {
        CAPTURE(p.name);
        const auto rep = grad_check_leaf(
            p.name, [&] { return l1_rank_loss(forward(m, x, {BnMode::train, 0.1, 1e-5}), target, {}); }, p.value, 3e-5);
        if (p.name.ends_with("project.bn.beta")) {
            // A train-mode BN downstream through linear ops only cancels any shift:
            // the true gradient is exactly zero, so compare absolutely.
            for (double a : rep.analytic) CHECK(std::fabs(a) < 1e-12);
            for (double n : rep.numeric) CHECK(std::fabs(n) < 1e-9);
            continue;
        }
        CHECK(rep.max_relative_error < 1e-4);
        worst = std::max(worst, rep.max_relative_error);
    }
    MESSAGE("worst relative error over all parameters: " << worst);
}

TEST_CASE("checkpoint round trip and error paths") {
    ModelState m = perturbed(trained_stats(7), 70);
    m.step = 1234;
    const fs::path path = temp_file("rt.ckpt");
    save_checkpoint(m, path);
    const ModelState back = load_checkpoint(path, ArchConfig::desk_default());
    CHECK(back.identical_to(m));
    CHECK(back.step == 1234);
    CHECK(back.bn_stale == m.bn_stale);

    SUBCASE("stale flag survives") {
        ModelState avg = average_weights({m});
        save_checkpoint(avg, path);
        CHECK(load_checkpoint(path, ArchConfig::desk_default()).bn_stale);
    }
    SUBCASE("architecture mismatch") {
        ArchConfig other = ArchConfig::desk_default();
        other.hidden_width = 16;
        CHECK_THROWS_AS(load_checkpoint(path, other), IncompatibleArchitecture);
    }
    SUBCASE("edited fingerprint") {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(10);
        const char flip = 0x5a;
        f.write(&flip, 1);
        f.close();
        CHECK_THROWS_AS(load_checkpoint(path, ArchConfig::desk_default()), IncompatibleArchitecture);
    }
    SUBCASE("truncated file") {
        const auto size = fs::file_size(path);
        fs::resize_file(path, size - 9);
        CHECK_THROWS_AS(load_checkpoint(path, ArchConfig::desk_default()), FormatError);
    }
    SUBCASE("trailing bytes") {
        std::ofstream(path, std::ios::app | std::ios::binary) << "x";
        CHECK_THROWS_AS(load_checkpoint(path, ArchConfig::desk_default()), FormatError);
    }
    SUBCASE("bad magic") {
        std::ofstream(path, std::ios::binary) << "NOPE";
        CHECK_THROWS_AS(load_checkpoint(path, ArchConfig::desk_default()), FormatError);
    }
    SUBCASE("missing file") {
        CHECK_THROWS_AS(load_checkpoint(temp_file("absent.ckpt"), ArchConfig::desk_default()), IoError);
    }
}

TEST_CASE("a stage checkpoint loads as the next stage's init") {
    const ModelState m = trained_stats(8);
    const fs::path path = temp_file("stage1.ckpt");
    save_checkpoint(m, path);
    ModelState next = load_checkpoint(path, ArchConfig::desk_default());
    const Tensor y = forward(next, images(2, 32, 9), {BnMode::train, 0.1, 1e-5});
    CHECK(y.shape() == Shape{2, 1});
}

TEST_CASE("average_weights") {
    const ModelState base = build_model(ArchConfig::desk_default(), 20);
    SUBCASE("worked example [0,2] and [2,4]") {
        ModelState a = base.clone(), b = base.clone();
        auto va = a.params[0].value.mutable_values();
        auto vb = b.params[0].value.mutable_values();
        va[0] = 0.0;
        va[1] = 2.0;
        vb[0] = 2.0;
        vb[1] = 4.0;
        const ModelState avg = average_weights({a, b});
        CHECK(avg.params[0].value.values()[0] == 1.0);
        CHECK(avg.params[0].value.values()[1] == 3.0);
        CHECK(avg.bn_stale);
    }
    SUBCASE("K = 1 is the identity") {
        const ModelState m = perturbed(base, 21);
        CHECK(average_weights({m}).same_params(m));
    }
    SUBCASE("idempotent on copies") {
        const ModelState m = perturbed(base, 22);
        CHECK(average_weights({m, m}).same_params(m));
        CHECK(average_weights({m, m, m, m}).same_params(m));
    }
    SUBCASE("sequential checkpoint-major mean") {
        std::vector<ModelState> ks;
        for (std::uint64_t k = 0; k < 5; ++k) ks.push_back(perturbed(base, 100 + k * 50));
        const ModelState avg = average_weights(ks);
        for (std::size_t p = 0; p < avg.params.size(); ++p)
            for (std::size_t i = 0; i < avg.params[p].value.numel(); ++i) {
                double s = 0.0;
                for (const auto& k : ks) s += k.params[p].value.values()[i];
                CHECK(avg.params[p].value.values()[i] == s / 5.0);
            }
    }
    SUBCASE("order of two checkpoints does not matter") {
        const ModelState a = perturbed(base, 30), b = perturbed(base, 31);
        CHECK(average_weights({a, b}).same_params(average_weights({b, a})));
    }
    SUBCASE("errors") {
        CHECK_THROWS_AS(average_weights({}), InvalidArgument);
        ArchConfig other = ArchConfig::desk_default();
        other.head_channels = 32;
        CHECK_THROWS_AS(average_weights({base, build_model(other, 0)}), IncompatibleArchitecture);
    }
}

TEST_CASE("recompute_bn_stats") {
    const ModelState avg = average_weights({perturbed(build_model(ArchConfig::desk_default(), 40), 41)});
    CHECK_THROWS_AS(predict(avg, images(1, 32, 1)), StateError);
    const Tensor batch = images(4, 32, 42);
    const ModelState fixed = recompute_bn_stats(avg, {batch, batch, batch});
    CHECK_FALSE(fixed.bn_stale);
    CHECK(fixed.same_params(avg));
    CHECK_THROWS_AS(recompute_bn_stats(avg, {}), InvalidArgument);

    // The stem BN sees conv(x) directly: its running mean must equal that batch's channel means.
    const Tensor stem = conv2d(batch, fixed.param("stem.conv.weight"), Tensor{}, {2, 1, 1});
    const std::size_t c = stem.dim(1), hw = stem.dim(2) * stem.dim(3), n = stem.dim(0);
    const RunningStats* rs = nullptr;
    for (const auto& s : fixed.bn_stats)
        if (s.name == "stem.bn") rs = &s.stats;
    REQUIRE(rs != nullptr);
    for (std::size_t ch = 0; ch < c; ++ch) {
        double mean = 0.0;
        for (std::size_t b = 0; b < n; ++b)
            for (std::size_t i = 0; i < hw; ++i) mean += stem.values()[(b * c + ch) * hw + i];
        mean /= static_cast<double>(n * hw);
        CHECK(std::fabs(rs->mean[ch] - mean) < 1e-9);
    }
    for (double v : predict(fixed, images(2, 32, 43)).values()) CHECK(std::isfinite(v));
}
