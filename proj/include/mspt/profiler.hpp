// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mspt/micronet.hpp"

namespace mspt {

struct LayerCount {
    std::string name;
    std::uint64_t params = 0;
    std::uint64_t macs = 0;
};

/// Conv: Cout * (Cin / groups) * Kh * Kw (+ Cout with bias).
/// Linear: F_out * F_in + F_out. Batch norm: 2C (gamma, beta).
std::uint64_t layer_params(const LayerInfo& layer);

/// Conv: Cout * (Cin / groups) * Kh * Kw * Hout * Wout. Linear: F_out * F_in.
/// Batch norm, activations and pooling count as zero.
std::uint64_t layer_macs(const LayerInfo& layer);

struct ParamCount {
    std::uint64_t total = 0;
    std::uint64_t running_stats = 0; // batch-norm running mean/var, not learnable
    std::vector<LayerCount> by_layer;
};

struct MacCount {
    std::uint64_t total = 0;
    std::size_t resolution = 0;
    std::vector<LayerCount> by_layer;
};

ParamCount count_params(const ModelState& model);
ParamCount count_params(const ArchConfig& arch);
MacCount count_macs(const ArchConfig& arch, std::size_t resolution);
MacCount count_macs(const ModelState& model, std::size_t resolution);

struct RuntimeStats {
    double mean_s = 0.0;
    double stddev_s = 0.0;
    double min_s = 0.0;
    double max_s = 0.0;
    int warmup = 0;
    int repeats = 0;
    std::vector<double> samples;
};

/// Wall clock of single-image eval-mode forward passes after `warmup`
/// discarded runs. Needs exclusive use of the process for stable numbers.
RuntimeStats measure_runtime(const ModelState& model, std::size_t resolution, int warmup, int repeats);

struct Limits {
    std::uint64_t max_params = 5'000'000;
    std::uint64_t max_macs = 250'000'000; // 0.5 GFLOPs at 2 FLOPs per MAC
};

struct ProfileReport {
    ParamCount params;
    MacCount macs;
    RuntimeStats runtime;
    bool has_runtime = false;

    std::uint64_t flops() const { return 2 * macs.total; }
    bool within(const Limits& limits) const { return params.total <= limits.max_params && macs.total <= limits.max_macs; }
    std::vector<std::string> violations(const Limits& limits) const;
    // {"num_params_m", "macs_g", "flops_g", "runtime_s", ...}
    std::string to_json(const Limits& limits) const;
};

ProfileReport profile(const ModelState& model, std::size_t resolution, int warmup = 3, int repeats = 20);

} // namespace mspt
