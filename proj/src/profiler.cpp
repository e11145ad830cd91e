// SPDX-License-Identifier: Apache-2.0
#include "mspt/profiler.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "json.hpp"

#include "mspt/errors.hpp"

namespace mspt {

std::uint64_t layer_params(const LayerInfo& l) {
    switch (l.kind) {
    case LayerKind::conv:
        return static_cast<std::uint64_t>(l.out_channels) * (l.in_channels / l.groups) * l.kernel * l.kernel +
               (l.bias ? l.out_channels : 0);
    case LayerKind::linear:
        return static_cast<std::uint64_t>(l.out_channels) * l.in_channels + (l.bias ? l.out_channels : 0);
    case LayerKind::batch_norm:
        return 2ULL * l.out_channels;
    }
    return 0;
}

std::uint64_t layer_macs(const LayerInfo& l) {
    switch (l.kind) {
    case LayerKind::conv:
        return static_cast<std::uint64_t>(l.out_channels) * (l.in_channels / l.groups) * l.kernel * l.kernel * l.out_h *
               l.out_w;
    case LayerKind::linear:
        return static_cast<std::uint64_t>(l.out_channels) * l.in_channels;
    case LayerKind::batch_norm:
        return 0;
    }
    return 0;
}

ParamCount count_params(const ArchConfig& arch) {
    ParamCount out;
    for (const auto& l : describe_layers(arch, 64)) {
        const auto p = layer_params(l);
        out.by_layer.push_back({l.name, p, 0});
        out.total += p;
        if (l.kind == LayerKind::batch_norm) out.running_stats += 2ULL * l.out_channels;
    }
    return out;
}

ParamCount count_params(const ModelState& model) { return count_params(model.arch); }

MacCount count_macs(const ArchConfig& arch, std::size_t resolution) {
    if (resolution < 16) throw InvalidArgument("count_macs: resolution must be >= 16");
    MacCount out;
    out.resolution = resolution;
    for (const auto& l : describe_layers(arch, resolution)) {
        const auto m = layer_macs(l);
        out.by_layer.push_back({l.name, 0, m});
        out.total += m;
    }
    return out;
}

MacCount count_macs(const ModelState& model, std::size_t resolution) { return count_macs(model.arch, resolution); }

RuntimeStats measure_runtime(const ModelState& model, std::size_t resolution, int warmup, int repeats) {
    if (repeats < 1) throw InvalidArgument("measure_runtime: repeats must be >= 1");
    if (warmup < 0) throw InvalidArgument("measure_runtime: warmup must be >= 0");
    // Fixed mid-gray input; the content does not affect the op count.
    const Tensor x = Tensor::full({1, model.arch.in_channels, resolution, resolution}, 0.5);
    for (int i = 0; i < warmup; ++i) predict(model, x);

    RuntimeStats r;
    r.warmup = warmup;
    r.repeats = repeats;
    for (int i = 0; i < repeats; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        const Tensor y = predict(model, x);
        const auto t1 = std::chrono::steady_clock::now();
        (void)y;
        r.samples.push_back(std::chrono::duration<double>(t1 - t0).count());
    }
    const double n = static_cast<double>(r.samples.size());
    r.mean_s = std::accumulate(r.samples.begin(), r.samples.end(), 0.0) / n;
    double ss = 0.0;
    for (double s : r.samples) ss += (s - r.mean_s) * (s - r.mean_s);
    r.stddev_s = std::sqrt(ss / n);
    r.min_s = *std::min_element(r.samples.begin(), r.samples.end());
    r.max_s = *std::max_element(r.samples.begin(), r.samples.end());
    // The mean of doubles can land one ulp outside [min, max].
    r.mean_s = std::clamp(r.mean_s, r.min_s, r.max_s);
    return r;
}

std::vector<std::string> ProfileReport::violations(const Limits& limits) const {
    std::vector<std::string> v;
    if (params.total > limits.max_params) {
        v.push_back("params " + std::to_string(params.total) + " > limit " + std::to_string(limits.max_params));
    }
    if (macs.total > limits.max_macs) {
        v.push_back("MACs " + std::to_string(macs.total) + " > limit " + std::to_string(limits.max_macs));
    }
    return v;
}

std::string ProfileReport::to_json(const Limits& limits) const {
    nlohmann::json layers = nlohmann::json::array();
    for (std::size_t i = 0; i < params.by_layer.size(); ++i) {
        layers.push_back({{"name", params.by_layer[i].name},
                          {"params", params.by_layer[i].params},
                          {"macs", i < macs.by_layer.size() ? macs.by_layer[i].macs : 0}});
    }
    nlohmann::json j = {
        {"num_params_m", static_cast<double>(params.total) / 1e6},
        {"macs_g", static_cast<double>(macs.total) / 1e9},
        {"flops_g", static_cast<double>(flops()) / 1e9},
        {"runtime_s", has_runtime ? nlohmann::json(runtime.mean_s) : nlohmann::json(nullptr)},
        {"runtime_std_s", has_runtime ? nlohmann::json(runtime.stddev_s) : nlohmann::json(nullptr)},
        {"runtime_repeats", runtime.repeats},
        {"runtime_warmup", runtime.warmup},
        {"num_params", params.total},
        {"running_stats", params.running_stats},
        {"macs", macs.total},
        {"flops", flops()},
        {"resolution", macs.resolution},
        {"limits", {{"params", limits.max_params}, {"macs", limits.max_macs}}},
        {"within_limits", within(limits)},
        {"layers", layers},
    };
    return j.dump(2);
}

ProfileReport profile(const ModelState& model, std::size_t resolution, int warmup, int repeats) {
    ProfileReport r;
    r.params = count_params(model);
    r.macs = count_macs(model, resolution);
    if (repeats > 0) {
        r.runtime = measure_runtime(model, resolution, warmup, repeats);
        r.has_runtime = true;
    }
    return r;
}

} // namespace mspt
