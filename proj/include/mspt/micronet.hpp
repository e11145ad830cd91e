// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "mspt/digest.hpp"
#include "mspt/tensor.hpp"

namespace mspt {

struct BlockSpec {
    std::size_t in_channels = 0;
    std::size_t out_channels = 0;
    std::size_t expansion = 1;
    std::size_t stride = 1;
    bool use_se = true;

    bool has_residual() const { return stride == 1 && in_channels == out_channels; }
    std::size_t hidden_channels() const { return in_channels * expansion; }
};

/// Micro MobileNetV3-style regressor: stem conv, inverted-residual blocks,
/// 1x1 head conv, global pooling and a two-layer MLP head.
struct ArchConfig {
    std::size_t in_channels = 3;
    std::size_t stem_channels = 8;
    std::vector<BlockSpec> blocks;
    std::size_t head_channels = 64;
    std::size_t hidden_width = 32;
    Activation output = Activation::sigmoid;

    static ArchConfig desk_default();

    void validate() const;
    // Stable textual form; its SHA-256 is the architecture fingerprint.
    std::string canonical() const;
    Digest fingerprint() const;
};

enum class LayerKind { conv, batch_norm, linear };

/// One learnable layer of an architecture evaluated at a given input size.
/// Conv and linear layers carry their geometry; batch-norm layers use
/// `out_channels` as the channel count.
struct LayerInfo {
    std::string name;
    LayerKind kind = LayerKind::conv;
    std::size_t in_channels = 0;
    std::size_t out_channels = 0;
    std::size_t kernel = 1;
    std::size_t stride = 1;
    std::size_t padding = 0;
    std::size_t groups = 1;
    bool bias = false;
    std::size_t in_h = 1, in_w = 1, out_h = 1, out_w = 1;
};

/// Layers in parameter order, with spatial sizes at `resolution` x `resolution`.
std::vector<LayerInfo> describe_layers(const ArchConfig& arch, std::size_t resolution);

struct NamedTensor {
    std::string name;
    Tensor value;
};

struct NamedStats {
    std::string name;
    RunningStats stats;
};

/// The learnable parameters plus batch-norm running statistics of one model.
struct ModelState {
    ArchConfig arch;
    Digest fingerprint{};
    std::vector<NamedTensor> params;
    std::vector<NamedStats> bn_stats;
    std::uint64_t step = 0;
    // Set after weight averaging; eval-mode forward refuses stale statistics.
    bool bn_stale = false;

    std::size_t num_learnable() const;
    const Tensor& param(const std::string& name) const;
    void zero_grad();
    // Deep copy: the clone shares no storage with this state.
    ModelState clone() const;
    // Bitwise equality of parameters, running stats and step counter.
    bool identical_to(const ModelState& other) const;
    bool same_params(const ModelState& other) const;
};

ModelState build_model(const ArchConfig& arch, std::uint64_t seed);

struct ForwardOptions {
    BnMode mode = BnMode::eval;
    double bn_momentum = 0.1;
    double bn_epsilon = 1e-5;
};

/// Scores in (0, 1), shape [N, 1]. Train mode updates running stats in `model`.
Tensor forward(ModelState& model, const Tensor& batch, const ForwardOptions& opts);

/// Eval-mode forward without a graph; leaves `model` untouched.
Tensor predict(const ModelState& model, const Tensor& batch);

void save_checkpoint(const ModelState& model, const std::filesystem::path& path);
ModelState load_checkpoint(const std::filesystem::path& path, const ArchConfig& arch);

/// Parameter-wise arithmetic mean, accumulated sequentially in list order and
/// divided once by K. Running stats of the result are marked stale.
ModelState average_weights(const std::vector<ModelState>& checkpoints);

/// Replaces running stats with the equal-weight average of per-batch moments
/// over one train-mode pass; parameters are not touched.
ModelState recompute_bn_stats(const ModelState& model, const std::vector<Tensor>& batches);

} // namespace mspt
