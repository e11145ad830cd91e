// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mspt/micronet.hpp"
#include "mspt/profiler.hpp"
#include "mspt/trainer.hpp"

namespace mspt {

/// Everything a `train` or `ablate` run needs. Parsed from JSON:
///
///   { "seed": 7, "split_seed": 1234,
///     "data": "data/manifest.csv", "out": "runs/desk",
///     "arch": { "stem": 8, "blocks": [[8,16,2,2,true], ...], "head": 64, "hidden": 32 },
///     "stages": [ { "resolution": 48, "fraction": 0.9, "lr": 1e-3, "epochs": 30 }, ... ],
///     "loss": { "lambda": 1.0 },
///     "swa": { "enabled": true, "frequency": 1 },
///     "eval": { "resolution": 64, "holdout": 0.1 },
///     "limits": { "params": 5000000, "macs": 250000000 },
///     "train": { "batch_size": 32, "weight_decay": 0.01, "period": 5, "restarts": true,
///                "select_best": false },
///     "deterministic": true }
///
/// Every key is optional; omitted keys take the desk defaults.
struct RunConfig {
    std::filesystem::path data;
    std::filesystem::path out = "runs/mspt";
    std::uint64_t seed = 7;
    std::uint64_t split_seed = 1234;
    ArchConfig arch = ArchConfig::desk_default();
    std::vector<StagePlan> stages = desk_plans();
    TrainConfig train;
    std::size_t eval_resolution = 64;
    double holdout = 0.1;
    Limits limits;
    bool deterministic = true;

    void validate() const;
};

/// Throws ConfigError naming the offending line (syntax) or key path (content).
RunConfig parse_run_config(const std::string& json_text, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);
std::string run_config_to_json(const RunConfig& cfg);

} // namespace mspt
