// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mspt/config.hpp"
#include "mspt/trainer.hpp"

namespace mspt {

/// A dataset split into train and validation with every image decoded once.
struct Experiment {
    RunConfig cfg;
    Manifest all;
    Manifest train;
    Manifest validation;
    ImageStore store;
    EvalSet eval;

    static Experiment prepare(const RunConfig& cfg);
};

/// evaluate() with constant predictions mapped to nullopt.
std::optional<EvalReport> try_evaluate(const ModelState& model, const EvalSet& set);

/// A fresh seeded init with running statistics from one pass over `train`.
ModelState untrained_baseline(const Experiment& ex, std::uint64_t seed);

struct TrainOutcome {
    PipelineResult result;
    std::optional<EvalReport> final_eval; // output() on the validation split
    std::optional<EvalReport> baseline_eval;
};

TrainOutcome train_experiment(const Experiment& ex, const TrainObserver* observer = nullptr);

/// stage<k>.ckpt for every stage, swa.ckpt (or the final weights when SWA is
/// off), runlog.jsonl and summary.json.
void write_training_artifacts(const TrainOutcome& outcome, const RunConfig& cfg, const std::filesystem::path& dir);

std::string eval_report_json(const std::optional<EvalReport>& r);

struct AblationRow {
    std::string strategy; // "two-stage" | "three-stage"
    bool swa = false;
    std::optional<EvalReport> report;
    // Differences against the two-stage, no-SWA row; null when either side is.
    std::optional<double> d_srcc, d_plcc, d_score;
};

struct AblationTable {
    std::uint64_t seed = 0;
    std::vector<AblationRow> rows;

    const AblationRow& row(const std::string& strategy, bool swa) const;
    std::string to_csv() const;
    std::string to_json() const;
};

/// {two-stage, three-stage} x {SWA off, SWA on}. Each strategy is trained once;
/// the SWA-off row is the last stage's final weights of the same run.
AblationTable run_ablation(const Experiment& ex, std::uint64_t seed);

} // namespace mspt
