// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mspt/data.hpp"
#include "mspt/losses.hpp"
#include "mspt/metrics.hpp"
#include "mspt/micronet.hpp"

namespace mspt {

// ---------------------------------------------------------------------------
// Optimizer and schedule

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.01;
};

struct OptimState {
    AdamWConfig cfg;
    std::vector<std::vector<double>> first_moment;
    std::vector<std::vector<double>> second_moment;
    std::uint64_t t = 0;
};

/// One AdamW update: decoupled decay w <- w - lr * wd * w, then the
/// bias-corrected Adam step. Gradients are read from each tensor's grad
/// buffer; a tensor without one contributes a zero gradient.
void adamw_step(std::span<Tensor> params, OptimState& opt, double lr);

/// eta_min + (eta_max - eta_min) * (1 + cos(pi * t / T)) / 2 for t in [0, T].
double cosine_lr(double t, int period, double eta_max, double eta_min);

struct ScheduleConfig {
    int period = 5;
    double eta_min = 0.0;
    // true: restart the cosine every `period` epochs; false: one cycle over the stage.
    bool restarts = true;
};

/// Learning rate at fractional epoch `epoch_pos` of a stage with `stage_epochs` epochs.
double scheduled_lr(const ScheduleConfig& s, double epoch_pos, int stage_epochs, double eta_max);

// ---------------------------------------------------------------------------
// Plans and logs

enum class InitSource { fresh, previous };

struct StagePlan {
    int stage = 1;
    std::size_t resolution = 48;
    double data_fraction = 1.0;
    double lr = 1e-3;
    int epochs = 1;
    InitSource init = InitSource::fresh;
};

/// (48, 0.9, 1e-3, 30) -> (64, 0.9, 1e-4, 10) -> (64, 1.0, 1e-4, 10)
std::vector<StagePlan> desk_plans();
/// (512, 0.9, 1e-3, 50) -> (640, 0.9, 1e-4, 20) -> (640, 1.0, 1e-4, 20)
std::vector<StagePlan> reference_plans();
/// Stage 1 as in `three`, then one fine-tune at the final resolution on all
/// data with the epochs of the remaining stages combined.
std::vector<StagePlan> two_stage_plans(const std::vector<StagePlan>& three);

/// Rejects empty or mis-ordered plan lists: stage indices strictly increasing
/// within {1,2,3}, resolutions non-decreasing, subset stages before full-data
/// stages with one shared fraction, fresh init only for the first stage.
void validate_plans(const std::vector<StagePlan>& plans);

struct SwaConfig {
    bool enabled = true;
    int stage = 3;
    int frequency = 1; // collect every `frequency` epochs of the collection stage
};

struct EpochRecord {
    int stage = 0;
    int epoch = 0;
    double loss = 0.0;
    std::optional<double> val_srcc, val_plcc, val_score;
    double lr = 0.0;
    double sec = 0.0;
};

struct RunLog {
    std::vector<EpochRecord> epochs;

    void append(const RunLog& other) { epochs.insert(epochs.end(), other.epochs.begin(), other.epochs.end()); }
    std::string to_jsonl() const;
    // Same records ignoring wall time.
    bool same_metrics(const RunLog& other) const;
};

struct TrainConfig {
    std::size_t batch_size = 32;
    LossConfig loss;
    AdamWConfig adamw;
    ScheduleConfig schedule;
    AugmentConfig augment;
    SwaConfig swa;
    bool select_best = false; // return the best validation epoch instead of the last
    bool validate_each_epoch = true;
};

struct BatchEvent {
    int stage = 0;
    int epoch = 0;
    std::size_t batch = 0;
    const ModelState* model = nullptr; // parameters about to be used for this batch
    std::vector<const Sample*> samples;
};

struct TrainObserver {
    std::function<void(const BatchEvent&)> on_batch;
    std::function<void(const EpochRecord&)> on_epoch;
};

/// Preprocessed evaluation inputs for one manifest at one resolution.
struct EvalSet {
    std::vector<Tensor> batches;
    std::vector<double> labels;
    std::size_t resolution = 0;

    static EvalSet build(const Manifest& m, const ImageStore& store, std::size_t resolution, std::size_t batch_size);
};

std::vector<double> predict_all(const ModelState& model, const EvalSet& set);
/// Metrics for `model` on `set`; throws UndefinedCorrelation on constant predictions.
EvalReport evaluate(const ModelState& model, const EvalSet& set);

struct StageResult {
    ModelState model;
    RunLog log;
    std::vector<ModelState> checkpoints; // SWA collection, empty outside the collection stage
};

StageResult run_stage(const ModelState& init, const StagePlan& plan, const Manifest& data, const ImageStore& store,
                      const TrainConfig& cfg, std::uint64_t seed, const EvalSet* validation = nullptr,
                      const TrainObserver* observer = nullptr);

struct ForgettingReport {
    EvalReport before;
    EvalReport after;
    double delta = 0.0; // after.final_score - before.final_score; negative means forgetting
};

ForgettingReport forgetting_probe(const ModelState& before, const ModelState& after, const Manifest& held_in,
                                  const ImageStore& store, std::size_t resolution, std::size_t batch_size = 32);

struct PipelineResult {
    ModelState final_model;               // last stage's final weights
    std::optional<ModelState> swa_model;  // averaged + BN recomputed, when SWA is enabled
    std::vector<ModelState> stage_models; // final checkpoint of every stage, in order
    std::size_t swa_k = 0;
    RunLog log;
    Manifest subset;                      // the shared data subset of the fractional stages
    std::optional<ForgettingReport> forgetting;

    const ModelState& output() const { return swa_model ? *swa_model : final_model; }
};

/// Curriculum: stage 1 from a fresh seeded init, later stages initialised
/// from the previous stage's final checkpoint, fractional stages sharing
/// one seeded subset of `train`, SWA over the collection stage.
PipelineResult run_pipeline(const std::vector<StagePlan>& plans, const Manifest& train, const ImageStore& store,
                            const ArchConfig& arch, const TrainConfig& cfg, std::uint64_t seed,
                            std::uint64_t split_seed, const EvalSet* validation = nullptr,
                            const TrainObserver* observer = nullptr);

} // namespace mspt
