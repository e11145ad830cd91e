// SPDX-License-Identifier: Apache-2.0
#include "mspt/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>

#include "json.hpp"

#include "mspt/errors.hpp"

namespace mspt {

void adamw_step(std::span<Tensor> params, OptimState& opt, double lr) {
    if (!(lr >= 0.0)) throw InvalidArgument("adamw_step: learning rate must be >= 0");
    if (opt.first_moment.empty() && opt.t == 0) {
        for (const auto& p : params) {
            opt.first_moment.emplace_back(p.numel(), 0.0);
            opt.second_moment.emplace_back(p.numel(), 0.0);
        }
    }
    if (opt.first_moment.size() != params.size()) {
        throw InvalidArgument("adamw_step: optimizer tracks " + std::to_string(opt.first_moment.size()) +
                              " tensors, got " + std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (opt.first_moment[i].size() != params[i].numel()) {
            throw InvalidArgument("adamw_step: moment " + std::to_string(i) + " has " +
                                  std::to_string(opt.first_moment[i].size()) + " entries, parameter has " +
                                  std::to_string(params[i].numel()));
        }
    }

    ++opt.t;
    const auto& c = opt.cfg;
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(opt.t));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(opt.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto w = params[i].mutable_values();
        const auto g = params[i].grad();
        auto& m = opt.first_moment[i];
        auto& v = opt.second_moment[i];
        for (std::size_t j = 0; j < w.size(); ++j) {
            const double gj = g.empty() ? 0.0 : g[j];
            w[j] -= lr * c.weight_decay * w[j];
            m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * gj;
            v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * gj * gj;
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            w[j] -= lr * mhat / (std::sqrt(vhat) + c.epsilon);
        }
    }
}

double cosine_lr(double t, int period, double eta_max, double eta_min) {
    if (period < 1) throw InvalidArgument("cosine_lr: period must be >= 1");
    t = std::clamp(t, 0.0, static_cast<double>(period));
    return eta_min + 0.5 * (eta_max - eta_min) * (1.0 + std::cos(std::numbers::pi * t / period));
}

double scheduled_lr(const ScheduleConfig& s, double epoch_pos, int stage_epochs, double eta_max) {
    if (!s.restarts) return cosine_lr(epoch_pos, std::max(stage_epochs, 1), eta_max, s.eta_min);
    const double cycle = std::fmod(epoch_pos, static_cast<double>(s.period));
    return cosine_lr(cycle, s.period, eta_max, s.eta_min);
}

// ---------------------------------------------------------------------------

std::vector<StagePlan> desk_plans() {
    return {{1, 48, 0.9, 1e-3, 30, InitSource::fresh},
            {2, 64, 0.9, 1e-4, 10, InitSource::previous},
            {3, 64, 1.0, 1e-4, 10, InitSource::previous}};
}

std::vector<StagePlan> reference_plans() {
    return {{1, 512, 0.9, 1e-3, 50, InitSource::fresh},
            {2, 640, 0.9, 1e-4, 20, InitSource::previous},
            {3, 640, 1.0, 1e-4, 20, InitSource::previous}};
}

std::vector<StagePlan> two_stage_plans(const std::vector<StagePlan>& three) {
    validate_plans(three);
    if (three.size() < 2) throw ConfigError("two_stage_plans: need at least two stages to merge");
    StagePlan tune = three.back();
    tune.epochs = 0;
    for (std::size_t i = 1; i < three.size(); ++i) tune.epochs += three[i].epochs;
    tune.stage = 3;
    tune.data_fraction = 1.0;
    tune.init = InitSource::previous;
    return {three.front(), tune};
}

void validate_plans(const std::vector<StagePlan>& plans) {
    if (plans.empty()) throw ConfigError("stages: at least one stage is required");
    std::optional<double> subset_fraction;
    bool seen_full = false;
    for (std::size_t i = 0; i < plans.size(); ++i) {
        const auto& p = plans[i];
        const std::string where = "stages[" + std::to_string(i) + "]";
        if (p.stage < 1 || p.stage > 3) throw ConfigError(where + ".stage must be 1, 2 or 3");
        if (i > 0 && p.stage <= plans[i - 1].stage) throw ConfigError(where + ".stage must increase");
        if (p.resolution < 16) throw ConfigError(where + ".resolution must be >= 16");
        if (i > 0 && p.resolution < plans[i - 1].resolution) {
            throw ConfigError(where + ".resolution " + std::to_string(p.resolution) +
                              " decreases; stage resolutions must be non-decreasing");
        }
        if (!(p.data_fraction > 0.0 && p.data_fraction <= 1.0)) throw ConfigError(where + ".fraction must be in (0, 1]");
        if (!(p.lr >= 0.0) || !std::isfinite(p.lr)) throw ConfigError(where + ".lr must be finite and >= 0");
        if (p.epochs < 1) throw ConfigError(where + ".epochs must be >= 1");
        if ((i == 0) != (p.init == InitSource::fresh)) {
            throw ConfigError(where + ": only the first stage starts from a fresh init");
        }
        if (p.data_fraction < 1.0) {
            if (seen_full) throw ConfigError(where + ": subset stages must precede full-data stages");
            if (subset_fraction && *subset_fraction != p.data_fraction) {
                throw ConfigError(where + ": subset stages must share one fraction");
            }
            subset_fraction = p.data_fraction;
        } else {
            seen_full = true;
        }
    }
}

// ---------------------------------------------------------------------------

std::string RunLog::to_jsonl() const {
    std::string out;
    for (const auto& e : epochs) {
        auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
        nlohmann::json j = {{"stage", e.stage},           {"epoch", e.epoch},         {"loss", e.loss},
                            {"val_srcc", opt(e.val_srcc)}, {"val_plcc", opt(e.val_plcc)}, {"val_score", opt(e.val_score)},
                            {"lr", e.lr},                 {"sec", e.sec}};
        out += j.dump();
        out += '\n';
    }
    return out;
}

bool RunLog::same_metrics(const RunLog& other) const {
    if (epochs.size() != other.epochs.size()) return false;
    for (std::size_t i = 0; i < epochs.size(); ++i) {
        const auto& a = epochs[i];
        const auto& b = other.epochs[i];
        if (a.stage != b.stage || a.epoch != b.epoch || a.loss != b.loss || a.lr != b.lr || a.val_srcc != b.val_srcc ||
            a.val_plcc != b.val_plcc || a.val_score != b.val_score) {
            return false;
        }
    }
    return true;
}

// ---------------------------------------------------------------------------

EvalSet EvalSet::build(const Manifest& m, const ImageStore& store, std::size_t resolution, std::size_t batch_size) {
    if (m.empty()) throw InvalidArgument("EvalSet: empty manifest");
    if (batch_size == 0) throw InvalidArgument("EvalSet: batch size must be positive");
    EvalSet set;
    set.resolution = resolution;
    std::vector<Image> chunk;
    for (std::size_t i = 0; i < m.size(); ++i) {
        chunk.push_back(resize_eval(store.get(m.samples[i]), resolution));
        set.labels.push_back(m.samples[i].mos);
        if (chunk.size() == batch_size || i + 1 == m.size()) {
            set.batches.push_back(to_batch(chunk));
            chunk.clear();
        }
    }
    return set;
}

std::vector<double> predict_all(const ModelState& model, const EvalSet& set) {
    std::vector<double> out;
    out.reserve(set.labels.size());
    for (const auto& b : set.batches) {
        const Tensor p = predict(model, b);
        out.insert(out.end(), p.values().begin(), p.values().end());
    }
    return out;
}

EvalReport evaluate(const ModelState& model, const EvalSet& set) {
    const auto pred = predict_all(model, set);
    return final_score(pred, set.labels);
}

namespace {

std::vector<Tensor> params_of(ModelState& model) {
    std::vector<Tensor> ps;
    ps.reserve(model.params.size());
    for (auto& p : model.params) ps.push_back(p.value);
    return ps;
}

// Batches of shuffled positions; a trailing singleton joins the previous batch
// so batch-norm never sees a single sample.
std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size, Rng& rng) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t i = 0; i < n; i += batch_size) {
        batches.emplace_back(order.begin() + static_cast<long>(i),
                             order.begin() + static_cast<long>(std::min(n, i + batch_size)));
    }
    if (batches.size() > 1 && batches.back().size() == 1) {
        batches[batches.size() - 2].push_back(batches.back().front());
        batches.pop_back();
    }
    return batches;
}

std::uint64_t stage_stream(int stage, int epoch) {
    return (static_cast<std::uint64_t>(stage) << 32) | static_cast<std::uint32_t>(epoch);
}

} // namespace

StageResult run_stage(const ModelState& init, const StagePlan& plan, const Manifest& data, const ImageStore& store,
                      const TrainConfig& cfg, std::uint64_t seed, const EvalSet* validation,
                      const TrainObserver* observer) {
    if (data.empty()) throw InvalidArgument("run_stage: empty manifest for stage " + std::to_string(plan.stage));
    if (cfg.batch_size == 0) throw InvalidArgument("run_stage: batch size must be positive");

    StageResult result{init.clone(), {}, {}};
    ModelState& model = result.model;
    model.bn_stale = false;
    OptimState opt{cfg.adamw, {}, {}, 0};
    std::vector<Tensor> params = params_of(model);

    AugmentConfig aug = cfg.augment;
    aug.target = plan.resolution;
    const ForwardOptions train_mode{BnMode::train};

    std::optional<ModelState> best;
    double best_score = -2.0;

    for (int epoch = 0; epoch < plan.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        Rng shuffle_rng = derive_rng(seed, stage_stream(plan.stage, epoch), 0xba7c);
        const auto batches = make_batches(data.size(), cfg.batch_size, shuffle_rng);
        const double epoch_lr = scheduled_lr(cfg.schedule, epoch, plan.epochs, plan.lr);

        double loss_sum = 0.0;
        for (std::size_t b = 0; b < batches.size(); ++b) {
            std::vector<Image> images;
            std::vector<double> labels;
            std::vector<const Sample*> members;
            for (auto pos : batches[b]) {
                const Sample& s = data.samples[pos];
                // Per-(stage, epoch, position) stream keeps augmentation independent of batch order.
                Rng rng = derive_rng(seed, stage_stream(plan.stage, epoch), 0xa000000ULL + pos);
                images.push_back(augment(store.get(s), aug, rng));
                labels.push_back(s.mos);
                members.push_back(&s);
            }
            if (observer && observer->on_batch) {
                observer->on_batch(BatchEvent{plan.stage, epoch, b, &model, members});
            }

            const Tensor x = to_batch(images);
            const Tensor y = Tensor::from({labels.size(), 1}, labels);
            model.zero_grad();
            const Tensor pred = forward(model, x, train_mode);
            const Tensor loss = l1_rank_loss(pred, y, cfg.loss);
            if (!std::isfinite(loss.item())) {
                throw DivergenceError("non-finite loss at stage " + std::to_string(plan.stage) + ", epoch " +
                                      std::to_string(epoch) + ", batch " + std::to_string(b));
            }
            loss.backward();
            const double pos = epoch + static_cast<double>(b) / static_cast<double>(batches.size());
            adamw_step(params, opt, scheduled_lr(cfg.schedule, pos, plan.epochs, plan.lr));
            ++model.step;
            loss_sum += loss.item();
        }
        model.zero_grad();

        EpochRecord rec;
        rec.stage = plan.stage;
        rec.epoch = epoch;
        rec.loss = loss_sum / static_cast<double>(batches.size());
        rec.lr = epoch_lr;
        if (validation && cfg.validate_each_epoch) {
            try {
                const auto r = evaluate(model, *validation);
                rec.val_srcc = r.srcc;
                rec.val_plcc = r.plcc;
                rec.val_score = r.final_score;
            } catch (const UndefinedCorrelation&) {
                // Constant predictions: leave the metrics empty for this epoch.
            }
        }
        rec.sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.log.epochs.push_back(rec);
        if (observer && observer->on_epoch) observer->on_epoch(rec);

        if (cfg.swa.enabled && plan.stage == cfg.swa.stage && (epoch + 1) % std::max(cfg.swa.frequency, 1) == 0) {
            result.checkpoints.push_back(model.clone());
        }
        if (cfg.select_best && rec.val_score && *rec.val_score > best_score) {
            best_score = *rec.val_score;
            best = model.clone();
        }
    }
    if (cfg.select_best && best) result.model = std::move(*best);
    return result;
}

ForgettingReport forgetting_probe(const ModelState& before, const ModelState& after, const Manifest& held_in,
                                  const ImageStore& store, std::size_t resolution, std::size_t batch_size) {
    if (before.fingerprint != after.fingerprint) {
        throw IncompatibleArchitecture("forgetting_probe: models have different architectures");
    }
    const EvalSet set = EvalSet::build(held_in, store, resolution, batch_size);
    ForgettingReport r;
    r.before = evaluate(before, set);
    r.after = evaluate(after, set);
    r.delta = r.after.final_score - r.before.final_score;
    return r;
}

PipelineResult run_pipeline(const std::vector<StagePlan>& plans, const Manifest& train, const ImageStore& store,
                            const ArchConfig& arch, const TrainConfig& cfg, std::uint64_t seed,
                            std::uint64_t split_seed, const EvalSet* validation, const TrainObserver* observer) {
    validate_plans(plans);
    if (train.empty()) throw InvalidArgument("run_pipeline: empty training manifest");

    PipelineResult out;
    double subset_fraction = 1.0;
    for (const auto& p : plans)
        if (p.data_fraction < 1.0) subset_fraction = p.data_fraction;
    out.subset = split_manifest(train, subset_fraction, split_seed).first;

    ModelState current = build_model(arch, seed);
    std::vector<ModelState> swa_points;
    for (const auto& plan : plans) {
        const Manifest& data = plan.data_fraction < 1.0 ? out.subset : train;
        StageResult stage = run_stage(current, plan, data, store, cfg, seed, validation, observer);
        out.log.append(stage.log);
        if (!stage.checkpoints.empty()) swa_points = std::move(stage.checkpoints);
        out.stage_models.push_back(stage.model.clone());
        current = std::move(stage.model);
    }
    out.final_model = current.clone();

    if (cfg.swa.enabled && !swa_points.empty()) {
        out.swa_k = swa_points.size();
        const ModelState averaged = average_weights(swa_points);
        const EvalSet bn_data = EvalSet::build(train, store, plans.back().resolution, cfg.batch_size);
        out.swa_model = recompute_bn_stats(averaged, bn_data.batches);
    }

    // Probe the fractional subset with the last subset-stage model vs. the output.
    for (std::size_t i = plans.size(); i-- > 0;) {
        if (plans[i].data_fraction < 1.0 && i + 1 < plans.size()) {
            try {
                out.forgetting = forgetting_probe(out.stage_models[i], out.output(), out.subset, store,
                                                  plans.back().resolution, cfg.batch_size);
            } catch (const UndefinedCorrelation&) {
            }
            break;
        }
    }
    return out;
}

} // namespace mspt
