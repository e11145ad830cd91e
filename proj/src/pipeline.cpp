// SPDX-License-Identifier: Apache-2.0
#include "mspt/pipeline.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"

#include "mspt/errors.hpp"

namespace mspt {

using nlohmann::json;

namespace {

Manifest load_all(const RunConfig& cfg) {
    if (cfg.data.empty()) throw ConfigError("config field 'data' (manifest path) is required");
    Manifest m = read_manifest(cfg.data);
    if (m.empty()) throw InvalidArgument("manifest " + cfg.data.string() + " has no samples");
    return m;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("write failed for " + path.string());
}

json opt_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json report_to_json(const std::optional<EvalReport>& r) {
    if (!r) return {{"srcc", nullptr}, {"plcc", nullptr}, {"final_score", nullptr}, {"n", nullptr}};
    return {{"srcc", r->srcc}, {"plcc", r->plcc}, {"final_score", r->final_score}, {"n", r->n}};
}

} // namespace

Experiment Experiment::prepare(const RunConfig& cfg) {
    Manifest all = load_all(cfg);
    auto [train, held] = holdout_split(all, cfg.holdout, cfg.split_seed);
    if (train.empty() || held.size() < 2) throw InvalidArgument("dataset too small for the requested holdout");
    ImageStore store(all);
    EvalSet eval = EvalSet::build(held, store, cfg.eval_resolution, cfg.train.batch_size);
    return Experiment{cfg, std::move(all), std::move(train), std::move(held), std::move(store), std::move(eval)};
}

std::optional<EvalReport> try_evaluate(const ModelState& model, const EvalSet& set) {
    try {
        return evaluate(model, set);
    } catch (const UndefinedCorrelation&) {
        return std::nullopt;
    }
}

ModelState untrained_baseline(const Experiment& ex, std::uint64_t seed) {
    const ModelState fresh = build_model(ex.cfg.arch, seed);
    const EvalSet bn = EvalSet::build(ex.train, ex.store, ex.cfg.stages.back().resolution, ex.cfg.train.batch_size);
    return recompute_bn_stats(fresh, bn.batches);
}

TrainOutcome train_experiment(const Experiment& ex, const TrainObserver* observer) {
    const RunConfig& c = ex.cfg;
    TrainOutcome out{run_pipeline(c.stages, ex.train, ex.store, c.arch, c.train, c.seed, c.split_seed, &ex.eval, observer),
                     std::nullopt, std::nullopt};
    out.final_eval = try_evaluate(out.result.output(), ex.eval);
    out.baseline_eval = try_evaluate(untrained_baseline(ex, c.seed), ex.eval);
    return out;
}

std::string eval_report_json(const std::optional<EvalReport>& r) { return report_to_json(r).dump(2); }

void write_training_artifacts(const TrainOutcome& o, const RunConfig& cfg, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    const PipelineResult& r = o.result;
    for (std::size_t i = 0; i < r.stage_models.size(); ++i) {
        save_checkpoint(r.stage_models[i], dir / ("stage" + std::to_string(cfg.stages[i].stage) + ".ckpt"));
    }
    save_checkpoint(r.output(), dir / "swa.ckpt");
    write_text(dir / "runlog.jsonl", r.log.to_jsonl());

    json forgetting = nullptr;
    if (r.forgetting) {
        forgetting = {{"before", report_to_json(r.forgetting->before)},
                      {"after", report_to_json(r.forgetting->after)},
                      {"delta", r.forgetting->delta}};
    }
    const json summary = {
        {"seed", cfg.seed},
        {"swa_k", r.swa_k},
        {"swa_applied", r.swa_model.has_value()},
        {"subset_size", r.subset.size()},
        {"validation", report_to_json(o.final_eval)},
        {"untrained_baseline", report_to_json(o.baseline_eval)},
        {"forgetting", forgetting},
    };
    write_text(dir / "summary.json", summary.dump(2) + "\n");
    write_text(dir / "config.json", run_config_to_json(cfg) + "\n");
}

const AblationRow& AblationTable::row(const std::string& strategy, bool swa) const {
    for (const auto& r : rows)
        if (r.strategy == strategy && r.swa == swa) return r;
    throw InvalidArgument("no ablation row for " + strategy + (swa ? " + SWA" : ""));
}

std::string AblationTable::to_csv() const {
    std::ostringstream os;
    os << "strategy,swa,srcc,plcc,score,improvement_srcc,improvement_plcc,improvement_score\n";
    auto num = [](const std::optional<double>& v) {
        if (!v) return std::string();
        std::ostringstream s;
        s.precision(17);
        s << *v;
        return s.str();
    };
    for (const auto& r : rows) {
        std::optional<double> s, p, f;
        if (r.report) {
            s = r.report->srcc;
            p = r.report->plcc;
            f = r.report->final_score;
        }
        os << r.strategy << ',' << (r.swa ? "true" : "false") << ',' << num(s) << ',' << num(p) << ',' << num(f) << ','
           << num(r.d_srcc) << ',' << num(r.d_plcc) << ',' << num(r.d_score) << '\n';
    }
    return os.str();
}

std::string AblationTable::to_json() const {
    json rs = json::array();
    for (const auto& r : rows) {
        json row = {{"strategy", r.strategy}, {"swa", r.swa}};
        row["srcc"] = r.report ? json(r.report->srcc) : json(nullptr);
        row["plcc"] = r.report ? json(r.report->plcc) : json(nullptr);
        row["score"] = r.report ? json(r.report->final_score) : json(nullptr);
        row["improvement"] = {{"srcc", opt_number(r.d_srcc)}, {"plcc", opt_number(r.d_plcc)}, {"score", opt_number(r.d_score)}};
        rs.push_back(row);
    }
    return json{{"seed", seed}, {"baseline", "two-stage without SWA"}, {"rows", rs}}.dump(2);
}

AblationTable run_ablation(const Experiment& ex, std::uint64_t seed) {
    const RunConfig& c = ex.cfg;
    TrainConfig tc = c.train;
    tc.swa.enabled = true;
    tc.swa.stage = c.stages.back().stage;

    AblationTable table;
    table.seed = seed;
    const std::vector<std::pair<std::string, std::vector<StagePlan>>> strategies = {
        {"two-stage", two_stage_plans(c.stages)}, {"three-stage", c.stages}};
    for (const auto& [name, plans] : strategies) {
        const PipelineResult r = run_pipeline(plans, ex.train, ex.store, c.arch, tc, seed, c.split_seed);
        table.rows.push_back({name, false, try_evaluate(r.final_model, ex.eval), {}, {}, {}});
        table.rows.push_back({name, true, r.swa_model ? try_evaluate(*r.swa_model, ex.eval) : std::nullopt, {}, {}, {}});
    }
    const auto base = table.row("two-stage", false).report;
    for (auto& r : table.rows) {
        if (base && r.report) {
            r.d_srcc = r.report->srcc - base->srcc;
            r.d_plcc = r.report->plcc - base->plcc;
            r.d_score = r.report->final_score - base->final_score;
        }
    }
    return table;
}

} // namespace mspt
