// SPDX-License-Identifier: Apache-2.0
#include <charconv>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "mspt/config.hpp"
#include "mspt/data.hpp"
#include "mspt/errors.hpp"
#include "mspt/metrics.hpp"
#include "mspt/pipeline.hpp"
#include "mspt/profiler.hpp"

namespace fs = std::filesystem;
using namespace mspt;

namespace {

constexpr int kOk = 0;
constexpr int kRuntime = 1;
constexpr int kUsage = 2;

struct UsageError : Error {
    using Error::Error;
};

void emit(const std::string& text, const std::string& out_path) {
    const char* eol = !text.empty() && text.back() == '\n' ? "" : "\n";
    if (out_path.empty()) {
        std::cout << text << eol;
        return;
    }
    if (fs::path(out_path).has_parent_path()) fs::create_directories(fs::path(out_path).parent_path());
    std::ofstream out(out_path, std::ios::binary);
    if (!out) throw IoError("cannot write " + out_path);
    out << text << eol;
}

RunConfig config_or_default(const std::string& path) {
    return path.empty() ? RunConfig{} : load_run_config(path);
}

// path,prediction with a header row.
std::map<std::string, double> read_predictions(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read predictions " + path.string());
    std::map<std::string, double> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (lineno == 1 || line.empty()) continue;
        const auto comma = line.rfind(',');
        if (comma == std::string::npos) throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected path,prediction");
        double v = 0.0;
        const char* b = line.data() + comma + 1;
        const char* e = line.data() + line.size();
        const auto res = std::from_chars(b, e, v);
        if (res.ec != std::errc() || res.ptr != e) {
            throw FormatError(path.string() + ":" + std::to_string(lineno) + ": bad prediction value");
        }
        out[line.substr(0, comma)] = v;
    }
    return out;
}

int cmd_generate(std::size_t count, std::uint64_t seed, const std::string& out) {
    if (count == 0) throw UsageError("--count must be at least 1");
    const Manifest m = generate_dataset(count, seed, out);
    std::cerr << "wrote " << m.size() << " samples to " << out << '\n';
    return kOk;
}

int cmd_stats(const std::string& manifest, const std::string& out) {
    emit(stats_to_json(dataset_stats(read_manifest(manifest))), out);
    return kOk;
}

int cmd_train(const std::string& config, const std::string& out_override) {
    RunConfig cfg = load_run_config(config);
    if (!out_override.empty()) cfg.out = out_override;
    const Experiment ex = Experiment::prepare(cfg);
    TrainObserver obs;
    obs.on_epoch = [](const EpochRecord& r) {
        std::cerr << "stage " << r.stage << " epoch " << r.epoch << " loss " << r.loss;
        if (r.val_score) std::cerr << " val_score " << *r.val_score;
        std::cerr << " lr " << r.lr << " (" << r.sec << " s)\n";
    };
    const TrainOutcome o = train_experiment(ex, &obs);
    write_training_artifacts(o, cfg, cfg.out);
    std::cout << eval_report_json(o.final_eval) << '\n';
    return kOk;
}

int cmd_eval(const std::string& checkpoint, const std::string& predictions, const std::string& manifest_path,
             std::size_t resolution, const std::string& config, const std::string& out) {
    if (checkpoint.empty() == predictions.empty()) throw UsageError("give exactly one of --checkpoint or --predictions");
    const Manifest m = read_manifest(manifest_path);
    if (m.empty()) throw InvalidArgument("manifest " + manifest_path + " has no samples");
    std::vector<double> pred, labels;
    if (!predictions.empty()) {
        const auto table = read_predictions(predictions);
        for (const auto& s : m.samples) {
            const auto it = table.find(s.path);
            if (it == table.end()) throw FormatError("no prediction for " + s.path);
            pred.push_back(it->second);
            labels.push_back(s.mos);
        }
    } else {
        const RunConfig cfg = config_or_default(config);
        const ModelState model = load_checkpoint(checkpoint, cfg.arch);
        const ImageStore store(m);
        const EvalSet set = EvalSet::build(m, store, resolution, cfg.train.batch_size);
        pred = predict_all(model, set);
        labels = set.labels;
    }
    std::optional<EvalReport> report;
    try {
        report = final_score(pred, labels);
    } catch (const UndefinedCorrelation& e) {
        std::cerr << "warning: " << e.what() << '\n';
    }
    emit(eval_report_json(report), out);
    return kOk;
}

int cmd_profile(const std::string& checkpoint, std::size_t resolution, const std::string& config, int repeats,
                int warmup, const std::string& out) {
    const RunConfig cfg = config_or_default(config);
    const ModelState model = checkpoint.empty() ? build_model(cfg.arch, cfg.seed) : load_checkpoint(checkpoint, cfg.arch);
    bool usable = !model.bn_stale;
    for (const auto& s : model.bn_stats) usable = usable && s.stats.initialized;
    // Timing a fresh init needs running statistics; any finite values will do.
    const ModelState timed =
        usable ? model.clone()
               : recompute_bn_stats(model, {Tensor::full({2, cfg.arch.in_channels, resolution, resolution}, 0.5)});
    const ProfileReport r = profile(timed, resolution, warmup, repeats);
    emit(r.to_json(cfg.limits), out);
    const auto v = r.violations(cfg.limits);
    if (!v.empty()) {
        std::string msg = "constraint violated:";
        for (const auto& s : v) msg += " " + s + ";";
        throw Error(msg);
    }
    return kOk;
}

int cmd_ablate(const std::string& config, const std::vector<std::uint64_t>& seeds, const std::string& out) {
    const RunConfig cfg = load_run_config(config);
    const Experiment ex = Experiment::prepare(cfg);
    const fs::path dir = out.empty() ? cfg.out / "ablation" : fs::path(out);
    fs::create_directories(dir);
    const std::vector<std::uint64_t> run_seeds = seeds.empty() ? std::vector<std::uint64_t>{cfg.seed} : seeds;
    for (const auto seed : run_seeds) {
        const AblationTable t = run_ablation(ex, seed);
        const std::string stem = "ablation_seed" + std::to_string(seed);
        emit(t.to_csv(), (dir / (stem + ".csv")).string());
        emit(t.to_json(), (dir / (stem + ".json")).string());
        std::cout << t.to_csv();
    }
    return kOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multi-stage progressive training for face image quality assessment"};
    app.require_subcommand(1);

    std::size_t count = 0;
    std::uint64_t seed = 7;
    std::string out, manifest, config, checkpoint, predictions;
    std::size_t resolution = 64;
    int repeats = 20, warmup = 3;
    std::vector<std::uint64_t> seeds;

    auto* gen = app.add_subcommand("generate", "Render a synthetic dataset");
    gen->add_option("--count", count, "Number of samples")->required();
    gen->add_option("--seed", seed, "Generator seed");
    gen->add_option("--out", out, "Output directory")->required();

    auto* stats = app.add_subcommand("stats", "Image size and aspect statistics as JSON");
    stats->add_option("--manifest", manifest, "manifest.csv")->required();
    stats->add_option("--out", out, "Write JSON here instead of stdout");

    auto* train = app.add_subcommand("train", "Run the staged pipeline");
    train->add_option("--config", config, "Run config JSON")->required();
    train->add_option("--out", out, "Output directory (overrides the config)");

    auto* ev = app.add_subcommand("eval", "SRCC, PLCC and final score as JSON");
    ev->add_option("--checkpoint", checkpoint, "Model checkpoint");
    ev->add_option("--predictions", predictions, "CSV of path,prediction");
    ev->add_option("--manifest", manifest, "manifest.csv")->required();
    ev->add_option("--resolution", resolution, "Input resolution");
    ev->add_option("--config", config, "Run config supplying the architecture");
    ev->add_option("--out", out, "Write JSON here instead of stdout");

    auto* prof = app.add_subcommand("profile", "Parameters, MACs and runtime as JSON");
    prof->add_option("--checkpoint", checkpoint, "Model checkpoint (fresh init when omitted)");
    prof->add_option("--resolution", resolution, "Input resolution");
    prof->add_option("--config", config, "Run config supplying architecture and limits");
    prof->add_option("--repeats", repeats, "Timed forward passes (0 skips timing)");
    prof->add_option("--warmup", warmup, "Discarded forward passes");
    prof->add_option("--out", out, "Write JSON here instead of stdout");

    auto* abl = app.add_subcommand("ablate", "Two/three-stage x SWA on/off grid");
    abl->add_option("--config", config, "Run config JSON")->required();
    abl->add_option("--seeds", seeds, "Seeds to run (default: config seed)")->delimiter(',');
    abl->add_option("--out", out, "Output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kUsage;
    }

    try {
        if (*gen) return cmd_generate(count, seed, out);
        if (*stats) return cmd_stats(manifest, out);
        if (*train) return cmd_train(config, out);
        if (*ev) return cmd_eval(checkpoint, predictions, manifest, resolution, config, out);
        if (*prof) return cmd_profile(checkpoint, resolution, config, repeats, warmup, out);
        if (*abl) return cmd_ablate(config, seeds, out);
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return kUsage;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kRuntime;
    }
    return kUsage;
}
