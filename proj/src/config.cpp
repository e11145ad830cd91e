// SPDX-License-Identifier: Apache-2.0
#include "mspt/config.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"

#include "mspt/errors.hpp"

namespace mspt {

using nlohmann::json;

namespace {

std::size_t line_of(const std::string& text, std::size_t byte) {
    std::size_t line = 1;
    for (std::size_t i = 0; i < std::min(byte, text.size()); ++i)
        if (text[i] == '\n') ++line;
    return line;
}

// Typed lookup with a key path in every error message.
template <typename T>
T get(const json& obj, const char* key, const std::string& path, T fallback) {
    if (!obj.contains(key)) return fallback;
    const json& v = obj.at(key);
    try {
        if constexpr (std::is_same_v<T, bool>) {
            if (!v.is_boolean()) throw ConfigError("");
        } else if constexpr (std::is_integral_v<T>) {
            if (!v.is_number_integer() || (std::is_unsigned_v<T> && v.get<long long>() < 0)) throw ConfigError("");
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!v.is_number()) throw ConfigError("");
        } else {
            if (!v.is_string()) throw ConfigError("");
        }
        return v.get<T>();
    } catch (const std::exception&) {
        throw ConfigError("config field '" + path + key + "' has the wrong type or range: " + v.dump());
    }
}

const json& section(const json& root, const char* key) {
    static const json empty = json::object();
    if (!root.contains(key)) return empty;
    const json& v = root.at(key);
    if (!v.is_object()) throw ConfigError(std::string("config field '") + key + "' must be an object");
    return v;
}

ArchConfig parse_arch(const json& a) {
    ArchConfig arch = ArchConfig::desk_default();
    arch.stem_channels = get<std::size_t>(a, "stem", "arch.", arch.stem_channels);
    arch.head_channels = get<std::size_t>(a, "head", "arch.", arch.head_channels);
    arch.hidden_width = get<std::size_t>(a, "hidden", "arch.", arch.hidden_width);
    if (a.contains("blocks")) {
        const json& bs = a.at("blocks");
        if (!bs.is_array()) throw ConfigError("config field 'arch.blocks' must be an array");
        arch.blocks.clear();
        for (std::size_t i = 0; i < bs.size(); ++i) {
            const json& b = bs[i];
            const std::string path = "arch.blocks[" + std::to_string(i) + "]";
            if (!b.is_array() || b.size() != 5) {
                throw ConfigError("config field '" + path + "' must be [in, out, expansion, stride, use_se]");
            }
            try {
                arch.blocks.push_back({b[0].get<std::size_t>(), b[1].get<std::size_t>(), b[2].get<std::size_t>(),
                                       b[3].get<std::size_t>(), b[4].get<bool>()});
            } catch (const json::exception&) {
                throw ConfigError("config field '" + path + "' has a malformed entry: " + b.dump());
            }
        }
    }
    arch.validate();
    return arch;
}

std::vector<StagePlan> parse_stages(const json& root) {
    if (!root.contains("stages")) return desk_plans();
    const json& st = root.at("stages");
    if (!st.is_array()) throw ConfigError("config field 'stages' must be an array");
    std::vector<StagePlan> plans;
    for (std::size_t i = 0; i < st.size(); ++i) {
        const json& s = st[i];
        const std::string path = "stages[" + std::to_string(i) + "].";
        if (!s.is_object()) throw ConfigError("config field 'stages[" + std::to_string(i) + "]' must be an object");
        StagePlan p;
        p.stage = get<int>(s, "stage", path, static_cast<int>(i) + 1);
        p.resolution = get<std::size_t>(s, "resolution", path, 0);
        p.data_fraction = get<double>(s, "fraction", path, 1.0);
        p.lr = get<double>(s, "lr", path, 0.0);
        p.epochs = get<int>(s, "epochs", path, 0);
        p.init = i == 0 ? InitSource::fresh : InitSource::previous;
        plans.push_back(p);
    }
    validate_plans(plans);
    return plans;
}

} // namespace

void RunConfig::validate() const {
    arch.validate();
    validate_plans(stages);
    if (train.batch_size < 2) throw ConfigError("train.batch_size must be >= 2");
    if (!(train.loss.lambda >= 0.0)) throw ConfigError("loss.lambda must be >= 0");
    if (train.swa.frequency < 1) throw ConfigError("swa.frequency must be >= 1");
    if (eval_resolution < 16) throw ConfigError("eval.resolution must be >= 16");
    if (!(holdout > 0.0 && holdout < 1.0)) throw ConfigError("eval.holdout must be in (0, 1)");
    if (train.schedule.period < 1) throw ConfigError("train.period must be >= 1");
}

RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir) {
    json root;
    try {
        root = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError("config syntax error at line " + std::to_string(line_of(text, e.byte)) + ": " + e.what());
    }
    if (!root.is_object()) throw ConfigError("config root must be a JSON object");

    RunConfig cfg;
    cfg.seed = get<std::uint64_t>(root, "seed", "", cfg.seed);
    cfg.split_seed = get<std::uint64_t>(root, "split_seed", "", cfg.split_seed);
    cfg.deterministic = get<bool>(root, "deterministic", "", cfg.deterministic);
    if (root.contains("data")) cfg.data = base_dir / get<std::string>(root, "data", "", "");
    if (root.contains("out")) cfg.out = base_dir / get<std::string>(root, "out", "", "");

    cfg.arch = parse_arch(section(root, "arch"));
    cfg.stages = parse_stages(root);

    const json& loss = section(root, "loss");
    cfg.train.loss.lambda = get<double>(loss, "lambda", "loss.", cfg.train.loss.lambda);

    const json& swa = section(root, "swa");
    cfg.train.swa.enabled = get<bool>(swa, "enabled", "swa.", cfg.train.swa.enabled);
    cfg.train.swa.frequency = get<int>(swa, "frequency", "swa.", cfg.train.swa.frequency);
    cfg.train.swa.stage = get<int>(swa, "stage", "swa.", cfg.train.swa.stage);

    const json& ev = section(root, "eval");
    cfg.eval_resolution = get<std::size_t>(ev, "resolution", "eval.", cfg.eval_resolution);
    cfg.holdout = get<double>(ev, "holdout", "eval.", cfg.holdout);

    const json& lim = section(root, "limits");
    cfg.limits.max_params = get<std::uint64_t>(lim, "params", "limits.", cfg.limits.max_params);
    cfg.limits.max_macs = get<std::uint64_t>(lim, "macs", "limits.", cfg.limits.max_macs);

    const json& tr = section(root, "train");
    cfg.train.batch_size = get<std::size_t>(tr, "batch_size", "train.", cfg.train.batch_size);
    cfg.train.adamw.weight_decay = get<double>(tr, "weight_decay", "train.", cfg.train.adamw.weight_decay);
    cfg.train.schedule.period = get<int>(tr, "period", "train.", cfg.train.schedule.period);
    cfg.train.schedule.restarts = get<bool>(tr, "restarts", "train.", cfg.train.schedule.restarts);
    cfg.train.select_best = get<bool>(tr, "select_best", "train.", cfg.train.select_best);

    const json& aug = section(root, "augment");
    cfg.train.augment.flip_p = get<double>(aug, "flip_p", "augment.", cfg.train.augment.flip_p);
    cfg.train.augment.rotate_p = get<double>(aug, "rotate_p", "augment.", cfg.train.augment.rotate_p);
    cfg.train.augment.scale_lo = get<double>(aug, "scale_lo", "augment.", cfg.train.augment.scale_lo);
    cfg.train.augment.scale_hi = get<double>(aug, "scale_hi", "augment.", cfg.train.augment.scale_hi);
    cfg.train.augment.ratio_lo = get<double>(aug, "ratio_lo", "augment.", cfg.train.augment.ratio_lo);
    cfg.train.augment.ratio_hi = get<double>(aug, "ratio_hi", "augment.", cfg.train.augment.ratio_hi);

    cfg.validate();
    return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_run_config(ss.str(), path.parent_path());
}

std::string run_config_to_json(const RunConfig& cfg) {
    json blocks = json::array();
    for (const auto& b : cfg.arch.blocks) {
        blocks.push_back({b.in_channels, b.out_channels, b.expansion, b.stride, b.use_se});
    }
    json stages = json::array();
    for (const auto& s : cfg.stages) {
        stages.push_back(
            {{"stage", s.stage}, {"resolution", s.resolution}, {"fraction", s.data_fraction}, {"lr", s.lr}, {"epochs", s.epochs}});
    }
    json j = {
        {"seed", cfg.seed},
        {"split_seed", cfg.split_seed},
        {"data", cfg.data.string()},
        {"out", cfg.out.string()},
        {"deterministic", cfg.deterministic},
        {"arch", {{"stem", cfg.arch.stem_channels}, {"blocks", blocks}, {"head", cfg.arch.head_channels}, {"hidden", cfg.arch.hidden_width}}},
        {"stages", stages},
        {"loss", {{"lambda", cfg.train.loss.lambda}}},
        {"swa", {{"enabled", cfg.train.swa.enabled}, {"frequency", cfg.train.swa.frequency}, {"stage", cfg.train.swa.stage}}},
        {"eval", {{"resolution", cfg.eval_resolution}, {"holdout", cfg.holdout}}},
        {"limits", {{"params", cfg.limits.max_params}, {"macs", cfg.limits.max_macs}}},
        {"train",
         {{"batch_size", cfg.train.batch_size},
          {"weight_decay", cfg.train.adamw.weight_decay},
          {"period", cfg.train.schedule.period},
          {"restarts", cfg.train.schedule.restarts},
          {"select_best", cfg.train.select_best}}},
        {"augment",
         {{"flip_p", cfg.train.augment.flip_p},
          {"rotate_p", cfg.train.augment.rotate_p},
          {"scale_lo", cfg.train.augment.scale_lo},
          {"scale_hi", cfg.train.augment.scale_hi},
          {"ratio_lo", cfg.train.augment.ratio_lo},
          {"ratio_hi", cfg.train.augment.ratio_hi}}},
    };
    return j.dump(2);
}

} // namespace mspt
