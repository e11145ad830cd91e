// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"

#include "mspt/data.hpp"
#include "mspt/errors.hpp"

namespace mspt {

namespace fs = std::filesystem;

Rng derive_rng(std::uint64_t seed, std::uint64_t index, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
    return Rng(seq);
}

namespace {

enum Stream : std::uint64_t { kPlan = 0, kRender = 1, kNoise = 2 };

std::string sample_name(std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "img_%05zu.png", index);
    return buf;
}

std::string fmt(double v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, end);
}

double parse_double(const std::string& s, std::size_t line, const char* field) {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) {
        throw FormatError("manifest line " + std::to_string(line) + ": bad " + field + " value '" + s + "'");
    }
    return v;
}

std::size_t parse_size(const std::string& s, std::size_t line, const char* field) {
    std::size_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) {
        throw FormatError("manifest line " + std::to_string(line) + ": bad " + field + " value '" + s + "'");
    }
    return v;
}

constexpr const char* kHeader = "path,mos,width,height,blur,noise,down,contrast";

} // namespace

Sample plan_sample(std::uint64_t seed, std::size_t index, const GeneratorConfig& cfg) {
    Rng rng = derive_rng(seed, index, kPlan);
    std::uniform_int_distribution<std::size_t> width(cfg.min_width, cfg.max_width);
    std::normal_distribution<double> aspect(cfg.aspect_mean, cfg.aspect_sigma);
    std::uniform_real_distribution<double> u(0.0, 1.0);

    Sample s;
    s.path = sample_name(index);
    s.width = width(rng);
    const double ratio = std::clamp(aspect(rng), cfg.aspect_lo, cfg.aspect_hi);
    s.height = static_cast<std::size_t>(std::lround(static_cast<double>(s.width) / ratio));
    s.degradation.blur = 3.0 * u(rng);
    s.degradation.noise = 0.2 * u(rng);
    s.degradation.down = 1.0 + 3.0 * u(rng);
    s.degradation.contrast = 0.6 * u(rng);
    s.mos = mos_for(s.degradation);
    return s;
}

Manifest generate_dataset(std::size_t count, std::uint64_t seed, const fs::path& out_dir, const GeneratorConfig& cfg) {
    if (count == 0) throw InvalidArgument("generate_dataset: count must be >= 1");
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec || !fs::is_directory(out_dir)) throw IoError("cannot create dataset directory " + out_dir.string());

    Manifest m;
    m.seed = seed;
    m.root = out_dir;
    m.samples.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        Sample s = plan_sample(seed, i, cfg);
        Rng render_rng = derive_rng(seed, i, kRender);
        Rng noise_rng = derive_rng(seed, i, kNoise);
        const Image clean = render_face(s.width, s.height, render_rng);
        auto [img, mos] = degrade(clean, s.degradation, noise_rng);
        s.mos = mos;
        write_png(out_dir / s.path, img);
        m.samples.push_back(std::move(s));
    }
    write_manifest(m, out_dir / "manifest.csv");

    nlohmann::json meta = {{"format_version", m.format_version}, {"seed", seed}, {"count", count}};
    std::ofstream meta_out(out_dir / "dataset.json", std::ios::binary | std::ios::trunc);
    if (!meta_out) throw IoError("cannot write " + (out_dir / "dataset.json").string());
    meta_out << meta.dump(2) << '\n';
    return m;
}

void write_manifest(const Manifest& m, const fs::path& csv_path) {
    std::ofstream out(csv_path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write manifest " + csv_path.string());
    out << kHeader << '\n';
    for (const auto& s : m.samples) {
        out << s.path << ',' << fmt(s.mos) << ',' << s.width << ',' << s.height << ',' << fmt(s.degradation.blur) << ','
            << fmt(s.degradation.noise) << ',' << fmt(s.degradation.down) << ',' << fmt(s.degradation.contrast) << '\n';
    }
    if (!out) throw IoError("write failed for manifest " + csv_path.string());
}

Manifest read_manifest(const fs::path& csv_path) {
    std::ifstream in(csv_path, std::ios::binary);
    if (!in) throw IoError("cannot read manifest " + csv_path.string());
    Manifest m;
    m.root = csv_path.parent_path();

    std::string line;
    if (!std::getline(in, line)) throw FormatError(csv_path.string() + ": empty manifest (no header)");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kHeader) throw FormatError(csv_path.string() + ": unexpected header '" + line + "'");

    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) f.push_back(cell);
        if (f.size() != 8) {
            throw FormatError(csv_path.string() + " line " + std::to_string(lineno) + ": expected 8 fields, got " +
                              std::to_string(f.size()));
        }
        Sample s;
        s.path = f[0];
        s.mos = parse_double(f[1], lineno, "mos");
        s.width = parse_size(f[2], lineno, "width");
        s.height = parse_size(f[3], lineno, "height");
        s.degradation = {parse_double(f[4], lineno, "blur"), parse_double(f[5], lineno, "noise"),
                         parse_double(f[6], lineno, "down"), parse_double(f[7], lineno, "contrast")};
        if (!(s.mos >= 0.0 && s.mos <= 1.0)) {
            throw FormatError(csv_path.string() + " line " + std::to_string(lineno) + ": mos outside [0, 1]");
        }
        m.samples.push_back(std::move(s));
    }

    const fs::path meta_path = m.root / "dataset.json";
    if (fs::exists(meta_path)) {
        std::ifstream meta_in(meta_path);
        try {
            const auto meta = nlohmann::json::parse(meta_in);
            m.seed = meta.value("seed", std::uint64_t{0});
            m.format_version = meta.value("format_version", std::uint32_t{1});
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(meta_path.string() + ": " + e.what());
        }
    }
    return m;
}

namespace {

std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng = derive_rng(seed, 0, 0x5eed);
    std::shuffle(idx.begin(), idx.end(), rng);
    return idx;
}

Manifest with_samples(const Manifest& base, std::vector<std::size_t> picks) {
    std::sort(picks.begin(), picks.end());
    Manifest out;
    out.seed = base.seed;
    out.format_version = base.format_version;
    out.root = base.root;
    out.samples.reserve(picks.size());
    for (auto i : picks) out.samples.push_back(base.samples[i]);
    return out;
}

} // namespace

std::pair<Manifest, Manifest> split_manifest(const Manifest& m, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction <= 1.0)) {
        throw InvalidArgument("split_manifest: fraction " + std::to_string(fraction) + " outside (0, 1]");
    }
    const auto idx = shuffled_indices(m.size(), seed);
    const auto keep = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(m.size())));
    return {with_samples(m, {idx.begin(), idx.begin() + static_cast<long>(keep)}), m};
}

std::pair<Manifest, Manifest> holdout_split(const Manifest& m, double holdout, std::uint64_t seed) {
    if (!(holdout >= 0.0 && holdout < 1.0)) {
        throw InvalidArgument("holdout_split: fraction " + std::to_string(holdout) + " outside [0, 1)");
    }
    const auto idx = shuffled_indices(m.size(), seed ^ 0x9e3779b97f4a7c15ULL);
    const auto held = static_cast<std::size_t>(std::floor(holdout * static_cast<double>(m.size())));
    return {with_samples(m, {idx.begin() + static_cast<long>(held), idx.end()}),
            with_samples(m, {idx.begin(), idx.begin() + static_cast<long>(held)})};
}

// ---------------------------------------------------------------------------

void Histogram::add(double v) {
    const double pos = (v - lo) / bin_width;
    long bin = static_cast<long>(std::floor(pos));
    bin = std::clamp<long>(bin, 0, static_cast<long>(counts.size()) - 1);
    ++counts[static_cast<std::size_t>(bin)];
}

std::size_t Histogram::total() const { return std::accumulate(counts.begin(), counts.end(), std::size_t{0}); }

std::size_t Histogram::peak_bin() const {
    return static_cast<std::size_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
}

StatsReport dataset_stats(const Manifest& m) {
    if (m.empty()) throw InvalidArgument("dataset_stats: empty manifest");
    StatsReport r;
    // Fixed binning; values past either end land in the edge bins.
    r.width_hist = {0.0, 16.0, std::vector<std::size_t>(64, 0)};
    r.height_hist = {0.0, 16.0, std::vector<std::size_t>(64, 0)};
    r.ratio_hist = {0.05, 0.1, std::vector<std::size_t>(20, 0)};
    r.area_hist = {0.0, 2048.0, std::vector<std::size_t>(64, 0)};
    r.n = m.size();

    std::vector<double> ws, hs;
    for (const auto& s : m.samples) {
        const double w = static_cast<double>(s.width), h = static_cast<double>(s.height);
        r.width_hist.add(w);
        r.height_hist.add(h);
        r.ratio_hist.add(w / h);
        r.area_hist.add(w * h);
        ws.push_back(w);
        hs.push_back(h);
    }
    const double n = static_cast<double>(ws.size());
    const double mw = std::accumulate(ws.begin(), ws.end(), 0.0) / n;
    const double mh = std::accumulate(hs.begin(), hs.end(), 0.0) / n;
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < ws.size(); ++i) {
        sxy += (ws[i] - mw) * (hs[i] - mh);
        sxx += (ws[i] - mw) * (ws[i] - mw);
        syy += (hs[i] - mh) * (hs[i] - mh);
    }
    r.wh_correlation = (sxx > 0 && syy > 0) ? sxy / std::sqrt(sxx * syy) : 0.0;
    return r;
}

std::string stats_to_json(const StatsReport& r) {
    auto hist = [](const Histogram& h) {
        return nlohmann::json{{"lo", h.lo}, {"bin_width", h.bin_width}, {"counts", h.counts}};
    };
    nlohmann::json j = {{"n", r.n},
                        {"width_hist", hist(r.width_hist)},
                        {"height_hist", hist(r.height_hist)},
                        {"ratio_hist", hist(r.ratio_hist)},
                        {"area_hist", hist(r.area_hist)},
                        {"wh_correlation", r.wh_correlation}};
    return j.dump(2);
}

ImageStore::ImageStore(const Manifest& m) {
    for (const auto& s : m.samples) {
        if (!images_.count(s.path)) images_.emplace(s.path, read_png(m.resolve(s)));
    }
}

const Image& ImageStore::get(const Sample& s) const {
    auto it = images_.find(s.path);
    if (it == images_.end()) throw InvalidArgument("image store has no sample " + s.path);
    return it->second;
}

} // namespace mspt
