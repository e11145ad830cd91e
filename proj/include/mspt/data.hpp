// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mspt/tensor.hpp"

namespace mspt {

/// 8-bit RGB raster, interleaved row-major.
struct Image {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<std::uint8_t> pixels;

    Image() = default;
    Image(std::size_t w, std::size_t h) : width(w), height(h), pixels(w * h * 3, 0) {}

    std::uint8_t& at(std::size_t x, std::size_t y, std::size_t c) { return pixels[(y * width + x) * 3 + c]; }
    std::uint8_t at(std::size_t x, std::size_t y, std::size_t c) const { return pixels[(y * width + x) * 3 + c]; }
    bool operator==(const Image&) const = default;
};

void write_png(const std::filesystem::path& path, const Image& img);
Image read_png(const std::filesystem::path& path);

using Rng = std::mt19937_64;

/// Independent stream for item `index` under `seed`.
Rng derive_rng(std::uint64_t seed, std::uint64_t index, std::uint64_t stream = 0);

struct Degradation {
    double blur = 0.0;     // Gaussian sigma in pixels, [0, 3]
    double noise = 0.0;    // additive Gaussian sigma on [0,1] intensities, [0, 0.2]
    double down = 1.0;     // down-then-up resample factor, [1, 4]
    double contrast = 0.0; // compression toward mid-gray, [0, 0.6]
};

/// Synthetic quality label exp(-(0.5 blur + 4 noise + 0.4 (down - 1) + 1.2 contrast)).
double mos_for(const Degradation& d);

void validate_degradation(const Degradation& d);

/// Blur, then down-up resample, then contrast compression, then noise.
std::pair<Image, double> degrade(const Image& img, const Degradation& d, Rng& rng);

/// Procedural pseudo-face at the given size.
Image render_face(std::size_t width, std::size_t height, Rng& rng);

struct AugmentConfig {
    std::size_t target = 48;
    double flip_p = 0.5;
    double rotate_p = 0.5;
    double scale_lo = 0.7, scale_hi = 1.0;
    double ratio_lo = 0.8, ratio_hi = 1.25;
};

Image flip_horizontal(const Image& img);
// Counter-clockwise quarter turns.
Image rotate90(const Image& img, int quarter_turns);
Image reflect_pad_to(const Image& img, std::size_t min_width, std::size_t min_height);
Image resize_bilinear(const Image& img, std::size_t out_w, std::size_t out_h);

/// Horizontal flip, quarter-turn rotation, reflect padding up to the target,
/// then a random resized crop to target x target.
Image augment(const Image& img, const AugmentConfig& cfg, Rng& rng);

/// Deterministic eval transform: reflect-pad to square, bilinear resize to r x r.
Image resize_eval(const Image& img, std::size_t r);

/// Stacks images (all the same size) into an NCHW tensor scaled to [0, 1].
Tensor to_batch(const std::vector<Image>& images);

// ---------------------------------------------------------------------------

struct Sample {
    std::string path; // relative to the manifest directory
    double mos = 1.0;
    std::size_t width = 0;
    std::size_t height = 0;
    Degradation degradation;
};

struct Manifest {
    std::vector<Sample> samples;
    std::uint64_t seed = 0;
    std::uint32_t format_version = 1;
    std::filesystem::path root; // directory the sample paths are relative to

    std::size_t size() const { return samples.size(); }
    bool empty() const { return samples.empty(); }
    std::filesystem::path resolve(const Sample& s) const { return root / s.path; }
};

struct GeneratorConfig {
    std::size_t min_width = 64;
    std::size_t max_width = 128;
    double aspect_mean = 0.7;
    double aspect_sigma = 0.1;
    double aspect_lo = 0.5;
    double aspect_hi = 1.0;
};

/// The sample record for `index` without rendering the image.
Sample plan_sample(std::uint64_t seed, std::size_t index, const GeneratorConfig& cfg = {});

/// Writes `count` PNGs plus manifest.csv and dataset.json into `out_dir`.
Manifest generate_dataset(std::size_t count, std::uint64_t seed, const std::filesystem::path& out_dir,
                          const GeneratorConfig& cfg = {});

void write_manifest(const Manifest& m, const std::filesystem::path& csv_path);
Manifest read_manifest(const std::filesystem::path& csv_path);

/// Seeded shuffle; the first floor(fraction * n) shuffled samples form the
/// subset, which keeps the manifest's original order. Returns (subset, full).
std::pair<Manifest, Manifest> split_manifest(const Manifest& m, double fraction, std::uint64_t seed);

/// Disjoint (train, held-out) partition with ceil-free floor(holdout * n) held out.
std::pair<Manifest, Manifest> holdout_split(const Manifest& m, double holdout, std::uint64_t seed);

struct Histogram {
    double lo = 0.0;
    double bin_width = 1.0;
    std::vector<std::size_t> counts;

    void add(double v);
    std::size_t total() const;
    std::size_t peak_bin() const;
    double bin_lo(std::size_t i) const { return lo + bin_width * static_cast<double>(i); }
};

struct StatsReport {
    Histogram width_hist;
    Histogram height_hist;
    Histogram ratio_hist;
    Histogram area_hist;
    double wh_correlation = 0.0; // 0 when either dimension is constant
    std::size_t n = 0;
};

StatsReport dataset_stats(const Manifest& m);
std::string stats_to_json(const StatsReport& report);

/// Decoded images of a manifest, keyed by sample path.
class ImageStore {
public:
    explicit ImageStore(const Manifest& m);
    const Image& get(const Sample& s) const;
    std::size_t size() const { return images_.size(); }

private:
    std::unordered_map<std::string, Image> images_;
};

} // namespace mspt
