// SPDX-License-Identifier: Apache-2.0
#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "mspt/data.hpp"
#include "mspt/errors.hpp"

namespace mspt {

// ---------------------------------------------------------------------------
// PNG I/O

void write_png(const std::filesystem::path& path, const Image& img) {
    std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
    if (!fp) throw IoError("cannot write " + path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw IoError("libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("libpng failed writing " + path.string());
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_set_compression_level(png, 6);
    png_write_info(png, info);
    for (std::size_t y = 0; y < img.height; ++y) {
        png_write_row(png, const_cast<png_bytep>(img.pixels.data() + y * img.width * 3));
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

Image read_png(const std::filesystem::path& path) {
    std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "rb"), &std::fclose);
    if (!fp) throw IoError("cannot read " + path.string());
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("libpng init failed");
    }
    Image img;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError("invalid PNG " + path.string());
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);
    const auto color = png_get_color_type(png, info);
    const auto depth = png_get_bit_depth(png, info);
    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);
    img = Image(png_get_image_width(png, info), png_get_image_height(png, info));
    for (std::size_t y = 0; y < img.height; ++y) png_read_row(png, img.pixels.data() + y * img.width * 3, nullptr);
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

// ---------------------------------------------------------------------------
// Float planar working buffer.

namespace {

struct Planes {
    std::size_t w = 0, h = 0;
    std::vector<double> v; // [3][h][w]

    Planes(std::size_t width, std::size_t height) : w(width), h(height), v(3 * width * height, 0.0) {}
    double& at(std::size_t c, std::size_t x, std::size_t y) { return v[(c * h + y) * w + x]; }
    double at(std::size_t c, std::size_t x, std::size_t y) const { return v[(c * h + y) * w + x]; }
};

Planes to_planes(const Image& img) {
    Planes p(img.width, img.height);
    for (std::size_t y = 0; y < img.height; ++y)
        for (std::size_t x = 0; x < img.width; ++x)
            for (std::size_t c = 0; c < 3; ++c) p.at(c, x, y) = img.at(x, y, c) / 255.0;
    return p;
}

Image to_image(const Planes& p) {
    Image img(p.w, p.h);
    for (std::size_t y = 0; y < p.h; ++y)
        for (std::size_t x = 0; x < p.w; ++x)
            for (std::size_t c = 0; c < 3; ++c) {
                const double v = std::clamp(p.at(c, x, y), 0.0, 1.0);
                img.at(x, y, c) = static_cast<std::uint8_t>(std::lround(v * 255.0));
            }
    return img;
}

// Mirror index without repeating the edge sample (…2 1 | 0 1 2 … n-1 | n-2 …).
std::size_t reflect(long i, long n) {
    if (n == 1) return 0;
    const long period = 2 * (n - 1);
    i %= period;
    if (i < 0) i += period;
    return static_cast<std::size_t>(i < n ? i : period - i);
}

// Half-pixel-centred bilinear sampling of the region [x0, x0+cw) x [y0, y0+ch).
Planes resample(const Planes& src, double x0, double y0, double cw, double ch, std::size_t ow, std::size_t oh) {
    Planes out(ow, oh);
    const double sx = cw / static_cast<double>(ow);
    const double sy = ch / static_cast<double>(oh);
    for (std::size_t oy = 0; oy < oh; ++oy) {
        double fy = y0 + (static_cast<double>(oy) + 0.5) * sy - 0.5;
        fy = std::clamp(fy, 0.0, static_cast<double>(src.h - 1));
        const auto iy = static_cast<std::size_t>(fy);
        const std::size_t iy1 = std::min(iy + 1, src.h - 1);
        const double ty = fy - static_cast<double>(iy);
        for (std::size_t ox = 0; ox < ow; ++ox) {
            double fx = x0 + (static_cast<double>(ox) + 0.5) * sx - 0.5;
            fx = std::clamp(fx, 0.0, static_cast<double>(src.w - 1));
            const auto ix = static_cast<std::size_t>(fx);
            const std::size_t ix1 = std::min(ix + 1, src.w - 1);
            const double tx = fx - static_cast<double>(ix);
            for (std::size_t c = 0; c < 3; ++c) {
                const double top = src.at(c, ix, iy) * (1.0 - tx) + src.at(c, ix1, iy) * tx;
                const double bot = src.at(c, ix, iy1) * (1.0 - tx) + src.at(c, ix1, iy1) * tx;
                out.at(c, ox, oy) = top * (1.0 - ty) + bot * ty;
            }
        }
    }
    return out;
}

Planes gaussian_blur(const Planes& src, double sigma) {
    if (sigma <= 0.0) return src;
    const long radius = static_cast<long>(std::ceil(3.0 * sigma));
    std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
    double total = 0.0;
    for (long i = -radius; i <= radius; ++i) {
        const double v = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
        k[static_cast<std::size_t>(i + radius)] = v;
        total += v;
    }
    for (auto& v : k) v /= total;

    const long w = static_cast<long>(src.w), h = static_cast<long>(src.h);
    Planes tmp(src.w, src.h), out(src.w, src.h);
    for (std::size_t c = 0; c < 3; ++c) {
        for (long y = 0; y < h; ++y)
            for (long x = 0; x < w; ++x) {
                double s = 0.0;
                for (long i = -radius; i <= radius; ++i)
                    s += k[static_cast<std::size_t>(i + radius)] * src.at(c, reflect(x + i, w), static_cast<std::size_t>(y));
                tmp.at(c, static_cast<std::size_t>(x), static_cast<std::size_t>(y)) = s;
            }
        for (long y = 0; y < h; ++y)
            for (long x = 0; x < w; ++x) {
                double s = 0.0;
                for (long i = -radius; i <= radius; ++i)
                    s += k[static_cast<std::size_t>(i + radius)] * tmp.at(c, static_cast<std::size_t>(x), reflect(y + i, h));
                out.at(c, static_cast<std::size_t>(x), static_cast<std::size_t>(y)) = s;
            }
    }
    return out;
}

} // namespace

// ---------------------------------------------------------------------------
// Degradation

double mos_for(const Degradation& d) {
    return std::exp(-(0.5 * d.blur + 4.0 * d.noise + 0.4 * (d.down - 1.0) + 1.2 * d.contrast));
}

void validate_degradation(const Degradation& d) {
    auto in = [](double v, double lo, double hi) { return v >= lo && v <= hi; };
    if (!in(d.blur, 0.0, 3.0)) throw InvalidArgument("degrade: blur sigma " + std::to_string(d.blur) + " outside [0, 3]");
    if (!in(d.noise, 0.0, 0.2)) throw InvalidArgument("degrade: noise sigma " + std::to_string(d.noise) + " outside [0, 0.2]");
    if (!in(d.down, 1.0, 4.0)) throw InvalidArgument("degrade: down factor " + std::to_string(d.down) + " outside [1, 4]");
    if (!in(d.contrast, 0.0, 0.6)) {
        throw InvalidArgument("degrade: contrast " + std::to_string(d.contrast) + " outside [0, 0.6]");
    }
}

std::pair<Image, double> degrade(const Image& img, const Degradation& d, Rng& rng) {
    validate_degradation(d);
    Planes p = to_planes(img);
    p = gaussian_blur(p, d.blur);
    if (d.down > 1.0) {
        const auto sw = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(static_cast<double>(p.w) / d.down)));
        const auto sh = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(static_cast<double>(p.h) / d.down)));
        Planes small = resample(p, 0, 0, static_cast<double>(p.w), static_cast<double>(p.h), sw, sh);
        p = resample(small, 0, 0, static_cast<double>(sw), static_cast<double>(sh), p.w, p.h);
    }
    if (d.contrast > 0.0) {
        for (auto& v : p.v) v = 0.5 + (1.0 - d.contrast) * (v - 0.5);
    }
    if (d.noise > 0.0) {
        std::normal_distribution<double> gauss(0.0, d.noise);
        for (auto& v : p.v) v += gauss(rng);
    }
    return {to_image(p), mos_for(d)};
}

// ---------------------------------------------------------------------------
// Geometry

Image flip_horizontal(const Image& img) {
    Image out(img.width, img.height);
    for (std::size_t y = 0; y < img.height; ++y)
        for (std::size_t x = 0; x < img.width; ++x)
            for (std::size_t c = 0; c < 3; ++c) out.at(img.width - 1 - x, y, c) = img.at(x, y, c);
    return out;
}

Image rotate90(const Image& img, int quarter_turns) {
    const int k = ((quarter_turns % 4) + 4) % 4;
    if (k == 0) return img;
    const bool swap = k % 2 == 1;
    Image out(swap ? img.height : img.width, swap ? img.width : img.height);
    for (std::size_t y = 0; y < img.height; ++y)
        for (std::size_t x = 0; x < img.width; ++x) {
            std::size_t nx = 0, ny = 0;
            switch (k) {
            case 1: nx = y; ny = img.width - 1 - x; break;
            case 2: nx = img.width - 1 - x; ny = img.height - 1 - y; break;
            default: nx = img.height - 1 - y; ny = x; break;
            }
            for (std::size_t c = 0; c < 3; ++c) out.at(nx, ny, c) = img.at(x, y, c);
        }
    return out;
}

Image reflect_pad_to(const Image& img, std::size_t min_width, std::size_t min_height) {
    const std::size_t w = std::max(img.width, min_width);
    const std::size_t h = std::max(img.height, min_height);
    if (w == img.width && h == img.height) return img;
    const long left = static_cast<long>((w - img.width) / 2);
    const long top = static_cast<long>((h - img.height) / 2);
    Image out(w, h);
    for (std::size_t y = 0; y < h; ++y) {
        const std::size_t sy = reflect(static_cast<long>(y) - top, static_cast<long>(img.height));
        for (std::size_t x = 0; x < w; ++x) {
            const std::size_t sx = reflect(static_cast<long>(x) - left, static_cast<long>(img.width));
            for (std::size_t c = 0; c < 3; ++c) out.at(x, y, c) = img.at(sx, sy, c);
        }
    }
    return out;
}

Image resize_bilinear(const Image& img, std::size_t out_w, std::size_t out_h) {
    if (out_w == img.width && out_h == img.height) return img;
    return to_image(resample(to_planes(img), 0, 0, static_cast<double>(img.width), static_cast<double>(img.height),
                             out_w, out_h));
}

Image augment(const Image& input, const AugmentConfig& cfg, Rng& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Image img = input;
    if (unit(rng) < cfg.flip_p) img = flip_horizontal(img);
    if (unit(rng) < cfg.rotate_p) {
        std::uniform_int_distribution<int> turns(1, 3);
        img = rotate90(img, turns(rng));
    }
    img = reflect_pad_to(img, cfg.target, cfg.target);

    const double area = static_cast<double>(img.width * img.height);
    std::uniform_real_distribution<double> scale(cfg.scale_lo, cfg.scale_hi);
    std::uniform_real_distribution<double> ratio(cfg.ratio_lo, cfg.ratio_hi);
    std::size_t cw = img.width, ch = img.height, x0 = 0, y0 = 0;
    bool found = false;
    for (int attempt = 0; attempt < 10 && !found; ++attempt) {
        const double target_area = area * scale(rng);
        const double r = ratio(rng);
        const auto w = static_cast<std::size_t>(std::lround(std::sqrt(target_area * r)));
        const auto h = static_cast<std::size_t>(std::lround(std::sqrt(target_area / r)));
        if (w >= 1 && h >= 1 && w <= img.width && h <= img.height) {
            cw = w;
            ch = h;
            x0 = std::uniform_int_distribution<std::size_t>(0, img.width - w)(rng);
            y0 = std::uniform_int_distribution<std::size_t>(0, img.height - h)(rng);
            found = true;
        }
    }
    if (!found) {
        // Largest centred crop within the ratio bounds.
        const double in_ratio = static_cast<double>(img.width) / static_cast<double>(img.height);
        if (in_ratio < cfg.ratio_lo) {
            ch = static_cast<std::size_t>(std::lround(static_cast<double>(img.width) / cfg.ratio_lo));
        } else if (in_ratio > cfg.ratio_hi) {
            cw = static_cast<std::size_t>(std::lround(static_cast<double>(img.height) * cfg.ratio_hi));
        }
        x0 = (img.width - cw) / 2;
        y0 = (img.height - ch) / 2;
    }
    if (x0 == 0 && y0 == 0 && cw == img.width && ch == img.height && cw == cfg.target && ch == cfg.target) return img;
    return to_image(resample(to_planes(img), static_cast<double>(x0), static_cast<double>(y0), static_cast<double>(cw),
                             static_cast<double>(ch), cfg.target, cfg.target));
}

Image resize_eval(const Image& img, std::size_t r) {
    const std::size_t side = std::max(img.width, img.height);
    return resize_bilinear(reflect_pad_to(img, side, side), r, r);
}

Tensor to_batch(const std::vector<Image>& images) {
    if (images.empty()) throw InvalidArgument("to_batch: no images");
    const std::size_t w = images.front().width, h = images.front().height;
    std::vector<double> v(images.size() * 3 * w * h);
    for (std::size_t n = 0; n < images.size(); ++n) {
        const auto& img = images[n];
        if (img.width != w || img.height != h) throw InvalidArgument("to_batch: images differ in size");
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t x = 0; x < w; ++x) v[((n * 3 + c) * h + y) * w + x] = img.at(x, y, c) / 255.0;
    }
    return Tensor::from({images.size(), 3, h, w}, std::move(v));
}

// ---------------------------------------------------------------------------
// Procedural pseudo-faces: layered soft ellipses over a gradient background,
// with thin strokes and speckles so blur and resampling leave visible traces.

namespace {

struct Color {
    double r, g, b;
};

Color mix(Color a, Color b, double t) { return {a.r + (b.r - a.r) * t, a.g + (b.g - a.g) * t, a.b + (b.b - a.b) * t}; }

struct Canvas {
    Planes p;
    void blend(std::size_t x, std::size_t y, Color c, double alpha) {
        if (alpha <= 0.0) return;
        alpha = std::min(alpha, 1.0);
        p.at(0, x, y) += (c.r - p.at(0, x, y)) * alpha;
        p.at(1, x, y) += (c.g - p.at(1, x, y)) * alpha;
        p.at(2, x, y) += (c.b - p.at(2, x, y)) * alpha;
    }
    // Ellipse with a one-pixel soft rim; `shade` darkens toward the lower edge.
    void ellipse(double cx, double cy, double rx, double ry, Color c, double shade = 0.0) {
        const long x0 = std::max(0L, static_cast<long>(cx - rx - 2)), x1 = std::min<long>(p.w - 1, static_cast<long>(cx + rx + 2));
        const long y0 = std::max(0L, static_cast<long>(cy - ry - 2)), y1 = std::min<long>(p.h - 1, static_cast<long>(cy + ry + 2));
        for (long y = y0; y <= y1; ++y)
            for (long x = x0; x <= x1; ++x) {
                const double dx = (x + 0.5 - cx) / rx, dy = (y + 0.5 - cy) / ry;
                const double d = std::sqrt(dx * dx + dy * dy);
                const double edge = (1.0 - d) * std::min(rx, ry);
                const double alpha = std::clamp(edge + 0.5, 0.0, 1.0);
                const double dark = 1.0 - shade * std::clamp(0.5 + 0.5 * dy, 0.0, 1.0);
                blend(static_cast<std::size_t>(x), static_cast<std::size_t>(y), {c.r * dark, c.g * dark, c.b * dark}, alpha);
            }
    }
    void stroke(double xa, double ya, double xb, double yb, double width, Color c) {
        const long x0 = std::max(0L, static_cast<long>(std::min(xa, xb) - width - 1));
        const long x1 = std::min<long>(p.w - 1, static_cast<long>(std::max(xa, xb) + width + 1));
        const long y0 = std::max(0L, static_cast<long>(std::min(ya, yb) - width - 1));
        const long y1 = std::min<long>(p.h - 1, static_cast<long>(std::max(ya, yb) + width + 1));
        const double vx = xb - xa, vy = yb - ya, len2 = std::max(vx * vx + vy * vy, 1e-9);
        for (long y = y0; y <= y1; ++y)
            for (long x = x0; x <= x1; ++x) {
                const double px = x + 0.5 - xa, py = y + 0.5 - ya;
                const double t = std::clamp((px * vx + py * vy) / len2, 0.0, 1.0);
                const double ex = px - t * vx, ey = py - t * vy;
                const double d = std::sqrt(ex * ex + ey * ey);
                blend(static_cast<std::size_t>(x), static_cast<std::size_t>(y), c, std::clamp(0.5 * width - d + 0.5, 0.0, 1.0));
            }
    }
};

} // namespace

Image render_face(std::size_t width, std::size_t height, Rng& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    auto uni = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };
    const double W = static_cast<double>(width), H = static_cast<double>(height);

    Canvas cv{Planes(width, height)};
    // Wallpaper: anti-aliased square-wave stripes between a near-black and a
    // near-white tint, so every image carries full-range sharp edges.
    const Color dark{uni(0.0, 0.12), uni(0.0, 0.12), uni(0.0, 0.12)};
    const Color light{uni(0.88, 1.0), uni(0.88, 1.0), uni(0.88, 1.0)};
    const double angle = uni(0.0, M_PI);
    const double period = uni(6.0, 12.0);
    const double phase = uni(0.0, period);
    const double ca = std::cos(angle), sa = std::sin(angle);
    for (std::size_t y = 0; y < height; ++y)
        for (std::size_t x = 0; x < width; ++x) {
            const double t = std::fmod((x + 0.5) * ca + (y + 0.5) * sa + phase + 4.0 * period, period);
            const double half = 0.5 * period;
            const double d = std::min({t, period - t, std::fabs(t - half)});
            const double edge = std::clamp(d + 0.5, 0.0, 1.0); // 0 on a boundary, 1 a pixel away
            const double on = t < half ? 1.0 : 0.0;
            const double a = on * edge + 0.5 * (1.0 - edge);
            const Color c = mix(dark, light, a);
            cv.p.at(0, x, y) = c.r;
            cv.p.at(1, x, y) = c.g;
            cv.p.at(2, x, y) = c.b;
        }

    const double cx = W * uni(0.42, 0.58), cy = H * uni(0.45, 0.58);
    const double rx = W * uni(0.28, 0.36), ry = H * uni(0.30, 0.38);
    const double tone = uni(0.35, 0.95);
    const Color skin{tone, tone * uni(0.70, 0.85), tone * uni(0.55, 0.70)};
    const Color hair{uni(0.02, 0.5), uni(0.02, 0.35), uni(0.02, 0.25)};

    cv.ellipse(cx, cy - ry * 0.35, rx * 1.12, ry * 0.85, hair);
    cv.ellipse(cx, cy, rx, ry, skin, 0.25);
    // Hair strands across the forehead.
    const int strands = static_cast<int>(uni(6, 14));
    for (int i = 0; i < strands; ++i) {
        const double sx = cx + uni(-rx, rx);
        cv.stroke(sx, cy - ry * 1.05, sx + uni(-rx * 0.3, rx * 0.3), cy - ry * uni(0.5, 0.75), uni(0.7, 1.3), hair);
    }

    const double eye_dx = rx * uni(0.35, 0.45), eye_y = cy - ry * uni(0.10, 0.22);
    const double eye_rx = rx * uni(0.15, 0.22), eye_ry = ry * uni(0.06, 0.10);
    const Color iris{uni(0.05, 0.5), uni(0.1, 0.6), uni(0.1, 0.7)};
    for (double side : {-1.0, 1.0}) {
        const double ex = cx + side * eye_dx;
        cv.ellipse(ex, eye_y, eye_rx, eye_ry, {0.95, 0.95, 0.93});
        cv.ellipse(ex, eye_y, eye_ry * 0.9, eye_ry * 0.9, iris);
        cv.ellipse(ex, eye_y, eye_ry * 0.4, eye_ry * 0.4, {0.02, 0.02, 0.02});
        cv.stroke(ex - eye_rx, eye_y - eye_ry * 2.2, ex + eye_rx, eye_y - eye_ry * 2.6, uni(1.0, 2.0), hair);
    }
    const Color lip{skin.r * 0.8, skin.g * 0.45, skin.b * 0.45};
    cv.stroke(cx, cy - ry * 0.05, cx + rx * uni(-0.05, 0.05), cy + ry * 0.3, 1.0, {skin.r * 0.7, skin.g * 0.7, skin.b * 0.7});
    cv.ellipse(cx, cy + ry * uni(0.50, 0.60), rx * uni(0.25, 0.40), ry * uni(0.05, 0.09), lip);

    // Freckles / pores: single-pixel speckles inside the face.
    const int speckles = static_cast<int>(uni(20, 60));
    for (int i = 0; i < speckles; ++i) {
        const double a = uni(0, 2 * M_PI), r = std::sqrt(u(rng)) * 0.8;
        const double px = cx + std::cos(a) * rx * r, py = cy + std::sin(a) * ry * r;
        if (px >= 0 && py >= 0 && px < W && py < H) {
            cv.blend(static_cast<std::size_t>(px), static_cast<std::size_t>(py), {skin.r * 0.6, skin.g * 0.5, skin.b * 0.4}, 0.8);
        }
    }
    return to_image(cv.p);
}

} // namespace mspt
