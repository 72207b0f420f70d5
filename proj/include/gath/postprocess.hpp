#pragma once

// Display-space post-processing: contrast-limited adaptive histogram
// equalization on luma, non-local-means denoising, unsharp masking. Stages
// always run in the order clahe -> denoise -> sharpen.

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "gath/data.hpp"
#include "gath/error.hpp"
#include "gath/image.hpp"
#include "gath/log.hpp"

namespace gath {

struct PostprocessStages {
    bool clahe = false, denoise = false, sharpen = false;

    bool any() const { return clahe || denoise || sharpen; }
    friend bool operator==(const PostprocessStages&, const PostprocessStages&) = default;

    static PostprocessStages all() { return {true, true, true}; }
};

/// Comma-separated subset of {clahe, denoise, sharpen}; order is ignored.
inline PostprocessStages parse_stages(const std::string& text) {
    PostprocessStages s;
    for (const auto& tok : detail::split(text, ',')) {
        if (tok.empty() || tok == "none") continue;
        if (tok == "clahe") s.clahe = true;
        else if (tok == "denoise") s.denoise = true;
        else if (tok == "sharpen") s.sharpen = true;
        else throw ConfigError("unknown postprocess stage '" + tok + "' (expected clahe, denoise, sharpen)");
    }
    return s;
}

inline std::string to_string(const PostprocessStages& s) {
    std::string out;
    auto add = [&](bool on, const char* name) {
        if (on) out += (out.empty() ? "" : ",") + std::string(name);
    };
    add(s.clahe, "clahe");
    add(s.denoise, "denoise");
    add(s.sharpen, "sharpen");
    return out.empty() ? "none" : out;
}

struct PostprocessConfig {
    double clahe_clip = 2.0;
    int clahe_tile_rows = 8, clahe_tile_cols = 8;
    double nlm_strength = 10.0;  // h
    double nlm_sigma = 0.0;      // noise level subtracted from patch distances
    int nlm_patch = 7;
    int nlm_window = 21;
    double unsharp_radius = 1.5;  // gaussian sigma in pixels
    double unsharp_amount = 0.5;
    PostprocessStages stages;

    void validate() const {
        if (!(clahe_clip > 0)) throw ConfigError("clahe_clip must be > 0");
        if (clahe_tile_rows < 1 || clahe_tile_cols < 1) throw ConfigError("clahe tiles must be >= 1");
        if (nlm_strength < 0 || nlm_sigma < 0) throw ConfigError("nlm strength and sigma must be >= 0");
        if (nlm_patch < 1 || nlm_patch % 2 == 0) throw ConfigError("nlm_patch must be odd and >= 1");
        if (nlm_window < 1 || nlm_window % 2 == 0) throw ConfigError("nlm_window must be odd and >= 1");
        if (!(unsharp_radius > 0) || unsharp_amount < 0) throw ConfigError("unsharp radius must be > 0, amount >= 0");
    }
};

namespace detail {

inline std::uint8_t to_level(double v) { return std::uint8_t(std::clamp(std::floor(v + 0.5), 0.0, 255.0)); }

/// Mapping for one tile: clipped histogram, excess spread evenly over all
/// bins, then the mid-rank CDF, which is the identity for a flat histogram.
/// A tile holding a single level has no contrast to redistribute and maps
/// identically.
inline std::array<double, 256> clahe_tile_lut(const std::vector<int>& levels, double clip) {
    std::array<double, 256> hist{};
    for (int v : levels) hist[v] += 1;
    const double area = double(levels.size());
    std::array<double, 256> lut{};
    int occupied = 0;
    for (double h : hist) occupied += h > 0;
    if (occupied <= 1) {
        for (int k = 0; k < 256; ++k) lut[k] = k;
        return lut;
    }
    const double limit = std::max(1.0, clip * area / 256.0);
    double excess = 0;
    for (double& h : hist)
        if (h > limit) {
            excess += h - limit;
            h = limit;
        }
    for (double& h : hist) h += excess / 256.0;
    double cdf = 0;
    for (int k = 0; k < 256; ++k) {
        lut[k] = std::clamp((cdf + 0.5 * hist[k]) / area * 256.0 - 0.5, 0.0, 255.0);
        cdf += hist[k];
    }
    return lut;
}

inline double luma(const RasterImage& img, int y, int x) {
    if (img.channels == 1) return img.at(y, x, 0);
    return 0.299 * img.at(y, x, 0) + 0.587 * img.at(y, x, 1) + 0.114 * img.at(y, x, 2);
}

}  // namespace detail

/// CLAHE on the luma of a full-range YCbCr decomposition. Shifting luma
/// with chroma fixed adds the same offset to R, G and B.
inline RasterImage clahe(const RasterImage& img, const PostprocessConfig& cfg) {
    cfg.validate();
    int rows = cfg.clahe_tile_rows, cols = cfg.clahe_tile_cols;
    if (rows > img.height || cols > img.width) {
        rows = std::min(rows, img.height);
        cols = std::min(cols, img.width);
        warn("clahe: " + std::to_string(img.height) + "x" + std::to_string(img.width) + " image is smaller than the " +
             std::to_string(cfg.clahe_tile_rows) + "x" + std::to_string(cfg.clahe_tile_cols) + " tile grid; using " +
             std::to_string(rows) + "x" + std::to_string(cols));
    }
    const int H = img.height, W = img.width;
    std::vector<int> y_level(std::size_t(H) * W);
    std::vector<double> y_real(y_level.size());
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            double l = detail::luma(img, y, x);
            y_real[std::size_t(y) * W + x] = l;
            y_level[std::size_t(y) * W + x] = int(std::clamp(std::floor(l + 0.5), 0.0, 255.0));
        }
    // Tile t spans [t*H/rows, (t+1)*H/rows).
    auto edge = [](int t, int n, int count) { return int((long long)t * n / count); };
    std::vector<std::array<double, 256>> luts(std::size_t(rows) * cols);
    for (int ty = 0; ty < rows; ++ty)
        for (int tx = 0; tx < cols; ++tx) {
            std::vector<int> levels;
            for (int y = edge(ty, H, rows); y < edge(ty + 1, H, rows); ++y)
                for (int x = edge(tx, W, cols); x < edge(tx + 1, W, cols); ++x)
                    levels.push_back(y_level[std::size_t(y) * W + x]);
            luts[std::size_t(ty) * cols + tx] = detail::clahe_tile_lut(levels, cfg.clahe_clip);
        }
    auto center = [&](int t, int n, int count) { return 0.5 * (edge(t, n, count) + edge(t + 1, n, count)) - 0.5; };
    // Fractional tile coordinate of a pixel relative to tile centers.
    auto locate = [&](int p, int n, int count, int& t0, int& t1, double& f) {
        if (p <= center(0, n, count)) {
            t0 = t1 = 0;
            f = 0;
            return;
        }
        if (p >= center(count - 1, n, count)) {
            t0 = t1 = count - 1;
            f = 0;
            return;
        }
        t0 = 0;
        while (t0 + 1 < count && center(t0 + 1, n, count) <= p) ++t0;
        t1 = t0 + 1;
        double c0 = center(t0, n, count), c1 = center(t1, n, count);
        f = (p - c0) / (c1 - c0);
    };
    RasterImage out(H, W, img.channels);
    for (int y = 0; y < H; ++y) {
        int ty0, ty1;
        double fy;
        locate(y, H, rows, ty0, ty1, fy);
        for (int x = 0; x < W; ++x) {
            int tx0, tx1;
            double fx;
            locate(x, W, cols, tx0, tx1, fx);
            int v = y_level[std::size_t(y) * W + x];
            auto L = [&](int ty, int tx) { return luts[std::size_t(ty) * cols + tx][v]; };
            double mapped = (1 - fy) * ((1 - fx) * L(ty0, tx0) + fx * L(ty0, tx1)) +
                            fy * ((1 - fx) * L(ty1, tx0) + fx * L(ty1, tx1));
            double delta = mapped - v;
            for (int c = 0; c < img.channels; ++c) out.at(y, x, c) = detail::to_level(img.at(y, x, c) + delta);
        }
    }
    return out;
}

/// Non-local means: each pixel becomes the weighted mean of the centers of
/// all patches in its search window, weight exp(-max(d² - 2σ², 0) / h²),
/// with d² the mean squared patch difference over channels. Borders are
/// replicated.
inline RasterImage nl_means_denoise(const RasterImage& img, const PostprocessConfig& cfg) {
    cfg.validate();
    if (cfg.nlm_strength <= 0) return img;
    const int H = img.height, W = img.width, C = img.channels;
    const int pr = cfg.nlm_patch / 2, wr = cfg.nlm_window / 2, pad = pr + wr;
    const int PH = H + 2 * pad, PW = W + 2 * pad;
    auto P = [&](int y, int x, int c) {
        return double(img.at(std::clamp(y - pad, 0, H - 1), std::clamp(x - pad, 0, W - 1), c));
    };
    std::vector<double> padded(std::size_t(PH) * PW * C);
    for (int y = 0; y < PH; ++y)
        for (int x = 0; x < PW; ++x)
            for (int c = 0; c < C; ++c) padded[(std::size_t(y) * PW + x) * C + c] = P(y, x, c);
    auto at = [&](int y, int x, int c) { return padded[(std::size_t(y) * PW + x) * C + c]; };

    const double h2 = cfg.nlm_strength * cfg.nlm_strength, s2 = 2 * cfg.nlm_sigma * cfg.nlm_sigma;
    const double norm = 1.0 / (double(cfg.nlm_patch) * cfg.nlm_patch * C);
    std::vector<double> acc(std::size_t(H) * W * C, 0.0), wsum(std::size_t(H) * W, 0.0);
    // Region over which per-offset squared differences are needed: patch
    // neighbourhoods of every output pixel.
    const int RH = H + 2 * pr, RW = W + 2 * pr;
    std::vector<double> integ(std::size_t(RH + 1) * (RW + 1));
    for (int dy = -wr; dy <= wr; ++dy)
        for (int dx = -wr; dx <= wr; ++dx) {
            std::fill(integ.begin(), integ.end(), 0.0);
            for (int y = 0; y < RH; ++y) {
                double row = 0;
                for (int x = 0; x < RW; ++x) {
                    int py = y + wr, px = x + wr;  // padded coords of region pixel
                    double d = 0;
                    for (int c = 0; c < C; ++c) {
                        double e = at(py, px, c) - at(py + dy, px + dx, c);
                        d += e * e;
                    }
                    row += d;
                    integ[std::size_t(y + 1) * (RW + 1) + x + 1] = integ[std::size_t(y) * (RW + 1) + x + 1] + row;
                }
            }
            auto box = [&](int y0, int x0, int y1, int x1) {  // inclusive-exclusive
                return integ[std::size_t(y1) * (RW + 1) + x1] - integ[std::size_t(y0) * (RW + 1) + x1] -
                       integ[std::size_t(y1) * (RW + 1) + x0] + integ[std::size_t(y0) * (RW + 1) + x0];
            };
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) {
                    // Pixel (y, x) is region pixel (y + pr, x + pr); its patch spans
                    // region rows [y, y + 2pr].
                    double d2 = box(y, x, y + 2 * pr + 1, x + 2 * pr + 1) * norm;
                    double wgt = std::exp(-std::max(d2 - s2, 0.0) / h2);
                    wsum[std::size_t(y) * W + x] += wgt;
                    for (int c = 0; c < C; ++c)
                        acc[(std::size_t(y) * W + x) * C + c] += wgt * at(y + pad + dy, x + pad + dx, c);
                }
        }
    RasterImage out(H, W, C);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < C; ++c)
                out.at(y, x, c) = detail::to_level(acc[(std::size_t(y) * W + x) * C + c] / wsum[std::size_t(y) * W + x]);
    return out;
}

/// Separable gaussian blur, sigma `radius`, support ceil(3σ), replicated borders.
inline std::vector<double> gaussian_blur(const RasterImage& img, double radius) {
    const int r = std::max(1, int(std::ceil(3 * radius)));
    std::vector<double> k(2 * r + 1);
    double s = 0;
    for (int i = -r; i <= r; ++i) s += k[i + r] = std::exp(-0.5 * i * i / (radius * radius));
    for (double& v : k) v /= s;
    const int H = img.height, W = img.width, C = img.channels;
    std::vector<double> tmp(std::size_t(H) * W * C), out(tmp.size());
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < C; ++c) {
                double a = 0;
                for (int i = -r; i <= r; ++i) a += k[i + r] * img.at(y, std::clamp(x + i, 0, W - 1), c);
                tmp[(std::size_t(y) * W + x) * C + c] = a;
            }
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < C; ++c) {
                double a = 0;
                for (int i = -r; i <= r; ++i) a += k[i + r] * tmp[(std::size_t(std::clamp(y + i, 0, H - 1)) * W + x) * C + c];
                out[(std::size_t(y) * W + x) * C + c] = a;
            }
    return out;
}

/// clamp(img + amount·(img − blur(img))).
inline RasterImage unsharp_mask(const RasterImage& img, const PostprocessConfig& cfg) {
    cfg.validate();
    if (cfg.unsharp_amount == 0) return img;
    auto blur = gaussian_blur(img, cfg.unsharp_radius);
    RasterImage out(img.height, img.width, img.channels);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
        double v = img.pixels[i];
        out.pixels[i] = detail::to_level(v + cfg.unsharp_amount * (v - blur[i]));
    }
    return out;
}

/// Enabled stages applied to an already-denormalized raster.
inline RasterImage apply_stages(RasterImage r, const PostprocessConfig& cfg) {
    if (cfg.stages.clahe) r = clahe(r, cfg);
    if (cfg.stages.denoise) r = nl_means_denoise(r, cfg);
    if (cfg.stages.sharpen) r = unsharp_mask(r, cfg);
    return r;
}

/// Denormalize, then the enabled stages in canonical order.
inline RasterImage postprocess_pipeline(const ImageTensor& x, const PostprocessConfig& cfg) {
    cfg.validate();
    return apply_stages(denormalize(x), cfg);
}

}  // namespace gath
