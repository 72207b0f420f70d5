#pragma once

// 8-bit rasters, PNG codec, and the mapping between display rasters and the
// [-1, 1] tensors consumed by the networks.

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "gath/error.hpp"
#include "gath/tensor.hpp"

namespace gath {

/// Interleaved 8-bit raster, row-major HWC.
struct RasterImage {
    int height = 0, width = 0, channels = 3;
    std::vector<std::uint8_t> pixels;

    RasterImage() = default;
    RasterImage(int h, int w, int c, std::uint8_t fill = 0)
        : height(h), width(w), channels(c), pixels(std::size_t(h) * w * c, fill) {}

    std::uint8_t& at(int y, int x, int c) { return pixels[(std::size_t(y) * width + x) * channels + c]; }
    std::uint8_t at(int y, int x, int c) const { return pixels[(std::size_t(y) * width + x) * channels + c]; }
    bool same_shape(const RasterImage& o) const {
        return height == o.height && width == o.width && channels == o.channels;
    }
    friend bool operator==(const RasterImage&, const RasterImage&) = default;
};

/// A single 3×H×W image with every value finite and inside [-1, 1].
class ImageTensor {
public:
    ImageTensor() = default;
    explicit ImageTensor(Tensor<float> t) : t_(std::move(t)) { validate(); }

    const Tensor<float>& tensor() const { return t_; }
    int height() const { return t_.h(); }
    int width() const { return t_.w(); }
    friend bool operator==(const ImageTensor&, const ImageTensor&) = default;

private:
    void validate() const {
        if (t_.n() != 1 || t_.c() != 3) throw ShapeError("image tensor must be 1x3xHxW, got " + t_.shape().str());
        for (float v : t_.vec())
            if (!std::isfinite(v) || v < -1.0f || v > 1.0f) throw RangeError("image tensor value outside [-1,1]");
    }

    Tensor<float> t_;
};

inline float normalize_level(std::uint8_t v) { return 2.0f * (float(v) / 255.0f) - 1.0f; }

/// round(255·(x+1)/2), halves rounded up, clamped to [0, 255].
inline std::uint8_t denormalize_level(float x) {
    double v = std::floor(255.0 * (double(x) + 1.0) / 2.0 + 0.5);
    return std::uint8_t(std::clamp(v, 0.0, 255.0));
}

namespace detail {

inline void check_png(const png_image& img, const std::string& where) {
    if (PNG_IMAGE_FAILED(img)) throw DecodeError(where + ": " + img.message);
}

inline RasterImage finish_read(png_image& img, int want_channels, const std::string& where) {
    img.format = want_channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    RasterImage r(int(img.height), int(img.width), want_channels);
    if (!png_image_finish_read(&img, nullptr, r.pixels.data(), 0, nullptr)) {
        std::string msg = img.message;
        png_image_free(&img);
        throw DecodeError(where + ": " + msg);
    }
    return r;
}

inline void require_rgb(png_image& img, const std::string& where) {
    bool color = img.format & PNG_FORMAT_FLAG_COLOR;
    bool alpha = img.format & PNG_FORMAT_FLAG_ALPHA;
    if (!color || alpha) {
        int ch = (color ? 3 : 1) + (alpha ? 1 : 0);
        png_image_free(&img);
        throw ChannelError(where + ": expected 3 RGB channels, file has " + std::to_string(ch));
    }
}

}  // namespace detail

/// Reads an RGB PNG. Grayscale or alpha-carrying files raise ChannelError.
inline RasterImage read_png_rgb(const std::filesystem::path& path) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.string().c_str()))
        throw DecodeError("cannot decode '" + path.string() + "': " + img.message);
    detail::require_rgb(img, path.string());
    return detail::finish_read(img, 3, path.string());
}

inline RasterImage decode_png_rgb(std::span<const std::uint8_t> bytes) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size()))
        throw DecodeError(std::string("cannot decode image payload: ") + img.message);
    detail::require_rgb(img, "image payload");
    return detail::finish_read(img, 3, "image payload");
}

/// Reads any PNG converted to one gray channel.
inline RasterImage read_png_gray(const std::filesystem::path& path) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.string().c_str()))
        throw DecodeError("cannot decode '" + path.string() + "': " + img.message);
    return detail::finish_read(img, 1, path.string());
}

inline void write_png(const std::filesystem::path& path, const RasterImage& r) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    img.width = png_uint_32(r.width);
    img.height = png_uint_32(r.height);
    img.format = r.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&img, path.string().c_str(), 0, r.pixels.data(), 0, nullptr))
        throw IoError("cannot write '" + path.string() + "': " + img.message);
}

inline std::vector<std::uint8_t> encode_png(const RasterImage& r) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    img.width = png_uint_32(r.width);
    img.height = png_uint_32(r.height);
    img.format = r.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    png_alloc_size_t size = 0;
    if (!png_image_write_to_memory(&img, nullptr, &size, 0, r.pixels.data(), 0, nullptr))
        throw IoError(std::string("png encode: ") + img.message);
    std::vector<std::uint8_t> out(size);
    if (!png_image_write_to_memory(&img, out.data(), &size, 0, r.pixels.data(), 0, nullptr))
        throw IoError(std::string("png encode: ") + img.message);
    out.resize(size);
    return out;
}

/// Bilinear resampling with half-pixel centers and edge clamping.
inline RasterImage resize_bilinear(const RasterImage& src, int out_h, int out_w) {
    if (src.height == out_h && src.width == out_w) return src;
    RasterImage dst(out_h, out_w, src.channels);
    const double sy = double(src.height) / out_h, sx = double(src.width) / out_w;
    for (int y = 0; y < out_h; ++y) {
        double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, double(src.height - 1));
        int y0 = int(fy), y1 = std::min(y0 + 1, src.height - 1);
        double wy = fy - y0;
        for (int x = 0; x < out_w; ++x) {
            double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, double(src.width - 1));
            int x0 = int(fx), x1 = std::min(x0 + 1, src.width - 1);
            double wx = fx - x0;
            for (int c = 0; c < src.channels; ++c) {
                double v = (1 - wy) * ((1 - wx) * src.at(y0, x0, c) + wx * src.at(y0, x1, c)) +
                           wy * ((1 - wx) * src.at(y1, x0, c) + wx * src.at(y1, x1, c));
                dst.at(y, x, c) = std::uint8_t(std::clamp(std::floor(v + 0.5), 0.0, 255.0));
            }
        }
    }
    return dst;
}

/// v ↦ 2·(v/255) − 1, resized to side×side when needed.
inline ImageTensor to_image_tensor(const RasterImage& raster, int side) {
    if (raster.channels != 3) throw ChannelError("expected an RGB raster");
    const RasterImage& r = (raster.height == side && raster.width == side) ? raster : resize_bilinear(raster, side, side);
    Tensor<float> t(1, 3, side, side);
    for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x)
            for (int c = 0; c < 3; ++c) t.at(0, c, y, x) = normalize_level(r.at(y, x, c));
    return ImageTensor(std::move(t));
}

/// Inverse of to_image_tensor for one sample of a batch (values clamped).
template <class T>
RasterImage denormalize(const Tensor<T>& x, int sample = 0) {
    if (x.c() != 3) throw ShapeError("denormalize expects 3 channels");
    RasterImage r(x.h(), x.w(), 3);
    for (int y = 0; y < x.h(); ++y)
        for (int xx = 0; xx < x.w(); ++xx)
            for (int c = 0; c < 3; ++c) r.at(y, xx, c) = denormalize_level(float(x.at(sample, c, y, xx)));
    return r;
}

inline RasterImage denormalize(const ImageTensor& x) { return denormalize(x.tensor()); }

}  // namespace gath
