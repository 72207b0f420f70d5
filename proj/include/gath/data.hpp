#pragma once

// Domain types for the source/target image sets, manifest parsing, image and
// AU ingestion, and unpaired minibatch sampling.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "gath/error.hpp"
#include "gath/image.hpp"
#include "gath/log.hpp"
#include "gath/tensor.hpp"

namespace gath {

inline constexpr int kDefaultAuDim = 46;
inline constexpr double kAuClampTolerance = 1e-3;

struct IdentityLabel {
    int index = 0;
    friend bool operator==(const IdentityLabel&, const IdentityLabel&) = default;
};

/// Action-unit coefficients, each in [0, 1].
class AUVector {
public:
    AUVector() = default;

    /// Validates `values`: overshoot up to kAuClampTolerance is clamped,
    /// anything larger (or non-finite) is a RangeError.
    static AUVector from_values(std::span<const float> values, int expected_dim = kDefaultAuDim) {
        if (int(values.size()) != expected_dim)
            throw ArityError("AU vector has " + std::to_string(values.size()) + " values, expected " +
                             std::to_string(expected_dim));
        AUVector a;
        a.coeffs_.assign(values.begin(), values.end());
        for (std::size_t i = 0; i < a.coeffs_.size(); ++i) {
            float& v = a.coeffs_[i];
            if (!std::isfinite(v) || v < -kAuClampTolerance || v > 1.0 + kAuClampTolerance)
                throw RangeError("AU component " + std::to_string(i) + " = " + std::to_string(v) + " outside [0,1]");
            v = std::clamp(v, 0.0f, 1.0f);
        }
        return a;
    }

    static AUVector zeros(int dim = kDefaultAuDim) {
        AUVector a;
        a.coeffs_.assign(dim, 0.0f);
        return a;
    }

    int size() const { return int(coeffs_.size()); }
    float operator[](int i) const { return coeffs_[i]; }
    std::span<const float> coeffs() const { return coeffs_; }
    friend bool operator==(const AUVector&, const AUVector&) = default;

private:
    std::vector<float> coeffs_;
};

enum class ManifestRole { source, target };

inline std::string to_string(ManifestRole r) { return r == ManifestRole::source ? "source" : "target"; }

struct ManifestRecord {
    std::filesystem::path image_path;
    std::optional<IdentityLabel> identity;
    std::optional<std::filesystem::path> au_path;
    std::optional<std::filesystem::path> mask_path;
};

struct DatasetManifest {
    ManifestRole role = ManifestRole::source;
    std::vector<ManifestRecord> records;

    bool empty() const { return records.empty(); }
    std::size_t size() const { return records.size(); }
};

namespace detail {

inline std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : s) {
        if (ch == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(ch);
        }
    }
    out.push_back(cur);
    return out;
}

inline std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
    std::filesystem::path q(p);
    return q.is_absolute() ? q : base / q;
}

}  // namespace detail

/// Parses `image<TAB>identity<TAB>au_path<TAB>mask_path` records (trailing
/// fields may be omitted; empty field = absent). Relative paths resolve
/// against the manifest's directory.
inline DatasetManifest parse_manifest(std::istream& in, ManifestRole role, const std::filesystem::path& base_dir,
                                      const std::string& name = "manifest") {
    DatasetManifest m;
    m.role = role;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto fields = detail::split(line, '\t');
        auto where = name + ":" + std::to_string(lineno);
        if (fields.size() > 4) throw ParseError(where + ": expected at most 4 tab-separated fields");
        fields.resize(4);
        if (fields[0].empty()) throw ParseError(where + ": missing image path");
        ManifestRecord r;
        r.image_path = detail::resolve(base_dir, fields[0]);
        if (!fields[1].empty()) {
            int id = 0;
            auto [p, ec] = std::from_chars(fields[1].data(), fields[1].data() + fields[1].size(), id);
            if (ec != std::errc() || p != fields[1].data() + fields[1].size() || id < 0)
                throw ParseError(where + ": identity '" + fields[1] + "' is not a non-negative integer");
            r.identity = IdentityLabel{id};
        }
        if (!fields[2].empty()) r.au_path = detail::resolve(base_dir, fields[2]);
        if (!fields[3].empty()) r.mask_path = detail::resolve(base_dir, fields[3]);
        if (role == ManifestRole::source && !r.identity)
            throw SchemaError(where + ": source record lacks an identity label");
        if (role == ManifestRole::target && !r.au_path) throw SchemaError(where + ": target record lacks an AU path");
        m.records.push_back(std::move(r));
    }
    return m;
}

inline DatasetManifest load_manifest(const std::filesystem::path& path, ManifestRole role) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest '" + path.string() + "'");
    return parse_manifest(in, role, path.parent_path(), path.string());
}

inline void write_manifest(const std::filesystem::path& path, const DatasetManifest& m) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write manifest '" + path.string() + "'");
    auto rel = [&](const std::filesystem::path& p) { return p.lexically_relative(path.parent_path()).generic_string(); };
    for (const auto& r : m.records) {
        out << rel(r.image_path) << '\t' << (r.identity ? std::to_string(r.identity->index) : "") << '\t'
            << (r.au_path ? rel(*r.au_path) : "") << '\t' << (r.mask_path ? rel(*r.mask_path) : "") << '\n';
    }
}

inline ImageTensor load_image(const std::filesystem::path& path, int side) {
    return to_image_tensor(read_png_rgb(path), side);
}

/// Parses whitespace- or comma-separated reals.
inline AUVector parse_au_vector(const std::string& text, int dim = kDefaultAuDim, const std::string& name = "AU") {
    std::vector<float> vals;
    std::string tok;
    auto flush = [&] {
        if (tok.empty()) return;
        float v = 0;
        auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
        if (ec != std::errc() || p != tok.data() + tok.size())
            throw ParseError(name + ": '" + tok + "' is not a number");
        vals.push_back(v);
        tok.clear();
    };
    for (char ch : text) {
        if (ch == ',' || std::isspace(static_cast<unsigned char>(ch)))
            flush();
        else
            tok.push_back(ch);
    }
    flush();
    try {
        return AUVector::from_values(vals, dim);
    } catch (const Error& e) {
        if (e.kind() == "arity") throw ArityError(name + ": " + e.what());
        throw RangeError(name + ": " + e.what());
    }
}

inline AUVector load_au_vector(const std::filesystem::path& path, int dim = kDefaultAuDim) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open AU file '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_au_vector(ss.str(), dim, path.string());
}

inline void write_au_vector(const std::filesystem::path& path, const AUVector& a) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write AU file '" + path.string() + "'");
    char buf[32];
    for (int i = 0; i < a.size(); ++i) {
        auto [p, ec] = std::to_chars(buf, buf + sizeof buf, a[i]);
        out.write(buf, p - buf);
        out << (i + 1 < a.size() ? ' ' : '\n');
    }
}

/// Binary face mask, H×W, 1 inside the face region.
struct FaceMask {
    int height = 0, width = 0;
    std::vector<std::uint8_t> inside;
    friend bool operator==(const FaceMask&, const FaceMask&) = default;
};

inline FaceMask load_mask(const std::filesystem::path& path, int side) {
    auto g = read_png_gray(path);
    if (g.height != side || g.width != side) g = resize_bilinear(g, side, side);
    FaceMask m{side, side, std::vector<std::uint8_t>(std::size_t(side) * side)};
    for (std::size_t i = 0; i < m.inside.size(); ++i) m.inside[i] = g.pixels[i] != 0;
    return m;
}

inline RasterImage mask_to_raster(const FaceMask& m) {
    RasterImage r(m.height, m.width, 1);
    for (std::size_t i = 0; i < m.inside.size(); ++i) r.pixels[i] = m.inside[i] ? 255 : 0;
    return r;
}

/// A manifest with every referenced file decoded. Immutable after loading.
struct Dataset {
    DatasetManifest manifest;
    int side = 0;
    int au_dim = kDefaultAuDim;
    std::vector<ImageTensor> images;
    std::vector<std::optional<AUVector>> aus;
    std::vector<std::optional<FaceMask>> masks;

    std::size_t size() const { return images.size(); }
    bool empty() const { return images.empty(); }
};

inline Dataset load_dataset(const DatasetManifest& m, int side, int au_dim = kDefaultAuDim) {
    Dataset d;
    d.manifest = m;
    d.side = side;
    d.au_dim = au_dim;
    for (const auto& r : m.records) {
        d.images.push_back(load_image(r.image_path, side));
        d.aus.push_back(r.au_path ? std::optional(load_au_vector(*r.au_path, au_dim)) : std::nullopt);
        d.masks.push_back(r.mask_path ? std::optional(load_mask(*r.mask_path, side)) : std::nullopt);
    }
    return d;
}

/// Identities present in both sets. Overlap is allowed (a small mixed-in
/// fraction is a legitimate recipe), so this only warns.
inline std::set<int> warn_if_overlapping(const DatasetManifest& source, const DatasetManifest& target) {
    std::set<int> src, both;
    for (const auto& r : source.records)
        if (r.identity) src.insert(r.identity->index);
    for (const auto& r : target.records)
        if (r.identity && src.count(r.identity->index)) both.insert(r.identity->index);
    if (!both.empty())
        warn(std::to_string(both.size()) + " identit" + (both.size() == 1 ? "y appears" : "ies appear") +
             " in both source and target sets");
    return both;
}

template <class T>
struct BasicTrainBatch {
    Tensor<T> x_src, x_re, y_tgt;  // N×3×H×W
    Tensor<T> e_tgt;               // N×A×1×1
    std::vector<int> c;            // identity of x_re
    std::vector<int> c_src;        // identity of x_src
    std::vector<int> src_index, re_index, tgt_index;

    int size() const { return x_src.n(); }

    template <class U>
    BasicTrainBatch<U> cast() const {
        return {x_src.template cast<U>(), x_re.template cast<U>(), y_tgt.template cast<U>(), e_tgt.template cast<U>(),
                c, c_src, src_index, re_index, tgt_index};
    }
};

using TrainBatch = BasicTrainBatch<float>;

/// Draws x_src, x_re i.i.d. uniformly (with replacement) from the source set
/// and (y_tgt, e_tgt) pairs from the target set. The batch is a pure function
/// of the generator state.
template <class Rng>
TrainBatch sample_minibatch(const Dataset& source, const Dataset& target, Rng& rng, int n) {
    if (source.empty()) throw SamplingError("source set is empty");
    if (target.empty()) throw SamplingError("target set is empty");
    if (n < 1) throw SamplingError("batch size must be at least 1");
    if (source.side != target.side) throw ShapeError("source and target sets have different image sides");
    std::uniform_int_distribution<std::size_t> src_pick(0, source.size() - 1), tgt_pick(0, target.size() - 1);
    TrainBatch b;
    for (int i = 0; i < n; ++i) {
        b.src_index.push_back(int(src_pick(rng)));
        b.re_index.push_back(int(src_pick(rng)));
        b.tgt_index.push_back(int(tgt_pick(rng)));
    }
    const int side = source.side, A = target.au_dim;
    b.x_src = Tensor<float>(n, 3, side, side);
    b.x_re = Tensor<float>(n, 3, side, side);
    b.y_tgt = Tensor<float>(n, 3, side, side);
    b.e_tgt = Tensor<float>(n, A, 1, 1);
    auto put = [](Tensor<float>& dst, int i, const ImageTensor& img) {
        std::copy(img.tensor().data(), img.tensor().data() + img.tensor().size(), dst.sample(i).data());
    };
    for (int i = 0; i < n; ++i) {
        put(b.x_src, i, source.images[b.src_index[i]]);
        put(b.x_re, i, source.images[b.re_index[i]]);
        put(b.y_tgt, i, target.images[b.tgt_index[i]]);
        const auto& au = target.aus[b.tgt_index[i]];
        if (!au) throw SchemaError("target record " + std::to_string(b.tgt_index[i]) + " has no AU vector");
        std::copy(au->coeffs().begin(), au->coeffs().end(), b.e_tgt.sample(i).data());
        b.c.push_back(source.manifest.records[b.re_index[i]].identity.value_or(IdentityLabel{}).index);
        b.c_src.push_back(source.manifest.records[b.src_index[i]].identity.value_or(IdentityLabel{}).index);
    }
    return b;
}

}  // namespace gath
