#pragma once

// Procedural cartoon faces with analytic identity and expression
// parameters. Every shape is drawn through a signed-distance coverage ramp,
// so pixels vary continuously with the parameters.

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "gath/data.hpp"
#include "gath/image.hpp"

namespace gath::synth {

struct SpriteIdentity {
    double face_hue = 0.08;         // [0, 1), circular
    double face_shape_ratio = 0.9;  // [0.72, 1.0], head width / height
    double eye_spacing = 0.16;      // [0.12, 0.20], half distance between eyes
    double skin_tone = 0.75;        // [0.45, 0.95], brightness
    double hair_band_color = 0.6;   // [0, 1), circular hue

    void validate() const {
        auto in = [](double v, double lo, double hi) { return std::isfinite(v) && v >= lo && v <= hi; };
        if (!in(face_hue, 0, 1) || !in(face_shape_ratio, 0.72, 1.0) || !in(eye_spacing, 0.12, 0.20) ||
            !in(skin_tone, 0.45, 0.95) || !in(hair_band_color, 0, 1))
            throw RangeError("sprite identity parameter out of range");
    }
};

/// Each field in [0, 1]; all zeros is the neutral face.
struct SpriteExpression {
    double mouth_open = 0, mouth_curve = 0, brow_raise = 0, eye_close = 0;

    void validate() const {
        for (double v : {mouth_open, mouth_curve, brow_raise, eye_close})
            if (!std::isfinite(v) || v < 0 || v > 1) throw RangeError("sprite expression parameter outside [0,1]");
    }
};

// Positions of the four expressive dimensions inside the AU vector.
inline constexpr int kEyeCloseIndex = 0;
inline constexpr int kBrowRaiseIndex = 1;
inline constexpr int kMouthOpenIndex = 2;
inline constexpr int kMouthCurveIndex = 3;

inline AUVector embed(const SpriteExpression& ex, int au_dim = kDefaultAuDim) {
    if (au_dim < 4) throw ArityError("AU dimension must be at least 4 to embed a sprite expression");
    std::vector<float> v(au_dim, 0.0f);
    v[kEyeCloseIndex] = float(ex.eye_close);
    v[kBrowRaiseIndex] = float(ex.brow_raise);
    v[kMouthOpenIndex] = float(ex.mouth_open);
    v[kMouthCurveIndex] = float(ex.mouth_curve);
    return AUVector::from_values(v, au_dim);
}

inline SpriteExpression extract(const AUVector& a) {
    return {a[kMouthOpenIndex], a[kMouthCurveIndex], a[kBrowRaiseIndex], a[kEyeCloseIndex]};
}

struct RenderOptions {
    std::array<double, 3> backdrop{0.30, 0.36, 0.45};
    double offset_x = 0, offset_y = 0;  // translation, fraction of the side
};

/// Normalized face-part regions (u across, v down, both in [0, 1]) that
/// bound every pixel an expression parameter can touch, before translation.
struct PartRegion {
    double u0, v0, u1, v1;
};
inline constexpr PartRegion kMouthRegion{0.36, 0.63, 0.64, 0.86};
inline constexpr PartRegion kEyeRegion{0.0, 0.41, 1.0, 0.535};
inline constexpr PartRegion kBrowRegion{0.0, 0.275, 1.0, 0.395};

struct SpriteRender {
    ImageTensor image;
    FaceMask mask;
};

namespace detail {

inline std::array<double, 3> hsv(double h, double s, double v) {
    h = h - std::floor(h);
    double c = v * s, x = c * (1 - std::abs(std::fmod(h * 6, 2.0) - 1)), m = v - c;
    std::array<double, 3> rgb{};
    int k = int(h * 6) % 6;
    switch (k) {
        case 0: rgb = {c, x, 0}; break;
        case 1: rgb = {x, c, 0}; break;
        case 2: rgb = {0, c, x}; break;
        case 3: rgb = {0, x, c}; break;
        case 4: rgb = {x, 0, c}; break;
        default: rgb = {c, 0, x}; break;
    }
    for (auto& ch : rgb) ch += m;
    return rgb;
}

// Approximate signed distance to an axis-aligned ellipse (negative inside).
inline double ellipse_sd(double u, double v, double cu, double cv, double ru, double rv) {
    double du = (u - cu) / ru, dv = (v - cv) / rv;
    return (std::sqrt(du * du + dv * dv) - 1.0) * std::min(ru, rv);
}

inline double coverage(double sd, int side) { return std::clamp(0.5 - sd * side, 0.0, 1.0); }

}  // namespace detail

/// Deterministic rasterization of one face; the mask marks head coverage ≥ ½.
inline SpriteRender sprite_render(const SpriteIdentity& id, const SpriteExpression& ex, int side,
                                  const RenderOptions& opt = {}) {
    id.validate();
    ex.validate();
    if (side < 4) throw ShapeError("sprite side must be at least 4");
    const auto skin = detail::hsv(id.face_hue, 0.45, id.skin_tone);
    const auto hair = detail::hsv(id.hair_band_color, 0.65, 0.45);
    const std::array<double, 3> eye{0.08, 0.07, 0.10}, brow{0.16, 0.11, 0.08}, lips{0.45, 0.07, 0.10};

    const double head_rv = 0.40, head_ru = 0.40 * id.face_shape_ratio;
    const double eye_rv = 0.012 + 0.046 * (1.0 - ex.eye_close);
    const double brow_v = 0.37 - 0.07 * ex.brow_raise;
    const double mouth_cv = 0.72, mouth_half_w = 0.14;

    Tensor<float> t(1, 3, side, side);
    FaceMask mask{side, side, std::vector<std::uint8_t>(std::size_t(side) * side)};
    for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x) {
            const double u = (x + 0.5) / side - opt.offset_x, v = (y + 0.5) / side - opt.offset_y;
            std::array<double, 3> col = opt.backdrop;
            auto paint = [&](const std::array<double, 3>& c, double a) {
                for (int k = 0; k < 3; ++k) col[k] = (1 - a) * col[k] + a * c[k];
            };
            paint(hair, detail::coverage(detail::ellipse_sd(u, v, 0.5, 0.30, head_ru * 1.08, 0.22), side));
            double head = detail::coverage(detail::ellipse_sd(u, v, 0.5, 0.55, head_ru, head_rv), side);
            paint(skin, head);
            for (double sgn : {-1.0, 1.0}) {
                double cu = 0.5 + sgn * id.eye_spacing;
                paint(eye, detail::coverage(detail::ellipse_sd(u, v, cu, 0.47, 0.075, eye_rv), side));
                paint(brow, detail::coverage(detail::ellipse_sd(u, v, cu, brow_v, 0.085, 0.022), side));
            }
            {
                double s = (u - 0.5) / mouth_half_w;
                double bend = std::max(0.0, 1.0 - s * s);
                double center = mouth_cv + 0.05 * ex.mouth_curve * bend;
                double half_t = 0.018 + 0.07 * ex.mouth_open * std::sqrt(bend);
                double sd = std::max(std::abs(v - center) - half_t, std::abs(u - 0.5) - mouth_half_w);
                paint(lips, detail::coverage(sd, side));
            }
            for (int k = 0; k < 3; ++k) t.at(0, k, y, x) = float(std::clamp(2.0 * col[k] - 1.0, -1.0, 1.0));
            mask.inside[std::size_t(y) * side + x] = head >= 0.5;
        }
    return {ImageTensor(std::move(t)), std::move(mask)};
}

/// Plain L2 pixel distance.
inline double oracle_distance(const Tensor<float>& a, const Tensor<float>& b) {
    if (a.shape() != b.shape()) throw ShapeError("oracle_distance: " + a.shape().str() + " vs " + b.shape().str());
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += double(a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
}
inline double oracle_distance(const ImageTensor& a, const ImageTensor& b) { return oracle_distance(a.tensor(), b.tensor()); }

// ---------------------------------------------------------------------------
// Corpus generation

/// Normalized per-field gap between identities (hues are circular).
inline double identity_separation(const SpriteIdentity& a, const SpriteIdentity& b) {
    auto circ = [](double x, double y) {
        double d = std::abs(x - y);
        return std::min(d, 1 - d) * 2;  // max circular gap 0.5 maps to 1
    };
    return std::max({circ(a.face_hue, b.face_hue), std::abs(a.face_shape_ratio - b.face_shape_ratio) / 0.28,
                     std::abs(a.eye_spacing - b.eye_spacing) / 0.08, std::abs(a.skin_tone - b.skin_tone) / 0.5,
                     circ(a.hair_band_color, b.hair_band_color)});
}

inline constexpr double kIdentitySeparation = 0.25;

template <class Rng>
SpriteIdentity random_identity(Rng& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    SpriteIdentity id;
    id.face_hue = u(rng) * 0.999;
    id.face_shape_ratio = 0.72 + 0.28 * u(rng);
    id.eye_spacing = 0.12 + 0.08 * u(rng);
    id.skin_tone = 0.45 + 0.5 * u(rng);
    id.hair_band_color = u(rng) * 0.999;
    return id;
}

/// Each dimension is zero with probability `p_zero`, otherwise uniform.
template <class Rng>
SpriteExpression random_expression(Rng& rng, double p_zero = 0.3) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    auto draw = [&] { return u(rng) < p_zero ? 0.0 : u(rng); };
    SpriteExpression e;
    e.mouth_open = draw();
    e.mouth_curve = draw();
    e.brow_raise = draw();
    e.eye_close = draw();
    return e;
}

struct CorpusSpec {
    int n_identities = 8;        // per set; source and target identities are disjoint
    int n_expressions_per = 16;  // renders per identity in each set
    int side = 32;
    std::uint64_t seed = 3;
    int au_dim = kDefaultAuDim;
    double mix_fraction = 0.0;  // fraction of target-identity frames mixed into the source set
};

struct SpriteRecord {
    int identity = 0;  // corpus-wide identity index
    SpriteExpression expression;
    ImageTensor image;
    FaceMask mask;
};

struct SyntheticCorpus {
    CorpusSpec spec;
    std::vector<SpriteIdentity> identities;  // [0, n): source; [n, 2n): target
    std::vector<SpriteRecord> source, target;
    std::map<int, ImageTensor> neutral;  // source identity -> neutral render
    double identity_floor = 0;           // min oracle distance between distinct neutral renders
};

inline SyntheticCorpus generate_corpus(const CorpusSpec& spec) {
    if (spec.n_identities < 2 || spec.n_expressions_per < 2) throw ConfigError("corpus counts must be at least 2");
    SyntheticCorpus c;
    c.spec = spec;
    std::mt19937_64 rng(spec.seed);
    const int total = 2 * spec.n_identities;
    int attempts = 0;
    while (int(c.identities.size()) < total) {
        if (++attempts > 100000) throw ConfigError("cannot draw enough separated identities");
        auto cand = random_identity(rng);
        bool ok = std::all_of(c.identities.begin(), c.identities.end(),
                              [&](const SpriteIdentity& o) { return identity_separation(cand, o) >= kIdentitySeparation; });
        if (ok) c.identities.push_back(cand);
    }
    auto render = [&](int id, const SpriteExpression& ex) {
        auto r = sprite_render(c.identities[id], ex, spec.side);
        return SpriteRecord{id, ex, std::move(r.image), std::move(r.mask)};
    };
    for (int id = 0; id < spec.n_identities; ++id)
        for (int k = 0; k < spec.n_expressions_per; ++k) c.source.push_back(render(id, random_expression(rng)));
    for (int id = spec.n_identities; id < total; ++id)
        for (int k = 0; k < spec.n_expressions_per; ++k) c.target.push_back(render(id, random_expression(rng)));
    if (spec.mix_fraction > 0) {
        int extra = int(std::round(spec.mix_fraction * c.source.size()));
        std::uniform_int_distribution<std::size_t> pick(0, c.target.size() - 1);
        for (int k = 0; k < extra; ++k) c.source.push_back(c.target[pick(rng)]);
    }
    for (int id = 0; id < spec.n_identities; ++id)
        c.neutral.emplace(id, sprite_render(c.identities[id], SpriteExpression{}, spec.side).image);
    c.identity_floor = std::numeric_limits<double>::infinity();
    std::vector<ImageTensor> all_neutral;
    for (int id = 0; id < total; ++id) all_neutral.push_back(sprite_render(c.identities[id], {}, spec.side).image);
    for (int a = 0; a < total; ++a)
        for (int b = a + 1; b < total; ++b)
            c.identity_floor = std::min(c.identity_floor, oracle_distance(all_neutral[a], all_neutral[b]));
    return c;
}

/// Classifier width needed for the corpus' source labels.
inline int class_count(const SyntheticCorpus& c) {
    int mx = 0;
    for (const auto& r : c.source) mx = std::max(mx, r.identity);
    return mx + 1;
}

struct CorpusFiles {
    std::filesystem::path source_manifest, target_manifest, neutral_table;
};

/// Writes PNG images, masks, AU files, both manifests and the neutral table
/// (`identity<TAB>image_path`) under `dir`.
inline CorpusFiles write_corpus(const SyntheticCorpus& c, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir / "source");
    fs::create_directories(dir / "target");
    fs::create_directories(dir / "neutral");
    auto emit = [&](const std::vector<SpriteRecord>& recs, const char* sub, ManifestRole role) {
        DatasetManifest m;
        m.role = role;
        for (std::size_t i = 0; i < recs.size(); ++i) {
            const auto& r = recs[i];
            std::string stem = std::string(sub) + "/" + std::to_string(i);
            ManifestRecord mr;
            mr.image_path = dir / (stem + ".png");
            write_png(mr.image_path, denormalize(r.image));
            mr.mask_path = dir / (stem + "_mask.png");
            write_png(*mr.mask_path, mask_to_raster(r.mask));
            mr.identity = IdentityLabel{r.identity};
            mr.au_path = dir / (stem + ".au");
            write_au_vector(*mr.au_path, embed(r.expression, c.spec.au_dim));
            m.records.push_back(std::move(mr));
        }
        return m;
    };
    CorpusFiles f{dir / "source.tsv", dir / "target.tsv", dir / "neutral.tsv"};
    write_manifest(f.source_manifest, emit(c.source, "source", ManifestRole::source));
    write_manifest(f.target_manifest, emit(c.target, "target", ManifestRole::target));
    std::ofstream nt(f.neutral_table);
    for (const auto& [id, img] : c.neutral) {
        auto p = dir / "neutral" / (std::to_string(id) + ".png");
        write_png(p, denormalize(img));
        nt << id << '\t' << p.lexically_relative(dir).generic_string() << '\n';
    }
    return f;
}

/// In-memory Dataset view of a record list (paths left empty).
inline Dataset to_dataset(const std::vector<SpriteRecord>& recs, ManifestRole role, int side, int au_dim) {
    Dataset d;
    d.manifest.role = role;
    d.side = side;
    d.au_dim = au_dim;
    for (const auto& r : recs) {
        ManifestRecord mr;
        mr.identity = IdentityLabel{r.identity};
        d.manifest.records.push_back(mr);
        d.images.push_back(r.image);
        d.aus.push_back(embed(r.expression, au_dim));
        d.masks.push_back(r.mask);
    }
    return d;
}

}  // namespace gath::synth
