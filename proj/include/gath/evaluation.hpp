#pragma once

// Pixel and AU-intensity metrics for intra-subject (pixel ground truth
// exists) and inter-subject (AU agreement only) synthesis.

#include <cmath>
#include <functional>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "gath/data.hpp"
#include "gath/image.hpp"
#include "gath/networks.hpp"
#include "gath/postprocess.hpp"
#include "gath/training.hpp"

namespace gath {

/// Per-channel means (`mae`, `rmse`) and channel-summed variants, where each
/// pixel's residual is summed over channels before averaging over pixels.
struct PixelErrors {
    double mae = 0, rmse = 0;
    double mae_summed = 0, rmse_summed = 0;
    std::size_t pixels = 0;
};

inline PixelErrors pixel_errors(const RasterImage& x, const RasterImage& y, const FaceMask* mask = nullptr) {
    if (!x.same_shape(y)) throw ShapeError("pixel_errors: images differ in shape");
    if (mask && (mask->height != x.height || mask->width != x.width))
        throw ShapeError("pixel_errors: mask size does not match the images");
    double abs_sum = 0, sq_sum = 0;
    std::size_t n = 0;
    for (int r = 0; r < x.height; ++r)
        for (int c = 0; c < x.width; ++c) {
            if (mask && !mask->inside[std::size_t(r) * x.width + c]) continue;
            ++n;
            double a = 0, s = 0;
            for (int k = 0; k < x.channels; ++k) {
                double d = double(x.at(r, c, k)) - double(y.at(r, c, k));
                a += std::abs(d);
                s += d * d;
            }
            abs_sum += a;
            sq_sum += s;
        }
    if (n == 0) throw PreconditionError("pixel_errors: mask selects no pixels");
    PixelErrors e;
    e.pixels = n;
    const double ch = x.channels;
    e.mae = abs_sum / (double(n) * ch);
    e.rmse = std::sqrt(sq_sum / (double(n) * ch));
    e.mae_summed = abs_sum / double(n);
    e.rmse_summed = std::sqrt(sq_sum / double(n));
    return e;
}

/// Root mean squared error over all frames and AU dimensions.
inline double au_rmse(const std::vector<std::vector<double>>& pred, const std::vector<std::vector<double>>& gt) {
    if (pred.size() != gt.size())
        throw ArityError("au_rmse: " + std::to_string(pred.size()) + " predicted frames vs " + std::to_string(gt.size()));
    double s = 0;
    std::size_t n = 0;
    for (std::size_t f = 0; f < pred.size(); ++f) {
        if (pred[f].size() != gt[f].size()) throw ArityError("au_rmse: frame " + std::to_string(f) + " arity differs");
        for (std::size_t j = 0; j < pred[f].size(); ++j) {
            double d = pred[f][j] - gt[f][j];
            s += d * d;
            ++n;
        }
    }
    return n ? std::sqrt(s / double(n)) : 0.0;
}

/// Centered ellipse with full axes 0.6·H and 0.6·W.
inline FaceMask ellipse_mask(int height, int width) {
    FaceMask m{height, width, std::vector<std::uint8_t>(std::size_t(height) * width)};
    const double cy = 0.5 * height, cx = 0.5 * width, ry = 0.3 * height, rx = 0.3 * width;
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            double u = (y + 0.5 - cy) / ry, v = (x + 0.5 - cx) / rx;
            m.inside[std::size_t(y) * width + x] = u * u + v * v <= 1.0;
        }
    return m;
}

/// The record's own mask when present, otherwise the ellipse fallback.
inline FaceMask face_mask(const Dataset& d, std::size_t index) {
    if (index >= d.size()) throw RangeError("record index out of range");
    if (d.masks[index]) return *d.masks[index];
    return ellipse_mask(d.side, d.side);
}

struct EvalPair {
    std::size_t source = 0;            // index into the source dataset
    std::vector<std::size_t> targets;  // indices into the target dataset, in order
    bool intra = true;
};

struct ConditionMetrics {
    double mae = 0, rmse = 0, mae_summed = 0, rmse_summed = 0;
    std::size_t frames = 0;
};

/// Aggregates for one evaluation run. Pixel conditions are full/masked ×
/// raw/CLAHE; only populated conditions appear in the output.
struct MetricsReport {
    bool pixel_populated = false;
    ConditionMetrics full_raw, full_clahe, masked_raw, masked_clahe;
    bool au_populated = false;
    double au_rmse = 0;           // oracle(synthesis) vs oracle(ground truth)
    double au_rmse_vs_input = 0;  // oracle(synthesis) vs the conditioning vector
    std::size_t pairs = 0, frames = 0;

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["pairs"] = pairs;
        j["frames"] = frames;
        auto cond = [](const ConditionMetrics& c) {
            return nlohmann::json{{"mae", c.mae},
                                  {"rmse", c.rmse},
                                  {"mae_channel_summed", c.mae_summed},
                                  {"rmse_channel_summed", c.rmse_summed},
                                  {"frames", c.frames}};
        };
        if (pixel_populated) {
            j["pixel"]["full"]["raw"] = cond(full_raw);
            j["pixel"]["full"]["clahe"] = cond(full_clahe);
            j["pixel"]["mask"]["raw"] = cond(masked_raw);
            j["pixel"]["mask"]["clahe"] = cond(masked_clahe);
        }
        if (au_populated) {
            j["au_rmse"] = au_rmse;
            j["au_rmse_vs_input"] = au_rmse_vs_input;
        }
        return j;
    }

    /// Plain-text table: one row per image/condition, MAE and RMSE columns.
    std::string to_table() const {
        std::ostringstream o;
        o << std::fixed << std::setprecision(3);
        o << "pairs " << pairs << ", frames " << frames << "\n";
        if (pixel_populated) {
            o << std::left << std::setw(30) << "condition" << std::right << std::setw(10) << "MAE" << std::setw(10)
              << "RMSE" << std::setw(12) << "MAE(sum)" << std::setw(12) << "RMSE(sum)" << "\n";
            auto row = [&](const char* name, const ConditionMetrics& c) {
                o << std::left << std::setw(30) << name << std::right << std::setw(10) << c.mae << std::setw(10)
                  << c.rmse << std::setw(12) << c.mae_summed << std::setw(12) << c.rmse_summed << "\n";
            };
            row("full image, without CLAHE", full_raw);
            row("full image, with CLAHE", full_clahe);
            row("mask, without CLAHE", masked_raw);
            row("mask, with CLAHE", masked_clahe);
        }
        if (au_populated) {
            o << "AU RMSE (synthesis vs ground truth): " << au_rmse << "\n";
            o << "AU RMSE (synthesis vs input AUs):    " << au_rmse_vs_input << "\n";
        }
        return o.str();
    }
};

/// Maps a batch of sources (N×3×H×W) and AU vectors (N×A×1×1) to syntheses.
using Synthesizer = std::function<Tensor<float>(const Tensor<float>& x, const Tensor<float>& e)>;

inline Synthesizer generator_synthesizer(const Generator<float>& g) {
    return [&g](const Tensor<float>& x, const Tensor<float>& e) { return g.forward(x, e, Mode::inference); };
}

/// The trivial generator G(x, e) = x.
inline Synthesizer identity_synthesizer() {
    return [](const Tensor<float>& x, const Tensor<float>&) { return x; };
}

namespace detail {

struct PairFrames {
    Tensor<float> synth, truth, e;
    std::vector<std::size_t> target_index;
};

inline PairFrames synthesize_pair(const Synthesizer& synth, const Dataset& source, const Dataset& target,
                                  const EvalPair& p) {
    if (p.source >= source.size()) throw RangeError("eval pair source index out of range");
    const int n = int(p.targets.size()), side = source.side, A = target.au_dim;
    PairFrames f;
    f.e = Tensor<float>(n, A, 1, 1);
    f.truth = Tensor<float>(n, 3, side, side);
    Tensor<float> x(n, 3, side, side);
    const auto& src = source.images[p.source].tensor();
    for (int i = 0; i < n; ++i) {
        auto t = p.targets[i];
        if (t >= target.size()) throw RangeError("eval pair target index out of range");
        if (!target.aus[t]) throw SchemaError("eval target record " + std::to_string(t) + " has no AU vector");
        std::copy(src.data(), src.data() + src.size(), x.sample(i).data());
        const auto& img = target.images[t].tensor();
        std::copy(img.data(), img.data() + img.size(), f.truth.sample(i).data());
        auto au = target.aus[t]->coeffs();
        std::copy(au.begin(), au.end(), f.e.sample(i).data());
        f.target_index.push_back(t);
    }
    f.synth = synth(x, f.e);
    return f;
}

inline std::vector<double> row(const Tensor<float>& t, int i) {
    auto s = t.sample(i);
    return {s.begin(), s.end()};
}

}  // namespace detail

/// For each target frame: synthesize from the source with the frame's AUs,
/// compare against the frame under full/masked × raw/CLAHE (CLAHE applied to
/// the synthesis), and compare oracle AU estimates of synthesis and frame.
inline MetricsReport evaluate_intra(const Synthesizer& synth, const Dataset& source, const Dataset& target,
                                    const std::vector<EvalPair>& pairs, const AUEstimator<float>* oracle,
                                    const PostprocessConfig& pp = {}) {
    MetricsReport r;
    r.pairs = pairs.size();
    struct Acc {
        double abs = 0, sq = 0, abs_s = 0, sq_s = 0, px = 0;
        std::size_t frames = 0;
        void add(const PixelErrors& e, int ch) {
            double n = double(e.pixels);
            abs += e.mae * n * ch;
            sq += e.rmse * e.rmse * n * ch;
            abs_s += e.mae_summed * n;
            sq_s += e.rmse_summed * e.rmse_summed * n;
            px += n;
            ++frames;
        }
        ConditionMetrics done(int ch) const {
            if (px == 0) return {};
            return {abs / (px * ch), std::sqrt(sq / (px * ch)), abs_s / px, std::sqrt(sq_s / px), frames};
        }
    } full_raw, full_clahe, mask_raw, mask_clahe;
    std::vector<std::vector<double>> au_syn, au_gt, au_in;
    for (const auto& p : pairs) {
        if (!p.intra) throw PreconditionError("evaluate_intra given an inter-subject pair");
        auto f = detail::synthesize_pair(synth, source, target, p);
        for (int i = 0; i < f.synth.n(); ++i) {
            auto syn = denormalize(f.synth, i), gt = denormalize(f.truth, i);
            auto syn_c = clahe(syn, pp);
            auto mask = face_mask(target, f.target_index[i]);
            full_raw.add(pixel_errors(syn, gt), 3);
            full_clahe.add(pixel_errors(syn_c, gt), 3);
            mask_raw.add(pixel_errors(syn, gt, &mask), 3);
            mask_clahe.add(pixel_errors(syn_c, gt, &mask), 3);
            ++r.frames;
        }
        if (oracle) {
            auto ps = predict_au(*oracle, f.synth), pg = predict_au(*oracle, f.truth);
            for (int i = 0; i < f.synth.n(); ++i) {
                au_syn.push_back(detail::row(ps, i));
                au_gt.push_back(detail::row(pg, i));
                au_in.push_back(detail::row(f.e, i));
            }
        }
    }
    if (r.frames) {
        r.pixel_populated = true;
        r.full_raw = full_raw.done(3);
        r.full_clahe = full_clahe.done(3);
        r.masked_raw = mask_raw.done(3);
        r.masked_clahe = mask_clahe.done(3);
    }
    if (oracle && !au_syn.empty()) {
        r.au_populated = true;
        r.au_rmse = au_rmse(au_syn, au_gt);
        r.au_rmse_vs_input = au_rmse(au_syn, au_in);
    }
    return r;
}

/// AU agreement only; no pixel ground truth exists across subjects.
inline MetricsReport evaluate_inter(const Synthesizer& synth, const Dataset& source, const Dataset& target,
                                    const std::vector<EvalPair>& pairs, const AUEstimator<float>& oracle) {
    MetricsReport r;
    r.pairs = pairs.size();
    std::vector<std::vector<double>> au_syn, au_gt, au_in;
    for (const auto& p : pairs) {
        auto f = detail::synthesize_pair(synth, source, target, p);
        auto ps = predict_au(oracle, f.synth), pg = predict_au(oracle, f.truth);
        for (int i = 0; i < f.synth.n(); ++i) {
            au_syn.push_back(detail::row(ps, i));
            au_gt.push_back(detail::row(pg, i));
            au_in.push_back(detail::row(f.e, i));
            ++r.frames;
        }
    }
    if (!au_syn.empty()) {
        r.au_populated = true;
        r.au_rmse = au_rmse(au_syn, au_gt);
        r.au_rmse_vs_input = au_rmse(au_syn, au_in);
    }
    return r;
}

inline MetricsReport evaluate_intra(const Checkpoint& c, const Dataset& source, const Dataset& target,
                                    const std::vector<EvalPair>& pairs, const AUEstimator<float>* oracle,
                                    const PostprocessConfig& pp = {}) {
    return evaluate_intra(generator_synthesizer(c.generator), source, target, pairs, oracle, pp);
}

inline MetricsReport evaluate_inter(const Checkpoint& c, const Dataset& source, const Dataset& target,
                                    const std::vector<EvalPair>& pairs, const AUEstimator<float>& oracle) {
    return evaluate_inter(generator_synthesizer(c.generator), source, target, pairs, oracle);
}

/// Pairs every source record with the target records of the same identity
/// (intra) or, for inter pairs, with all target records of other identities.
inline std::vector<EvalPair> make_pairs(const Dataset& source, const Dataset& target, bool intra) {
    std::vector<EvalPair> out;
    for (std::size_t s = 0; s < source.size(); ++s) {
        auto sid = source.manifest.records[s].identity;
        EvalPair p{s, {}, intra};
        for (std::size_t t = 0; t < target.size(); ++t) {
            auto tid = target.manifest.records[t].identity;
            bool same = sid && tid && sid->index == tid->index;
            if (same == intra) p.targets.push_back(t);
        }
        if (!p.targets.empty()) out.push_back(std::move(p));
    }
    return out;
}

}  // namespace gath
