#pragma once

// Loss terms of the composite objective. Every term is normalized by its
// element count and averaged over the batch; each function returns the
// value together with the gradient with respect to the argument that the
// corresponding update differentiates.

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "gath/log.hpp"
#include "gath/tensor.hpp"

namespace gath {

struct LossWeights {
    double lambda_rec = 1.0;
    double lambda_adv = 0.05;
    double lambda_cls = 0.05;
    double lambda_tv = 1.0;

    void validate() const {
        if (lambda_rec < 0 || lambda_adv < 0 || lambda_cls < 0 || lambda_tv < 0)
            throw ConfigError("loss weights must be non-negative");
    }
};

/// Generator adversarial term: `neg_square` is −mean(D(G)²);
/// `lsgan` is mean((1 − D(G))²).
enum class AdvGForm { neg_square, lsgan };

inline std::string to_string(AdvGForm f) { return f == AdvGForm::neg_square ? "neg_square" : "lsgan"; }
inline AdvGForm adv_g_form_from_string(const std::string& s) {
    if (s == "neg_square") return AdvGForm::neg_square;
    if (s == "lsgan") return AdvGForm::lsgan;
    throw ConfigError("adv_g_form must be 'neg_square' or 'lsgan', got '" + s + "'");
}

struct LossReport {
    double au = 0, rec = 0, adv_d = 0, adv_g = 0, cls_real = 0, cls_fake = 0, tv = 0;
    double total_dc = 0, total_g = 0;

    bool all_finite() const {
        for (double v : {au, rec, adv_d, adv_g, cls_real, cls_fake, tv, total_dc, total_g})
            if (!std::isfinite(v)) return false;
        return true;
    }

    /// Name of the first non-finite entry, or empty.
    std::string first_non_finite() const {
        const std::pair<const char*, double> items[] = {{"au", au},         {"rec", rec},           {"adv_d", adv_d},
                                                        {"adv_g", adv_g},   {"cls_real", cls_real}, {"cls_fake", cls_fake},
                                                        {"tv", tv},         {"total_dc", total_dc}, {"total_g", total_g}};
        for (auto& [k, v] : items)
            if (!std::isfinite(v)) return k;
        return {};
    }

    nlohmann::json to_json() const {
        return {{"au", au},         {"rec", rec}, {"adv_d", adv_d},       {"adv_g", adv_g},     {"cls_real", cls_real},
                {"cls_fake", cls_fake}, {"tv", tv},   {"total_dc", total_dc}, {"total_g", total_g}};
    }
};

template <class T>
struct LossGrad {
    double value = 0;
    Tensor<T> grad;
};

namespace detail {
template <class T>
void require_same(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
    if (a.shape() != b.shape()) throw ShapeError(std::string(what) + ": " + a.shape().str() + " vs " + b.shape().str());
}
}  // namespace detail

/// Batch mean of ‖gt − pred‖²; gradient w.r.t. `pred`.
template <class T>
LossGrad<T> aue_training_loss(const Tensor<T>& pred, const Tensor<T>& gt) {
    if (pred.n() != gt.n() || pred.shape().per_sample() != gt.shape().per_sample())
        throw ArityError("AU prediction " + pred.shape().str() + " vs ground truth " + gt.shape().str());
    const double N = pred.n();
    LossGrad<T> r{0, Tensor<T>(pred.shape())};
    for (std::size_t i = 0; i < pred.size(); ++i) {
        double d = double(pred[i]) - gt[i];
        r.value += d * d;
        r.grad[i] = T(2 * d / N);
    }
    r.value /= N;
    return r;
}

/// Mean squared feature distance; gradient w.r.t. `f_x` (the synthesis side).
template <class T>
LossGrad<T> au_loss(const Tensor<T>& f_y, const Tensor<T>& f_x) {
    detail::require_same(f_y, f_x, "au_loss");
    const double M = double(f_x.size());
    LossGrad<T> r{0, Tensor<T>(f_x.shape())};
    for (std::size_t i = 0; i < f_x.size(); ++i) {
        double d = double(f_x[i]) - f_y[i];
        r.value += d * d;
        r.grad[i] = T(2 * d / M);
    }
    r.value /= M;
    return r;
}

/// Mean absolute pixel difference; gradient w.r.t. `x_tgt`.
template <class T>
LossGrad<T> rec_loss(const Tensor<T>& x_src, const Tensor<T>& x_tgt) {
    detail::require_same(x_src, x_tgt, "rec_loss");
    const double M = double(x_tgt.size());
    LossGrad<T> r{0, Tensor<T>(x_tgt.shape())};
    for (std::size_t i = 0; i < x_tgt.size(); ++i) {
        double d = double(x_tgt[i]) - x_src[i];
        r.value += std::abs(d);
        r.grad[i] = T(d > 0 ? 1 / M : d < 0 ? -1 / M : 0);
    }
    r.value /= M;
    return r;
}

template <class T>
struct AdvLosses {
    double loss_d = 0;       // mean (1 − D(real))² + mean D(fake)²
    double loss_g = 0;       // generator term, sign per AdvGForm
    Tensor<T> grad_d_real;   // ∂loss_d/∂D(real)
    Tensor<T> grad_d_fake;   // ∂loss_d/∂D(fake)
    Tensor<T> grad_g_fake;   // ∂loss_g/∂D(fake)
};

/// Least-squares adversarial losses. Either score tensor may be empty when
/// only one side is needed.
template <class T>
AdvLosses<T> adv_losses(const Tensor<T>& d_real, const Tensor<T>& d_fake, AdvGForm form = AdvGForm::neg_square) {
    AdvLosses<T> r;
    r.grad_d_real = Tensor<T>(d_real.shape());
    r.grad_d_fake = Tensor<T>(d_fake.shape());
    r.grad_g_fake = Tensor<T>(d_fake.shape());
    if (!d_real.empty()) {
        const double N = double(d_real.size());
        for (std::size_t i = 0; i < d_real.size(); ++i) {
            double d = 1.0 - d_real[i];
            r.loss_d += d * d / N;
            r.grad_d_real[i] = T(-2 * d / N);
        }
    }
    if (!d_fake.empty()) {
        const double N = double(d_fake.size());
        for (std::size_t i = 0; i < d_fake.size(); ++i) {
            double f = d_fake[i];
            r.loss_d += f * f / N;
            r.grad_d_fake[i] = T(2 * f / N);
            if (form == AdvGForm::neg_square) {
                r.loss_g -= f * f / N;
                r.grad_g_fake[i] = T(-2 * f / N);
            } else {
                r.loss_g += (1 - f) * (1 - f) / N;
                r.grad_g_fake[i] = T(-2 * (1 - f) / N);
            }
        }
    }
    return r;
}

/// Batch-mean softmax cross-entropy; gradient w.r.t. the logits.
template <class T>
LossGrad<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
    const int N = logits.n(), C = int(logits.shape().per_sample());
    if (int(labels.size()) != N) throw ShapeError("cross_entropy: label count mismatch");
    LossGrad<T> r{0, Tensor<T>(logits.shape())};
    for (int n = 0; n < N; ++n) {
        int c = labels[n];
        if (c < 0 || c >= C)
            throw LabelError("identity label " + std::to_string(c) + " outside [0, " + std::to_string(C) + ")");
        const T* z = logits.data() + std::size_t(n) * C;
        double mx = z[0];
        for (int k = 1; k < C; ++k) mx = std::max(mx, double(z[k]));
        double s = 0;
        for (int k = 0; k < C; ++k) s += std::exp(z[k] - mx);
        double lse = mx + std::log(s);
        r.value += (lse - z[c]) / N;
        for (int k = 0; k < C; ++k) {
            double p = std::exp(z[k] - lse);
            r.grad[std::size_t(n) * C + k] = T((p - (k == c ? 1.0 : 0.0)) / N);
        }
    }
    return r;
}

template <class T>
struct ClsLosses {
    double loss_c = 0;  // real images, updates the classifier
    double loss_g = 0;  // syntheses, updates the generator
    Tensor<T> grad_real, grad_fake;
};

/// The fake term is scored against the identity of the source portrait the
/// synthesis was made from.
template <class T>
ClsLosses<T> cls_losses(const Tensor<T>& logits_real, const Tensor<T>& logits_fake, std::span<const int> labels_real,
                        std::span<const int> labels_fake) {
    ClsLosses<T> r;
    if (!logits_real.empty()) {
        auto a = cross_entropy(logits_real, labels_real);
        r.loss_c = a.value;
        r.grad_real = std::move(a.grad);
    }
    if (!logits_fake.empty()) {
        auto b = cross_entropy(logits_fake, labels_fake);
        r.loss_g = b.value;
        r.grad_fake = std::move(b.grad);
    }
    return r;
}

/// Sum of squared horizontal and vertical neighbour differences over all
/// valid positions and channels (un-normalized).
template <class T>
double tv_loss_raw(const Tensor<T>& x) {
    double s = 0;
    for (int n = 0; n < x.n(); ++n)
        for (int c = 0; c < x.c(); ++c)
            for (int i = 0; i < x.h(); ++i)
                for (int j = 0; j < x.w(); ++j) {
                    double v = x.at(n, c, i, j);
                    if (j + 1 < x.w()) s += (x.at(n, c, i, j + 1) - v) * (x.at(n, c, i, j + 1) - v);
                    if (i + 1 < x.h()) s += (x.at(n, c, i + 1, j) - v) * (x.at(n, c, i + 1, j) - v);
                }
    return s;
}

/// tv_loss_raw divided by the element count N·C·H·W; gradient w.r.t. `x`.
template <class T>
LossGrad<T> tv_loss(const Tensor<T>& x) {
    LossGrad<T> r{0, Tensor<T>(x.shape())};
    if (x.h() < 2 && x.w() < 2) {
        warn("tv_loss on a degenerate " + x.shape().str() + " image is 0");
        return r;
    }
    const double M = double(x.size());
    for (int n = 0; n < x.n(); ++n)
        for (int c = 0; c < x.c(); ++c)
            for (int i = 0; i < x.h(); ++i)
                for (int j = 0; j < x.w(); ++j) {
                    double v = x.at(n, c, i, j);
                    if (j + 1 < x.w()) {
                        double d = x.at(n, c, i, j + 1) - v;
                        r.value += d * d;
                        r.grad.at(n, c, i, j + 1) += T(2 * d / M);
                        r.grad.at(n, c, i, j) -= T(2 * d / M);
                    }
                    if (i + 1 < x.h()) {
                        double d = x.at(n, c, i + 1, j) - v;
                        r.value += d * d;
                        r.grad.at(n, c, i + 1, j) += T(2 * d / M);
                        r.grad.at(n, c, i, j) -= T(2 * d / M);
                    }
                }
    r.value /= M;
    return r;
}

/// Discriminator-classifier objective: λ_adv·loss_d + λ_cls·cls_real.
inline double dc_objective(const LossReport& parts, const LossWeights& w) {
    return w.lambda_adv * parts.adv_d + w.lambda_cls * parts.cls_real;
}

/// Generator objective: au + λ_rec·rec + λ_tv·tv + λ_adv·adv_g + λ_cls·cls_fake,
/// where adv_g already carries its sign (−mean D(G)² in the neg_square form).
inline double g_objective(const LossReport& parts, const LossWeights& w) {
    return parts.au + w.lambda_rec * parts.rec + w.lambda_tv * parts.tv + w.lambda_adv * parts.adv_g +
           w.lambda_cls * parts.cls_fake;
}

}  // namespace gath
