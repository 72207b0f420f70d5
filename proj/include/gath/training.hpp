#pragma once

// Estimator pretraining and the alternating discriminator-classifier /
// generator optimization.

#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "gath/config.hpp"
#include "gath/data.hpp"
#include "gath/losses.hpp"
#include "gath/networks.hpp"
#include "gath/nn/adam.hpp"

namespace gath {

// ---------------------------------------------------------------------------
// Objectives with gradients. Each accumulates gradients only into the
// parameter set its update owns; the other networks are differentiated
// through with ParamGrads::skip.

/// λ_adv·[mean(1 − D(x_re))² + mean D(G(x_src, e))²] + λ_cls·CE(C(x_re), c).
/// The synthesis is produced without a trace, so no gradient reaches G.
template <class T>
LossReport dc_objective_and_grads(const Generator<T>& g, DiscriminatorClassifier<T>& dc,
                                  const BasicTrainBatch<T>& b, const LossWeights& w,
                                  std::vector<typename DiscriminatorClassifier<T>::Trace>* traces = nullptr) {
    const Tensor<T> x_fake = g.forward(b.x_src, b.e_tgt, Mode::train);
    typename DiscriminatorClassifier<T>::Trace tr_real, tr_fake;
    auto real = dc.forward(b.x_re, Mode::train, &tr_real);
    auto fake = dc.forward(x_fake, Mode::train, &tr_fake);
    auto adv = adv_losses(real.d_score, fake.d_score);
    auto cls = cross_entropy(real.logits, std::span<const int>(b.c));

    LossReport r;
    r.adv_d = adv.loss_d;
    r.cls_real = cls.value;
    r.total_dc = dc_objective(r, w);

    adv.grad_d_real *= T(w.lambda_adv);
    adv.grad_d_fake *= T(w.lambda_adv);
    cls.grad *= T(w.lambda_cls);
    dc.backward(adv.grad_d_real, cls.grad, tr_real, ParamGrads::accumulate);
    dc.backward(adv.grad_d_fake, Tensor<T>{}, tr_fake, ParamGrads::accumulate);
    if (traces) {
        traces->push_back(std::move(tr_real));
        traces->push_back(std::move(tr_fake));
    }
    return r;
}

/// Selects which generator terms contribute to the gradient (all by default);
/// used to isolate single terms when checking gradients.
struct GTermMask {
    double au = 1, rec = 1, tv = 1, adv = 1, cls = 1;
};

/// au + λ_rec·rec + λ_tv·tv + λ_adv·adv_g + λ_cls·CE(C(G(x_src, e)), c_src),
/// gradients into G only; D/C and the estimator are frozen.
template <class T>
LossReport g_objective_and_grads(Generator<T>& g, DiscriminatorClassifier<T>& dc, AUEstimator<T>& aue,
                                 const BasicTrainBatch<T>& b, const LossWeights& w, AdvGForm form,
                                 typename Generator<T>::Trace* trace_out = nullptr, GTermMask mask = {}) {
    typename Generator<T>::Trace tr_g;
    const Tensor<T> x_tgt = g.forward(b.x_src, b.e_tgt, Mode::train, &tr_g);

    typename AUEstimator<T>::Trace tr_a;
    auto f_x = aue.features(x_tgt, &tr_a);
    auto f_y = aue.features(b.y_tgt);
    auto au = au_loss(f_y, f_x);
    auto rec = rec_loss(b.x_src, x_tgt);
    auto tv = tv_loss(x_tgt);

    typename DiscriminatorClassifier<T>::Trace tr_d;
    auto out = dc.forward(x_tgt, Mode::train, &tr_d);
    auto adv = adv_losses(Tensor<T>{}, out.d_score, form);
    auto cls = cross_entropy(out.logits, std::span<const int>(b.c_src));

    LossReport r;
    r.au = au.value;
    r.rec = rec.value;
    r.tv = tv.value;
    r.adv_g = adv.loss_g;
    r.cls_fake = cls.value;
    r.total_g = g_objective(r, w);

    au.grad *= T(mask.au);
    Tensor<T> grad = aue.features_backward(au.grad, tr_a, ParamGrads::skip);
    grad.axpy(T(w.lambda_rec * mask.rec), rec.grad);
    grad.axpy(T(w.lambda_tv * mask.tv), tv.grad);
    adv.grad_g_fake *= T(w.lambda_adv * mask.adv);
    cls.grad *= T(w.lambda_cls * mask.cls);
    grad += dc.backward(adv.grad_g_fake, cls.grad, tr_d, ParamGrads::skip);
    g.backward(grad, tr_g, ParamGrads::accumulate);
    if (trace_out) *trace_out = std::move(tr_g);
    return r;
}

/// Batch-mean squared AU regression loss with gradients into the estimator.
template <class T>
double aue_objective_and_grads(AUEstimator<T>& aue, const Tensor<T>& x, const Tensor<T>& e_gt) {
    typename AUEstimator<T>::Trace tr;
    auto pred = aue.forward(x, &tr);
    auto l = aue_training_loss(pred, e_gt);
    aue.backward(l.grad, tr, ParamGrads::accumulate);
    return l.value;
}

// ---------------------------------------------------------------------------
// Model state

/// Everything needed to resume training bit-exactly.
struct Checkpoint {
    TrainConfig config;
    Generator<float> generator;
    DiscriminatorClassifier<float> dc;
    AUEstimator<float> aue;
    nn::Adam<float> opt_g, opt_dc;
    std::int64_t iteration = 0;
    std::mt19937_64 rng;
};

using ModelState = Checkpoint;

inline nn::AdamSettings adam_settings(const TrainConfig& c, double lr) { return {lr, c.adam_beta1, c.adam_beta2, 1e-8}; }

inline AUEstimator<float> make_aue(const TrainConfig& cfg) {
    AUEstimator<float> aue(cfg.aue_config(), cfg.image_side);
    std::mt19937_64 rng(cfg.seed ^ 0xA0E5EEDull);
    // Plain VGG stacks have no normalization, so weights use fan-in scaling.
    initialize<float>(aue, rng, cfg.init_std, /*fan_in_scaled=*/true);
    return aue;
}

/// Fresh generator and discriminator-classifier from the config's seed, with
/// the given (frozen) estimator.
inline Checkpoint initial_state(const TrainConfig& cfg, const AUEstimator<float>& aue) {
    cfg.validate();
    Checkpoint s;
    s.config = cfg;
    s.generator = Generator<float>(cfg.generator_config());
    s.dc = DiscriminatorClassifier<float>(cfg.dc_config());
    s.aue = aue;
    std::mt19937_64 init_rng(cfg.seed);
    initialize<float>(s.generator, init_rng, cfg.init_std);
    initialize<float>(s.dc, init_rng, cfg.init_std);
    s.opt_g = nn::Adam<float>(adam_settings(cfg, cfg.learning_rate));
    s.opt_dc = nn::Adam<float>(adam_settings(cfg, cfg.learning_rate));
    auto gp = params_of<float>(s.generator);
    auto dp = params_of<float>(s.dc);
    s.opt_g.bind(gp);
    s.opt_dc.bind(dp);
    s.rng.seed(cfg.seed ^ 0x5A3B1E5ull);
    return s;
}

// ---------------------------------------------------------------------------
// One alternating step

struct StepDiagnostics {
    std::uint64_t g_before_dc = 0, g_after_dc = 0;
    std::uint64_t dc_before_g = 0, dc_after_g = 0;
    std::uint64_t aue_before = 0, aue_after = 0;
    bool checked = false;
};

class AlternationViolation : public Error {
public:
    explicit AlternationViolation(const std::string& w) : Error("alternation", w) {}
};

/// (1) one D/C update on the D/C objective with G's output held constant,
/// then (2) one G update on the G objective with D/C frozen, re-running G
/// after the D/C update. The report carries the d/c terms of (1) and the
/// generator terms of (2).
inline LossReport train_step(Checkpoint& s, const TrainBatch& b, const LossWeights& w,
                             StepDiagnostics* diag = nullptr) {
    const bool verify = s.config.verify_alternation || diag;
    StepDiagnostics d;
    if (verify) {
        d.checked = true;
        d.aue_before = param_checksum<float>(s.aue);
        d.g_before_dc = param_checksum<float>(s.generator);
    }

    LossReport dc_part;
    auto dp = params_of<float>(s.dc);
    for (int k = 0; k < s.config.dc_steps_per_g; ++k) {
        zero_grads<float>(s.dc);
        std::vector<DiscriminatorClassifier<float>::Trace> traces;
        dc_part = dc_objective_and_grads(s.generator, s.dc, b, w, &traces);
        if (!dc_part.all_finite())
            throw NonFiniteLossError("non-finite " + dc_part.first_non_finite() + " in D/C update at iteration " +
                                     std::to_string(s.iteration));
        s.opt_dc.step(dp);
        s.dc.commit(traces.front());
    }

    if (verify) {
        d.g_after_dc = param_checksum<float>(s.generator);
        d.dc_before_g = param_checksum<float>(s.dc);
    }

    auto gp = params_of<float>(s.generator);
    zero_grads<float>(s.generator);
    Generator<float>::Trace tr_g;
    LossReport r = g_objective_and_grads(s.generator, s.dc, s.aue, b, w, s.config.adv_g_form, &tr_g);
    r.adv_d = dc_part.adv_d;
    r.cls_real = dc_part.cls_real;
    r.total_dc = dc_part.total_dc;
    if (!r.all_finite())
        throw NonFiniteLossError("non-finite " + r.first_non_finite() + " in G update at iteration " +
                                 std::to_string(s.iteration));
    s.opt_g.step(gp);
    s.generator.commit(tr_g);

    if (verify) {
        d.dc_after_g = param_checksum<float>(s.dc);
        d.aue_after = param_checksum<float>(s.aue);
        if (d.g_before_dc != d.g_after_dc) throw AlternationViolation("generator changed during the D/C update");
        if (d.dc_before_g != d.dc_after_g) throw AlternationViolation("D/C changed during the generator update");
        if (d.aue_before != d.aue_after) throw AlternationViolation("estimator changed during adversarial training");
    }
    if (diag) *diag = d;
    return r;
}

// ---------------------------------------------------------------------------
// Estimator pretraining

namespace detail {

/// Shifts each sample by an integer offset, replicating edge pixels.
inline Tensor<float> shift_batch(const Tensor<float>& x, const std::vector<std::pair<int, int>>& offsets) {
    Tensor<float> out(x.shape());
    for (int n = 0; n < x.n(); ++n) {
        auto [dy, dx] = offsets[n];
        for (int c = 0; c < x.c(); ++c)
            for (int y = 0; y < x.h(); ++y)
                for (int xx = 0; xx < x.w(); ++xx) {
                    int sy = std::clamp(y - dy, 0, x.h() - 1), sx = std::clamp(xx - dx, 0, x.w() - 1);
                    out.at(n, c, y, xx) = x.at(n, c, sy, sx);
                }
    }
    return out;
}

struct Recolor {
    double hue_turns = 0;  // rotation about the gray axis, fraction of a full turn
    double gain = 1, offset = 0;
};

/// Rotates each sample's colors about the gray axis, then applies a common
/// brightness gain and offset, clamped to [-1, 1]. Mid-gray is the origin of
/// [-1, 1] space, so the rotation is linear.
inline void recolor_batch(Tensor<float>& x, const std::vector<Recolor>& params) {
    const double pi = std::acos(-1.0);
    for (int n = 0; n < x.n(); ++n) {
        const auto& r = params[n];
        const double th = 2 * pi * r.hue_turns, c = std::cos(th), s = std::sin(th) / std::sqrt(3.0);
        const double k = (1 - c) / 3;
        const double m[3][3] = {{c + k, k - s, k + s}, {k + s, c + k, k - s}, {k - s, k + s, c + k}};
        for (int y = 0; y < x.h(); ++y)
            for (int xx = 0; xx < x.w(); ++xx) {
                const double in[3] = {x.at(n, 0, y, xx), x.at(n, 1, y, xx), x.at(n, 2, y, xx)};
                for (int ch = 0; ch < 3; ++ch) {
                    double v = m[ch][0] * in[0] + m[ch][1] * in[1] + m[ch][2] * in[2];
                    x.at(n, ch, y, xx) = float(std::clamp(r.gain * v + r.offset, -1.0, 1.0));
                }
            }
    }
}

}  // namespace detail

inline Tensor<float> shift_image(const Tensor<float>& x, int dy, int dx) {
    return detail::shift_batch(x, std::vector<std::pair<int, int>>(x.n(), {dy, dx}));
}

using AUECallback = std::function<void(std::int64_t iteration, double loss)>;

/// Fits the estimator to the target set's AU vectors with Adam.
inline AUEstimator<float> train_aue(const TrainConfig& cfg, const Dataset& target, const AUECallback& on_step = {}) {
    cfg.validate();
    for (std::size_t i = 0; i < target.size(); ++i)
        if (!target.aus[i]) throw SchemaError("target record " + std::to_string(i) + " has no AU vector");
    if (target.side != cfg.image_side) throw ConfigError("target image side does not match image_side");
    if (target.au_dim != cfg.au_dim) throw ConfigError("target AU dimension does not match au_dim");
    AUEstimator<float> aue = make_aue(cfg);
    if (cfg.aue_iterations == 0) return aue;
    if (target.empty()) throw SamplingError("target set is empty");

    nn::Adam<float> opt(adam_settings(cfg, cfg.aue_learning_rate));
    auto params = params_of<float>(aue);
    std::mt19937_64 rng(cfg.seed ^ 0xE571A7Eull);
    std::uniform_int_distribution<std::size_t> pick(0, target.size() - 1);
    std::uniform_int_distribution<int> jitter(-cfg.aue_jitter, cfg.aue_jitter);
    std::uniform_real_distribution<double> hue(-cfg.aue_hue_jitter, cfg.aue_hue_jitter),
        tone(-cfg.aue_tone_jitter, cfg.aue_tone_jitter);
    const bool recolor = cfg.aue_hue_jitter > 0 || cfg.aue_tone_jitter > 0;
    const int B = cfg.aue_batch_size, side = cfg.image_side, A = cfg.au_dim;
    for (std::int64_t it = 0; it < cfg.aue_iterations; ++it) {
        Tensor<float> x(B, 3, side, side), e(B, A, 1, 1);
        std::vector<std::pair<int, int>> offsets(B);
        std::vector<detail::Recolor> colors(B);
        for (int n = 0; n < B; ++n) {
            auto k = pick(rng);
            const auto& img = target.images[k].tensor();
            std::copy(img.data(), img.data() + img.size(), x.sample(n).data());
            const auto& au = *target.aus[k];
            std::copy(au.coeffs().begin(), au.coeffs().end(), e.sample(n).data());
            if (cfg.aue_jitter > 0) offsets[n] = {jitter(rng), jitter(rng)};
            if (recolor) {
                colors[n].hue_turns = hue(rng);
                colors[n].gain = 1 + tone(rng);
                colors[n].offset = tone(rng);
            }
        }
        if (cfg.aue_jitter > 0) x = detail::shift_batch(x, offsets);
        if (recolor) detail::recolor_batch(x, colors);
        zero_grads<float>(aue);
        double loss = aue_objective_and_grads(aue, x, e);
        if (!std::isfinite(loss)) throw NonFiniteLossError("non-finite estimator loss at iteration " + std::to_string(it));
        opt.step(params);
        if (on_step) on_step(it, loss);
    }
    return aue;
}

/// Runs the estimator over images in chunks; returns N × au_dim.
inline Tensor<float> predict_au(const AUEstimator<float>& aue, const Tensor<float>& images, int chunk = 64) {
    Tensor<float> out(images.n(), aue.config().au_dim, 1, 1);
    for (int start = 0; start < images.n(); start += chunk) {
        int m = std::min(chunk, images.n() - start);
        Tensor<float> part(m, 3, images.h(), images.w());
        std::copy(images.data() + images.shape().per_sample() * start,
                  images.data() + images.shape().per_sample() * (start + m), part.data());
        auto p = aue.forward(part);
        std::copy(p.data(), p.data() + p.size(), out.data() + std::size_t(start) * aue.config().au_dim);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Training loop

struct TrainHooks {
    std::ostream* log = nullptr;  // one JSON object per iteration
    std::function<void(const Checkpoint&)> on_checkpoint;
    std::function<void(std::int64_t, const LossReport&)> on_step;
};

inline double scheduled_lr(const TrainConfig& c, std::int64_t it) {
    if (!c.lr_linear_decay || c.iterations == 0) return c.learning_rate;
    return c.learning_rate * std::max(0.0, 1.0 - double(it) / double(c.iterations));
}

/// Continues `s` until s.config.iterations. Sampling draws from `s.rng`, so
/// a resumed checkpoint replays exactly the batches of an uninterrupted run.
inline void run_training(Checkpoint& s, const Dataset& source, const Dataset& target, const TrainHooks& hooks = {}) {
    const auto& cfg = s.config;
    cfg.validate();
    for (const auto& r : source.manifest.records)
        if (!r.identity || r.identity->index >= cfg.classes)
            throw ConfigError("classes=" + std::to_string(cfg.classes) + " does not cover every source identity");
    while (s.iteration < cfg.iterations) {
        const double lr = scheduled_lr(cfg, s.iteration);
        s.opt_g.settings().learning_rate = lr;
        s.opt_dc.settings().learning_rate = lr;
        auto batch = sample_minibatch(source, target, s.rng, cfg.batch_size);
        LossReport r;
        try {
            r = train_step(s, batch, cfg.weights);
        } catch (...) {
            if (hooks.log) hooks.log->flush();
            throw;
        }
        ++s.iteration;
        if (hooks.log) {
            auto j = r.to_json();
            j["iteration"] = s.iteration;
            *hooks.log << j.dump() << '\n';
        }
        if (hooks.on_step) hooks.on_step(s.iteration, r);
        if (cfg.checkpoint_every > 0 && s.iteration % cfg.checkpoint_every == 0 && hooks.on_checkpoint) {
            try {
                hooks.on_checkpoint(s);
            } catch (...) {
                if (hooks.log) hooks.log->flush();
                throw;
            }
        }
    }
    if (hooks.log) hooks.log->flush();
}

/// Full adversarial training from scratch with a pretrained estimator.
inline Checkpoint train(const TrainConfig& cfg, const Dataset& source, const Dataset& target,
                        const AUEstimator<float>& aue, const TrainHooks& hooks = {}) {
    warn_if_overlapping(source.manifest, target.manifest);
    Checkpoint s = initial_state(cfg, aue);
    run_training(s, source, target, hooks);
    return s;
}

}  // namespace gath
