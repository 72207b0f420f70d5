#pragma once

// Shared fixtures for the unit tests and the acceptance runner.

#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "gath/gath.hpp"

namespace gath::testing {

/// 8×8 inputs, two channels per block, four AU dimensions, three classes.
inline TrainConfig miniature_config() {
    TrainConfig c;
    c.image_side = 8;
    c.batch_size = 2;
    c.classes = 3;
    c.au_dim = 4;
    c.g_enc_widths = {2, 2, 2, 2};
    c.g_res_width = 3;  // differs from the encoder width so the identity projection is exercised
    c.g_res_blocks = 1;
    c.g_up_widths = {2, 2};
    c.dc_widths = {2, 2};
    c.aue_widths = {2, 2, 2};
    c.aue_hidden = 4;
    c.init_std = 0.5;
    return c;
}

template <class T>
Tensor<T> random_tensor(Shape s, std::mt19937_64& rng, double lo = -1, double hi = 1) {
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor<T> t(s);
    for (auto& v : t.vec()) v = T(u(rng));
    return t;
}

template <class T>
BasicTrainBatch<T> random_batch(const TrainConfig& c, std::mt19937_64& rng) {
    const int N = c.batch_size, S = c.image_side;
    BasicTrainBatch<T> b;
    b.x_src = random_tensor<T>({N, 3, S, S}, rng, -0.9, 0.9);
    b.x_re = random_tensor<T>({N, 3, S, S}, rng, -0.9, 0.9);
    b.y_tgt = random_tensor<T>({N, 3, S, S}, rng, -0.9, 0.9);
    b.e_tgt = random_tensor<T>({N, c.au_dim, 1, 1}, rng, 0, 1);
    std::uniform_int_distribution<int> lab(0, c.classes - 1);
    for (int i = 0; i < N; ++i) {
        b.c.push_back(lab(rng));
        b.c_src.push_back(lab(rng));
    }
    return b;
}

/// Norm-wise relative error between an analytic gradient and central
/// differences of `loss` with respect to every entry of `value`:
/// ‖a − fd‖ / max(‖a‖, ‖fd‖, floor).
template <class F>
double fd_relative_error(Tensor<double>& value, const Tensor<double>& analytic, F&& loss, double h = 1e-6,
                         double floor = 1e-7) {
    double diff = 0, na = 0, nf = 0;
    for (std::size_t i = 0; i < value.size(); ++i) {
        const double v = value[i];
        value[i] = v + h;
        const double up = loss();
        value[i] = v - h;
        const double down = loss();
        value[i] = v;
        const double fd = (up - down) / (2 * h);
        diff += (fd - analytic[i]) * (fd - analytic[i]);
        na += analytic[i] * analytic[i];
        nf += fd * fd;
    }
    return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nf), floor});
}

struct GradReport {
    double worst = 0;
    std::string worst_name;
    int tensors = 0;

    void add(const std::string& name, double rel) {
        ++tensors;
        if (rel > worst || worst_name.empty()) {
            worst = std::max(worst, rel);
            worst_name = name;
        }
    }
};

/// Checks every parameter tensor of `net`. `analytic` must leave the
/// gradient of the objective in the parameters' grad slots; `loss` returns
/// the objective value without side effects on parameter values.
template <class Net>
GradReport check_net_grads(Net& net, const std::function<void()>& analytic, const std::function<double()>& loss) {
    zero_grads<double>(net);
    analytic();
    std::vector<std::pair<std::string, Tensor<double>>> grads;
    net.for_each_param([&](const std::string& n, nn::Param<double>& p) { grads.emplace_back(n, p.grad); });
    GradReport r;
    std::size_t k = 0;
    net.for_each_param([&](const std::string& n, nn::Param<double>& p) {
        r.add(n, fd_relative_error(p.value, grads[k++].second, loss));
    });
    zero_grads<double>(net);
    return r;
}

template <class Net>
bool all_grads_zero(Net& net) {
    bool zero = true;
    net.for_each_param([&](const std::string&, nn::Param<double>& p) {
        for (double g : p.grad.vec()) zero = zero && g == 0.0;
    });
    return zero;
}

/// Miniature networks in 64-bit arithmetic with random initialization.
struct MiniNets {
    TrainConfig cfg = miniature_config();
    Generator<double> g{cfg.generator_config()};
    DiscriminatorClassifier<double> dc{cfg.dc_config()};
    AUEstimator<double> aue{cfg.aue_config(), cfg.image_side};

    explicit MiniNets(std::uint64_t seed = 11) {
        std::mt19937_64 rng(seed);
        initialize<double>(g, rng, cfg.init_std);
        initialize<double>(dc, rng, cfg.init_std);
        initialize<double>(aue, rng, cfg.init_std, true);
        // Non-trivial normalization parameters so their gradients are exercised.
        auto jitter = [&](auto& net) {
            std::uniform_real_distribution<double> u(-0.3, 0.3);
            net.for_each_param([&](const std::string& n, nn::Param<double>& p) {
                if (n.ends_with(".gamma") || n.ends_with(".beta") || n.ends_with(".bias"))
                    for (auto& v : p.value.vec()) v += u(rng);
            });
        };
        jitter(g);
        jitter(dc);
        jitter(aue);
    }
};

/// Value of the generator objective restricted to the terms in `mask`.
inline double masked_g_value(const LossReport& r, const LossWeights& w, const GTermMask& m) {
    return m.au * r.au + m.rec * w.lambda_rec * r.rec + m.tv * w.lambda_tv * r.tv + m.adv * w.lambda_adv * r.adv_g +
           m.cls * w.lambda_cls * r.cls_fake;
}

/// Source and target sprite sets sized for `c` (3 source identities).
struct MiniCorpus {
    Dataset source, target;
};

inline MiniCorpus mini_corpus(const TrainConfig& c, std::uint64_t seed = 4) {
    auto corpus = synth::generate_corpus({c.classes, 4, c.image_side, seed, c.au_dim, 0.0});
    return {synth::to_dataset(corpus.source, ManifestRole::source, c.image_side, c.au_dim),
            synth::to_dataset(corpus.target, ManifestRole::target, c.image_side, c.au_dim)};
}

inline std::filesystem::path temp_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("gath_test_" + name + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

}  // namespace gath::testing
