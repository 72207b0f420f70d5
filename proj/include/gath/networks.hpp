#pragma once

// The three networks of the framework: the encoder/decoder generator with
// AU broadcasting, the discriminator-classifier with a shared trunk, and the
// VGG-style action-unit estimator whose conv3_2 activations define the
// expressiveness feature space.

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "gath/nn/layers.hpp"

namespace gath {

using nn::Mode;
using nn::ParamGrads;

template <class T>
using FeatureMap = Tensor<T>;

/// Convolution, optional batch normalization, leaky rectifier.
template <class T>
struct ConvBlock {
    nn::Conv2d<T> conv;
    std::optional<nn::BatchNorm2d<T>> bn;
    nn::LeakyRelu<T> act;

    struct Cache {
        typename nn::Conv2d<T>::Cache conv;
        typename nn::BatchNorm2d<T>::Cache bn;
        typename nn::LeakyRelu<T>::Cache act;
    };

    ConvBlock() = default;
    ConvBlock(int in, int out, int k, int s, int p, bool norm, double slope) : conv(in, out, k, s, p, !norm) {
        if (norm) bn.emplace(out);
        act.slope = T(slope);
    }

    Tensor<T> forward(const Tensor<T>& x, Mode mode, Cache* c) const {
        auto h = conv.forward(x, c ? &c->conv : nullptr);
        if (bn) h = bn->forward(h, mode, c ? &c->bn : nullptr);
        return act.forward(h, c ? &c->act : nullptr);
    }
    Tensor<T> backward(const Tensor<T>& gy, const Cache& c, ParamGrads pg) {
        auto g = act.backward(gy, c.act);
        if (bn) g = bn->backward(g, c.bn, pg);
        return conv.backward(g, c.conv, pg);
    }
    void commit(const Cache& c) {
        if (bn) bn->commit(c.bn);
    }
    template <class F>
    void for_each_param(const std::string& prefix, F&& f) {
        conv.for_each_param(prefix + ".conv", f);
        if (bn) bn->for_each_param(prefix + ".bn", f);
    }
    template <class F>
    void for_each_buffer(const std::string& prefix, F&& f) {
        if (bn) bn->for_each_buffer(prefix + ".bn", f);
    }
};

/// Transposed convolution ×2 upsampling, batch normalization, leaky rectifier.
template <class T>
struct UpBlock {
    nn::ConvTranspose2d<T> conv;
    nn::BatchNorm2d<T> bn;
    nn::LeakyRelu<T> act;

    struct Cache {
        typename nn::ConvTranspose2d<T>::Cache conv;
        typename nn::BatchNorm2d<T>::Cache bn;
        typename nn::LeakyRelu<T>::Cache act;
    };

    UpBlock() = default;
    UpBlock(int in, int out, double slope) : conv(in, out, 4, 2, 1, false), bn(out) { act.slope = T(slope); }

    Tensor<T> forward(const Tensor<T>& x, Mode mode, Cache* c) const {
        auto h = conv.forward(x, c ? &c->conv : nullptr);
        h = bn.forward(h, mode, c ? &c->bn : nullptr);
        return act.forward(h, c ? &c->act : nullptr);
    }
    Tensor<T> backward(const Tensor<T>& gy, const Cache& c, ParamGrads pg) {
        auto g = act.backward(gy, c.act);
        g = bn.backward(g, c.bn, pg);
        return conv.backward(g, c.conv, pg);
    }
    void commit(const Cache& c) { bn.commit(c.bn); }
    template <class F>
    void for_each_param(const std::string& prefix, F&& f) {
        conv.for_each_param(prefix + ".conv", f);
        bn.for_each_param(prefix + ".bn", f);
    }
    template <class F>
    void for_each_buffer(const std::string& prefix, F&& f) {
        bn.for_each_buffer(prefix + ".bn", f);
    }
};

/// conv-BN-lrelu-conv-BN with an identity skip.
template <class T>
struct ResidualBlock {
    nn::Conv2d<T> conv1, conv2;
    nn::BatchNorm2d<T> bn1, bn2;
    nn::LeakyRelu<T> act;

    struct Cache {
        typename nn::Conv2d<T>::Cache c1, c2;
        typename nn::BatchNorm2d<T>::Cache b1, b2;
        typename nn::LeakyRelu<T>::Cache a;
    };

    ResidualBlock() = default;
    ResidualBlock(int width, double slope) : conv1(width, width, 3, 1, 1, false), conv2(width, width, 3, 1, 1, false), bn1(width), bn2(width) {
        act.slope = T(slope);
    }

    Tensor<T> forward(const Tensor<T>& x, Mode mode, Cache* c) const {
        auto h = conv1.forward(x, c ? &c->c1 : nullptr);
        h = bn1.forward(h, mode, c ? &c->b1 : nullptr);
        h = act.forward(h, c ? &c->a : nullptr);
        h = conv2.forward(h, c ? &c->c2 : nullptr);
        h = bn2.forward(h, mode, c ? &c->b2 : nullptr);
        h += x;
        return h;
    }
    Tensor<T> backward(const Tensor<T>& gy, const Cache& c, ParamGrads pg) {
        auto g = bn2.backward(gy, c.b2, pg);
        g = conv2.backward(g, c.c2, pg);
        g = act.backward(g, c.a);
        g = bn1.backward(g, c.b1, pg);
        g = conv1.backward(g, c.c1, pg);
        g += gy;
        return g;
    }
    void commit(const Cache& c) {
        bn1.commit(c.b1);
        bn2.commit(c.b2);
    }
    template <class F>
    void for_each_param(const std::string& prefix, F&& f) {
        conv1.for_each_param(prefix + ".conv1", f);
        bn1.for_each_param(prefix + ".bn1", f);
        conv2.for_each_param(prefix + ".conv2", f);
        bn2.for_each_param(prefix + ".bn2", f);
    }
    template <class F>
    void for_each_buffer(const std::string& prefix, F&& f) {
        bn1.for_each_buffer(prefix + ".bn1", f);
        bn2.for_each_buffer(prefix + ".bn2", f);
    }
};

template <class T>
void require_finite(const Tensor<T>& x, const char* what) {
    if (!x.all_finite()) throw PreconditionError(std::string(what) + " contains non-finite values");
}

/// Appends `e` (N × A) as A constant planes to every sample of `f`.
template <class T>
FeatureMap<T> broadcast_concat(const FeatureMap<T>& f, const Tensor<T>& e) {
    if (e.n() != f.n()) throw ShapeError("broadcast_concat: batch mismatch");
    const int K = f.c(), A = int(e.shape().per_sample());
    const std::size_t HW = f.shape().plane();
    FeatureMap<T> out(f.n(), K + A, f.h(), f.w());
    for (int n = 0; n < f.n(); ++n) {
        auto src = f.sample(n);
        T* dst = out.data() + std::size_t(n) * (K + A) * HW;
        std::copy(src.begin(), src.end(), dst);
        for (int j = 0; j < A; ++j) std::fill_n(dst + (K + j) * HW, HW, e[std::size_t(n) * A + j]);
    }
    return out;
}

/// Splits the gradient of broadcast_concat into its feature and AU parts.
template <class T>
std::pair<FeatureMap<T>, Tensor<T>> broadcast_concat_backward(const FeatureMap<T>& g, int feature_channels) {
    const int K = feature_channels, A = g.c() - K;
    const std::size_t HW = g.shape().plane();
    FeatureMap<T> gf(g.n(), K, g.h(), g.w());
    Tensor<T> ge(g.n(), A, 1, 1);
    for (int n = 0; n < g.n(); ++n) {
        const T* src = g.data() + std::size_t(n) * g.c() * HW;
        std::copy(src, src + K * HW, gf.data() + std::size_t(n) * K * HW);
        for (int j = 0; j < A; ++j) {
            T s = 0;
            for (std::size_t i = 0; i < HW; ++i) s += src[(K + j) * HW + i];
            ge[std::size_t(n) * A + j] = s;
        }
    }
    return {std::move(gf), std::move(ge)};
}

// ---------------------------------------------------------------------------
// Generator

struct GeneratorConfig {
    int au_dim = 46;
    std::array<int, 4> enc_widths{64, 128, 256, 256};
    std::array<int, 4> enc_strides{1, 2, 1, 2};
    int res_width = 256;
    int res_blocks = 6;
    std::array<int, 2> up_widths{128, 64};
    double slope = 0.1;

    int downsampling() const {
        int f = 1;
        for (int s : enc_strides) f *= s;
        return f;
    }
};

template <class T>
class Generator {
public:
    struct Trace {
        std::array<typename ConvBlock<T>::Cache, 4> enc;
        typename ConvBlock<T>::Cache dec_in;
        std::vector<typename ResidualBlock<T>::Cache> res;
        std::optional<typename nn::Conv2d<T>::Cache> proj;
        std::array<typename UpBlock<T>::Cache, 2> up;
        typename nn::Conv2d<T>::Cache out_conv;
        typename nn::Tanh<T>::Cache out_act;
        int enc_channels = 0;
    };

    Generator() = default;
    explicit Generator(GeneratorConfig cfg) : cfg_(cfg) {
        if (cfg.downsampling() != 4) throw ShapeError("encoder stride plan must downsample by 4");
        int in = 3;
        for (int i = 0; i < 4; ++i) {
            int s = cfg.enc_strides[i];
            enc_[i] = ConvBlock<T>(in, cfg.enc_widths[i], s == 1 ? 3 : 4, s, 1, true, cfg.slope);
            in = cfg.enc_widths[i];
        }
        dec_in_ = ConvBlock<T>(in + cfg.au_dim, cfg.res_width, 3, 1, 1, true, cfg.slope);
        for (int i = 0; i < cfg.res_blocks; ++i) res_.emplace_back(cfg.res_width, cfg.slope);
        if (in != cfg.res_width) proj_.emplace(in, cfg.res_width, 1, 1, 0);
        up_[0] = UpBlock<T>(cfg.res_width, cfg.up_widths[0], cfg.slope);
        up_[1] = UpBlock<T>(cfg.up_widths[0], cfg.up_widths[1], cfg.slope);
        out_conv_ = nn::Conv2d<T>(cfg.up_widths[1], 3, 3, 1, 1);
    }

    const GeneratorConfig& config() const { return cfg_; }

    void check_input(const Tensor<T>& x) const {
        if (x.c() != 3) throw ShapeError("generator expects 3-channel images");
        if (x.h() != x.w()) throw ShapeError("generator expects square images, got " + x.shape().str());
        if (x.h() % cfg_.downsampling() != 0 || x.h() < 2 * cfg_.downsampling())
            throw ShapeError("image side " + std::to_string(x.h()) + " unsupported by stride plan");
        require_finite(x, "generator input");
    }

    FeatureMap<T> encode(const Tensor<T>& x, Mode mode, Trace* tr) const {
        check_input(x);
        Tensor<T> h = x;
        for (int i = 0; i < 4; ++i) h = enc_[i].forward(h, mode, tr ? &tr->enc[i] : nullptr);
        if (tr) tr->enc_channels = h.c();
        return h;
    }

    Tensor<T> decode(const FeatureMap<T>& f_aug, const FeatureMap<T>& f_id, Mode mode, Trace* tr) const {
        auto h = dec_in_.forward(f_aug, mode, tr ? &tr->dec_in : nullptr);
        if (tr) tr->res.resize(res_.size());
        for (std::size_t i = 0; i < res_.size(); ++i) h = res_[i].forward(h, mode, tr ? &tr->res[i] : nullptr);
        if (f_id.h() != h.h() || f_id.w() != h.w() || f_id.n() != h.n())
            throw ShapeError("identity code " + f_id.shape().str() + " does not match bottleneck " + h.shape().str());
        if (proj_) {
            if (tr) tr->proj.emplace();
            h += proj_->forward(f_id, tr ? &*tr->proj : nullptr);
        } else {
            h += f_id;
        }
        for (int i = 0; i < 2; ++i) h = up_[i].forward(h, mode, tr ? &tr->up[i] : nullptr);
        h = out_conv_.forward(h, tr ? &tr->out_conv : nullptr);
        return out_act_.forward(h, tr ? &tr->out_act : nullptr);
    }

    /// G(x, e) = decode(concat(encode(x), e), encode(x)); `e` is N × au_dim.
    Tensor<T> forward(const Tensor<T>& x, const Tensor<T>& e, Mode mode, Trace* tr = nullptr) const {
        if (int(e.shape().per_sample()) != cfg_.au_dim || e.n() != x.n())
            throw ShapeError("AU batch " + e.shape().str() + " does not match generator au_dim " +
                             std::to_string(cfg_.au_dim));
        auto f_id = encode(x, mode, tr);
        auto f_aug = broadcast_concat(f_id, e);
        return decode(f_aug, f_id, mode, tr);
    }

    /// Returns (dL/dx, dL/de).
    std::pair<Tensor<T>, Tensor<T>> backward(const Tensor<T>& gy, const Trace& tr, ParamGrads pg) {
        auto g = out_act_.backward(gy, tr.out_act);
        g = out_conv_.backward(g, tr.out_conv, pg);
        for (int i = 1; i >= 0; --i) g = up_[i].backward(g, tr.up[i], pg);
        Tensor<T> g_id = proj_ ? proj_->backward(g, *tr.proj, pg) : g;
        for (int i = int(res_.size()) - 1; i >= 0; --i) g = res_[i].backward(g, tr.res[i], pg);
        g = dec_in_.backward(g, tr.dec_in, pg);
        auto [gf, ge] = broadcast_concat_backward(g, tr.enc_channels);
        gf += g_id;
        for (int i = 3; i >= 0; --i) gf = enc_[i].backward(gf, tr.enc[i], pg);
        return {std::move(gf), std::move(ge)};
    }

    void commit(const Trace& tr) {
        for (int i = 0; i < 4; ++i) enc_[i].commit(tr.enc[i]);
        dec_in_.commit(tr.dec_in);
        for (std::size_t i = 0; i < res_.size(); ++i) res_[i].commit(tr.res[i]);
        for (int i = 0; i < 2; ++i) up_[i].commit(tr.up[i]);
    }

    template <class F>
    void for_each_param(F&& f) {
        for (int i = 0; i < 4; ++i) enc_[i].for_each_param("enc" + std::to_string(i), f);
        dec_in_.for_each_param("dec_in", f);
        for (std::size_t i = 0; i < res_.size(); ++i) res_[i].for_each_param("res" + std::to_string(i), f);
        if (proj_) proj_->for_each_param("id_proj", f);
        for (int i = 0; i < 2; ++i) up_[i].for_each_param("up" + std::to_string(i), f);
        out_conv_.for_each_param("out", f);
    }
    template <class F>
    void for_each_buffer(F&& f) {
        for (int i = 0; i < 4; ++i) enc_[i].for_each_buffer("enc" + std::to_string(i), f);
        dec_in_.for_each_buffer("dec_in", f);
        for (std::size_t i = 0; i < res_.size(); ++i) res_[i].for_each_buffer("res" + std::to_string(i), f);
        for (int i = 0; i < 2; ++i) up_[i].for_each_buffer("up" + std::to_string(i), f);
    }

private:
    GeneratorConfig cfg_;
    std::array<ConvBlock<T>, 4> enc_;
    ConvBlock<T> dec_in_;
    std::vector<ResidualBlock<T>> res_;
    std::optional<nn::Conv2d<T>> proj_;
    std::array<UpBlock<T>, 2> up_;
    nn::Conv2d<T> out_conv_;
    nn::Tanh<T> out_act_;
};

// ---------------------------------------------------------------------------
// Discriminator-classifier

struct DCConfig {
    std::vector<int> widths{64, 128, 256, 512};
    int classes = 2;
    double slope = 0.1;
};

template <class T>
struct DCOutput {
    Tensor<T> d_score;  // N × 1, unbounded
    Tensor<T> logits;   // N × C, unnormalized
};

/// One trunk, two heads. Both heads read the same trunk object; there is no
/// second copy of the hidden layers.
template <class T>
class DiscriminatorClassifier {
public:
    struct Trunk {
        std::vector<ConvBlock<T>> blocks;
        nn::GlobalAvgPool<T> pool;
    };

    struct Trace {
        std::vector<typename ConvBlock<T>::Cache> blocks;
        typename nn::GlobalAvgPool<T>::Cache pool;
        typename nn::Linear<T>::Cache d_head, c_head;
    };

    DiscriminatorClassifier() = default;
    explicit DiscriminatorClassifier(DCConfig cfg) : cfg_(cfg) {
        if (cfg.widths.empty()) throw ShapeError("discriminator needs at least one block");
        if (cfg.classes < 1) throw ShapeError("classifier needs at least one class");
        int in = 3;
        for (std::size_t i = 0; i < cfg.widths.size(); ++i) {
            trunk_.blocks.emplace_back(in, cfg.widths[i], 4, 2, 1, i != 0, cfg.slope);
            in = cfg.widths[i];
        }
        d_head_ = nn::Linear<T>(in, 1);
        c_head_ = nn::Linear<T>(in, cfg.classes);
    }

    const DCConfig& config() const { return cfg_; }
    int classes() const { return cfg_.classes; }

    const Trunk& d_path_trunk() const { return trunk_; }
    const Trunk& c_path_trunk() const { return trunk_; }
    nn::Linear<T>& d_head() { return d_head_; }
    nn::Linear<T>& c_head() { return c_head_; }
    Trunk& trunk() { return trunk_; }

    DCOutput<T> forward(const Tensor<T>& x, Mode mode, Trace* tr = nullptr) const {
        if (x.c() != 3) throw ShapeError("discriminator expects 3-channel images");
        require_finite(x, "discriminator input");
        Tensor<T> h = x;
        if (tr) tr->blocks.resize(trunk_.blocks.size());
        for (std::size_t i = 0; i < trunk_.blocks.size(); ++i)
            h = trunk_.blocks[i].forward(h, mode, tr ? &tr->blocks[i] : nullptr);
        h = trunk_.pool.forward(h, tr ? &tr->pool : nullptr);
        return {d_head_.forward(h, tr ? &tr->d_head : nullptr), c_head_.forward(h, tr ? &tr->c_head : nullptr)};
    }

    /// Either upstream gradient may be empty, meaning zero.
    Tensor<T> backward(const Tensor<T>& g_d, const Tensor<T>& g_logits, const Trace& tr, ParamGrads pg) {
        Tensor<T> g(tr.pool.in_shape.n, tr.pool.in_shape.c, 1, 1);
        if (!g_d.empty()) g += d_head_.backward(g_d, tr.d_head, pg);
        if (!g_logits.empty()) g += c_head_.backward(g_logits, tr.c_head, pg);
        g = trunk_.pool.backward(g, tr.pool);
        for (int i = int(trunk_.blocks.size()) - 1; i >= 0; --i) g = trunk_.blocks[i].backward(g, tr.blocks[i], pg);
        return g;
    }

    void commit(const Trace& tr) {
        for (std::size_t i = 0; i < trunk_.blocks.size(); ++i) trunk_.blocks[i].commit(tr.blocks[i]);
    }

    template <class F>
    void for_each_param(F&& f) {
        for (std::size_t i = 0; i < trunk_.blocks.size(); ++i)
            trunk_.blocks[i].for_each_param("trunk" + std::to_string(i), f);
        d_head_.for_each_param("d_head", f);
        c_head_.for_each_param("c_head", f);
    }
    template <class F>
    void for_each_buffer(F&& f) {
        for (std::size_t i = 0; i < trunk_.blocks.size(); ++i)
            trunk_.blocks[i].for_each_buffer("trunk" + std::to_string(i), f);
    }

private:
    DCConfig cfg_;
    Trunk trunk_;
    nn::Linear<T> d_head_, c_head_;
};

// ---------------------------------------------------------------------------
// Action-unit estimator

struct AUEConfig {
    std::array<int, 3> widths{64, 128, 256};
    int hidden = 1024;
    int au_dim = 46;
};

template <class T>
class AUEstimator {
public:
    struct Trace {
        std::array<typename nn::Conv2d<T>::Cache, 6> conv;
        std::array<typename nn::LeakyRelu<T>::Cache, 6> act;
        std::array<typename nn::MaxPool2<T>::Cache, 2> pool;
        typename nn::Linear<T>::Cache fc1, fc2;
        typename nn::LeakyRelu<T>::Cache fc1_act;
    };

    AUEstimator() = default;
    AUEstimator(AUEConfig cfg, int image_side) : cfg_(cfg), side_(image_side) {
        int in = 3;
        for (int b = 0; b < 3; ++b)
            for (int j = 0; j < 2; ++j) {
                conv_[2 * b + j] = nn::Conv2d<T>(in, cfg.widths[b], 3, 1, 1);
                in = cfg.widths[b];
            }
        int s = feature_side();
        if (s < 2) throw ShapeError("image side " + std::to_string(image_side) + " too small for the estimator");
        fc1_ = nn::Linear<T>(in * s * s, cfg.hidden);
        fc2_ = nn::Linear<T>(cfg.hidden, cfg.au_dim);
        for (auto& a : act_) a.slope = T(0);
        fc1_act_.slope = T(0);
    }

    const AUEConfig& config() const { return cfg_; }
    int image_side() const { return side_; }
    int feature_side() const { return side_ / 4; }

    /// conv3_2 activations (post-rectifier).
    FeatureMap<T> features(const Tensor<T>& x, Trace* tr = nullptr) const {
        if (x.c() != 3 || x.h() != side_ || x.w() != side_)
            throw ShapeError("estimator expects 3x" + std::to_string(side_) + "x" + std::to_string(side_) + ", got " +
                             x.shape().str());
        require_finite(x, "estimator input");
        Tensor<T> h = x;
        for (int i = 0; i < 6; ++i) {
            h = conv_[i].forward(h, tr ? &tr->conv[i] : nullptr);
            h = act_[i].forward(h, tr ? &tr->act[i] : nullptr);
            if (i == 1 || i == 3) h = pool_.forward(h, tr ? &tr->pool[i / 2] : nullptr);
        }
        return h;
    }

    Tensor<T> head(const FeatureMap<T>& f, Trace* tr = nullptr) const {
        auto h = fc1_.forward(f, tr ? &tr->fc1 : nullptr);
        h = fc1_act_.forward(h, tr ? &tr->fc1_act : nullptr);
        return fc2_.forward(h, tr ? &tr->fc2 : nullptr);
    }

    /// Unclamped AU regression, N × au_dim.
    Tensor<T> forward(const Tensor<T>& x, Trace* tr = nullptr) const { return head(features(x, tr), tr); }

    FeatureMap<T> head_backward(const Tensor<T>& g_pred, const Trace& tr, ParamGrads pg) {
        auto g = fc2_.backward(g_pred, tr.fc2, pg);
        g = fc1_act_.backward(g, tr.fc1_act);
        g = fc1_.backward(g, tr.fc1, pg);
        return g.reshaped(tr.act[5].input.shape());
    }

    Tensor<T> features_backward(const FeatureMap<T>& g_feat, const Trace& tr, ParamGrads pg) {
        Tensor<T> g = g_feat;
        for (int i = 5; i >= 0; --i) {
            if (i == 1 || i == 3) g = pool_.backward(g, tr.pool[i / 2]);
            g = act_[i].backward(g, tr.act[i]);
            g = conv_[i].backward(g, tr.conv[i], pg);
        }
        return g;
    }

    Tensor<T> backward(const Tensor<T>& g_pred, const Trace& tr, ParamGrads pg) {
        return features_backward(head_backward(g_pred, tr, pg), tr, pg);
    }

    template <class F>
    void for_each_param(F&& f) {
        static const char* names[6] = {"conv1_1", "conv1_2", "conv2_1", "conv2_2", "conv3_1", "conv3_2"};
        for (int i = 0; i < 6; ++i) conv_[i].for_each_param(names[i], f);
        fc1_.for_each_param("fc1", f);
        fc2_.for_each_param("fc2", f);
    }
    template <class F>
    void for_each_buffer(F&&) {}

private:
    AUEConfig cfg_;
    int side_ = 0;
    std::array<nn::Conv2d<T>, 6> conv_;
    std::array<nn::LeakyRelu<T>, 6> act_;
    nn::MaxPool2<T> pool_;
    nn::Linear<T> fc1_, fc2_;
    nn::LeakyRelu<T> fc1_act_;
};

// ---------------------------------------------------------------------------
// Shared helpers over any network exposing for_each_param / for_each_buffer.

template <class T, class Net>
std::vector<nn::Param<T>*> params_of(Net& net) {
    std::vector<nn::Param<T>*> out;
    net.for_each_param([&](const std::string&, nn::Param<T>& p) { out.push_back(&p); });
    return out;
}

template <class T, class Net>
void zero_grads(Net& net) {
    net.for_each_param([](const std::string&, nn::Param<T>& p) { p.zero_grad(); });
}

/// Weights ~ N(0, stddev), biases 0, normalization scale 1 / offset 0.
/// With `fan_in_scaled`, stddev is sqrt(2 / fan_in) per weight tensor instead.
template <class T, class Net, class Rng>
void initialize(Net& net, Rng& rng, double stddev, bool fan_in_scaled = false) {
    net.for_each_param([&](const std::string& name, nn::Param<T>& p) {
        auto ends_with = [&](const char* s) {
            std::string suf(s);
            return name.size() >= suf.size() && name.compare(name.size() - suf.size(), suf.size(), suf) == 0;
        };
        if (ends_with(".weight")) {
            double sd = stddev;
            if (fan_in_scaled) {
                const auto& s = p.value.shape();
                // Conv2d/Linear: (out, in, k, k); ConvTranspose2d: (in, out, k, k).
                double fan_in = double(s.c) * s.h * s.w;
                sd = std::sqrt(2.0 / fan_in);
            }
            nn::init_normal(p.value, rng, sd);
        } else if (ends_with(".gamma")) {
            p.value.fill(T(1));
        } else {
            p.value.zero();
        }
        p.zero_grad();
    });
}

/// FNV-1a over raw parameter bytes; used to assert that a network was not
/// touched by an update.
template <class T, class Net>
std::uint64_t param_checksum(Net& net) {
    std::uint64_t h = 1469598103934665603ull;
    net.for_each_param([&](const std::string&, nn::Param<T>& p) {
        const auto* b = reinterpret_cast<const unsigned char*>(p.value.data());
        for (std::size_t i = 0; i < p.value.size() * sizeof(T); ++i) {
            h ^= b[i];
            h *= 1099511628211ull;
        }
    });
    return h;
}

}  // namespace gath
