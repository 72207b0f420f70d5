#pragma once

// Differentiable building blocks. Every layer keeps its parameters and
// exposes a const forward pass that records what backward needs into a
// caller-owned cache, so one set of weights can be evaluated many times
// (and concurrently) without hidden activation state.

#include <Eigen/Core>

#include <cmath>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "gath/tensor.hpp"

namespace gath::nn {

template <class T>
struct Param {
    Tensor<T> value;
    Tensor<T> grad;

    Param() = default;
    explicit Param(Shape s) : value(s), grad(s) {}
    void zero_grad() { grad.zero(); }
};

/// Training mode uses batch statistics in normalization layers; inference
/// uses the running estimates.
enum class Mode { train, inference };

/// When false, backward passes propagate input gradients only and leave
/// every parameter gradient untouched. This is how a frozen network is
/// differentiated through without receiving an update.
enum class ParamGrads { accumulate, skip };

template <class T>
using MatMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>>;
template <class T>
using CMatMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>>;
template <class T>
using RowMatMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <class T>
using CRowMatMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

struct ConvGeometry {
    int channels, in_h, in_w, kernel, stride, pad, out_h, out_w;

    static ConvGeometry make(int channels, int in_h, int in_w, int kernel, int stride, int pad) {
        int oh = (in_h + 2 * pad - kernel) / stride + 1;
        int ow = (in_w + 2 * pad - kernel) / stride + 1;
        if (oh <= 0 || ow <= 0 || in_h + 2 * pad < kernel || in_w + 2 * pad < kernel)
            throw ShapeError("convolution input " + std::to_string(in_h) + "x" + std::to_string(in_w) +
                             " too small for kernel " + std::to_string(kernel));
        return {channels, in_h, in_w, kernel, stride, pad, oh, ow};
    }
    int patch() const { return channels * kernel * kernel; }
    int positions() const { return out_h * out_w; }
};

namespace detail {

// Column-major patch matrix: column p = n*positions + oy*out_w + ox holds the
// receptive field of that output location, ordered (c, ky, kx).
template <class T>
void im2col(const Tensor<T>& x, const ConvGeometry& g, std::vector<T>& col) {
    const int N = x.n(), K = g.patch(), P = g.positions();
    col.assign(std::size_t(K) * P * N, T(0));
    for (int n = 0; n < N; ++n) {
        const T* src = x.data() + std::size_t(n) * g.channels * g.in_h * g.in_w;
        for (int oy = 0; oy < g.out_h; ++oy)
            for (int ox = 0; ox < g.out_w; ++ox) {
                T* dst = col.data() + (std::size_t(n) * P + oy * g.out_w + ox) * K;
                int iy0 = oy * g.stride - g.pad, ix0 = ox * g.stride - g.pad;
                for (int c = 0; c < g.channels; ++c) {
                    const T* plane = src + std::size_t(c) * g.in_h * g.in_w;
                    for (int ky = 0; ky < g.kernel; ++ky) {
                        int iy = iy0 + ky;
                        if (iy < 0 || iy >= g.in_h) {
                            dst += g.kernel;
                            continue;
                        }
                        for (int kx = 0; kx < g.kernel; ++kx, ++dst) {
                            int ix = ix0 + kx;
                            if (ix >= 0 && ix < g.in_w) *dst = plane[iy * g.in_w + ix];
                        }
                    }
                }
            }
    }
}

template <class T>
void col2im(const std::vector<T>& col, const ConvGeometry& g, Tensor<T>& x) {
    const int N = x.n(), K = g.patch(), P = g.positions();
    x.zero();
    for (int n = 0; n < N; ++n) {
        T* dstn = x.data() + std::size_t(n) * g.channels * g.in_h * g.in_w;
        for (int oy = 0; oy < g.out_h; ++oy)
            for (int ox = 0; ox < g.out_w; ++ox) {
                const T* src = col.data() + (std::size_t(n) * P + oy * g.out_w + ox) * K;
                int iy0 = oy * g.stride - g.pad, ix0 = ox * g.stride - g.pad;
                for (int c = 0; c < g.channels; ++c) {
                    T* plane = dstn + std::size_t(c) * g.in_h * g.in_w;
                    for (int ky = 0; ky < g.kernel; ++ky) {
                        int iy = iy0 + ky;
                        if (iy < 0 || iy >= g.in_h) {
                            src += g.kernel;
                            continue;
                        }
                        for (int kx = 0; kx < g.kernel; ++kx, ++src) {
                            int ix = ix0 + kx;
                            if (ix >= 0 && ix < g.in_w) plane[iy * g.in_w + ix] += *src;
                        }
                    }
                }
            }
    }
}

// NCHW <-> (C × N·H·W) column-major matrix.
template <class T>
void to_channel_matrix(const Tensor<T>& t, std::vector<T>& m) {
    const int C = t.c();
    const std::size_t HW = t.shape().plane();
    m.resize(t.size());
    for (int n = 0; n < t.n(); ++n)
        for (int c = 0; c < C; ++c) {
            const T* src = t.data() + (std::size_t(n) * C + c) * HW;
            for (std::size_t p = 0; p < HW; ++p) m[(n * HW + p) * C + c] = src[p];
        }
}

template <class T>
void from_channel_matrix(const T* m, Tensor<T>& t) {
    const int C = t.c();
    const std::size_t HW = t.shape().plane();
    for (int n = 0; n < t.n(); ++n)
        for (int c = 0; c < C; ++c) {
            T* dst = t.data() + (std::size_t(n) * C + c) * HW;
            for (std::size_t p = 0; p < HW; ++p) dst[p] = m[(n * HW + p) * C + c];
        }
}

}  // namespace detail

template <class T, class Rng>
void init_normal(Tensor<T>& t, Rng& rng, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    for (auto& v : t.vec()) v = static_cast<T>(dist(rng));
}

/// 2-D convolution, weights (out, in, k, k).
template <class T>
struct Conv2d {
    int in_c = 0, out_c = 0, kernel = 3, stride = 1, pad = 1;
    bool use_bias = true;
    Param<T> weight, bias;

    struct Cache {
        Tensor<T> input;
    };

    Conv2d() = default;
    /// `with_bias = false` for convolutions feeding a normalization layer,
    /// where a bias is cancelled by the mean subtraction.
    Conv2d(int in, int out, int k, int s, int p, bool with_bias = true)
        : in_c(in), out_c(out), kernel(k), stride(s), pad(p), use_bias(with_bias), weight(Shape{out, in, k, k}),
          bias(Shape{1, out, 1, 1}) {}

    ConvGeometry geometry(const Tensor<T>& x) const {
        if (x.c() != in_c)
            throw ShapeError("conv expects " + std::to_string(in_c) + " channels, got " + std::to_string(x.c()));
        return ConvGeometry::make(in_c, x.h(), x.w(), kernel, stride, pad);
    }

    Tensor<T> forward(const Tensor<T>& x, Cache* cache) const {
        auto g = geometry(x);
        std::vector<T> col;
        detail::im2col(x, g, col);
        const int K = g.patch(), P = g.positions() * x.n();
        std::vector<T> y(std::size_t(out_c) * P);
        MatMap<T> Y(y.data(), out_c, P);
        Y.noalias() = CRowMatMap<T>(weight.value.data(), out_c, K) * CMatMap<T>(col.data(), K, P);
        if (use_bias) Y.colwise() += Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(bias.value.data(), out_c);
        Tensor<T> out(x.n(), out_c, g.out_h, g.out_w);
        detail::from_channel_matrix(y.data(), out);
        if (cache) cache->input = x;
        return out;
    }

    Tensor<T> backward(const Tensor<T>& gy, const Cache& cache, ParamGrads pg) {
        const auto& x = cache.input;
        auto g = geometry(x);
        const int K = g.patch(), P = g.positions() * x.n();
        std::vector<T> gym;
        detail::to_channel_matrix(gy, gym);
        CMatMap<T> GY(gym.data(), out_c, P);
        std::vector<T> col;
        if (pg == ParamGrads::accumulate) {
            detail::im2col(x, g, col);
            RowMatMap<T>(weight.grad.data(), out_c, K).noalias() += GY * CMatMap<T>(col.data(), K, P).transpose();
            if (use_bias) Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>(bias.grad.data(), out_c) += GY.rowwise().sum();
        }
        col.assign(std::size_t(K) * P, T(0));
        MatMap<T>(col.data(), K, P).noalias() = CRowMatMap<T>(weight.value.data(), out_c, K).transpose() * GY;
        Tensor<T> gx(x.shape());
        detail::col2im(col, g, gx);
        return gx;
    }

    template <class F>
    void for_each_param(const std::string& prefix, F&& f) {
        f(prefix + ".weight", weight);
        if (use_bias) f(prefix + ".bias", bias);
    }
};

/// Transposed convolution (fractionally strided), weights (in, out, k, k).
/// Output side = (in - 1)·stride − 2·pad + k.
template <class T>
struct ConvTranspose2d {
    int in_c = 0, out_c = 0, kernel = 4, stride = 2, pad = 1;
    bool use_bias = true;
    Param<T> weight, bias;

    struct Cache {
        Tensor<T> input;
    };

    ConvTranspose2d() = default;
    ConvTranspose2d(int in, int out, int k, int s, int p, bool with_bias = true)
        : in_c(in), out_c(out), kernel(k), stride(s), pad(p), use_bias(with_bias), weight(Shape{in, out, k, k}),
          bias(Shape{1, out, 1, 1}) {}

    // Geometry of the adjoint convolution mapping the output back onto the input grid.
    ConvGeometry geometry(const Tensor<T>& x) const {
        if (x.c() != in_c)
            throw ShapeError("transposed conv expects " + std::to_string(in_c) + " channels, got " +
                             std::to_string(x.c()));
        int oh = (x.h() - 1) * stride - 2 * pad + kernel;
        int ow = (x.w() - 1) * stride - 2 * pad + kernel;
        auto g = ConvGeometry::make(out_c, oh, ow, kernel, stride, pad);
        if (g.out_h != x.h() || g.out_w != x.w()) throw ShapeError("transposed conv geometry mismatch");
        return g;
    }

    Tensor<T> forward(const Tensor<T>& x, Cache* cache) const {
        auto g = geometry(x);
        const int K = g.patch(), P = g.positions() * x.n();
        std::vector<T> xm;
        detail::to_channel_matrix(x, xm);
        std::vector<T> col(std::size_t(K) * P);
        MatMap<T>(col.data(), K, P).noalias() =
            CRowMatMap<T>(weight.value.data(), in_c, K).transpose() * CMatMap<T>(xm.data(), in_c, P);
        Tensor<T> out(x.n(), out_c, g.in_h, g.in_w);
        detail::col2im(col, g, out);
        const std::size_t HW = out.shape().plane();
        for (int n = 0; n < out.n() && use_bias; ++n)
            for (int c = 0; c < out_c; ++c) {
                T b = bias.value[c];
                T* p = out.data() + (std::size_t(n) * out_c + c) * HW;
                for (std::size_t i = 0; i < HW; ++i) p[i] += b;
            }
        if (cache) cache->input = x;
        return out;
    }

    Tensor<T> backward(const Tensor<T>& gy, const Cache& cache, ParamGrads pg) {
        const auto& x = cache.input;
        auto g = geometry(x);
        const int K = g.patch(), P = g.positions() * x.n();
        std::vector<T> gcol;
        detail::im2col(gy, g, gcol);
        CMatMap<T> GC(gcol.data(), K, P);
        std::vector<T> gxm(std::size_t(in_c) * P);
        MatMap<T>(gxm.data(), in_c, P).noalias() = CRowMatMap<T>(weight.value.data(), in_c, K) * GC;
        if (pg == ParamGrads::accumulate) {
            std::vector<T> xm;
            detail::to_channel_matrix(x, xm);
            RowMatMap<T>(weight.grad.data(), in_c, K).noalias() += CMatMap<T>(xm.data(), in_c, P) * GC.transpose();
            const std::size_t HW = gy.shape().plane();
            for (int n = 0; n < gy.n() && use_bias; ++n)
                for (int c = 0; c < out_c; ++c) {
                    const T* p = gy.data() + (std::size_t(n) * out_c + c) * HW;
                    T s = 0;
                    for (std::size_t i = 0; i < HW; ++i) s += p[i];
                    bias.grad[c] += s;
                }
        }
        Tensor<T> gx(x.shape());
        detail::from_channel_matrix(gxm.data(), gx);
        return gx;
    }

    template <class F>
    void for_each_param(const std::string& prefix, F&& f) {
        f(prefix + ".weight", weight);
        if (use_bias) f(prefix + ".bias", bias);
    }
};

/// Per-channel batch normalization over (N, H, W).
template <class T>
struct BatchNorm2d {
    static constexpr double kEps = 1e-5;

    int channels = 0;
    double momentum = 0.99;  // weight of the old running estimate
    Param<T> gamma, beta;
    Tensor<T> running_mean, running_var;

    struct Cache {
        Tensor<T> xhat;
        std::vector<T> inv_std;
        std::vector<T> batch_mean, batch_var;  // var unbiased, for running update
        Mode mode = Mode::train;
    };

    BatchNorm2d() = default;
    explicit BatchNorm2d(int c)
        : channels(c),
          gamma(Shape{1, c, 1, 1}),
          beta(Shape{1, c, 1, 1}),
          running_mean(1, c, 1, 1, T(0)),
          running_var(1, c, 1, 1, T(1)) {
        gamma.value.fill(T(1));
    }

    Tensor<T> forward(const Tensor<T>& x, Mode mode, Cache* cache) const {
        if (x.c() != channels) throw ShapeError("batch norm channel mismatch");
        const int N = x.n(), C = channels;
        const std::size_t HW = x.shape().plane();
        const double M = double(N) * HW;
        Tensor<T> out(x.shape());
        Tensor<T> xhat(x.shape());
        std::vector<T> inv_std(C), bmean(C), bvar(C);
        for (int c = 0; c < C; ++c) {
            double mean, var;
            if (mode == Mode::train) {
                double s = 0;
                for (int n = 0; n < N; ++n) {
                    const T* p = x.data() + (std::size_t(n) * C + c) * HW;
                    for (std::size_t i = 0; i < HW; ++i) s += p[i];
                }
                mean = s / M;
                double sq = 0;
                for (int n = 0; n < N; ++n) {
                    const T* p = x.data() + (std::size_t(n) * C + c) * HW;
                    for (std::size_t i = 0; i < HW; ++i) sq += (p[i] - mean) * (p[i] - mean);
                }
                var = sq / M;
                bmean[c] = T(mean);
                bvar[c] = T(M > 1 ? sq / (M - 1) : var);
            } else {
                mean = running_mean[c];
                var = running_var[c];
            }
            const double is = 1.0 / std::sqrt(var + kEps);
            inv_std[c] = T(is);
            const T g = gamma.value[c], b = beta.value[c];
            for (int n = 0; n < N; ++n) {
                std::size_t off = (std::size_t(n) * C + c) * HW;
                for (std::size_t i = 0; i < HW; ++i) {
                    T xh = T((x[off + i] - mean) * is);
                    xhat[off + i] = xh;
                    out[off + i] = g * xh + b;
                }
            }
        }
        if (cache) {
            cache->xhat = std::move(xhat);
            cache->inv_std = std::move(inv_std);
            cache->batch_mean = std::move(bmean);
            cache->batch_var = std::move(bvar);
            cache->mode = mode;
        }
        return out;
    }

    Tensor<T> backward(const Tensor<T>& gy, const Cache& cache, ParamGrads pg) {
        const int N = gy.n(), C = channels;
        const std::size_t HW = gy.shape().plane();
        const double M = double(N) * HW;
        Tensor<T> gx(gy.shape());
        for (int c = 0; c < C; ++c) {
            double sg = 0, sgx = 0;
            for (int n = 0; n < N; ++n) {
                std::size_t off = (std::size_t(n) * C + c) * HW;
                for (std::size_t i = 0; i < HW; ++i) {
                    sg += gy[off + i];
                    sgx += double(gy[off + i]) * cache.xhat[off + i];
                }
            }
            if (pg == ParamGrads::accumulate) {
                beta.grad[c] += T(sg);
                gamma.grad[c] += T(sgx);
            }
            const double k = double(gamma.value[c]) * cache.inv_std[c];
            for (int n = 0; n < N; ++n) {
                std::size_t off = (std::size_t(n) * C + c) * HW;
                for (std::size_t i = 0; i < HW; ++i) {
                    if (cache.mode == Mode::train)
                        gx[off + i] = T(k * (gy[off + i] - sg / M - cache.xhat[off + i] * sgx / M));
                    else
                        gx[off + i] = T(k * gy[off + i]);
                }
            }
        }
        return gx;
    }

    /// Folds the batch statistics recorded in `cache` into the running estimates.
    void commit(const Cache& cache) {
        if (cache.mode != Mode::train) return;
        for (int c = 0; c < channels; ++c) {
            running_mean[c] = T(momentum * running_mean[c] + (1 - momentum) * cache.batch_mean[c]);
            running_var[c] = T(momentum * running_var[c] + (1 - momentum) * cache.batch_var[c]);
        }
    }

    template <class F>
    void for_each_param(const std::string& prefix, F&& f) {
        f(prefix + ".gamma", gamma);
        f(prefix + ".beta", beta);
    }
    template <class F>
    void for_each_buffer(const std::string& prefix, F&& f) {
        f(prefix + ".running_mean", running_mean);
        f(prefix + ".running_var", running_var);
    }
};

/// Leaky rectifier; slope 0 gives the plain rectifier.
template <class T>
struct LeakyRelu {
    T slope = T(0.1);

    struct Cache {
        Tensor<T> input;
    };

    Tensor<T> forward(const Tensor<T>& x, Cache* cache) const {
        Tensor<T> out(x.shape());
        for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > 0 ? x[i] : slope * x[i];
        if (cache) cache->input = x;
        return out;
    }
    Tensor<T> backward(const Tensor<T>& gy, const Cache& cache) const {
        Tensor<T> gx(gy.shape());
        for (std::size_t i = 0; i < gy.size(); ++i) gx[i] = cache.input[i] > 0 ? gy[i] : slope * gy[i];
        return gx;
    }
};

template <class T>
struct Tanh {
    struct Cache {
        Tensor<T> output;
    };
    Tensor<T> forward(const Tensor<T>& x, Cache* cache) const {
        Tensor<T> out(x.shape());
        for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::tanh(x[i]);
        if (cache) cache->output = out;
        return out;
    }
    Tensor<T> backward(const Tensor<T>& gy, const Cache& cache) const {
        Tensor<T> gx(gy.shape());
        for (std::size_t i = 0; i < gy.size(); ++i) gx[i] = gy[i] * (T(1) - cache.output[i] * cache.output[i]);
        return gx;
    }
};

/// 2×2 max pooling with stride 2 (floor on odd sides).
template <class T>
struct MaxPool2 {
    struct Cache {
        Shape in_shape;
        std::vector<std::size_t> argmax;
    };
    Tensor<T> forward(const Tensor<T>& x, Cache* cache) const {
        if (x.h() < 2 || x.w() < 2) throw ShapeError("max pool needs at least 2x2 input");
        Tensor<T> out(x.n(), x.c(), x.h() / 2, x.w() / 2);
        std::vector<std::size_t> arg(out.size());
        std::size_t o = 0;
        for (int n = 0; n < x.n(); ++n)
            for (int c = 0; c < x.c(); ++c)
                for (int y = 0; y < out.h(); ++y)
                    for (int xx = 0; xx < out.w(); ++xx, ++o) {
                        std::size_t best = x.index(n, c, 2 * y, 2 * xx);
                        for (int dy = 0; dy < 2; ++dy)
                            for (int dx = 0; dx < 2; ++dx) {
                                std::size_t i = x.index(n, c, 2 * y + dy, 2 * xx + dx);
                                if (x[i] > x[best]) best = i;
                            }
                        out[o] = x[best];
                        arg[o] = best;
                    }
        if (cache) {
            cache->in_shape = x.shape();
            cache->argmax = std::move(arg);
        }
        return out;
    }
    Tensor<T> backward(const Tensor<T>& gy, const Cache& cache) const {
        Tensor<T> gx(cache.in_shape);
        for (std::size_t o = 0; o < gy.size(); ++o) gx[cache.argmax[o]] += gy[o];
        return gx;
    }
};

/// Fully connected layer on flattened samples; output is (N, out, 1, 1).
template <class T>
struct Linear {
    int in_f = 0, out_f = 0;
    Param<T> weight, bias;  // weight (out, in)

    struct Cache {
        Tensor<T> input;
    };

    Linear() = default;
    Linear(int in, int out) : in_f(in), out_f(out), weight(Shape{out, in, 1, 1}), bias(Shape{1, out, 1, 1}) {}

    Tensor<T> forward(const Tensor<T>& x, Cache* cache) const {
        if (int(x.shape().per_sample()) != in_f)
            throw ShapeError("linear expects " + std::to_string(in_f) + " features, got " +
                             std::to_string(x.shape().per_sample()));
        const int N = x.n();
        Tensor<T> out(N, out_f, 1, 1);
        MatMap<T> Y(out.data(), out_f, N);
        Y.noalias() = CRowMatMap<T>(weight.value.data(), out_f, in_f) * CMatMap<T>(x.data(), in_f, N);
        Y.colwise() += Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(bias.value.data(), out_f);
        if (cache) cache->input = x;
        return out;
    }

    Tensor<T> backward(const Tensor<T>& gy, const Cache& cache, ParamGrads pg) {
        const auto& x = cache.input;
        const int N = x.n();
        CMatMap<T> GY(gy.data(), out_f, N);
        if (pg == ParamGrads::accumulate) {
            RowMatMap<T>(weight.grad.data(), out_f, in_f).noalias() += GY * CMatMap<T>(x.data(), in_f, N).transpose();
            Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>(bias.grad.data(), out_f) += GY.rowwise().sum();
        }
        Tensor<T> gx(x.shape());
        MatMap<T>(gx.data(), in_f, N).noalias() = CRowMatMap<T>(weight.value.data(), out_f, in_f).transpose() * GY;
        return gx;
    }

    template <class F>
    void for_each_param(const std::string& prefix, F&& f) {
        f(prefix + ".weight", weight);
        f(prefix + ".bias", bias);
    }
};

template <class T>
struct GlobalAvgPool {
    struct Cache {
        Shape in_shape;
    };
    Tensor<T> forward(const Tensor<T>& x, Cache* cache) const {
        Tensor<T> out(x.n(), x.c(), 1, 1);
        const std::size_t HW = x.shape().plane();
        for (int n = 0; n < x.n(); ++n)
            for (int c = 0; c < x.c(); ++c) {
                const T* p = x.data() + (std::size_t(n) * x.c() + c) * HW;
                T s = 0;
                for (std::size_t i = 0; i < HW; ++i) s += p[i];
                out.at(n, c, 0, 0) = s / T(HW);
            }
        if (cache) cache->in_shape = x.shape();
        return out;
    }
    Tensor<T> backward(const Tensor<T>& gy, const Cache& cache) const {
        Tensor<T> gx(cache.in_shape);
        const std::size_t HW = cache.in_shape.plane();
        for (int n = 0; n < gx.n(); ++n)
            for (int c = 0; c < gx.c(); ++c) {
                T v = gy.at(n, c, 0, 0) / T(HW);
                T* p = gx.data() + (std::size_t(n) * gx.c() + c) * HW;
                for (std::size_t i = 0; i < HW; ++i) p[i] = v;
            }
        return gx;
    }
};

}  // namespace gath::nn
