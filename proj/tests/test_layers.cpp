#include <gtest/gtest.h>

#include "support.hpp"

using namespace gath;
using namespace gath::nn;
using namespace gath::testing;

namespace {

constexpr double kTol = 1e-6;

double dot(const Tensor<double>& a, const Tensor<double>& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

/// Checks input and parameter gradients of a layer through the scalar
/// probe·forward(x).
template <class Layer, class Fwd, class Bwd>
void check_layer(Layer& layer, Tensor<double> x, Fwd fwd, Bwd bwd, std::mt19937_64& rng) {
    typename Layer::Cache cache;
    auto y = fwd(layer, x, &cache);
    auto probe = random_tensor<double>(y.shape(), rng);
    auto value = [&] { return dot(fwd(layer, x, static_cast<typename Layer::Cache*>(nullptr)), probe); };
    auto clear = [](const std::string&, Param<double>& p) { p.zero_grad(); };
    if constexpr (requires { layer.for_each_param(std::string(), clear); }) layer.for_each_param("l", clear);
    auto gx = bwd(layer, probe, cache);
    EXPECT_LT(fd_relative_error(x, gx, value), kTol) << "input";
    if constexpr (requires { layer.for_each_param(std::string(), clear); }) {
        layer.for_each_param("l", [&](const std::string& n, Param<double>& p) {
            EXPECT_LT(fd_relative_error(p.value, p.grad, value), kTol) << n;
        });
    }
}

template <class Layer>
void randomize(Layer& layer, std::mt19937_64& rng) {
    layer.for_each_param("l", [&](const std::string&, Param<double>& p) { p.value = random_tensor<double>(p.value.shape(), rng); });
}

auto plain_fwd = [](auto& l, const Tensor<double>& x, auto* c) { return l.forward(x, c); };
auto plain_bwd = [](auto& l, const Tensor<double>& g, const auto& c) { return l.backward(g, c, ParamGrads::accumulate); };
auto free_bwd = [](auto& l, const Tensor<double>& g, const auto& c) { return l.backward(g, c); };

}  // namespace

TEST(Layers, Conv2dGradients) {
    std::mt19937_64 rng(1);
    for (auto [k, s, p] : {std::tuple{3, 1, 1}, std::tuple{4, 2, 1}, std::tuple{1, 1, 0}}) {
        Conv2d<double> conv(2, 3, k, s, p);
        randomize(conv, rng);
        check_layer(conv, random_tensor<double>({2, 2, 6, 6}, rng), plain_fwd, plain_bwd, rng);
    }
}

TEST(Layers, Conv2dWithoutBiasHasNoBiasParameter) {
    Conv2d<double> conv(2, 3, 3, 1, 1, false);
    int n = 0;
    conv.for_each_param("c", [&](const std::string& name, Param<double>&) {
        ++n;
        EXPECT_EQ(name, "c.weight");
    });
    EXPECT_EQ(n, 1);
    std::mt19937_64 rng(2);
    randomize(conv, rng);
    check_layer(conv, random_tensor<double>({1, 2, 5, 5}, rng), plain_fwd, plain_bwd, rng);
}

TEST(Layers, Conv2dMatchesDirectSum) {
    std::mt19937_64 rng(3);
    Conv2d<double> conv(2, 2, 3, 2, 1);
    randomize(conv, rng);
    auto x = random_tensor<double>({1, 2, 5, 5}, rng);
    auto y = conv.forward(x, nullptr);
    ASSERT_EQ(y.shape(), (Shape{1, 2, 3, 3}));
    for (int o = 0; o < 2; ++o)
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                double s = conv.bias.value[o];
                for (int c = 0; c < 2; ++c)
                    for (int a = 0; a < 3; ++a)
                        for (int b = 0; b < 3; ++b) {
                            int yy = 2 * i - 1 + a, xx = 2 * j - 1 + b;
                            if (yy < 0 || yy >= 5 || xx < 0 || xx >= 5) continue;
                            s += conv.weight.value.at(o, c, a, b) * x.at(0, c, yy, xx);
                        }
                EXPECT_NEAR(y.at(0, o, i, j), s, 1e-12);
            }
}

TEST(Layers, ConvTransposeDoublesSideAndMatchesGradients) {
    std::mt19937_64 rng(4);
    ConvTranspose2d<double> up(3, 2, 4, 2, 1);
    randomize(up, rng);
    auto x = random_tensor<double>({2, 3, 3, 3}, rng);
    EXPECT_EQ(up.forward(x, nullptr).shape(), (Shape{2, 2, 6, 6}));
    check_layer(up, x, plain_fwd, plain_bwd, rng);
}

TEST(Layers, ConvTransposeIsAdjointOfConv) {
    // <conv(x), y> = <x, convT(y)> when both share the same weights and no bias.
    std::mt19937_64 rng(5);
    Conv2d<double> conv(2, 3, 4, 2, 1, false);
    ConvTranspose2d<double> up(3, 2, 4, 2, 1, false);
    conv.weight.value = random_tensor<double>(conv.weight.value.shape(), rng);
    up.weight.value = conv.weight.value;  // (out=3, in=2) read as (in=3, out=2)
    auto x = random_tensor<double>({1, 2, 6, 6}, rng), y = random_tensor<double>({1, 3, 3, 3}, rng);
    EXPECT_NEAR(dot(conv.forward(x, nullptr), y), dot(x, up.forward(y, nullptr)), 1e-10);
}

TEST(Layers, BatchNormTrainGradients) {
    std::mt19937_64 rng(6);
    BatchNorm2d<double> bn(3);
    randomize(bn, rng);
    auto fwd = [](auto& l, const Tensor<double>& x, auto* c) { return l.forward(x, Mode::train, c); };
    check_layer(bn, random_tensor<double>({3, 3, 2, 2}, rng), fwd, plain_bwd, rng);
}

TEST(Layers, BatchNormInferenceGradients) {
    std::mt19937_64 rng(7);
    BatchNorm2d<double> bn(2);
    randomize(bn, rng);
    bn.running_mean = random_tensor<double>({1, 2, 1, 1}, rng);
    bn.running_var = random_tensor<double>({1, 2, 1, 1}, rng, 0.5, 2);
    auto fwd = [](auto& l, const Tensor<double>& x, auto* c) { return l.forward(x, Mode::inference, c); };
    check_layer(bn, random_tensor<double>({2, 2, 3, 3}, rng), fwd, plain_bwd, rng);
}

TEST(Layers, BatchNormNormalizesAndCommitsRunningStats) {
    std::mt19937_64 rng(8);
    BatchNorm2d<double> bn(1);
    auto x = random_tensor<double>({4, 1, 3, 3}, rng, 2, 6);
    BatchNorm2d<double>::Cache c;
    auto y = bn.forward(x, Mode::train, &c);
    double m = 0, v = 0, xm = 0, xv = 0;
    for (double a : y.vec()) m += a / 36;
    for (double a : y.vec()) v += (a - m) * (a - m) / 36;
    EXPECT_NEAR(m, 0, 1e-12);
    EXPECT_NEAR(v, 1, 1e-3);
    EXPECT_EQ(bn.running_mean[0], 0.0);  // forward alone never touches running stats
    bn.commit(c);
    for (double a : x.vec()) xm += a / 36;
    for (double a : x.vec()) xv += (a - xm) * (a - xm) / 35;
    EXPECT_NEAR(bn.running_mean[0], 0.01 * xm, 1e-12);
    EXPECT_NEAR(bn.running_var[0], 0.99 + 0.01 * xv, 1e-12);
}

TEST(Layers, LinearGradients) {
    std::mt19937_64 rng(9);
    Linear<double> lin(6, 4);
    randomize(lin, rng);
    check_layer(lin, random_tensor<double>({3, 6, 1, 1}, rng), plain_fwd, plain_bwd, rng);
    check_layer(lin, random_tensor<double>({2, 1, 2, 3}, rng), plain_fwd, plain_bwd, rng);
}

TEST(Layers, ActivationsAndPooling) {
    std::mt19937_64 rng(10);
    LeakyRelu<double> lrelu;
    check_layer(lrelu, random_tensor<double>({2, 2, 3, 3}, rng), plain_fwd, free_bwd, rng);
    Tanh<double> tanh_;
    check_layer(tanh_, random_tensor<double>({2, 2, 3, 3}, rng, -2, 2), plain_fwd, free_bwd, rng);
    MaxPool2<double> pool;
    check_layer(pool, random_tensor<double>({2, 2, 4, 4}, rng), plain_fwd, free_bwd, rng);
    GlobalAvgPool<double> gap;
    check_layer(gap, random_tensor<double>({2, 3, 3, 3}, rng), plain_fwd, free_bwd, rng);
}

TEST(Layers, SkipLeavesParameterGradientsUntouched) {
    std::mt19937_64 rng(11);
    Conv2d<double> conv(2, 2, 3, 1, 1);
    randomize(conv, rng);
    Conv2d<double>::Cache c;
    auto x = random_tensor<double>({1, 2, 4, 4}, rng);
    auto y = conv.forward(x, &c);
    conv.backward(random_tensor<double>(y.shape(), rng), c, ParamGrads::skip);
    for (double g : conv.weight.grad.vec()) EXPECT_EQ(g, 0.0);
    for (double g : conv.bias.grad.vec()) EXPECT_EQ(g, 0.0);
}

TEST(Adam, FirstStepMovesEachWeightByLearningRate) {
    Param<double> p(Shape{1, 3, 1, 1});
    p.grad[0] = 0.5;
    p.grad[1] = -2;
    p.grad[2] = 0;
    Adam<double> opt(AdamSettings{0.1, 0.9, 0.999, 1e-8});
    opt.step({&p});
    EXPECT_NEAR(p.value[0], -0.1, 1e-6);
    EXPECT_NEAR(p.value[1], 0.1, 1e-6);
    EXPECT_EQ(p.value[2], 0.0);
    EXPECT_EQ(opt.steps(), 1);
}

TEST(Adam, ReboundToDifferentListIsRejected) {
    Param<double> a(Shape{1, 1, 1, 1}), b(Shape{1, 1, 1, 1});
    Adam<double> opt;
    opt.step({&a});
    EXPECT_THROW(opt.step({&a, &b}), ShapeError);
}
