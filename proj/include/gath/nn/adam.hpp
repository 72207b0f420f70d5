#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "gath/nn/layers.hpp"

namespace gath::nn {

struct AdamSettings {
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Adam with bias correction. Moment buffers are bound positionally to the
/// parameter list given at each step, which must keep a stable order.
template <class T>
class Adam {
public:
    Adam() = default;
    explicit Adam(AdamSettings s) : settings_(s) {}

    /// Allocates zeroed moments for `params` if none exist yet.
    void bind(const std::vector<Param<T>*>& params) {
        if (m_.empty()) {
            for (auto* p : params) {
                m_.emplace_back(p->value.shape());
                v_.emplace_back(p->value.shape());
            }
        }
        if (m_.size() != params.size()) throw ShapeError("optimizer bound to a different parameter list");
    }

    void step(const std::vector<Param<T>*>& params) {
        bind(params);
        ++steps_;
        const double bc1 = 1.0 - std::pow(settings_.beta1, double(steps_));
        const double bc2 = 1.0 - std::pow(settings_.beta2, double(steps_));
        const double lr = settings_.learning_rate * std::sqrt(bc2) / bc1;
        const T b1 = T(settings_.beta1), b2 = T(settings_.beta2);
        for (std::size_t k = 0; k < params.size(); ++k) {
            auto& p = *params[k];
            auto& m = m_[k];
            auto& v = v_[k];
            for (std::size_t i = 0; i < p.value.size(); ++i) {
                T g = p.grad[i];
                m[i] = b1 * m[i] + (T(1) - b1) * g;
                v[i] = b2 * v[i] + (T(1) - b2) * g * g;
                p.value[i] -= T(lr * m[i] / (std::sqrt(double(v[i])) + settings_.eps));
            }
        }
    }

    AdamSettings& settings() { return settings_; }
    const AdamSettings& settings() const { return settings_; }
    std::int64_t steps() const { return steps_; }
    void set_steps(std::int64_t s) { steps_ = s; }
    std::vector<Tensor<T>>& first_moments() { return m_; }
    std::vector<Tensor<T>>& second_moments() { return v_; }
    const std::vector<Tensor<T>>& first_moments() const { return m_; }
    const std::vector<Tensor<T>>& second_moments() const { return v_; }

private:
    AdamSettings settings_;
    std::int64_t steps_ = 0;
    std::vector<Tensor<T>> m_, v_;
};

}  // namespace gath::nn
