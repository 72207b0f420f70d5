#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "gath/error.hpp"

namespace gath {

/// Batch-major 4-D shape (N, C, H, W). Vectors are stored as (N, F, 1, 1).
struct Shape {
    int n = 0, c = 0, h = 0, w = 0;

    std::size_t size() const { return std::size_t(n) * c * h * w; }
    std::size_t per_sample() const { return std::size_t(c) * h * w; }
    std::size_t plane() const { return std::size_t(h) * w; }
    friend bool operator==(const Shape&, const Shape&) = default;

    std::string str() const {
        std::ostringstream os;
        os << n << "x" << c << "x" << h << "x" << w;
        return os.str();
    }
};

/// Dense NCHW tensor with value semantics.
template <class T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(Shape s, T fill = T(0)) : shape_(s), data_(s.size(), fill) {}
    Tensor(int n, int c, int h, int w, T fill = T(0)) : Tensor(Shape{n, c, h, w}, fill) {}

    const Shape& shape() const { return shape_; }
    int n() const { return shape_.n; }
    int c() const { return shape_.c; }
    int h() const { return shape_.h; }
    int w() const { return shape_.w; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::span<T> span() { return data_; }
    std::span<const T> span() const { return data_; }
    std::vector<T>& vec() { return data_; }
    const std::vector<T>& vec() const { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    std::size_t index(int n, int c, int y, int x) const {
        return ((std::size_t(n) * shape_.c + c) * shape_.h + y) * shape_.w + x;
    }
    T& at(int n, int c, int y, int x) { return data_[index(n, c, y, x)]; }
    const T& at(int n, int c, int y, int x) const { return data_[index(n, c, y, x)]; }

    std::span<T> sample(int n) { return std::span<T>(data_).subspan(n * shape_.per_sample(), shape_.per_sample()); }
    std::span<const T> sample(int n) const {
        return std::span<const T>(data_).subspan(n * shape_.per_sample(), shape_.per_sample());
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
    void zero() { fill(T(0)); }

    /// Same storage, new interpretation; element count must match.
    Tensor reshaped(Shape s) const {
        if (s.size() != size()) throw ShapeError("reshape " + shape_.str() + " -> " + s.str());
        Tensor t = *this;
        t.shape_ = s;
        return t;
    }

    Tensor& operator+=(const Tensor& o) {
        check_same(o, "+=");
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
        return *this;
    }
    Tensor& operator-=(const Tensor& o) {
        check_same(o, "-=");
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
        return *this;
    }
    Tensor& operator*=(T s) {
        for (auto& v : data_) v *= s;
        return *this;
    }
    /// this += s * o
    void axpy(T s, const Tensor& o) {
        check_same(o, "axpy");
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += s * o.data_[i];
    }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
    }

    template <class U>
    Tensor<U> cast() const {
        Tensor<U> t(shape_);
        std::transform(data_.begin(), data_.end(), t.data(), [](T v) { return static_cast<U>(v); });
        return t;
    }

    friend bool operator==(const Tensor& a, const Tensor& b) { return a.shape_ == b.shape_ && a.data_ == b.data_; }

private:
    void check_same(const Tensor& o, const char* op) const {
        if (o.shape_ != shape_) throw ShapeError(std::string(op) + ": " + shape_.str() + " vs " + o.shape_.str());
    }

    Shape shape_{};
    std::vector<T> data_;
};

/// Stacks single-sample tensors (all of equal C, H, W) along the batch axis.
template <class T>
Tensor<T> stack(std::span<const Tensor<T>> items) {
    if (items.empty()) return {};
    Shape s = items.front().shape();
    int total = 0;
    for (const auto& t : items) {
        if (t.c() != s.c || t.h() != s.h || t.w() != s.w) throw ShapeError("stack: mismatched sample shapes");
        total += t.n();
    }
    Tensor<T> out(total, s.c, s.h, s.w);
    std::size_t off = 0;
    for (const auto& t : items) {
        std::copy(t.data(), t.data() + t.size(), out.data() + off);
        off += t.size();
    }
    return out;
}

/// Extracts sample `i` as a 1×C×H×W tensor.
template <class T>
Tensor<T> slice_sample(const Tensor<T>& t, int i) {
    Tensor<T> out(1, t.c(), t.h(), t.w());
    auto s = t.sample(i);
    std::copy(s.begin(), s.end(), out.data());
    return out;
}

}  // namespace gath
