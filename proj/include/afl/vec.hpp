#pragma once

#include <cmath>
#include <cstddef>
#include <span>

namespace afl {

/// Dot product with a fixed left-to-right accumulation order. All identity
/// tests in this library rely on every caller summing in this same order.
inline double dot(std::span<const double> a, std::span<const double> b) {
    double acc = 0.0;
    const std::size_t n = a.size() < b.size() ? a.size() : b.size();
    for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline double max_abs(std::span<const double> a) {
    double m = 0.0;
    for (double x : a) {
        const double v = std::abs(x);
        if (v > m) m = v;
    }
    return m;
}

template <class T>
inline void fill(std::span<T> a, T v) {
    for (auto& x : a) x = v;
}

template <class T>
inline void copy_into(std::span<const T> src, std::span<T> dst) {
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i];
}

/// y += a*x
template <class T, class S>
inline void axpy(S a, std::span<const T> x, std::span<T> y) {
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

/// k = alpha*k + dt*r, the in-place two-register stage update.
template <class T>
inline void stage_update(std::span<T> k, double alpha, double dt, std::span<const T> r) {
    for (std::size_t i = 0; i < k.size(); ++i) k[i] = alpha * k[i] + dt * r[i];
}

template <class T>
inline void scale(std::span<T> a, double s) {
    for (auto& x : a) x *= s;
}

} // namespace afl
