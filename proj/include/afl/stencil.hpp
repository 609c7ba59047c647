#pragma once

#include <cassert>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "error.hpp"
#include "grid.hpp"

namespace afl {

enum class StencilKind { derivative, filter };

/// One explicit periodic stencil acting along a single grid axis.
/// Coefficients are stored dimensionless at offsets [-half_width, half_width];
/// `scale` carries the 1/dx of derivatives.
struct StencilOperator {
    int half_width = 0;
    std::vector<double> coeffs; // size 2*half_width + 1, index j + half_width
    int axis = 0;
    double scale = 1.0;
    StencilKind kind = StencilKind::derivative;

    double coeff(int j) const { return coeffs[static_cast<std::size_t>(j + half_width)]; }
    int width() const { return 2 * half_width + 1; }
};

namespace detail {

/// Visits every 1-d line of the grid along `axis` as (base offset, stride).
template <class Fn>
inline void for_each_line(const Grid& g, int axis, Fn&& fn) {
    if (g.ndim == 1) {
        fn(static_cast<std::size_t>(0), static_cast<std::size_t>(1));
        return;
    }
    const std::size_t n0 = static_cast<std::size_t>(g.n[0]);
    const std::size_t n1 = static_cast<std::size_t>(g.n[1]);
    if (axis == 0) {
        for (std::size_t j = 0; j < n1; ++j) fn(j, n1);
    } else {
        for (std::size_t i = 0; i < n0; ++i) fn(i * n1, static_cast<std::size_t>(1));
    }
}

inline void check_apply_args(const StencilOperator& op, const Grid& g, std::size_t in_size,
                             std::size_t out_size) {
    if (op.axis < 0 || op.axis >= g.ndim)
        throw ValidationError("stencil: axis " + std::to_string(op.axis) +
                              " does not exist on this grid");
    if (in_size != g.cells() || out_size != g.cells())
        throw ValidationError("stencil: array size does not match grid cell count");
    if (g.n[op.axis] < op.width())
        throw ValidationError("stencil: axis " + std::to_string(op.axis) + " extent " +
                              std::to_string(g.n[op.axis]) + " is narrower than the stencil (" +
                              std::to_string(op.width()) + " points)");
}

} // namespace detail

/// out = D in (gather form). Derivatives accumulate antisymmetric pairs
/// c_j*(a[i+j] - a[i-j]) so constant fields map to exact zeros; filters
/// accumulate plain ascending offsets, which makes the scatter transpose
/// below bit-identical for symmetric coefficients. in and out must not alias.
template <class T>
inline void apply(const StencilOperator& op, const Grid& g, std::span<const T> in,
                  std::span<T> out) {
    detail::check_apply_args(op, g, in.size(), out.size());
    assert(in.data() != out.data());
    const int na = g.n[op.axis];
    const int hw = op.half_width;
    const double s = op.scale;
    if (op.kind == StencilKind::derivative) {
        detail::for_each_line(g, op.axis, [&](std::size_t base, std::size_t stride) {
            for (int i = 0; i < na; ++i) {
                T acc{};
                for (int j = 1; j <= hw; ++j) {
                    int ip = i + j;
                    if (ip >= na) ip -= na;
                    int im = i - j;
                    if (im < 0) im += na;
                    acc += op.coeff(j) * (in[base + static_cast<std::size_t>(ip) * stride] -
                                          in[base + static_cast<std::size_t>(im) * stride]);
                }
                out[base + static_cast<std::size_t>(i) * stride] = s * acc;
            }
        });
    } else {
        // Sources are visited in ascending memory order, the same order in
        // which the scatter transpose deposits them; for the symmetric filter
        // coefficients the two routes are then bit-identical.
        detail::for_each_line(g, op.axis, [&](std::size_t base, std::size_t stride) {
            for (int i = 0; i < na; ++i) {
                const int lo = i - hw;
                const int hi = i + hw;
                T acc{};
                if (lo < 0) {
                    for (int m = 0; m <= hi; ++m)
                        acc += op.coeff(m - i) * in[base + static_cast<std::size_t>(m) * stride];
                    for (int m = na + lo; m < na; ++m)
                        acc += op.coeff(m - na - i) * in[base + static_cast<std::size_t>(m) * stride];
                } else if (hi >= na) {
                    for (int m = 0; m <= hi - na; ++m)
                        acc += op.coeff(m + na - i) * in[base + static_cast<std::size_t>(m) * stride];
                    for (int m = lo; m < na; ++m)
                        acc += op.coeff(m - i) * in[base + static_cast<std::size_t>(m) * stride];
                } else {
                    for (int m = lo; m <= hi; ++m)
                        acc += op.coeff(m - i) * in[base + static_cast<std::size_t>(m) * stride];
                }
                out[base + static_cast<std::size_t>(i) * stride] = s * acc;
            }
        });
    }
}

/// out = D^T in, built by scattering rows: entry i of the input adds
/// scale*c_j into out[i+j]. With the summation order fixed this is the
/// transpose of the dense assembly of `apply` to rounding, and exactly equal
/// to `apply` for symmetric (filter) coefficients.
template <class T>
inline void apply_transpose(const StencilOperator& op, const Grid& g, std::span<const T> in,
                            std::span<T> out) {
    detail::check_apply_args(op, g, in.size(), out.size());
    assert(in.data() != out.data());
    const int na = g.n[op.axis];
    const int hw = op.half_width;
    for (auto& x : out) x = T{};
    detail::for_each_line(g, op.axis, [&](std::size_t base, std::size_t stride) {
        for (int i = 0; i < na; ++i) {
            const T v = in[base + static_cast<std::size_t>(i) * stride];
            for (int j = -hw; j <= hw; ++j) {
                int ii = i + j;
                if (ii < 0) ii += na;
                if (ii >= na) ii -= na;
                out[base + static_cast<std::size_t>(ii) * stride] += op.coeff(j) * v;
            }
        }
    });
    if (op.scale != 1.0)
        for (auto& x : out) x *= op.scale;
}

/// Sixth-order central first derivative (seven points), or a caller-supplied
/// antisymmetric half stencil for dispersion-optimized variants.
inline StencilOperator build_derivative(int order, int axis, const Grid& g,
                                        std::string_view variant = "central6",
                                        std::span<const double> custom_half = {}) {
    if (axis < 0 || axis >= g.ndim)
        throw ValidationError("build_derivative: axis " + std::to_string(axis) +
                              " does not exist on this grid");
    std::vector<double> half;
    if (variant == "central6") {
        if (order != 6)
            throw ValidationError("build_derivative: the central6 variant is sixth order");
        half = {3.0 / 4.0, -3.0 / 20.0, 1.0 / 60.0};
    } else if (variant == "drp") {
        if (custom_half.empty())
            throw ValidationError("build_derivative: drp variant needs a half-stencil coefficient list");
        half.assign(custom_half.begin(), custom_half.end());
    } else {
        throw ValidationError("build_derivative: unknown variant '" + std::string(variant) + "'");
    }
    StencilOperator op;
    op.half_width = static_cast<int>(half.size());
    op.axis = axis;
    op.scale = 1.0 / g.dx[axis];
    op.kind = StencilKind::derivative;
    op.coeffs.assign(static_cast<std::size_t>(2 * op.half_width + 1), 0.0);
    for (int j = 1; j <= op.half_width; ++j) {
        op.coeffs[static_cast<std::size_t>(op.half_width + j)] = half[static_cast<std::size_t>(j - 1)];
        op.coeffs[static_cast<std::size_t>(op.half_width - j)] = -half[static_cast<std::size_t>(j - 1)];
    }
    if (g.n[axis] < op.width())
        throw ValidationError("build_derivative: axis " + std::to_string(axis) + " extent " +
                              std::to_string(g.n[axis]) + " cannot carry a " +
                              std::to_string(op.width()) + "-point stencil");
    return op;
}

/// Tenth-order eleven-point explicit low-pass filter F = I - strength*H.
/// H is the fifth power of the undivided second difference scaled so the
/// Nyquist mode maps to one; its coefficients are exact binary fractions.
inline StencilOperator build_filter(int order, int axis, const Grid& g, double strength = 1.0) {
    if (order != 10)
        throw ValidationError("build_filter: only the tenth-order filter is provided");
    if (axis < 0 || axis >= g.ndim)
        throw ValidationError("build_filter: axis " + std::to_string(axis) +
                              " does not exist on this grid");
    if (!(strength > 0.0) || strength > 1.0)
        throw ValidationError("build_filter: strength must lie in (0, 1]");
    if (g.n[axis] < 11)
        throw ValidationError("build_filter: axis " + std::to_string(axis) + " extent " +
                              std::to_string(g.n[axis]) + " is narrower than eleven points");
    // binomial(10, 5+j) alternating in sign, normalized by 2^10
    static constexpr double binom[6] = {252.0, 210.0, 120.0, 45.0, 10.0, 1.0};
    StencilOperator op;
    op.half_width = 5;
    op.axis = axis;
    op.scale = 1.0;
    op.kind = StencilKind::filter;
    op.coeffs.assign(11, 0.0);
    for (int j = -5; j <= 5; ++j) {
        const double h = ((j % 2 == 0) ? 1.0 : -1.0) * binom[j < 0 ? -j : j] / 1024.0;
        op.coeffs[static_cast<std::size_t>(j + 5)] = (j == 0 ? 1.0 : 0.0) - strength * h;
    }
    return op;
}

} // namespace afl
