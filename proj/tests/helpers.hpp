#pragma once

// Shared fixtures and independent oracles for the test suite. Everything in
// this header recomputes expected values from first principles so that the
// library code under test never certifies itself.

#include <cmath>
#include <random>
#include <span>
#include <vector>

#include "afl/field.hpp"
#include "afl/grid.hpp"
#include "afl/stencil.hpp"

namespace testutil {

inline std::vector<double> random_vector(std::size_t n, std::uint64_t seed, double lo = -1.0,
                                         double hi = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> v(n);
    for (auto& x : v) x = dist(rng);
    return v;
}

/// Dense n-by-n matrix of a periodic stencil, assembled row by row straight
/// from the coefficient definition.
inline std::vector<std::vector<double>> dense_stencil_matrix(const afl::StencilOperator& op,
                                                             int n) {
    std::vector<std::vector<double>> D(static_cast<std::size_t>(n),
                                       std::vector<double>(static_cast<std::size_t>(n), 0.0));
    for (int i = 0; i < n; ++i)
        for (int j = -op.half_width; j <= op.half_width; ++j) {
            const int col = ((i + j) % n + n) % n;
            D[static_cast<std::size_t>(i)][static_cast<std::size_t>(col)] += op.scale * op.coeff(j);
        }
    return D;
}

inline std::vector<double> dense_matvec(const std::vector<std::vector<double>>& A,
                                        std::span<const double> x) {
    std::vector<double> y(A.size(), 0.0);
    for (std::size_t i = 0; i < A.size(); ++i)
        for (std::size_t j = 0; j < A[i].size(); ++j) y[i] += A[i][j] * x[j];
    return y;
}

inline std::vector<std::vector<double>> dense_transpose(const std::vector<std::vector<double>>& A) {
    std::vector<std::vector<double>> T(A[0].size(), std::vector<double>(A.size(), 0.0));
    for (std::size_t i = 0; i < A.size(); ++i)
        for (std::size_t j = 0; j < A[i].size(); ++j) T[j][i] = A[i][j];
    return T;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

/// Smooth strictly-physical random state: low-pass filtered noise around the
/// quiescent background, amplitude small enough to keep rho and p positive.
inline afl::StateField random_smooth_state(const afl::Grid& g, const afl::FluidParams& par,
                                           std::uint64_t seed, double amplitude = 0.05) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    afl::StateField f(g);
    const double p0 = afl::background_pressure(par);
    std::vector<double> noise(g.cells()), work(g.cells());
    auto smooth = [&](std::span<double> out) {
        for (auto& x : noise) x = dist(rng);
        std::span<const double> src(noise);
        for (int axis = 0; axis < g.ndim; ++axis) {
            auto filt = afl::build_filter(10, axis, g, 1.0);
            afl::apply(filt, g, src, std::span<double>(work));
            afl::apply(filt, g, std::span<const double>(work), out);
            src = out;
        }
        if (g.ndim == 0) std::copy(noise.begin(), noise.end(), out.begin());
    };
    std::vector<double> s(g.cells());
    smooth(s);
    for (std::size_t c = 0; c < g.cells(); ++c) f.rho()[c] = 1.0 + amplitude * s[c];
    for (int d = 0; d < g.ndim; ++d) {
        smooth(s);
        for (std::size_t c = 0; c < g.cells(); ++c) f.mom(d)[c] = amplitude * s[c];
    }
    smooth(s);
    for (std::size_t c = 0; c < g.cells(); ++c) f.pres()[c] = p0 * (1.0 + amplitude * s[c]);
    return f;
}

} // namespace testutil
