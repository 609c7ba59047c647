#pragma once

#include <array>
#include <cmath>
#include <complex>
#include <span>
#include <vector>

#include "error.hpp"
#include "field.hpp"
#include "grid.hpp"
#include "stencil.hpp"
#include "vec.hpp"

namespace afl {

/// Smooth plateau that rises over a width `delta` past `k_start` and falls
/// before `k_end`; the 2*delta margins keep the ramps inside the interval.
inline double window_value(double k, double k_start, double k_end, double delta) {
    if (!(delta > 0.0)) throw ValidationError("window_value: delta must be positive");
    if (!(k_end - k_start > 4.0 * delta))
        throw ValidationError("window_value: interval is too narrow for the requested ramp width");
    return 0.5 * (std::erf((k - k_start - 2.0 * delta) / delta) -
                  std::erf((k - k_end + 2.0 * delta) / delta));
}

/// Heat-source region: a box of cells, an active time interval, and the grid
/// and step spacings that set the ramp widths (2*dx in space, 5*dt in time).
struct ControlSourceConfig {
    std::array<int, kMaxDim> box_lo{};
    std::array<int, kMaxDim> box_hi{}; // half-open
    double t_start = 0.0;
    double t_end = 0.0;
    double dt = 0.0; ///< time-iteration step, fixes the temporal ramp width

    int box_extent(int d) const { return box_hi[d] - box_lo[d]; }
};

inline void validate_control_source(const ControlSourceConfig& c, const Grid& g) {
    for (int d = 0; d < g.ndim; ++d) {
        if (c.box_lo[d] < 0 || c.box_hi[d] > g.n[d] || c.box_lo[d] >= c.box_hi[d])
            throw ValidationError("control source: box on axis " + std::to_string(d) +
                                  " does not fit inside the grid");
        const double delta = 2.0 * g.dx[d];
        if (!((c.box_hi[d] - c.box_lo[d]) * g.dx[d] > 4.0 * delta))
            throw ValidationError("control source: box on axis " + std::to_string(d) +
                                  " is too narrow for the spatial ramps (needs more than 8 cells)");
    }
    if (!(c.dt > 0.0)) throw ValidationError("control source: dt must be positive");
    if (!(c.t_end - c.t_start > 20.0 * c.dt))
        throw ValidationError("control source: active interval shorter than the temporal ramps");
}

inline double temporal_window(const ControlSourceConfig& c, double t) {
    return window_value(t, c.t_start, c.t_end, 5.0 * c.dt);
}

/// Full-grid window s(x, t): the product of one spatial plateau per axis and
/// the temporal plateau. Multiplies the raw control before it enters the
/// pressure equation.
inline std::vector<double> control_window(const ControlSourceConfig& c, const Grid& g, double t) {
    validate_control_source(c, g);
    std::array<std::vector<double>, kMaxDim> axis_w;
    for (int d = 0; d < g.ndim; ++d) {
        axis_w[d].resize(static_cast<std::size_t>(g.n[d]));
        const double delta = 2.0 * g.dx[d];
        const double lo = c.box_lo[d] * g.dx[d];
        const double hi = c.box_hi[d] * g.dx[d];
        for (int i = 0; i < g.n[d]; ++i) axis_w[d][static_cast<std::size_t>(i)] = window_value(i * g.dx[d], lo, hi, delta);
    }
    const double wt = temporal_window(c, t);
    std::vector<double> w(g.cells());
    if (g.ndim == 1) {
        for (int i = 0; i < g.n[0]; ++i) w[static_cast<std::size_t>(i)] = axis_w[0][static_cast<std::size_t>(i)] * wt;
    } else {
        for (int i = 0; i < g.n[0]; ++i)
            for (int j = 0; j < g.n[1]; ++j)
                w[static_cast<std::size_t>(i * g.n[1] + j)] = axis_w[0][static_cast<std::size_t>(i)] * axis_w[1][static_cast<std::size_t>(j)] * wt;
    }
    return w;
}

namespace detail {

/// Slices one scratch vector into equal per-field blocks.
template <class T>
class Scratch {
public:
    Scratch(std::size_t blocks, std::size_t block_size)
        : store_(blocks * block_size, T{}), block_(block_size) {}
    std::span<T> take() {
        auto s = std::span<T>(store_).subspan(used_ * block_, block_);
        ++used_;
        return s;
    }

private:
    std::vector<T> store_;
    std::size_t block_;
    std::size_t used_ = 0;
};

} // namespace detail

/// Compressible Navier-Stokes right-hand side in (rho, m, p) form on a
/// periodic grid. `source` (optional, grid sized) is the windowed heat
/// control; it enters the pressure equation only, multiplied by rho*R_gas.
/// The scalar type carries the whole computation, so instantiating with
/// std::complex<double> yields the complex-step clone of the same algorithm.
template <class T>
void ns_rhs(const Grid& g, const FluidParams& par, std::span<const StencilOperator> deriv,
            StateView<const T> u, std::span<const T> source, StateView<T> out) {
    if (deriv.size() != static_cast<std::size_t>(g.ndim))
        throw ValidationError("ns_rhs: need one derivative operator per axis");
    if (!source.empty() && source.size() != g.cells())
        throw ValidationError("ns_rhs: source array does not match the grid");
    const std::size_t nc = g.cells();
    const int nd = g.ndim;
    const double mu = par.mu();
    const double kappa = par.heat_conduction();
    const double gm1 = par.gamma - 1.0;

    detail::Scratch<T> mem(static_cast<std::size_t>(2 * nd * nd + nd + 4), nc);
    std::array<std::span<T>, kMaxDim> vel;
    std::array<std::array<std::span<T>, kMaxDim>, kMaxDim> grad; // grad[i][j] = d u_i / d x_j
    std::array<std::array<std::span<T>, kMaxDim>, kMaxDim> tau;
    for (int d = 0; d < nd; ++d) vel[d] = mem.take();
    for (int i = 0; i < nd; ++i)
        for (int j = 0; j < nd; ++j) grad[i][j] = mem.take();
    for (int i = 0; i < nd; ++i)
        for (int j = 0; j < nd; ++j) tau[i][j] = mem.take();
    std::span<T> divu = mem.take();
    std::span<T> temp = mem.take();
    std::span<T> work1 = mem.take();
    std::span<T> work2 = mem.take();

    for (int d = 0; d < nd; ++d)
        for (std::size_t c = 0; c < nc; ++c) vel[d][c] = u.m[d][c] / u.rho[c];
    for (int i = 0; i < nd; ++i)
        for (int j = 0; j < nd; ++j)
            apply<T>(deriv[static_cast<std::size_t>(j)], g, vel[i], grad[i][j]);
    for (std::size_t c = 0; c < nc; ++c) {
        divu[c] = grad[0][0][c];
        for (int d = 1; d < nd; ++d) divu[c] += grad[d][d][c];
    }
    for (int i = 0; i < nd; ++i)
        for (int j = 0; j < nd; ++j) {
            if (i == j)
                for (std::size_t c = 0; c < nc; ++c)
                    tau[i][j][c] = mu * (grad[i][j][c] + grad[j][i][c] - (2.0 / 3.0) * divu[c]);
            else
                for (std::size_t c = 0; c < nc; ++c) tau[i][j][c] = mu * (grad[i][j][c] + grad[j][i][c]);
        }

    // mass: d rho/dt = -d m_i/d x_i
    fill<T>(out.rho, T{});
    for (int i = 0; i < nd; ++i) {
        apply<T>(deriv[static_cast<std::size_t>(i)], g, u.m[i], work1);
        for (std::size_t c = 0; c < nc; ++c) out.rho[c] -= work1[c];
    }

    // momentum: d m_i/dt = -d p/d x_i - d(m_j u_i)/d x_j + d tau_ij/d x_j
    for (int i = 0; i < nd; ++i) {
        apply<T>(deriv[static_cast<std::size_t>(i)], g, u.p, work1);
        for (std::size_t c = 0; c < nc; ++c) out.m[i][c] = -work1[c];
        for (int j = 0; j < nd; ++j) {
            for (std::size_t c = 0; c < nc; ++c) work1[c] = u.m[j][c] * vel[i][c];
            apply<T>(deriv[static_cast<std::size_t>(j)], g, std::span<const T>(work1), work2);
            for (std::size_t c = 0; c < nc; ++c) out.m[i][c] -= work2[c];
        }
        for (int j = 0; j < nd; ++j) {
            apply<T>(deriv[static_cast<std::size_t>(j)], g, std::span<const T>(tau[i][j]), work2);
            for (std::size_t c = 0; c < nc; ++c) out.m[i][c] += work2[c];
        }
    }

    // pressure: d p/dt = -d(p u_i)/d x_i + kappa d2 T - (gamma-1) p div u
    //           + (gamma-1) tau:grad u + rho R_gas source
    fill<T>(out.p, T{});
    for (int i = 0; i < nd; ++i) {
        for (std::size_t c = 0; c < nc; ++c) work1[c] = u.p[c] * vel[i][c];
        apply<T>(deriv[static_cast<std::size_t>(i)], g, std::span<const T>(work1), work2);
        for (std::size_t c = 0; c < nc; ++c) out.p[c] -= work2[c];
    }
    const double tcoef = par.gamma * par.Ma * par.Ma;
    for (std::size_t c = 0; c < nc; ++c) temp[c] = tcoef * u.p[c] / u.rho[c];
    for (int i = 0; i < nd; ++i) {
        apply<T>(deriv[static_cast<std::size_t>(i)], g, std::span<const T>(temp), work1);
        apply<T>(deriv[static_cast<std::size_t>(i)], g, std::span<const T>(work1), work2);
        for (std::size_t c = 0; c < nc; ++c) out.p[c] += kappa * work2[c];
    }
    for (std::size_t c = 0; c < nc; ++c) out.p[c] -= gm1 * u.p[c] * divu[c];
    for (int i = 0; i < nd; ++i)
        for (int j = 0; j < nd; ++j)
            for (std::size_t c = 0; c < nc; ++c) out.p[c] += gm1 * tau[i][j][c] * grad[i][j][c];
    if (!source.empty())
        for (std::size_t c = 0; c < nc; ++c) out.p[c] += u.rho[c] * par.R_gas * source[c];
}

/// The identical algorithm evaluated in complex arithmetic; pairs with
/// imaginary-part extraction for derivative checks free of subtractive
/// cancellation.
inline void ns_rhs_complex(const Grid& g, const FluidParams& par,
                           std::span<const StencilOperator> deriv,
                           StateView<const std::complex<double>> u,
                           std::span<const std::complex<double>> source,
                           StateView<std::complex<double>> out) {
    ns_rhs<std::complex<double>>(g, par, deriv, u, source, out);
}

} // namespace afl
