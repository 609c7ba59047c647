#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"
#include "field.hpp"
#include "grid.hpp"
#include "sensitivity.hpp"
#include "stencil.hpp"
#include "timeloop.hpp"
#include "vec.hpp"

namespace afl {

struct LineFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r_squared = 1.0;
};

/// Least-squares line through (t, y); r_squared is 1 for a constant series.
inline LineFit line_fit(std::span<const double> t, std::span<const double> y) {
    if (t.size() != y.size() || t.size() < 2)
        throw ValidationError("line fit: need at least two matching samples");
    const double n = static_cast<double>(t.size());
    double mt = 0.0, my = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) {
        mt += t[i];
        my += y[i];
    }
    mt /= n;
    my /= n;
    double stt = 0.0, sty = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) {
        const double dt = t[i] - mt;
        const double dy = y[i] - my;
        stt += dt * dt;
        sty += dt * dy;
        syy += dy * dy;
    }
    if (!(stt > 0.0)) throw ValidationError("line fit: abscissae are all identical");
    LineFit f;
    f.slope = sty / stt;
    f.intercept = my - f.slope * mt;
    const double ss_res = syy - f.slope * sty;
    f.r_squared = syy > 0.0 ? std::max(0.0, 1.0 - ss_res / syy) : 1.0;
    return f;
}

struct MleOptions {
    /// Stage/filter settings for the underlying runs; n_substeps and s_begin
    /// are derived from the time windows below.
    IntegrateOptions integrate;
    double t_transient = 0.0; ///< discarded warm-up (attractor approach + tangent alignment)
    double t_fit = 0.0;       ///< fit window length
    int renorm_substeps = 100;
    std::uint64_t seed = 7;
    double warn_threshold = 0.98;
};

struct MleResult {
    double lambda = 0.0;
    double r_squared = 0.0;
    bool fit_warning = false;
    /// Accumulated log tangent growth at every sub-step (the (t, log-growth)
    /// series; renormalization factors already folded back in).
    std::vector<double> t;
    std::vector<double> log_growth;
};

/// Maximal Lyapunov exponent from tangent growth: propagates a random unit
/// tangent alongside the nonlinear trajectory, renormalizing every
/// renorm_substeps sub-steps while accumulating the log factors, then fits
/// log ||v|| against time over the fit window.
template <class System>
MleResult estimate_mle(System& sys, const RKScheme& rk, const MleOptions& opt,
                       std::span<const double> u0) {
    if (!(opt.t_fit > 0.0)) throw ValidationError("mle: fit window must be positive");
    if (opt.t_transient < 0.0) throw ValidationError("mle: transient must be non-negative");
    if (!(opt.integrate.dt > 0.0)) throw ValidationError("mle: dt must be positive");
    if (opt.renorm_substeps < rk.stages || opt.renorm_substeps % rk.stages != 0)
        throw ValidationError("mle: renormalization interval must be a whole number of iterations");

    const double dt_sub = opt.integrate.dt / rk.stages;
    const double t_total = opt.t_transient + opt.t_fit;
    long n_total = static_cast<long>(std::ceil(t_total / dt_sub - 1e-9));
    n_total += (rk.stages - n_total % rk.stages) % rk.stages;
    if (n_total < rk.stages) n_total = rk.stages;

    std::mt19937_64 prng(opt.seed);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    std::vector<double> u(u0.begin(), u0.end());
    std::vector<double> v(u.size());
    for (auto& x : v) x = unit(prng);
    const double nv0 = norm2(v);
    if (!(nv0 > 0.0)) throw RuntimeError("mle: degenerate initial perturbation");
    scale(std::span<double>(v), 1.0 / nv0);

    MleResult res;
    res.t.reserve(static_cast<std::size_t>(n_total) + 1);
    res.log_growth.reserve(static_cast<std::size_t>(n_total) + 1);
    res.t.push_back(0.0);
    res.log_growth.push_back(0.0);

    double acc = 0.0;
    long s = 0;
    while (s < n_total) {
        const long len = std::min<long>(opt.renorm_substeps, n_total - s);
        IntegrateOptions copt = opt.integrate;
        copt.s_begin = s;
        copt.n_substeps = len;
        auto chunk = integrate_tangent(sys, rk, copt, u, v);
        for (long i = 1; i <= len; ++i) {
            const double nn = chunk.ydot_norm[static_cast<std::size_t>(i)];
            if (!std::isfinite(nn) || !(nn > 0.0))
                throw RuntimeError("mle: tangent norm left the finite range before "
                                   "renormalization; use a smaller renormalization interval");
            res.t.push_back(static_cast<double>(s + i) * dt_sub);
            res.log_growth.push_back(acc + std::log(nn));
        }
        u = std::move(chunk.state);
        v = std::move(chunk.tangent);
        const double nv = norm2(v);
        acc += std::log(nv);
        scale(std::span<double>(v), 1.0 / nv);
        s += len;
    }

    // fit over t >= t_transient
    std::vector<double> ft, fy;
    for (std::size_t i = 0; i < res.t.size(); ++i) {
        if (res.t[i] >= opt.t_transient - 1e-12) {
            ft.push_back(res.t[i]);
            fy.push_back(res.log_growth[i]);
        }
    }
    const auto fit = line_fit(ft, fy);
    res.lambda = fit.slope;
    res.r_squared = fit.r_squared;
    res.fit_warning = fit.r_squared < opt.warn_threshold;
    return res;
}

/// Viscous dissipation rate of the velocity fluctuations,
///   eps = nu * mean_x( dui/dxj dui/dxj + dui/dxj duj/dxi ),
/// with the fluctuation u' = m/rho - mean_velocity. The mean velocity holds
/// ndim components of cells() entries each (a Reynolds average over time).
inline double dissipation_rate(const Grid& g, const FluidParams& par,
                               std::span<const double> state,
                               std::span<const double> mean_velocity) {
    if (state.size() != g.state_size())
        throw ValidationError("dissipation rate: state has the wrong length");
    const std::size_t nc = g.cells();
    const int nd = g.ndim;
    if (mean_velocity.size() != static_cast<std::size_t>(nd) * nc)
        throw ValidationError("dissipation rate: mean velocity fields are missing or mis-sized");

    const auto u = state_view<const double>(g, state);
    std::vector<std::vector<double>> vel(static_cast<std::size_t>(nd),
                                         std::vector<double>(nc));
    for (int d = 0; d < nd; ++d) {
        const auto m = u.m[static_cast<std::size_t>(d)];
        for (std::size_t c = 0; c < nc; ++c)
            vel[static_cast<std::size_t>(d)][c] =
                m[c] / u.rho[c] - mean_velocity[static_cast<std::size_t>(d) * nc + c];
    }

    std::vector<StencilOperator> deriv;
    for (int axis = 0; axis < nd; ++axis) deriv.push_back(build_derivative(6, axis, g));

    double acc = 0.0;
    std::vector<double> gij(nc), gji(nc);
    for (int i = 0; i < nd; ++i) {
        for (int j = 0; j < nd; ++j) {
            apply(deriv[static_cast<std::size_t>(j)], g,
                  std::span<const double>(vel[static_cast<std::size_t>(i)]),
                  std::span<double>(gij));
            apply(deriv[static_cast<std::size_t>(i)], g,
                  std::span<const double>(vel[static_cast<std::size_t>(j)]),
                  std::span<double>(gji));
            for (std::size_t c = 0; c < nc; ++c) acc += gij[c] * gij[c] + gij[c] * gji[c];
        }
    }
    return par.mu() * acc / static_cast<double>(nc);
}

/// eta = (nu^3 / eps)^(1/4)
inline double kolmogorov_length(double nu, double eps) {
    if (!(nu > 0.0)) throw ValidationError("kolmogorov length: viscosity must be positive");
    if (!(eps > 0.0)) throw ValidationError("kolmogorov length: dissipation must be positive");
    return std::pow(nu * nu * nu / eps, 0.25);
}

struct ReSweepPoint {
    double re = 0.0;
    double lambda = 0.0;
    double r_squared = 0.0;
};

struct ReSweepResult {
    std::vector<ReSweepPoint> points;
    /// slope of log|lambda| against log Re
    double exponent = 0.0;
};

/// Runs one exponent estimate per Reynolds number (run_case(re) -> MleResult)
/// and fits the power law |lambda| ~ Re^exponent over the sweep.
template <class F>
ReSweepResult mle_re_sweep(F&& run_case, std::span<const double> re_values) {
    if (re_values.size() < 3)
        throw ValidationError("re sweep: need at least three Reynolds numbers");
    for (std::size_t i = 0; i < re_values.size(); ++i) {
        if (!(re_values[i] > 0.0))
            throw ValidationError("re sweep: Reynolds numbers must be positive");
        if (i > 0 && re_values[i] <= re_values[i - 1])
            throw ValidationError("re sweep: Reynolds numbers must increase");
    }
    ReSweepResult res;
    std::vector<double> lre, lla;
    for (double re : re_values) {
        const MleResult m = run_case(re);
        res.points.push_back({re, m.lambda, m.r_squared});
        if (!std::isfinite(m.lambda) || m.lambda == 0.0)
            throw RuntimeError("re sweep: exponent estimate at Re " + std::to_string(re) +
                               " is degenerate");
        lre.push_back(std::log(re));
        lla.push_back(std::log(std::abs(m.lambda)));
    }
    res.exponent = line_fit(lre, lla).slope;
    return res;
}

} // namespace afl
