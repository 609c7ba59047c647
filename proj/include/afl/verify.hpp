#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "control.hpp"
#include "chaos.hpp"
#include "error.hpp"
#include "sensitivity.hpp"
#include "timeloop.hpp"
#include "vec.hpp"

namespace afl {

/// One line of the machine-readable verification report. `pass` is fixed at
/// insertion; `op` records the comparison that produced it ("<" or ">").
struct CheckLine {
    std::string test;
    double metric = 0.0;
    double threshold = 0.0;
    std::string op = "<";
    bool pass = false;
};

/// Flat pass/fail report, serialized as a JSON array so downstream tooling
/// can consume it without a bespoke parser.
struct VerifyReport {
    std::vector<CheckLine> lines;

    void check_below(std::string name, double metric, double threshold) {
        lines.push_back({std::move(name), metric, threshold, "<", metric < threshold});
    }
    void check_above(std::string name, double metric, double threshold) {
        lines.push_back({std::move(name), metric, threshold, ">", metric > threshold});
    }

    bool all_pass() const {
        for (const auto& l : lines)
            if (!l.pass) return false;
        return true;
    }

    std::string to_json() const {
        std::ostringstream os;
        os.precision(17);
        os << "[\n";
        for (std::size_t i = 0; i < lines.size(); ++i) {
            const auto& l = lines[i];
            os << "  {\"test\": \"" << l.test << "\", \"metric\": " << l.metric
               << ", \"threshold\": " << l.threshold << ", \"op\": \"" << l.op
               << "\", \"pass\": " << (l.pass ? "true" : "false") << "}";
            os << (i + 1 < lines.size() ? ",\n" : "\n");
        }
        os << "]\n";
        return os.str();
    }
};

/// Relative transpose defect of one probe pair:
///   |<(dR/du) a, b> - <a, (dR/du)^T b>|
/// normalized by the norm product of the factors, the scale of the summed
/// terms, so a cancellation-prone inner product does not inflate the defect.
/// Zero probes are defect-free exactly.
template <class System>
double transpose_defect(const System& sys, double t, long s, std::span<const double> state,
                        std::span<const double> a, std::span<const double> b) {
    const std::size_t n = sys.state_size();
    if (a.size() != n || b.size() != n || state.size() != n)
        throw ValidationError("transpose defect: probe sizes do not match the state");
    std::vector<double> ja(n), jtb(n);
    sys.rhs_tangent(t, s, state, a, nullptr, ja);
    sys.rhs_adjoint(t, s, state, b, jtb);
    const double d1 = dot(std::span<const double>(ja), b);
    const double d2 = dot(a, std::span<const double>(jtb));
    const double mag = std::max(norm2(std::span<const double>(ja)) * norm2(b),
                                norm2(a) * norm2(std::span<const double>(jtb)));
    if (mag == 0.0) return 0.0;
    return std::abs(d1 - d2) / mag;
}

/// Max relative transpose defect over `trials` random probe pairs drawn
/// uniformly from [-1, 1]^n. The identity must hold at machine precision
/// for the adjoint sweep to be trustworthy.
template <class System>
double dot_product_test(const System& sys, std::span<const double> state, int trials,
                        std::uint64_t seed) {
    if (trials < 1) throw ValidationError("dot product test: need at least one trial");
    const std::size_t n = sys.state_size();
    std::mt19937_64 prng(seed);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    std::vector<double> a(n), b(n);
    double worst = 0.0;
    for (int k = 0; k < trials; ++k) {
        for (auto& x : a) x = unit(prng);
        for (auto& x : b) x = unit(prng);
        worst = std::max(worst, transpose_defect(sys, 0.0, 0, state, a, b));
    }
    return worst;
}

/// Derivative of a scalar analytic function by one complex evaluation,
/// Im(f(x + ih))/h; no subtraction, so no cancellation at tiny h.
template <class F>
double complex_step_derivative(F&& f, double x, double h = 1e-30) {
    if (!(h > 0.0)) throw ValidationError("complex step: h must be positive");
    const std::complex<double> z(x, h);
    return std::imag(f(z)) / h;
}

/// Compares the tangent right-hand side against the complexified one for a
/// unit perturbation of entry `component`; returns the max entry deviation
/// relative to the largest tangent entry.
template <class System>
double complex_step_test(const System& sys, std::span<const double> state, std::size_t component,
                         double h = 1e-30) {
    const std::size_t n = sys.state_size();
    if (state.size() != n) throw ValidationError("complex step test: state has the wrong length");
    if (component >= n) throw ValidationError("complex step test: component index out of range");
    if (!(h > 0.0)) throw ValidationError("complex step test: h must be positive");

    std::vector<double> e(n, 0.0), tan(n);
    e[component] = 1.0;
    sys.rhs_tangent(0.0, 0, state, e, nullptr, tan);

    std::vector<std::complex<double>> uc(n);
    for (std::size_t i = 0; i < n; ++i) uc[i] = {state[i], 0.0};
    uc[component].imag(h);
    std::vector<std::complex<double>> rc(n);
    sys.rhs_complex(0.0, 0, uc, nullptr, h, rc);

    double scale = max_abs(std::span<const double>(tan));
    if (scale == 0.0) scale = 1.0;
    double worst = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        worst = std::max(worst, std::abs(std::imag(rc[i]) / h - tan[i]) / scale);
    return worst;
}

struct GradientIdentity {
    double lhs = 0.0;    ///< adjoint route: <grad J, perturbation>
    double rhs = 0.0;    ///< tangent route: Jdot of the same perturbation
    double digits = 0.0; ///< matching significant digits, +inf when both vanish
};

/// Runs the same cost functional through the adjoint and the tangent engine
/// for one control perturbation (and optional initial-state perturbation)
/// and reports how many significant digits the two routes share.
template <class System, class Cost>
GradientIdentity gradient_identity_test(System& sys, const RKScheme& rk,
                                        const IntegrateOptions& opt, std::span<const double> u0,
                                        Cost& cost, const ControlParameterization* xdot,
                                        std::span<const double> v0 = {}) {
    GradientIdentity out;

    TrajectoryStore store(TrajectoryStore::Mode::store_all, rk.stages);
    run_cost_forward(sys, rk, opt, u0, cost, &store);
    const auto adj = integrate_adjoint(sys, rk, opt, store, cost);

    out.lhs = 0.0;
    if (xdot) {
        if (!adj.has_gradient)
            throw ValidationError("gradient identity: control perturbation given "
                                  "but the system has no control attached");
        const auto gp = pack_control(adj.gradient);
        const auto dp = pack_control(*xdot);
        if (gp.size() != dp.size())
            throw ValidationError("gradient identity: perturbation does not match "
                                  "the control layout");
        out.lhs += dot(std::span<const double>(gp), std::span<const double>(dp));
    }
    if (!v0.empty())
        out.lhs += dot(std::span<const double>(adj.initial_sensitivity), v0);

    cost.reset();
    std::vector<double> vz;
    std::span<const double> v = v0;
    if (v0.empty()) {
        vz.assign(u0.size(), 0.0);
        v = vz;
    }
    const auto tan = integrate_tangent(sys, rk, opt, u0, v, xdot, &cost);
    out.rhs = tan.jdot;

    const double mag = std::max(std::abs(out.lhs), std::abs(out.rhs));
    if (mag == 0.0)
        out.digits = std::numeric_limits<double>::infinity();
    else {
        const double gap = std::abs(out.lhs - out.rhs) / mag;
        out.digits = gap == 0.0 ? std::numeric_limits<double>::infinity() : -std::log10(gap);
    }
    return out;
}

struct BlowupPoint {
    double horizon = 0.0;
    long n_substeps = 0;
    double jdot_tangent = 0.0;
    double jdot_fd = 0.0;
    double rel_gap = 0.0;
    bool tangent_overflow = false;
    long overflow_substep = -1;       ///< first sub-step with a non-finite tangent norm
    std::vector<double> t;            ///< sub-step times of the norm series
    std::vector<double> ydot_norm;    ///< tangent norm history
};

struct BlowupStudy {
    std::vector<BlowupPoint> points;
    double growth_rate = 0.0;      ///< fitted d log|Ydot|/dt on the longest horizon
    double growth_r_squared = 0.0;
};

struct BlowupOptions {
    double dt = 0.01;              ///< iteration step (sub-step = dt / stages)
    double fd_eps = 1e-6;          ///< finite-difference step along the direction
    double growth_fit_frac = 0.2;  ///< fit log growth over t >= frac * max horizon
    bool filter = true;
};

/// Runs the tangent engine and a forward-difference clone of the same cost
/// derivative over a ladder of horizons. The two agree while the dynamics
/// stay correlated and bifurcate beyond the predictability horizon; the
/// tangent norm history exposes the exponential growth that causes it.
/// A tangent overflow is recorded as the blow-up point, not an error.
/// `make_cost(n_substeps)` must build a fresh cost for each horizon.
template <class System, class CostFactory>
BlowupStudy blowup_study(System& sys, const RKScheme& rk, std::span<const double> horizons,
                         std::span<const double> u0, const ControlParameterization& xdot,
                         CostFactory&& make_cost, const BlowupOptions& bopt = {}) {
    if (horizons.empty()) throw ValidationError("blowup study: no horizons given");
    for (std::size_t i = 1; i < horizons.size(); ++i)
        if (!(horizons[i] > horizons[i - 1]))
            throw ValidationError("blowup study: horizons must increase strictly");
    if (!(bopt.dt > 0.0)) throw ValidationError("blowup study: dt must be positive");

    BlowupStudy out;
    const std::vector<double> zero(u0.size(), 0.0);
    for (double T : horizons) {
        BlowupPoint p;
        p.horizon = T;
        const long iters = std::lround(T / bopt.dt);
        if (iters < 1) throw ValidationError("blowup study: horizon shorter than one step");
        p.n_substeps = iters * rk.stages;

        IntegrateOptions opt;
        opt.dt = bopt.dt;
        opt.n_substeps = p.n_substeps;
        opt.filter = bopt.filter;

        auto cost = make_cost(p.n_substeps);
        const auto tan = integrate_tangent(sys, rk, opt, u0, zero, &xdot, &cost);
        p.jdot_tangent = tan.jdot;
        const double dt_sub = opt.dt / rk.stages;
        p.t.resize(tan.ydot_norm.size());
        for (std::size_t i = 0; i < p.t.size(); ++i) p.t[i] = dt_sub * static_cast<double>(i);
        p.ydot_norm = tan.ydot_norm;
        for (std::size_t i = 0; i < p.ydot_norm.size(); ++i)
            if (!std::isfinite(p.ydot_norm[i])) {
                p.tangent_overflow = true;
                p.overflow_substep = static_cast<long>(i);
                break;
            }

        auto cost_fd = make_cost(p.n_substeps);
        p.jdot_fd = fd_directional(sys, rk, opt, u0, xdot, bopt.fd_eps, cost_fd);

        // normalized by the smaller magnitude: while the routes agree this is
        // the usual relative error, and a blow-up on either side pushes it
        // past one instead of saturating at two
        if (!std::isfinite(p.jdot_tangent) || !std::isfinite(p.jdot_fd)) {
            p.rel_gap = std::numeric_limits<double>::infinity();
        } else {
            const double diff = std::abs(p.jdot_tangent - p.jdot_fd);
            const double small = std::min(std::abs(p.jdot_tangent), std::abs(p.jdot_fd));
            p.rel_gap = diff == 0.0 ? 0.0
                        : small == 0.0 ? std::numeric_limits<double>::infinity()
                                       : diff / small;
        }
        out.points.push_back(std::move(p));
    }

    // exponential growth rate of the tangent norm on the longest horizon,
    // fitted past the start-up window and before any overflow
    const auto& last = out.points.back();
    const double t0 = bopt.growth_fit_frac * last.horizon;
    std::vector<double> ft, fy;
    for (std::size_t i = 0; i < last.ydot_norm.size(); ++i) {
        const double y = last.ydot_norm[i];
        if (last.t[i] < t0 || !std::isfinite(y) || y <= 0.0) continue;
        ft.push_back(last.t[i]);
        fy.push_back(std::log(y));
    }
    if (ft.size() >= 2) {
        const auto fit = line_fit(ft, fy);
        out.growth_rate = fit.slope;
        out.growth_r_squared = fit.r_squared;
    }
    return out;
}

} // namespace afl
