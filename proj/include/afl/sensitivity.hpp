#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <new>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "control.hpp"
#include "error.hpp"
#include "timeloop.hpp"
#include "vec.hpp"

namespace afl {

/// Runs the nonlinear forward problem from u0, feeding every recorded
/// sub-step to the cost (after resetting it) and finalizing it. Returns the
/// final state; `store` (nullable) receives the trajectory for a later
/// backward sweep.
template <class System, class Cost>
std::vector<double> run_cost_forward(System& sys, const RKScheme& rk, const IntegrateOptions& opt,
                                     std::span<const double> u0, Cost& cost,
                                     TrajectoryStore* store = nullptr) {
    std::vector<double> u(u0.begin(), u0.end());
    cost.reset();
    integrate(sys, rk, opt, std::span<double>(u), store,
              [&](long s, std::span<const double> uu) { cost.collect(s, uu); });
    cost.finalize();
    return u;
}

struct AdjointOptions {
    /// Probe every transposed operator application in the sweep against its
    /// forward counterpart through a random inner-product identity.
    bool instrument = false;
    std::uint64_t probe_seed = 0x51ab1eull;
    /// Record the squared fine-region gradient term per sub-step.
    bool record_gradient_energy = false;
};

struct AdjointResult {
    /// Cost gradient with respect to the control knots; only meaningful when
    /// has_gradient is set (the system had a control attached).
    ControlParameterization gradient;
    bool has_gradient = false;
    /// omega at the first sub-step: the sensitivity of the cost to the
    /// initial state.
    std::vector<double> initial_sensitivity;
    /// Sum of squared fine-region gradient terms, one entry per sub-step in
    /// ascending order (unscaled by the cell volume).
    std::vector<double> gradient_energy;
    /// Instrumentation: worst relative defect of the probed inner-product
    /// identities, and how many were checked.
    double max_transpose_defect = 0.0;
    long transpose_checks = 0;
};

namespace detail {

/// Hands out primal states for the backward sweep. A store_all trajectory is
/// served directly; a checkpointed one is regenerated block by block, and
/// every replayed block end must reproduce the stored anchor exactly.
template <class System>
class StateProvider {
public:
    StateProvider(System& sys, const RKScheme& rk, const IntegrateOptions& opt,
                  const TrajectoryStore& store)
        : sys_(sys), rk_(rk), opt_(opt), store_(store),
          block_(TrajectoryStore::Mode::store_all, rk.stages) {}

    std::span<const double> state(long s) {
        if (store_.mode() == TrajectoryStore::Mode::store_all || store_.has(s))
            return store_.state(s);
        if (!loaded_ || s < lo_ || s > hi_) load_block(s);
        return block_.state(s);
    }

private:
    void load_block(long s) {
        const long stride = store_.checkpoint_substride();
        const long lo = (s / stride) * stride;
        const long hi = std::min(lo + stride, opt_.s_begin + opt_.n_substeps);
        std::vector<double> u(store_.state(lo).begin(), store_.state(lo).end());
        IntegrateOptions ropt = opt_;
        ropt.s_begin = lo;
        ropt.n_substeps = hi - lo;
        ropt.check_states = false;
        block_.clear();
        integrate(sys_, rk_, ropt, std::span<double>(u), &block_);
        const auto want = store_.state(hi);
        const auto got = block_.state(hi);
        for (std::size_t i = 0; i < want.size(); ++i)
            if (want[i] != got[i])
                throw RuntimeError("adjoint sweep: block replay from sub-step " + std::to_string(lo) +
                                   " does not reproduce the stored state at sub-step " +
                                   std::to_string(hi) + " (first difference at entry " +
                                   std::to_string(i) +
                                   "); the trajectory was produced with different settings");
        lo_ = lo;
        hi_ = hi;
        loaded_ = true;
    }

    System& sys_;
    const RKScheme& rk_;
    const IntegrateOptions& opt_;
    const TrajectoryStore& store_;
    TrajectoryStore block_;
    long lo_ = 0, hi_ = -1;
    bool loaded_ = false;
};

} // namespace detail

/// Backward sweep over a recorded trajectory. Walking the sub-step chain in
/// reverse it maintains the pair (omega, xi):
///
///   omega_N = dJ_N,               xi_N = beta_{N-1} F_N' omega_N
///   omega_s = F_{s+1}' omega_{s+1} + dt A'(u_s) xi_{s+1} + dJ_s
///   xi_s    = alpha_s xi_{s+1} + beta_{s-1} F_s' omega_s        (s >= 1)
///
/// where A' is the transposed right-hand-side linearization, F_s' the
/// transposed filter where the forward pass filtered at sub-step s (identity
/// elsewhere), and dJ_s the cost derivative. The control gradient collects
/// dt * (d/dc)<xi_{s+1}, R(u_s, c)> through the temporal weights on the fly;
/// omega at the first sub-step is the initial-state sensitivity.
///
/// `cost` must be the finalized object fed by the forward run that produced
/// `store`; the stage/filter schedule in `opt` must match that run exactly.
template <class System, class Cost>
AdjointResult integrate_adjoint(System& sys, const RKScheme& rk, const IntegrateOptions& opt,
                                const TrajectoryStore& store, const Cost& cost,
                                const AdjointOptions& aopt = {}) {
    detail::validate_integrate(opt, rk.stages, sys.state_size(), sys.state_size());
    if (!cost.finalized())
        throw ValidationError(
            "adjoint sweep: the cost must be collected over the forward run and finalized first");

    const long s0 = opt.s_begin;
    const long sN = s0 + opt.n_substeps;
    const std::size_t n = sys.state_size();
    const int ns = rk.stages;
    const double dt_sub = opt.dt / ns;

    AdjointResult res;
    const bool with_control = sys.has_control();
    std::optional<GradientAccumulator> acc;
    std::vector<double> fine;
    if (with_control) {
        acc.emplace(sys.control_layout());
        fine.resize(sys.control_layout().fine_cells());
    }
    if (aopt.record_gradient_energy)
        res.gradient_energy.assign(static_cast<std::size_t>(opt.n_substeps), 0.0);

    try {
        detail::StateProvider<System> traj(sys, rk, opt, store);

        std::mt19937_64 prng(aopt.probe_seed);
        std::uniform_real_distribution<double> unit(-1.0, 1.0);
        std::vector<double> probe, image;
        auto note = [&](double d1, double d2) {
            const double den = std::max(std::abs(d1), std::abs(d2));
            if (den > 0.0)
                res.max_transpose_defect = std::max(res.max_transpose_defect, std::abs(d1 - d2) / den);
            ++res.transpose_checks;
        };
        // x <- F' x, probed against <F p, x> = <p, F' x> when instrumented.
        auto filter_transpose = [&](std::span<double> x) {
            if (aopt.instrument) {
                probe.resize(n);
                image.resize(n);
                for (auto& v : probe) v = unit(prng);
                copy_into(std::span<const double>(probe), std::span<double>(image));
                sys.apply_filter(std::span<double>(image));
                const double d1 = dot(image, x);
                sys.apply_filter_transpose(x);
                note(d1, dot(probe, x));
            } else {
                sys.apply_filter_transpose(x);
            }
        };
        // out <- A'(u) x, probed against <A p, x> = <p, A' x>.
        auto adjoint_rhs = [&](double t, long s, std::span<const double> u,
                               std::span<const double> x, std::span<double> out) {
            sys.rhs_adjoint(t, s, u, x, out);
            if (aopt.instrument) {
                probe.resize(n);
                image.resize(n);
                for (auto& v : probe) v = unit(prng);
                sys.rhs_tangent(t, s, u, std::span<const double>(probe), nullptr,
                                std::span<double>(image));
                note(dot(image, x), dot(probe, out));
            }
        };

        std::vector<double> omega(n, 0.0), xi(n, 0.0), adj(n), tmp(n);

        cost.add_dJ_du(sN, traj.state(sN), std::span<double>(omega));
        copy_into(std::span<const double>(omega), std::span<double>(xi));
        if (sys.filtered() && filter_applies(opt, ns, sN)) filter_transpose(xi);
        scale(std::span<double>(xi), rk.beta[static_cast<std::size_t>((sN - 1) % ns)]);

        for (long s = sN - 1; s >= s0; --s) {
            const auto us = traj.state(s);
            const double ts = static_cast<double>(s) * dt_sub;

            // control term of sub-step s+1; it pairs xi_{s+1} with u_s
            if (with_control) {
                sys.control_gradient_term(ts, s, us, std::span<const double>(xi),
                                          std::span<double>(fine));
                acc->add(s, fine, opt.dt);
                if (aopt.record_gradient_energy)
                    res.gradient_energy[static_cast<std::size_t>(s - s0)] = dot(fine, fine);
            }

            if (sys.filtered() && filter_applies(opt, ns, s + 1)) filter_transpose(omega);
            adjoint_rhs(ts, s, us, std::span<const double>(xi), std::span<double>(adj));
            axpy(opt.dt, std::span<const double>(adj), std::span<double>(omega));
            cost.add_dJ_du(s, us, std::span<double>(omega));

            if (s > s0) {
                copy_into(std::span<const double>(omega), std::span<double>(tmp));
                if (sys.filtered() && filter_applies(opt, ns, s)) filter_transpose(tmp);
                scale(std::span<double>(xi), rk.alpha[static_cast<std::size_t>(s % ns)]);
                axpy(rk.beta[static_cast<std::size_t>((s - 1) % ns)],
                     std::span<const double>(tmp), std::span<double>(xi));
            }
        }

        res.initial_sensitivity.assign(omega.begin(), omega.end());
        if (with_control) {
            res.gradient.layout = sys.control_layout();
            res.gradient.snapshots = acc->finalize();
            res.has_gradient = true;
        }
    } catch (const std::bad_alloc&) {
        throw RuntimeError("adjoint sweep: out of memory holding trajectory blocks; rerun with a "
                           "checkpointed trajectory store or a smaller checkpoint interval");
    }
    return res;
}

struct TangentResult {
    /// Directional cost derivative (zero when no cost was attached).
    double jdot = 0.0;
    /// Tangent norm at every sub-step from the first to the last, inclusive.
    std::vector<double> ydot_norm;
    std::vector<double> state;   ///< final primal state
    std::vector<double> tangent; ///< final tangent state
};

/// Forward tangent recursion in lockstep with a primal replay: the tangent
/// registers follow the same stage/filter chain as the state,
///
///   kv = alpha kv + dt (A(u) v + dR/dc cdot),   v += beta kv,   v <- F v
///
/// with the linearization point u advancing alongside. `xdot` (nullable) is
/// the control-space direction, `v0` (may be empty = zero) the initial
/// tangent. The cost, when given, is reset, fed both the primal and tangent
/// states at every sub-step, and finalized; the tangent can overflow on
/// chaotic runs without aborting (the norm history records the blow-up).
template <class System, class Cost>
TangentResult integrate_tangent(System& sys, const RKScheme& rk, const IntegrateOptions& opt,
                                std::span<const double> u0, std::span<const double> v0,
                                const ControlParameterization* xdot, Cost* cost) {
    detail::validate_integrate(opt, rk.stages, sys.state_size(), u0.size());
    if (!v0.empty() && v0.size() != u0.size())
        throw ValidationError("tangent sweep: the initial tangent does not match the state size");
    const std::size_t n = u0.size();
    const double dt_sub = opt.dt / rk.stages;

    std::vector<double> u(u0.begin(), u0.end());
    std::vector<double> v(n, 0.0);
    if (!v0.empty()) copy_into(v0, std::span<double>(v));
    std::vector<double> k(n, 0.0), kv(n, 0.0), r(n), rv(n);

    TangentResult res;
    res.ydot_norm.reserve(static_cast<std::size_t>(opt.n_substeps) + 1);

    if (cost) {
        cost->reset();
        cost->collect(opt.s_begin, std::span<const double>(u));
        cost->collect_tangent(opt.s_begin, std::span<const double>(u), std::span<const double>(v));
    }
    res.ydot_norm.push_back(norm2(v));

    for (long s = opt.s_begin + 1; s <= opt.s_begin + opt.n_substeps; ++s) {
        const int stage = static_cast<int>((s - 1) % rk.stages);
        const double t_prev = static_cast<double>(s - 1) * dt_sub;
        sys.rhs_tangent(t_prev, s - 1, std::span<const double>(u), std::span<const double>(v),
                        xdot, std::span<double>(rv));
        sys.rhs(t_prev, s - 1, std::span<const double>(u), std::span<double>(r));
        stage_update(std::span<double>(k), rk.alpha[static_cast<std::size_t>(stage)], opt.dt,
                     std::span<const double>(r));
        stage_update(std::span<double>(kv), rk.alpha[static_cast<std::size_t>(stage)], opt.dt,
                     std::span<const double>(rv));
        axpy(rk.beta[static_cast<std::size_t>(stage)], std::span<const double>(k),
             std::span<double>(u));
        axpy(rk.beta[static_cast<std::size_t>(stage)], std::span<const double>(kv),
             std::span<double>(v));
        if (sys.filtered() && filter_applies(opt, rk.stages, s)) {
            sys.apply_filter(std::span<double>(u));
            sys.apply_filter(std::span<double>(v));
        }
        if (opt.check_states && s % rk.stages == 0) {
            try {
                sys.check_state(std::span<const double>(u));
            } catch (const RuntimeError& e) {
                throw RuntimeError("tangent sweep failed at iteration " +
                                   std::to_string(s / rk.stages) + " (sub-step " +
                                   std::to_string(s) + "): " + e.what());
            }
        }
        if (cost) {
            cost->collect(s, std::span<const double>(u));
            cost->collect_tangent(s, std::span<const double>(u), std::span<const double>(v));
        }
        res.ydot_norm.push_back(norm2(v));
    }

    if (cost) {
        cost->finalize();
        res.jdot = cost->tangent_value();
    }
    res.state = std::move(u);
    res.tangent = std::move(v);
    return res;
}

namespace detail {
/// Stand-in for the cost-free tangent overload.
struct NoCost {
    void reset() {}
    void collect(long, std::span<const double>) {}
    void collect_tangent(long, std::span<const double>, std::span<const double>) {}
    void finalize() {}
    double tangent_value() const { return 0.0; }
};
} // namespace detail

/// Tangent propagation without a cost functional (norm history only).
template <class System>
TangentResult integrate_tangent(System& sys, const RKScheme& rk, const IntegrateOptions& opt,
                                std::span<const double> u0, std::span<const double> v0,
                                const ControlParameterization* xdot = nullptr) {
    return integrate_tangent(sys, rk, opt, u0, v0, xdot, static_cast<detail::NoCost*>(nullptr));
}

/// One-sided finite-difference directional derivative (J(X + eps Xdot) -
/// J(X)) / eps through two nonlinear runs, the comparison baseline that
/// drifts off the exact tangent once the dynamics are chaotic. The system's
/// control is restored afterwards.
template <class System, class Cost>
double fd_directional(System& sys, const RKScheme& rk, const IntegrateOptions& opt,
                      std::span<const double> u0, const ControlParameterization& xdot,
                      double eps, Cost& cost) {
    if (!(eps > 0.0)) throw ValidationError("fd_directional: epsilon must be positive");
    if (!sys.has_control())
        throw ValidationError("fd_directional: the system has no control attached");
    const ControlParameterization base = sys.control();
    auto x = pack_control(base);
    const auto d = pack_control(xdot);
    if (x.size() != d.size())
        throw ValidationError("fd_directional: direction does not match the control layout");

    double j0 = 0.0, j1 = 0.0;
    try {
        run_cost_forward(sys, rk, opt, u0, cost);
        j0 = cost.value();
        axpy(eps, std::span<const double>(d), std::span<double>(x));
        ControlParameterization pert = base;
        unpack_control(x, pert);
        sys.set_control(pert);
        run_cost_forward(sys, rk, opt, u0, cost);
        j1 = cost.value();
    } catch (...) {
        sys.set_control(base);
        throw;
    }
    sys.set_control(base);
    return (j1 - j0) / eps;
}

} // namespace afl
