#pragma once

#include <cmath>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"
#include "vec.hpp"

namespace afl {

/// Low-storage (2N) Runge-Kutta scheme in (alpha, beta) form:
///   k_s = alpha_{s-1} k_{s-1} + dt * R(u_{s-1}),   u_s = u_{s-1} + beta_{s-1} k_s
/// with alpha[0] = 0 so each time iteration is self-starting.
struct RKScheme {
    std::string name;
    int stages = 0;
    int order = 0;
    std::vector<double> alpha;
    std::vector<double> beta;
};

/// Coefficients of the stability polynomial y_N(z) = sum_j c_j z^j obtained by
/// propagating the scalar test equation y' = lambda y through one iteration.
inline std::vector<double> stability_coefficients(const RKScheme& rk) {
    const std::size_t n = static_cast<std::size_t>(rk.stages) + 1;
    std::vector<double> y(n, 0.0), k(n, 0.0), zy(n, 0.0);
    y[0] = 1.0;
    for (int s = 0; s < rk.stages; ++s) {
        // z * y
        for (std::size_t j = n - 1; j > 0; --j) zy[j] = y[j - 1];
        zy[0] = 0.0;
        for (std::size_t j = 0; j < n; ++j) k[j] = rk.alpha[static_cast<std::size_t>(s)] * k[j] + zy[j];
        for (std::size_t j = 0; j < n; ++j) y[j] += rk.beta[static_cast<std::size_t>(s)] * k[j];
    }
    return y;
}

/// Validates shape and asserts the Taylor-series match of exp(z) up to the
/// declared order on the scalar test equation.
inline RKScheme make_rk_scheme(std::string name, std::vector<double> alpha,
                               std::vector<double> beta, int order) {
    RKScheme rk;
    rk.name = std::move(name);
    rk.stages = static_cast<int>(alpha.size());
    rk.order = order;
    rk.alpha = std::move(alpha);
    rk.beta = std::move(beta);
    if (rk.stages < 1) throw ValidationError("rk scheme: needs at least one stage");
    if (rk.beta.size() != rk.alpha.size())
        throw ValidationError("rk scheme: alpha and beta must have one entry per stage");
    if (order < 1 || order > rk.stages)
        throw ValidationError("rk scheme: order must lie in [1, stages]");
    if (rk.alpha[0] != 0.0)
        throw ValidationError("rk scheme: alpha[0] must be zero (self-starting iteration)");
    const auto c = stability_coefficients(rk);
    double factorial = 1.0;
    for (int j = 0; j <= order; ++j) {
        if (j > 0) factorial *= static_cast<double>(j);
        if (std::abs(c[static_cast<std::size_t>(j)] - 1.0 / factorial) > 1e-14)
            throw ValidationError("rk scheme '" + rk.name + "': stability polynomial misses the order-" +
                                  std::to_string(order) + " Taylor term at degree " + std::to_string(j));
    }
    return rk;
}

/// Five-stage fourth-order low-storage scheme (Carpenter-Kennedy class), the
/// default integrator. The rational constants are the published ones.
inline RKScheme rk_carpenter_kennedy5() {
    return make_rk_scheme(
        "lsrk5-4",
        {0.0, -567301805773.0 / 1357537059087.0, -2404267990393.0 / 2016746695238.0,
         -3550918686646.0 / 2091501179385.0, -1275806237668.0 / 842570457699.0},
        {1432997174477.0 / 9575080441755.0, 5161836677717.0 / 13612068292357.0,
         1720146321549.0 / 2090206949498.0, 3134564353537.0 / 4481467310338.0,
         2277821191437.0 / 14882151754819.0},
        4);
}

/// Classical four-stage Runge-Kutta in Butcher form; not low-storage, kept as
/// an independent oracle for integration tests. f(t, y, out) evaluates the
/// right-hand side.
template <class F>
void rk4_classic_step(F&& f, double t, double dt, std::span<double> y) {
    const std::size_t n = y.size();
    std::vector<double> k1(n), k2(n), k3(n), k4(n), tmp(n);
    f(t, std::span<const double>(y), std::span<double>(k1));
    for (std::size_t i = 0; i < n; ++i) tmp[i] = y[i] + 0.5 * dt * k1[i];
    f(t + 0.5 * dt, std::span<const double>(tmp), std::span<double>(k2));
    for (std::size_t i = 0; i < n; ++i) tmp[i] = y[i] + 0.5 * dt * k2[i];
    f(t + 0.5 * dt, std::span<const double>(tmp), std::span<double>(k3));
    for (std::size_t i = 0; i < n; ++i) tmp[i] = y[i] + dt * k3[i];
    f(t + dt, std::span<const double>(tmp), std::span<double>(k4));
    for (std::size_t i = 0; i < n; ++i)
        y[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
}

/// Records primal states by global sub-step index. store_all keeps everything;
/// checkpoint keeps sub-steps at a fixed iteration stride (plus anything
/// forced, e.g. the final state) and the backward sweep recomputes between
/// them.
class TrajectoryStore {
public:
    enum class Mode { store_all, checkpoint };

    TrajectoryStore(Mode mode, int stages, int checkpoint_iters = 50)
        : mode_(mode), substride_(static_cast<long>(checkpoint_iters) * stages) {
        if (stages < 1) throw ValidationError("trajectory store: stages must be positive");
        if (checkpoint_iters < 1)
            throw ValidationError("trajectory store: checkpoint interval must be positive");
    }

    Mode mode() const { return mode_; }
    long checkpoint_substride() const { return substride_; }

    void record(long s, std::span<const double> u) {
        if (mode_ == Mode::store_all || s % substride_ == 0) force(s, u);
    }

    /// Keep this state regardless of mode (used for the final state).
    void force(long s, std::span<const double> u) {
        states_[s].assign(u.begin(), u.end());
    }

    bool has(long s) const { return states_.count(s) != 0; }

    std::span<const double> state(long s) const {
        auto it = states_.find(s);
        if (it == states_.end())
            throw RuntimeError("trajectory store: sub-step " + std::to_string(s) + " not recorded");
        return it->second;
    }

    const std::map<long, std::vector<double>>& states() const { return states_; }
    void clear() { states_.clear(); }

private:
    Mode mode_;
    long substride_;
    std::map<long, std::vector<double>> states_;
};

struct IntegrateOptions {
    long n_substeps = 0;    ///< multiple of the stage count
    double dt = 0.0;        ///< full time-iteration step
    bool filter = true;     ///< honor the system's filter on the schedule
    int filter_stride = 2;  ///< filter at the end of every filter_stride-th iteration
    long s_begin = 0;       ///< global sub-step index of the initial state
    bool check_states = true;
};

/// True when the filter acts at global sub-step s (the final sub-step of an
/// iteration on the schedule).
inline bool filter_applies(const IntegrateOptions& opt, int stages, long s) {
    if (!opt.filter || s % stages != 0) return false;
    const long it = s / stages - 1;
    return (it + 1) % opt.filter_stride == 0;
}

namespace detail {
inline void validate_integrate(const IntegrateOptions& opt, int stages, std::size_t state,
                               std::size_t got) {
    if (opt.n_substeps < 1) throw ValidationError("integrate: need at least one sub-step");
    if (opt.n_substeps % stages != 0)
        throw ValidationError("integrate: sub-step count must be a whole number of iterations");
    if (opt.s_begin < 0 || opt.s_begin % stages != 0)
        throw ValidationError("integrate: start offset must sit on an iteration boundary");
    if (!(opt.dt > 0.0)) throw ValidationError("integrate: dt must be positive");
    if (opt.filter_stride < 1) throw ValidationError("integrate: filter stride must be positive");
    if (got != state) throw ValidationError("integrate: state vector has the wrong length");
}
} // namespace detail

/// Advances u over opt.n_substeps sub-steps of the 2N recursion, recording
/// into `store` (nullable) and calling obs(s, u) at the initial sub-step and
/// after every update. Physical validity is checked at iteration ends.
template <class System, class Observer>
void integrate(System& sys, const RKScheme& rk, const IntegrateOptions& opt, std::span<double> u,
               TrajectoryStore* store, Observer&& obs) {
    detail::validate_integrate(opt, rk.stages, sys.state_size(), u.size());
    const double dt_sub = opt.dt / rk.stages;
    std::vector<double> k(u.size(), 0.0), r(u.size());

    if (store) store->record(opt.s_begin, u);
    obs(opt.s_begin, std::span<const double>(u));

    for (long s = opt.s_begin + 1; s <= opt.s_begin + opt.n_substeps; ++s) {
        const int stage = static_cast<int>((s - 1) % rk.stages);
        const double t_prev = static_cast<double>(s - 1) * dt_sub;
        sys.rhs(t_prev, s - 1, std::span<const double>(u), std::span<double>(r));
        stage_update(std::span<double>(k), rk.alpha[static_cast<std::size_t>(stage)], opt.dt,
                     std::span<const double>(r));
        axpy(rk.beta[static_cast<std::size_t>(stage)], std::span<const double>(k), u);
        if (sys.filtered() && filter_applies(opt, rk.stages, s)) sys.apply_filter(u);
        if (opt.check_states && s % rk.stages == 0) {
            try {
                sys.check_state(std::span<const double>(u));
            } catch (const RuntimeError& e) {
                throw RuntimeError("integration failed at iteration " +
                                   std::to_string(s / rk.stages) + " (sub-step " +
                                   std::to_string(s) + "): " + e.what());
            }
        }
        if (store) store->record(s, u);
        obs(s, std::span<const double>(u));
    }
    if (store) store->force(opt.s_begin + opt.n_substeps, u);
}

template <class System>
void integrate(System& sys, const RKScheme& rk, const IntegrateOptions& opt, std::span<double> u,
               TrajectoryStore* store = nullptr) {
    integrate(sys, rk, opt, u, store, [](long, std::span<const double>) {});
}

} // namespace afl
