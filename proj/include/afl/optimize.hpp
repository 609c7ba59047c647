#pragma once

#include <cmath>
#include <cstddef>
#include <deque>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "error.hpp"
#include "vec.hpp"

namespace afl {

struct LineSearchError : RuntimeError {
    using RuntimeError::RuntimeError;
};

struct LBFGSOptions {
    int memory = 8;           ///< pair depth m; 0 reduces to steepest descent
    double c1 = 1e-4;         ///< Armijo (sufficient decrease) constant
    double c2 = 0.9;          ///< curvature constant
    double alpha0 = 1.0;      ///< first trial step of every line search
    int max_iters = 100;
    double grad_tol = 1e-8;   ///< stop once the gradient norm drops below this
    int max_line_evals = 25;  ///< objective evaluations per line search, NaN retries included
};

/// Curvature-filtered ring of (dx, dg) pairs realizing the inverse-Hessian
/// product through the two-loop recursion.
class LBFGSState {
public:
    explicit LBFGSState(const LBFGSOptions& opt = {}) : opt_(opt) {
        if (opt.memory < 0) throw ValidationError("lbfgs: memory depth must be non-negative");
        if (!(opt.c1 > 0.0) || !(opt.c2 > opt.c1) || !(opt.c2 < 1.0))
            throw ValidationError("lbfgs: Wolfe constants need 0 < c1 < c2 < 1");
        if (!(opt.alpha0 > 0.0)) throw ValidationError("lbfgs: initial step must be positive");
        if (opt.max_line_evals < 1)
            throw ValidationError("lbfgs: line search needs a positive evaluation budget");
    }

    const LBFGSOptions& options() const { return opt_; }
    std::size_t pairs() const { return mem_.size(); }

    /// Admit a step/gradient-change pair; rejects (and discards) the pair
    /// unless the curvature condition <dx, dg> > 0 holds.
    bool admit(std::span<const double> dx, std::span<const double> dg) {
        if (dx.size() != dg.size()) throw ValidationError("lbfgs: pair length mismatch");
        const double curv = dot(dx, dg);
        if (!(curv > 0.0)) return false;
        if (opt_.memory == 0) return true;
        mem_.push_back({std::vector<double>(dx.begin(), dx.end()),
                        std::vector<double>(dg.begin(), dg.end()), 1.0 / curv});
        if (mem_.size() > static_cast<std::size_t>(opt_.memory)) mem_.pop_front();
        return true;
    }

    struct Pair {
        std::vector<double> dx, dg;
        double rho;
    };
    const std::deque<Pair>& memory() const { return mem_; }

private:
    LBFGSOptions opt_;
    std::deque<Pair> mem_;
};

/// Two-loop recursion: d = -H g with the initial Hessian scaled by
/// gamma = <dx, dg> / <dg, dg> of the newest pair; empty memory gives -g.
inline std::vector<double> lbfgs_direction(const LBFGSState& state, std::span<const double> g) {
    for (double v : g)
        if (!std::isfinite(v))
            throw ValidationError(
                "lbfgs: gradient has non-finite entries (sensitivity blow-up upstream?)");
    std::vector<double> q(g.begin(), g.end());
    const auto& mem = state.memory();
    std::vector<double> a(mem.size());
    for (std::size_t i = mem.size(); i-- > 0;) {
        a[i] = mem[i].rho * dot(mem[i].dx, q);
        axpy(-a[i], std::span<const double>(mem[i].dg), std::span<double>(q));
    }
    if (!mem.empty()) {
        const auto& newest = mem.back();
        scale(std::span<double>(q), dot(newest.dx, newest.dg) / dot(newest.dg, newest.dg));
    }
    for (std::size_t i = 0; i < mem.size(); ++i) {
        const double b = mem[i].rho * dot(mem[i].dg, q);
        axpy(a[i] - b, std::span<const double>(mem[i].dx), std::span<double>(q));
    }
    scale(std::span<double>(q), -1.0);
    return q;
}

struct WolfeOutcome {
    double alpha = 0.0;
    double j = 0.0;
    std::vector<double> x, g;
    int evaluations = 0;
};

/// Bracket-and-zoom line search enforcing the strong Wolfe conditions
///   phi(a) <= phi(0) + c1 a phi'(0)   and   |phi'(a)| <= c2 |phi'(0)|.
/// A non-finite objective or gradient pulls the trial back toward the last
/// healthy point; running out of evaluations raises LineSearchError.
/// `eval(x, g_out) -> j` must fill the gradient at x.
template <class F>
WolfeOutcome wolfe_search(F&& eval, std::span<const double> x0, std::span<const double> d,
                          double j0, std::span<const double> g0, const LBFGSOptions& opt) {
    const double dphi0 = dot(g0, d);
    if (!(dphi0 < 0.0)) throw ValidationError("line search: not a descent direction");
    const std::size_t n = x0.size();

    WolfeOutcome out;
    out.x.resize(n);
    out.g.resize(n);
    auto phi = [&](double alpha, double& dphi) {
        for (std::size_t i = 0; i < n; ++i) out.x[i] = x0[i] + alpha * d[i];
        const double j = eval(std::span<const double>(out.x), std::span<double>(out.g));
        ++out.evaluations;
        dphi = std::numeric_limits<double>::quiet_NaN();
        if (!std::isfinite(j)) return std::numeric_limits<double>::quiet_NaN();
        for (double v : out.g)
            if (!std::isfinite(v)) return std::numeric_limits<double>::quiet_NaN();
        dphi = dot(out.g, d);
        return j;
    };
    auto armijo = [&](double alpha, double j) { return j <= j0 + opt.c1 * alpha * dphi0; };
    auto accept = [&](double alpha, double j) {
        out.alpha = alpha;
        out.j = j;
        return std::move(out);
    };

    // bracketing phase: march out until the minimizer is straddled
    double a_prev = 0.0, j_prev = j0;
    double a = opt.alpha0;
    double a_lo = -1.0, a_hi = -1.0, j_lo = 0.0;
    int healthy = 0;
    while (out.evaluations < opt.max_line_evals) {
        double dphi_a;
        const double j_a = phi(a, dphi_a);
        if (!std::isfinite(j_a)) {
            const double pulled = 0.5 * (a_prev + a);
            if (!(pulled > a_prev) || pulled == a) break;
            a = pulled;
            continue;
        }
        ++healthy;
        if (!armijo(a, j_a) || (healthy > 1 && j_a >= j_prev)) {
            a_lo = a_prev;
            j_lo = j_prev;
            a_hi = a;
            break;
        }
        if (std::abs(dphi_a) <= -opt.c2 * dphi0) return accept(a, j_a);
        if (dphi_a >= 0.0) {
            a_lo = a;
            j_lo = j_a;
            a_hi = a_prev;
            break;
        }
        a_prev = a;
        j_prev = j_a;
        a *= 2.0;
        if (a > 1e8) break;
    }
    if (a_lo < 0.0)
        throw LineSearchError("line search failed: no acceptable step within the evaluation budget");

    // zoom phase: bisect the bracket, keeping a_lo the best Armijo point
    while (out.evaluations < opt.max_line_evals) {
        const double a_mid = 0.5 * (a_lo + a_hi);
        if (a_mid == a_lo || a_mid == a_hi) break;
        double dphi_a;
        const double j_a = phi(a_mid, dphi_a);
        if (!std::isfinite(j_a) || !armijo(a_mid, j_a) || j_a >= j_lo) {
            a_hi = a_mid;
            continue;
        }
        if (std::abs(dphi_a) <= -opt.c2 * dphi0) return accept(a_mid, j_a);
        if (dphi_a * (a_hi - a_lo) >= 0.0) a_hi = a_lo;
        a_lo = a_mid;
        j_lo = j_a;
    }
    throw LineSearchError("line search failed: no acceptable step within the evaluation budget");
}

struct OptimizeRecord {
    int iteration = 0;
    double j = 0.0;
    double grad_norm = 0.0;
    double alpha = 0.0;  ///< accepted step length (0 on the initial row)
    int evaluations = 0; ///< objective evaluations spent on this iteration
};

struct OptimizeResult {
    std::vector<double> x; ///< best iterate (last accepted)
    double j = 0.0;
    std::vector<double> g;
    std::vector<OptimizeRecord> history; ///< row 0 is the starting point
    int iterations = 0;                  ///< accepted steps
    int skipped_pairs = 0;               ///< curvature-rejected memory updates
    bool converged = false;
    std::string stop_reason;
};

/// Driver: L-BFGS direction + Wolfe search until the gradient tolerance,
/// the iteration budget, or a failed line search (which returns the best
/// iterate reached so far). Evaluator failures other than NaN propagate.
template <class F>
OptimizeResult optimize_control(F&& eval, std::span<const double> x0,
                                const LBFGSOptions& opt = {}) {
    if (opt.max_iters < 0) throw ValidationError("optimize: iteration budget must be non-negative");
    LBFGSState state(opt);

    OptimizeResult res;
    res.x.assign(x0.begin(), x0.end());
    res.g.resize(res.x.size());
    res.j = eval(std::span<const double>(res.x), std::span<double>(res.g));
    if (!std::isfinite(res.j))
        throw RuntimeError("optimize: objective is not finite at the starting point");
    res.history.push_back({0, res.j, norm2(res.g), 0.0, 1});

    std::vector<double> dx(res.x.size()), dg(res.x.size());
    for (int it = 1; it <= opt.max_iters; ++it) {
        if (norm2(res.g) <= opt.grad_tol) {
            res.converged = true;
            res.stop_reason = "gradient tolerance reached";
            break;
        }
        auto d = lbfgs_direction(state, res.g);
        if (!(dot(d, res.g) < 0.0)) {
            // numerically degenerate memory; fall back to steepest descent
            d.assign(res.g.begin(), res.g.end());
            scale(std::span<double>(d), -1.0);
        }
        WolfeOutcome w;
        try {
            w = wolfe_search(eval, res.x, d, res.j, res.g, opt);
        } catch (const LineSearchError& e) {
            res.stop_reason = e.what();
            break;
        }
        for (std::size_t i = 0; i < res.x.size(); ++i) {
            dx[i] = w.x[i] - res.x[i];
            dg[i] = w.g[i] - res.g[i];
        }
        if (!state.admit(dx, dg)) ++res.skipped_pairs;
        res.x = std::move(w.x);
        res.j = w.j;
        res.g = std::move(w.g);
        res.iterations = it;
        res.history.push_back({it, res.j, norm2(res.g), w.alpha, w.evaluations});
    }
    if (res.stop_reason.empty()) {
        if (norm2(res.g) <= opt.grad_tol) {
            res.converged = true;
            res.stop_reason = "gradient tolerance reached";
        } else {
            res.stop_reason = "iteration limit reached";
        }
    }
    return res;
}

} // namespace afl
