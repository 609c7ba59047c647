#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"
#include "field.hpp"
#include "grid.hpp"

namespace afl {

/// How the reference pressure in the objective is obtained: the temporal mean
/// of the run being measured, or a mean stored from a separate baseline run.
enum class MeanMode { running, frozen };

/// Inclusive index box selecting the measurement volume.
struct CostRegion {
    std::array<int, kMaxDim> lo{};
    std::array<int, kMaxDim> hi{};
};

/// Time-and-space integral of squared pressure fluctuations over a box,
/// ties = sum_s sum_x (p_s(x) - pbar(x))^2 * dt * dV, with pbar the per-cell
/// temporal mean over the sub-step interval (running mode) or a stored
/// baseline (frozen mode).
///
/// Use: reset(), collect(s, u) for every sub-step of the forward run (and
/// collect_tangent(s, u, v) right after collect when a tangent is carried),
/// finalize(), then value() / tangent_value() / add_dJ_du(). In running mode
/// the per-sub-step derivative 2(p_s - pbar) is the exact total derivative
/// because the deviations sum to zero over the interval, so the coupling
/// through the mean cancels.
///
/// Internally pressures are accumulated relative to the first collected
/// sample per cell; the variance is invariant under that shift but the sums
/// stay at fluctuation scale, which keeps the value accurate when the
/// fluctuations are many orders below the background pressure.
class PressureCost {
public:
    PressureCost(const Grid& g, const CostRegion& box, long s_begin, long s_end,
                 double quadrature_dt, MeanMode mode = MeanMode::running)
        : grid_(g), s_begin_(s_begin), s_end_(s_end), mode_(mode) {
        if (s_begin < 0 || s_end < s_begin)
            throw ValidationError("pressure cost: interval is empty or negative");
        if (!(quadrature_dt > 0.0))
            throw ValidationError("pressure cost: quadrature step must be positive");
        scale_ = quadrature_dt * g.cell_volume();
        for (int d = 0; d < g.ndim; ++d) {
            if (box.lo[static_cast<std::size_t>(d)] < 0 ||
                box.hi[static_cast<std::size_t>(d)] >= g.n[static_cast<std::size_t>(d)] ||
                box.lo[static_cast<std::size_t>(d)] > box.hi[static_cast<std::size_t>(d)])
                throw ValidationError("pressure cost: region box leaves the grid on axis " +
                                      std::to_string(d));
        }
        if (g.ndim == 1) {
            for (int i = box.lo[0]; i <= box.hi[0]; ++i)
                cells_.push_back(static_cast<std::size_t>(i));
        } else {
            for (int i = box.lo[0]; i <= box.hi[0]; ++i)
                for (int j = box.lo[1]; j <= box.hi[1]; ++j)
                    cells_.push_back(static_cast<std::size_t>(i) *
                                         static_cast<std::size_t>(g.n[1]) +
                                     static_cast<std::size_t>(j));
        }
        if (cells_.empty()) throw ValidationError("pressure cost: region is empty");
        reset();
    }

    long interval_begin() const { return s_begin_; }
    long interval_end() const { return s_end_; }
    std::size_t region_cells() const { return cells_.size(); }
    double quadrature_scale() const { return scale_; }

    /// Frozen mode only: per-cell reference taken from a full-grid pressure
    /// field (for example the exported mean of a baseline run).
    void set_baseline(std::span<const double> pressure) {
        if (pressure.size() != grid_.cells())
            throw ValidationError("pressure cost: baseline field has the wrong length");
        baseline_.resize(cells_.size());
        for (std::size_t j = 0; j < cells_.size(); ++j) baseline_[j] = pressure[cells_[j]];
    }

    /// Record per-sub-step fluctuation samples so series() works after
    /// finalize. Off by default: it stores region_cells() doubles per sub-step.
    void keep_series(bool on) { keep_series_ = on; }

    void reset() {
        count_ = 0;
        finalized_ = false;
        value_ = tangent_ = 0.0;
        ref_.assign(cells_.size(), 0.0);
        sum_q_.assign(cells_.size(), 0.0);
        sum_qq_.assign(cells_.size(), 0.0);
        sum_qv_.assign(cells_.size(), 0.0);
        sum_v_.assign(cells_.size(), 0.0);
        qmean_.clear();
        samples_.clear();
        series_.clear();
    }

    void collect(long s, std::span<const double> u) {
        if (s < s_begin_ || s > s_end_) return;
        auto p = pressure_of(u);
        if (mode_ == MeanMode::frozen && baseline_.empty())
            throw RuntimeError("pressure cost: frozen mode needs a baseline before collecting");
        if (count_ == 0)
            ref_ = mode_ == MeanMode::running ? gather(p) : baseline_;
        if (keep_series_) samples_.emplace_back(cells_.size());
        for (std::size_t j = 0; j < cells_.size(); ++j) {
            const double q = p[cells_[j]] - ref_[j];
            sum_q_[j] += q;
            sum_qq_[j] += q * q;
            if (keep_series_) samples_.back()[j] = q;
        }
        ++count_;
    }

    /// Accumulate the directional derivative carried by the tangent state v.
    /// Call after collect() at the same sub-step.
    void collect_tangent(long s, std::span<const double> u, std::span<const double> v) {
        if (s < s_begin_ || s > s_end_) return;
        if (count_ == 0)
            throw RuntimeError("pressure cost: collect must run before collect_tangent");
        auto p = pressure_of(u);
        auto vp = pressure_of(v);
        for (std::size_t j = 0; j < cells_.size(); ++j) {
            sum_qv_[j] += (p[cells_[j]] - ref_[j]) * vp[cells_[j]];
            sum_v_[j] += vp[cells_[j]];
        }
    }

    void finalize() {
        const long expected = s_end_ - s_begin_ + 1;
        if (count_ != expected)
            throw RuntimeError("pressure cost: interval covers " + std::to_string(expected) +
                               " sub-steps but " + std::to_string(count_) + " were collected");
        // In frozen mode the reference already is the mean, so the deviation
        // mean is not subtracted again.
        qmean_.assign(cells_.size(), 0.0);
        const double n = static_cast<double>(count_);
        double acc = 0.0, tacc = 0.0;
        for (std::size_t j = 0; j < cells_.size(); ++j) {
            if (mode_ == MeanMode::running) qmean_[j] = sum_q_[j] / n;
            acc += sum_qq_[j] - sum_q_[j] * qmean_[j];
            tacc += sum_qv_[j] - qmean_[j] * sum_v_[j];
        }
        value_ = scale_ * acc;
        tangent_ = 2.0 * scale_ * tacc;
        if (keep_series_) {
            series_.resize(samples_.size());
            for (std::size_t i = 0; i < samples_.size(); ++i) {
                double acc = 0.0;
                for (std::size_t j = 0; j < cells_.size(); ++j) {
                    const double d = samples_[i][j] - qmean_[j];
                    acc += d * d;
                }
                series_[i] = scale_ * acc;
            }
        }
        finalized_ = true;
    }

    bool finalized() const { return finalized_; }

    double value() const {
        require_finalized();
        return value_;
    }

    double tangent_value() const {
        require_finalized();
        return tangent_;
    }

    /// Instantaneous objective per collected sub-step (needs keep_series).
    const std::vector<double>& series() const {
        require_finalized();
        return series_;
    }

    /// Adds the per-sub-step derivative into a full flat state: zero in
    /// density and momentum, 2(p_s - pbar)*dt*dV on the region pressures,
    /// zero elsewhere. Sub-steps outside the interval add nothing.
    void add_dJ_du(long s, std::span<const double> u, std::span<double> out) const {
        require_finalized();
        if (s < s_begin_ || s > s_end_) return;
        auto p = pressure_of(u);
        auto po = pressure_out(out);
        for (std::size_t j = 0; j < cells_.size(); ++j) {
            const double q = p[cells_[j]] - ref_[j];
            po[cells_[j]] += 2.0 * (q - qmean_[j]) * scale_;
        }
    }

    /// Scatter the per-cell temporal mean into a full-grid pressure field
    /// (region cells only), for use as a frozen baseline of a later run.
    void write_mean(std::span<double> pressure) const {
        require_finalized();
        if (pressure.size() != grid_.cells())
            throw ValidationError("pressure cost: mean target has the wrong length");
        for (std::size_t j = 0; j < cells_.size(); ++j)
            pressure[cells_[j]] = ref_[j] + qmean_[j];
    }

private:
    std::vector<double> gather(std::span<const double> field) const {
        std::vector<double> out(cells_.size());
        for (std::size_t j = 0; j < cells_.size(); ++j) out[j] = field[cells_[j]];
        return out;
    }

    std::span<const double> pressure_of(std::span<const double> u) const {
        if (u.size() != grid_.state_size())
            throw ValidationError("pressure cost: state has the wrong length");
        return u.subspan(static_cast<std::size_t>(1 + grid_.ndim) * grid_.cells(), grid_.cells());
    }
    std::span<double> pressure_out(std::span<double> u) const {
        if (u.size() != grid_.state_size())
            throw ValidationError("pressure cost: state has the wrong length");
        return u.subspan(static_cast<std::size_t>(1 + grid_.ndim) * grid_.cells(), grid_.cells());
    }
    void require_finalized() const {
        if (!finalized_) throw RuntimeError("pressure cost: finalize has not run");
    }

    Grid grid_;
    long s_begin_, s_end_;
    MeanMode mode_;
    double scale_ = 0.0;
    std::vector<std::size_t> cells_;
    std::vector<double> baseline_;

    long count_ = 0;
    bool finalized_ = false;
    bool keep_series_ = false;
    double value_ = 0.0, tangent_ = 0.0;
    std::vector<double> ref_, sum_q_, sum_qq_, sum_qv_, sum_v_, qmean_;
    std::vector<std::vector<double>> samples_;
    std::vector<double> series_;
};

/// Weighted squared deviation from a fixed target state, summed over an
/// inclusive sub-step interval. With the interval collapsed to the final
/// sub-step this is a terminal-state objective.
class QuadraticCost {
public:
    QuadraticCost(std::vector<double> target, long s_begin, long s_end, double weight = 1.0)
        : target_(std::move(target)), s_begin_(s_begin), s_end_(s_end), weight_(weight) {
        if (target_.empty()) throw ValidationError("quadratic cost: target is empty");
        if (s_begin < 0 || s_end < s_begin)
            throw ValidationError("quadratic cost: interval is empty or negative");
    }

    long interval_begin() const { return s_begin_; }
    long interval_end() const { return s_end_; }

    void reset() {
        count_ = 0;
        finalized_ = false;
        value_ = tangent_ = 0.0;
    }

    void collect(long s, std::span<const double> u) {
        if (s < s_begin_ || s > s_end_) return;
        check_size(u.size());
        for (std::size_t i = 0; i < target_.size(); ++i) {
            const double d = u[i] - target_[i];
            value_ += weight_ * d * d;
        }
        ++count_;
    }

    void collect_tangent(long s, std::span<const double> u, std::span<const double> v) {
        if (s < s_begin_ || s > s_end_) return;
        check_size(u.size());
        check_size(v.size());
        for (std::size_t i = 0; i < target_.size(); ++i)
            tangent_ += 2.0 * weight_ * (u[i] - target_[i]) * v[i];
    }

    void finalize() {
        const long expected = s_end_ - s_begin_ + 1;
        if (count_ != expected)
            throw RuntimeError("quadratic cost: interval covers " + std::to_string(expected) +
                               " sub-steps but " + std::to_string(count_) + " were collected");
        finalized_ = true;
    }

    bool finalized() const { return finalized_; }

    double value() const {
        require_finalized();
        return value_;
    }

    double tangent_value() const {
        require_finalized();
        return tangent_;
    }

    void add_dJ_du(long s, std::span<const double> u, std::span<double> out) const {
        require_finalized();
        if (s < s_begin_ || s > s_end_) return;
        check_size(u.size());
        check_size(out.size());
        for (std::size_t i = 0; i < target_.size(); ++i)
            out[i] += 2.0 * weight_ * (u[i] - target_[i]);
    }

private:
    void check_size(std::size_t n) const {
        if (n != target_.size())
            throw ValidationError("quadratic cost: state has the wrong length");
    }
    void require_finalized() const {
        if (!finalized_) throw RuntimeError("quadratic cost: finalize has not run");
    }

    std::vector<double> target_;
    long s_begin_, s_end_;
    double weight_;
    long count_ = 0;
    bool finalized_ = false;
    double value_ = 0.0, tangent_ = 0.0;
};

} // namespace afl
