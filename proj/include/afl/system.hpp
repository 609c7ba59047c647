#pragma once

#include <cmath>
#include <complex>
#include <numbers>
#include <span>
#include <vector>

#include "control.hpp"
#include "field.hpp"
#include "grid.hpp"
#include "ns_linearized.hpp"
#include "ns_rhs.hpp"
#include "stencil.hpp"

namespace afl {

/// Compressible flow on a periodic grid bundled with its discretization:
/// derivative and filter stencils, the windowed heat-source region, and the
/// coarse control attached to it. Exposes the evaluation interface the time
/// integrators and sensitivity sweeps expect (same shape as LorenzSystem).
///
/// Holds per-call scratch, so one instance must not be shared across threads.
class NsSystem {
public:
    NsSystem(const Grid& g, const FluidParams& par, bool use_filter = true, int deriv_order = 6,
             int filter_order = 10)
        : grid_(g), par_(par), use_filter_(use_filter) {
        par_.validate();
        for (int d = 0; d < g.ndim; ++d) {
            deriv_.push_back(build_derivative(deriv_order, d, g));
            if (use_filter_) filt_.push_back(build_filter(filter_order, d, g));
        }
        ftmp_.resize(g.cells());
    }

    const Grid& grid() const { return grid_; }
    const FluidParams& params() const { return par_; }
    std::span<const StencilOperator> derivatives() const { return deriv_; }
    std::size_t state_size() const { return grid_.state_size(); }

    /// Declare the source region. Must run before set_control; the control
    /// layout has to tile exactly this box.
    void enable_control_source(const ControlSourceConfig& cfg) {
        validate_control_source(cfg, grid_);
        src_cfg_ = cfg;
        source_enabled_ = true;

        box_cells_.clear();
        spatial_w_.clear();
        std::array<std::vector<double>, kMaxDim> axis_w;
        for (int d = 0; d < grid_.ndim; ++d) {
            const double delta = 2.0 * grid_.dx[static_cast<std::size_t>(d)];
            const double lo = cfg.box_lo[static_cast<std::size_t>(d)] * grid_.dx[static_cast<std::size_t>(d)];
            const double hi = cfg.box_hi[static_cast<std::size_t>(d)] * grid_.dx[static_cast<std::size_t>(d)];
            auto& w = axis_w[static_cast<std::size_t>(d)];
            w.resize(static_cast<std::size_t>(cfg.box_extent(d)));
            for (int i = 0; i < cfg.box_extent(d); ++i)
                w[static_cast<std::size_t>(i)] = window_value(
                    (cfg.box_lo[static_cast<std::size_t>(d)] + i) * grid_.dx[static_cast<std::size_t>(d)], lo, hi, delta);
        }
        if (grid_.ndim == 1) {
            for (int i = 0; i < cfg.box_extent(0); ++i) {
                box_cells_.push_back(static_cast<std::size_t>(cfg.box_lo[0] + i));
                spatial_w_.push_back(axis_w[0][static_cast<std::size_t>(i)]);
            }
        } else {
            for (int i = 0; i < cfg.box_extent(0); ++i)
                for (int j = 0; j < cfg.box_extent(1); ++j) {
                    box_cells_.push_back(static_cast<std::size_t>(cfg.box_lo[0] + i) *
                                             static_cast<std::size_t>(grid_.n[1]) +
                                         static_cast<std::size_t>(cfg.box_lo[1] + j));
                    spatial_w_.push_back(axis_w[0][static_cast<std::size_t>(i)] *
                                         axis_w[1][static_cast<std::size_t>(j)]);
                }
        }
        fine_.resize(box_cells_.size());
        dfine_.resize(box_cells_.size());
        src_.assign(grid_.cells(), 0.0);
        dsrc_.assign(grid_.cells(), 0.0);
        csrc_.assign(grid_.cells(), std::complex<double>(0.0, 0.0));
    }

    bool control_source_enabled() const { return source_enabled_; }
    const ControlSourceConfig& control_source() const {
        if (!source_enabled_) throw RuntimeError("flow system: no control source region declared");
        return src_cfg_;
    }
    std::size_t source_region_cells() const { return box_cells_.size(); }

    void set_control(ControlParameterization c) {
        if (!source_enabled_)
            throw ValidationError("flow system: declare the control source region first");
        validate_control(c);
        if (c.layout.ndim != grid_.ndim)
            throw ValidationError("flow system: control dimensionality does not match the grid");
        for (int d = 0; d < grid_.ndim; ++d)
            if (c.layout.extent[static_cast<std::size_t>(d)] != src_cfg_.box_extent(d))
                throw ValidationError("flow system: control extent on axis " + std::to_string(d) +
                                      " does not tile the source box");
        control_ = std::move(c);
        has_control_ = true;
    }
    void clear_control() { has_control_ = false; }
    bool has_control() const { return has_control_; }
    const ControlParameterization& control() const { return control_; }
    const ControlLayout& control_layout() const { return control_.layout; }

    void rhs(double t, long substep, std::span<const double> u, std::span<double> out) const {
        ns_rhs<double>(grid_, par_, deriv_, state_view<const double>(grid_, u), forward_source(t, substep),
                       state_view<double>(grid_, out));
    }

    void rhs_tangent(double t, long substep, std::span<const double> u, std::span<const double> v,
                     const ControlParameterization* dir, std::span<double> out) const {
        std::span<const double> dsrc;
        if (dir) {
            require_source("a control direction");
            control_value_at(*dir, substep, dfine_);
            scatter(t, dfine_, dsrc_);
            dsrc = dsrc_;
        }
        ns_rhs_tangent(grid_, par_, deriv_, state_view<const double>(grid_, u),
                       forward_source(t, substep), state_view<const double>(grid_, v), dsrc,
                       state_view<double>(grid_, out));
    }

    void rhs_adjoint(double t, long substep, std::span<const double> u, std::span<const double> xi,
                     std::span<double> out) const {
        ns_rhs_adjoint(grid_, par_, deriv_, state_view<const double>(grid_, u),
                       forward_source(t, substep), state_view<const double>(grid_, xi),
                       state_view<double>(grid_, out));
    }

    /// d<xi, rhs>/d(fine control value), one entry per source-box cell in the
    /// same row-major order the control expansion produces.
    void control_gradient_term(double t, long substep, std::span<const double> u,
                               std::span<const double> xi, std::span<double> fine_out) const {
        require_source("the control gradient");
        if (fine_out.size() != box_cells_.size())
            throw ValidationError("flow system: gradient buffer does not match the source box");
        auto uv = state_view<const double>(grid_, u);
        auto xv = state_view<const double>(grid_, xi);
        const double wt = temporal_window(src_cfg_, t);
        (void)substep;
        for (std::size_t b = 0; b < box_cells_.size(); ++b) {
            const std::size_t c = box_cells_[b];
            fine_out[b] = uv.rho[c] * par_.R_gas * xv.p[c] * spatial_w_[b] * wt;
        }
    }

    void rhs_complex(double t, long substep, std::span<const std::complex<double>> u,
                     const ControlParameterization* ctrl_imag, double h,
                     std::span<std::complex<double>> out) const {
        std::span<const std::complex<double>> src;
        if (has_control_ || ctrl_imag) {
            require_source("a complex control evaluation");
            const double wt = temporal_window(src_cfg_, t);
            std::fill(csrc_.begin(), csrc_.end(), std::complex<double>(0.0, 0.0));
            if (has_control_) {
                control_value_at(control_, substep, fine_);
                for (std::size_t b = 0; b < box_cells_.size(); ++b)
                    csrc_[box_cells_[b]].real(spatial_w_[b] * wt * fine_[b]);
            }
            if (ctrl_imag) {
                control_value_at(*ctrl_imag, substep, dfine_);
                for (std::size_t b = 0; b < box_cells_.size(); ++b)
                    csrc_[box_cells_[b]].imag(h * spatial_w_[b] * wt * dfine_[b]);
            }
            src = csrc_;
        }
        ns_rhs_complex(grid_, par_, deriv_, state_view<const std::complex<double>>(grid_, u), src,
                       state_view<std::complex<double>>(grid_, out));
    }

    bool filtered() const { return use_filter_; }

    /// Per-component tensor-product filter, axis 0 first.
    void apply_filter(std::span<double> u) const {
        if (u.size() != grid_.state_size())
            throw ValidationError("flow system: filter input has the wrong length");
        for (int c = 0; c < grid_.ncomp(); ++c) {
            auto comp = u.subspan(static_cast<std::size_t>(c) * grid_.cells(), grid_.cells());
            for (int d = 0; d < grid_.ndim; ++d) {
                apply(filt_[static_cast<std::size_t>(d)], grid_, std::span<const double>(comp),
                      std::span<double>(ftmp_));
                std::copy(ftmp_.begin(), ftmp_.end(), comp.begin());
            }
        }
    }

    /// Exact transpose of apply_filter: per-axis transposes in reverse order.
    void apply_filter_transpose(std::span<double> u) const {
        if (u.size() != grid_.state_size())
            throw ValidationError("flow system: filter input has the wrong length");
        for (int c = 0; c < grid_.ncomp(); ++c) {
            auto comp = u.subspan(static_cast<std::size_t>(c) * grid_.cells(), grid_.cells());
            for (int d = grid_.ndim - 1; d >= 0; --d) {
                apply_transpose(filt_[static_cast<std::size_t>(d)], grid_,
                                std::span<const double>(comp), std::span<double>(ftmp_));
                std::copy(ftmp_.begin(), ftmp_.end(), comp.begin());
            }
        }
    }

    void check_state(std::span<const double> u) const { check_physical(grid_, u); }

private:
    void require_source(const char* what) const {
        if (!source_enabled_)
            throw RuntimeError(std::string("flow system: no source region declared for ") + what);
    }

    /// Windowed control field for the current sub-step, or an empty span when
    /// no control is attached.
    std::span<const double> forward_source(double t, long substep) const {
        if (!has_control_) return {};
        control_value_at(control_, substep, fine_);
        scatter(t, fine_, src_);
        return src_;
    }

    void scatter(double t, std::span<const double> fine, std::vector<double>& dst) const {
        const double wt = temporal_window(src_cfg_, t);
        for (std::size_t b = 0; b < box_cells_.size(); ++b)
            dst[box_cells_[b]] = spatial_w_[b] * wt * fine[b];
    }

    Grid grid_;
    FluidParams par_;
    bool use_filter_;
    std::vector<StencilOperator> deriv_, filt_;

    bool source_enabled_ = false;
    bool has_control_ = false;
    ControlSourceConfig src_cfg_;
    ControlParameterization control_;
    std::vector<std::size_t> box_cells_;
    std::vector<double> spatial_w_;

    mutable std::vector<double> fine_, dfine_, src_, dsrc_, ftmp_;
    mutable std::vector<std::complex<double>> csrc_;
};

/// Uniform flow at rest: unit density, zero momentum, background pressure.
inline StateField quiescent_state(const Grid& g, const FluidParams& par) {
    StateField f(g);
    fill(f.rho(), 1.0);
    fill(f.pres(), background_pressure(par));
    return f;
}

/// Two opposed shear layers spanning the periodic box (a plane jet), with a
/// small sinusoidal cross-stream seed so the layers roll up. Streamwise axis
/// is 1 (columns), cross-stream axis is 0.
inline StateField jet2d_state(const Grid& g, const FluidParams& par, double velocity = 0.5,
                              double thickness = 0.05, double seed_amplitude = 1e-3) {
    if (g.ndim != 2) throw ValidationError("jet2d_state: needs a two-dimensional grid");
    StateField f(g);
    fill(f.rho(), 1.0);
    fill(f.pres(), background_pressure(par));
    auto mx = f.mom(1);
    auto my = f.mom(0);
    const double L0 = g.L[0], L1 = g.L[1];
    for (int i = 0; i < g.n[0]; ++i) {
        const double y = i * g.dx[0];
        const double profile = y <= 0.5 * L0
                                   ? std::tanh((y - 0.25 * L0) / thickness)
                                   : std::tanh((0.75 * L0 - y) / thickness);
        for (int j = 0; j < g.n[1]; ++j) {
            const double x = j * g.dx[1];
            const std::size_t c = static_cast<std::size_t>(i * g.n[1] + j);
            mx[c] = velocity * profile;
            my[c] = seed_amplitude * std::sin(2.0 * std::numbers::pi * x / L1) *
                    std::exp(-std::pow((y - 0.25 * L0) / (4 * thickness), 2));
            my[c] += seed_amplitude * std::sin(2.0 * std::numbers::pi * x / L1 + 1.0) *
                     std::exp(-std::pow((y - 0.75 * L0) / (4 * thickness), 2));
        }
    }
    return f;
}

} // namespace afl
