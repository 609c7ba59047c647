#pragma once

#include <cmath>
#include <complex>
#include <span>

#include "control.hpp"
#include "error.hpp"

namespace afl {

/// Three-variable Lorenz system with optional additive forcing on one
/// component, used as the small chaotic testbed for every sensitivity and
/// verification pipeline. Implements the same interface as the flow system.
class LorenzSystem {
public:
    LorenzSystem(double sigma = 10.0, double rho = 28.0, double beta = 8.0 / 3.0,
                 int forcing_component = 0)
        : sigma_(sigma), rho_(rho), beta_(beta), fc_(forcing_component) {
        if (fc_ < 0 || fc_ > 2) throw ValidationError("lorenz: forcing component must be 0, 1 or 2");
    }

    std::size_t state_size() const { return 3; }

    double sigma() const { return sigma_; }
    double rho() const { return rho_; }
    double beta() const { return beta_; }
    int forcing_component() const { return fc_; }

    bool has_control() const { return has_control_; }
    const ControlParameterization& control() const { return control_; }
    const ControlLayout& control_layout() const { return control_.layout; }

    void set_control(ControlParameterization c) {
        if (c.layout.fine_cells() != 1)
            throw ValidationError("lorenz: control region must be a single cell (scalar forcing)");
        validate_control(c);
        control_ = std::move(c);
        has_control_ = true;
    }
    void clear_control() { has_control_ = false; }

    void rhs(double, long substep, std::span<const double> u, std::span<double> out) const {
        out[0] = sigma_ * (u[1] - u[0]);
        out[1] = u[0] * (rho_ - u[2]) - u[1];
        out[2] = u[0] * u[1] - beta_ * u[2];
        if (has_control_) out[static_cast<std::size_t>(fc_)] += control_scalar(control_, substep);
    }

    void rhs_tangent(double, long substep, std::span<const double> u, std::span<const double> v,
                     const ControlParameterization* dir, std::span<double> out) const {
        out[0] = sigma_ * (v[1] - v[0]);
        out[1] = (rho_ - u[2]) * v[0] - v[1] - u[0] * v[2];
        out[2] = u[1] * v[0] + u[0] * v[1] - beta_ * v[2];
        if (dir) out[static_cast<std::size_t>(fc_)] += control_scalar(*dir, substep);
    }

    void rhs_adjoint(double, long, std::span<const double> u, std::span<const double> xi,
                     std::span<double> out) const {
        out[0] = -sigma_ * xi[0] + (rho_ - u[2]) * xi[1] + u[1] * xi[2];
        out[1] = sigma_ * xi[0] - xi[1] + u[0] * xi[2];
        out[2] = -u[0] * xi[1] - beta_ * xi[2];
    }

    /// Gradient of <xi, rhs> with respect to the fine control value.
    void control_gradient_term(double, long, std::span<const double>, std::span<const double> xi,
                               std::span<double> out) const {
        out[0] = xi[static_cast<std::size_t>(fc_)];
    }

    void rhs_complex(double, long substep, std::span<const std::complex<double>> u,
                     const ControlParameterization* ctrl_imag, double h,
                     std::span<std::complex<double>> out) const {
        out[0] = sigma_ * (u[1] - u[0]);
        out[1] = u[0] * (rho_ - u[2]) - u[1];
        out[2] = u[0] * u[1] - beta_ * u[2];
        std::complex<double> f{has_control_ ? control_scalar(control_, substep) : 0.0, 0.0};
        if (ctrl_imag) f.imag(h * control_scalar(*ctrl_imag, substep));
        if (has_control_ || ctrl_imag) out[static_cast<std::size_t>(fc_)] += f;
    }

    bool filtered() const { return false; }
    void apply_filter(std::span<double>) const {}
    void apply_filter_transpose(std::span<double>) const {}

    void check_state(std::span<const double> u) const {
        for (std::size_t i = 0; i < 3; ++i)
            if (!std::isfinite(u[i]))
                throw RuntimeError("state invalid: non-finite entry at component " +
                                   std::to_string(i));
    }

private:
    static double control_scalar(const ControlParameterization& c, long substep) {
        double v = 0.0;
        const auto g = gamma_weights(c.layout, substep);
        for (int k = 0; k < g.count; ++k)
            v += g.weight[static_cast<std::size_t>(k)] *
                 c.snapshots[static_cast<std::size_t>(g.index[static_cast<std::size_t>(k)])][0];
        return v;
    }

    double sigma_, rho_, beta_;
    int fc_;
    bool has_control_ = false;
    ControlParameterization control_;
};

} // namespace afl
