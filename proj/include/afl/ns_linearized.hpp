#pragma once

#include <array>
#include <span>

#include "ns_rhs.hpp"

namespace afl {

/// Directional derivative of ns_rhs at (u, source) in the direction
/// (v, vsource). Exact linearization of the discrete operator: every
/// intermediate of the forward evaluation is differentiated, so complex-step
/// probes of ns_rhs agree with this to rounding.
inline void ns_rhs_tangent(const Grid& g, const FluidParams& par,
                           std::span<const StencilOperator> deriv,
                           StateView<const double> u, std::span<const double> source,
                           StateView<const double> v, std::span<const double> vsource,
                           StateView<double> out) {
    if (deriv.size() != static_cast<std::size_t>(g.ndim))
        throw ValidationError("ns_rhs_tangent: need one derivative operator per axis");
    if (!source.empty() && source.size() != g.cells())
        throw ValidationError("ns_rhs_tangent: source array does not match the grid");
    if (!vsource.empty() && vsource.size() != g.cells())
        throw ValidationError("ns_rhs_tangent: source direction does not match the grid");
    const std::size_t nc = g.cells();
    const int nd = g.ndim;
    const double mu = par.mu();
    const double kappa = par.heat_conduction();
    const double gm1 = par.gamma - 1.0;
    const double tcoef = par.gamma * par.Ma * par.Ma;

    detail::Scratch<double> mem(static_cast<std::size_t>(4 * nd * nd + 2 * nd + 6), nc);
    std::array<std::span<double>, kMaxDim> vel, vvel;
    std::array<std::array<std::span<double>, kMaxDim>, kMaxDim> grad, vgrad, tau, vtau;
    for (int d = 0; d < nd; ++d) vel[d] = mem.take();
    for (int d = 0; d < nd; ++d) vvel[d] = mem.take();
    for (int i = 0; i < nd; ++i)
        for (int j = 0; j < nd; ++j) grad[i][j] = mem.take();
    for (int i = 0; i < nd; ++i)
        for (int j = 0; j < nd; ++j) vgrad[i][j] = mem.take();
    for (int i = 0; i < nd; ++i)
        for (int j = 0; j < nd; ++j) tau[i][j] = mem.take();
    for (int i = 0; i < nd; ++i)
        for (int j = 0; j < nd; ++j) vtau[i][j] = mem.take();
    std::span<double> divu = mem.take();
    std::span<double> vdivu = mem.take();
    std::span<double> temp = mem.take();
    std::span<double> vtemp = mem.take();
    std::span<double> work1 = mem.take();
    std::span<double> work2 = mem.take();

    for (int d = 0; d < nd; ++d)
        for (std::size_t c = 0; c < nc; ++c) {
            vel[d][c] = u.m[d][c] / u.rho[c];
            vvel[d][c] = (v.m[d][c] - vel[d][c] * v.rho[c]) / u.rho[c];
        }
    for (int i = 0; i < nd; ++i)
        for (int j = 0; j < nd; ++j) {
            apply<double>(deriv[static_cast<std::size_t>(j)], g, vel[i], grad[i][j]);
            apply<double>(deriv[static_cast<std::size_t>(j)], g, vvel[i], vgrad[i][j]);
        }
    for (std::size_t c = 0; c < nc; ++c) {
        divu[c] = grad[0][0][c];
        vdivu[c] = vgrad[0][0][c];
        for (int d = 1; d < nd; ++d) {
            divu[c] += grad[d][d][c];
            vdivu[c] += vgrad[d][d][c];
        }
    }
    for (int i = 0; i < nd; ++i)
        for (int j = 0; j < nd; ++j) {
            if (i == j)
                for (std::size_t c = 0; c < nc; ++c) {
                    tau[i][j][c] = mu * (grad[i][j][c] + grad[j][i][c] - (2.0 / 3.0) * divu[c]);
                    vtau[i][j][c] = mu * (vgrad[i][j][c] + vgrad[j][i][c] - (2.0 / 3.0) * vdivu[c]);
                }
            else
                for (std::size_t c = 0; c < nc; ++c) {
                    tau[i][j][c] = mu * (grad[i][j][c] + grad[j][i][c]);
                    vtau[i][j][c] = mu * (vgrad[i][j][c] + vgrad[j][i][c]);
                }
        }

    // mass
    fill<double>(out.rho, 0.0);
    for (int i = 0; i < nd; ++i) {
        apply<double>(deriv[static_cast<std::size_t>(i)], g, v.m[i], work1);
        for (std::size_t c = 0; c < nc; ++c) out.rho[c] -= work1[c];
    }

    // momentum
    for (int i = 0; i < nd; ++i) {
        apply<double>(deriv[static_cast<std::size_t>(i)], g, v.p, work1);
        for (std::size_t c = 0; c < nc; ++c) out.m[i][c] = -work1[c];
        for (int j = 0; j < nd; ++j) {
            for (std::size_t c = 0; c < nc; ++c)
                work1[c] = v.m[j][c] * vel[i][c] + u.m[j][c] * vvel[i][c];
            apply<double>(deriv[static_cast<std::size_t>(j)], g, std::span<const double>(work1), work2);
            for (std::size_t c = 0; c < nc; ++c) out.m[i][c] -= work2[c];
        }
        for (int j = 0; j < nd; ++j) {
            apply<double>(deriv[static_cast<std::size_t>(j)], g, std::span<const double>(vtau[i][j]), work2);
            for (std::size_t c = 0; c < nc; ++c) out.m[i][c] += work2[c];
        }
    }

    // pressure
    fill<double>(out.p, 0.0);
    for (int i = 0; i < nd; ++i) {
        for (std::size_t c = 0; c < nc; ++c)
            work1[c] = v.p[c] * vel[i][c] + u.p[c] * vvel[i][c];
        apply<double>(deriv[static_cast<std::size_t>(i)], g, std::span<const double>(work1), work2);
        for (std::size_t c = 0; c < nc; ++c) out.p[c] -= work2[c];
    }
    for (std::size_t c = 0; c < nc; ++c) {
        temp[c] = tcoef * u.p[c] / u.rho[c];
        vtemp[c] = (tcoef * v.p[c] - temp[c] * v.rho[c]) / u.rho[c];
    }
    for (int i = 0; i < nd; ++i) {
        apply<double>(deriv[static_cast<std::size_t>(i)], g, std::span<const double>(vtemp), work1);
        apply<double>(deriv[static_cast<std::size_t>(i)], g, std::span<const double>(work1), work2);
        for (std::size_t c = 0; c < nc; ++c) out.p[c] += kappa * work2[c];
    }
    for (std::size_t c = 0; c < nc; ++c)
        out.p[c] -= gm1 * (v.p[c] * divu[c] + u.p[c] * vdivu[c]);
    for (int i = 0; i < nd; ++i)
        for (int j = 0; j < nd; ++j)
            for (std::size_t c = 0; c < nc; ++c)
                out.p[c] += gm1 * (vtau[i][j][c] * grad[i][j][c] + tau[i][j][c] * vgrad[i][j][c]);
    if (!source.empty())
        for (std::size_t c = 0; c < nc; ++c) out.p[c] += v.rho[c] * par.R_gas * source[c];
    if (!vsource.empty())
        for (std::size_t c = 0; c < nc; ++c) out.p[c] += u.rho[c] * par.R_gas * vsource[c];
}

/// Transpose of the state Jacobian of ns_rhs at (u, source):
/// out = (dR/du)^T xi. Built by reversing the forward evaluation; every
/// derivative application becomes apply_transpose and every pointwise product
/// routes its factor to the matching accumulator, so the operator is the
/// exact transpose of ns_rhs_tangent in the state argument.
inline void ns_rhs_adjoint(const Grid& g, const FluidParams& par,
                           std::span<const StencilOperator> deriv,
                           StateView<const double> u, std::span<const double> source,
                           StateView<const double> xi, StateView<double> out) {
    if (deriv.size() != static_cast<std::size_t>(g.ndim))
        throw ValidationError("ns_rhs_adjoint: need one derivative operator per axis");
    if (!source.empty() && source.size() != g.cells())
        throw ValidationError("ns_rhs_adjoint: source array does not match the grid");
    const std::size_t nc = g.cells();
    const int nd = g.ndim;
    const double mu = par.mu();
    const double kappa = par.heat_conduction();
    const double gm1 = par.gamma - 1.0;
    const double tcoef = par.gamma * par.Ma * par.Ma;

    detail::Scratch<double> mem(static_cast<std::size_t>(4 * nd * nd + 2 * nd + 5), nc);
    std::array<std::span<double>, kMaxDim> vel, adj_vel;
    std::array<std::array<std::span<double>, kMaxDim>, kMaxDim> grad, tau, adj_tau, adj_grad;
    for (int d = 0; d < nd; ++d) vel[d] = mem.take();
    for (int d = 0; d < nd; ++d) adj_vel[d] = mem.take();
    for (int i = 0; i < nd; ++i)
        for (int j = 0; j < nd; ++j) grad[i][j] = mem.take();
    for (int i = 0; i < nd; ++i)
        for (int j = 0; j < nd; ++j) tau[i][j] = mem.take();
    for (int i = 0; i < nd; ++i)
        for (int j = 0; j < nd; ++j) adj_tau[i][j] = mem.take();
    for (int i = 0; i < nd; ++i)
        for (int j = 0; j < nd; ++j) adj_grad[i][j] = mem.take();
    std::span<double> adj_divu = mem.take();
    std::span<double> adj_temp = mem.take();
    std::span<double> work1 = mem.take();
    std::span<double> work2 = mem.take();
    std::span<double> work3 = mem.take();

    // forward intermediates the reverse sweep needs
    for (int d = 0; d < nd; ++d)
        for (std::size_t c = 0; c < nc; ++c) vel[d][c] = u.m[d][c] / u.rho[c];
    for (int i = 0; i < nd; ++i)
        for (int j = 0; j < nd; ++j)
            apply<double>(deriv[static_cast<std::size_t>(j)], g, vel[i], grad[i][j]);
    std::span<double> divu = work2; // reused after the stress assembly
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

    fill<double>(out.rho, 0.0);
    for (int d = 0; d < nd; ++d) fill<double>(out.m[d], 0.0);
    fill<double>(out.p, 0.0);
    for (int d = 0; d < nd; ++d) fill<double>(adj_vel[d], 0.0);
    for (int i = 0; i < nd; ++i)
        for (int j = 0; j < nd; ++j) fill<double>(adj_tau[i][j], 0.0);

    // mass row: out.m[i] -= D_i^T xi_rho
    for (int i = 0; i < nd; ++i) {
        apply_transpose<double>(deriv[static_cast<std::size_t>(i)], g, xi.rho, work1);
        for (std::size_t c = 0; c < nc; ++c) out.m[i][c] -= work1[c];
    }

    // momentum rows
    for (int i = 0; i < nd; ++i) {
        apply_transpose<double>(deriv[static_cast<std::size_t>(i)], g, xi.m[i], work1);
        for (std::size_t c = 0; c < nc; ++c) out.p[c] -= work1[c];
        for (int j = 0; j < nd; ++j) {
            apply_transpose<double>(deriv[static_cast<std::size_t>(j)], g, xi.m[i], work1);
            for (std::size_t c = 0; c < nc; ++c) {
                out.m[j][c] -= vel[i][c] * work1[c];
                adj_vel[i][c] -= u.m[j][c] * work1[c];
                adj_tau[i][j][c] += work1[c];
            }
        }
    }

    // pressure row
    for (int i = 0; i < nd; ++i) {
        apply_transpose<double>(deriv[static_cast<std::size_t>(i)], g, xi.p, work1);
        for (std::size_t c = 0; c < nc; ++c) {
            out.p[c] -= vel[i][c] * work1[c];
            adj_vel[i][c] -= u.p[c] * work1[c];
        }
    }
    fill<double>(adj_temp, 0.0);
    for (int i = 0; i < nd; ++i) {
        apply_transpose<double>(deriv[static_cast<std::size_t>(i)], g, xi.p, work1);
        apply_transpose<double>(deriv[static_cast<std::size_t>(i)], g, std::span<const double>(work1), work3);
        for (std::size_t c = 0; c < nc; ++c) adj_temp[c] += kappa * work3[c];
    }
    // divu still lives in work2 here
    for (std::size_t c = 0; c < nc; ++c) out.p[c] -= gm1 * divu[c] * xi.p[c];
    fill<double>(adj_divu, 0.0);
    for (std::size_t c = 0; c < nc; ++c) adj_divu[c] -= gm1 * u.p[c] * xi.p[c];
    for (int i = 0; i < nd; ++i)
        for (int j = 0; j < nd; ++j)
            for (std::size_t c = 0; c < nc; ++c) {
                adj_tau[i][j][c] += gm1 * grad[i][j][c] * xi.p[c];
                adj_grad[i][j][c] = gm1 * tau[i][j][c] * xi.p[c];
            }
    if (!source.empty())
        for (std::size_t c = 0; c < nc; ++c) out.rho[c] += par.R_gas * source[c] * xi.p[c];

    // stress backprop: vtau_ij = mu (vG_ij + vG_ji - (2/3) delta_ij vdivu)
    for (int i = 0; i < nd; ++i) {
        for (int j = 0; j < nd; ++j)
            for (std::size_t c = 0; c < nc; ++c)
                adj_grad[i][j][c] += mu * (adj_tau[i][j][c] + adj_tau[j][i][c]);
        for (std::size_t c = 0; c < nc; ++c)
            adj_divu[c] -= (2.0 / 3.0) * mu * adj_tau[i][i][c];
    }
    // vdivu = sum_k vG_kk
    for (int k = 0; k < nd; ++k)
        for (std::size_t c = 0; c < nc; ++c) adj_grad[k][k][c] += adj_divu[c];
    // vG_ij = D_j vvel_i
    for (int i = 0; i < nd; ++i)
        for (int j = 0; j < nd; ++j) {
            apply_transpose<double>(deriv[static_cast<std::size_t>(j)], g,
                                    std::span<const double>(adj_grad[i][j]), work1);
            for (std::size_t c = 0; c < nc; ++c) adj_vel[i][c] += work1[c];
        }
    // vvel_i = (vm_i - vel_i vrho) / rho
    for (int i = 0; i < nd; ++i)
        for (std::size_t c = 0; c < nc; ++c) {
            out.m[i][c] += adj_vel[i][c] / u.rho[c];
            out.rho[c] -= vel[i][c] / u.rho[c] * adj_vel[i][c];
        }
    // vT = (tcoef vp - T vrho) / rho with T = tcoef p / rho
    for (std::size_t c = 0; c < nc; ++c) {
        const double T = tcoef * u.p[c] / u.rho[c];
        out.p[c] += tcoef / u.rho[c] * adj_temp[c];
        out.rho[c] -= T / u.rho[c] * adj_temp[c];
    }
}

/// Transpose of the source Jacobian: the inner product of xi with the
/// source perturbation response, taken cellwise. d(p-equation)/d(source)
/// is multiplication by rho * R_gas, so the adjoint weight is
/// rho * R_gas * xi_p per cell.
inline void ns_rhs_control_adjoint(const Grid& g, const FluidParams& par, StateView<const double> u,
                                   std::span<const double> xi_p, std::span<double> out) {
    if (xi_p.size() != g.cells() || out.size() != g.cells())
        throw ValidationError("ns_rhs_control_adjoint: arrays do not match the grid");
    for (std::size_t c = 0; c < g.cells(); ++c) out[c] = u.rho[c] * par.R_gas * xi_p[c];
}

} // namespace afl
