#pragma once

#include <array>
#include <cstddef>
#include <limits>
#include <span>
#include <string>

#include "error.hpp"

namespace afl {

inline constexpr int kMaxDim = 2;

/// Uniform Cartesian grid, periodic in every direction, one or two dimensions.
/// Flat storage is row-major with axis 0 slowest.
struct Grid {
    int ndim = 1;
    std::array<int, kMaxDim> n{};
    std::array<double, kMaxDim> L{};
    std::array<double, kMaxDim> dx{};

    std::size_t cells() const {
        std::size_t c = 1;
        for (int d = 0; d < ndim; ++d) c *= static_cast<std::size_t>(n[d]);
        return c;
    }

    /// Conserved components carried per cell: density, momenta, pressure.
    int ncomp() const { return 2 + ndim; }

    std::size_t state_size() const { return static_cast<std::size_t>(ncomp()) * cells(); }

    double cell_volume() const {
        double v = 1.0;
        for (int d = 0; d < ndim; ++d) v *= dx[d];
        return v;
    }

    bool operator==(const Grid&) const = default;
};

/// Minimum extent per axis. The widest operator shipped is the 11-point
/// filter; smaller grids are used only with the 7-point derivative, but the
/// floor keeps every periodic wrap single-valued.
inline constexpr int kMinExtent = 8;

inline Grid make_grid(int ndim, std::span<const int> n, std::span<const double> L) {
    if (ndim < 1 || ndim > kMaxDim)
        throw ValidationError("make_grid: ndim must be 1 or 2, got " + std::to_string(ndim));
    if (n.size() < static_cast<std::size_t>(ndim) || L.size() < static_cast<std::size_t>(ndim))
        throw ValidationError("make_grid: need one extent and one length per axis");
    Grid g;
    g.ndim = ndim;
    for (int d = 0; d < ndim; ++d) {
        if (n[d] < kMinExtent)
            throw ValidationError("make_grid: axis " + std::to_string(d) + " extent " +
                                  std::to_string(n[d]) + " is below the minimum of " +
                                  std::to_string(kMinExtent));
        if (!(L[d] > 0.0))
            throw ValidationError("make_grid: axis " + std::to_string(d) +
                                  " has nonpositive length");
        g.n[d] = n[d];
        g.L[d] = L[d];
        g.dx[d] = L[d] / n[d];
    }
    return g;
}

inline Grid make_grid_1d(int n, double L) {
    const int ext[1] = {n};
    const double len[1] = {L};
    return make_grid(1, ext, len);
}

inline Grid make_grid_2d(int n0, int n1, double L0, double L1) {
    const int ext[2] = {n0, n1};
    const double len[2] = {L0, L1};
    return make_grid(2, ext, len);
}

/// Nondimensional fluid constants. Velocity, density and length scales are
/// one; viscosity is 1/Re, and Re = inf selects the inviscid limit. The
/// conducted heat flux divides by (gamma-1)*Pr*Ma^2 so that temperature is
/// gamma*Ma^2*p/rho with the quiescent value of one.
struct FluidParams {
    double gamma = 1.4;
    double Re = 2000.0;
    double Ma = 0.9;
    double Pr = 0.7;
    double R_gas = 1.0; ///< multiplies rho*source in the pressure equation

    double mu() const { return 1.0 / Re; }
    double heat_conduction() const { return mu() / ((gamma - 1.0) * Pr * Ma * Ma); }

    void validate() const {
        if (!(gamma > 1.0)) throw ValidationError("FluidParams: gamma must exceed 1");
        if (!(Re > 0.0)) throw ValidationError("FluidParams: Re must be positive");
        if (!(Ma > 0.0)) throw ValidationError("FluidParams: Ma must be positive");
        if (!(Pr > 0.0)) throw ValidationError("FluidParams: Pr must be positive");
    }
};

/// R_gas defaults to 1/(gamma*Ma^2) so that p = rho*R_gas*T holds exactly in
/// the chosen nondimensionalization.
inline FluidParams make_fluid_params(double gamma, double Re, double Ma, double Pr = 0.7) {
    FluidParams p;
    p.gamma = gamma;
    p.Re = Re;
    p.Ma = Ma;
    p.Pr = Pr;
    p.R_gas = 1.0 / (gamma * Ma * Ma);
    p.validate();
    return p;
}

/// Quiescent background pressure: sound speed 1/Ma at unit density.
inline double background_pressure(const FluidParams& p) { return 1.0 / (p.gamma * p.Ma * p.Ma); }

} // namespace afl
