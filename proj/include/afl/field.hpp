#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"
#include "grid.hpp"
#include "vec.hpp"

namespace afl {

/// Non-owning view of one flow state laid out component-major:
/// [rho | m_0 .. m_{ndim-1} | p], each block of grid.cells() entries.
template <class T>
struct StateView {
    std::span<T> rho;
    std::array<std::span<T>, kMaxDim> m;
    std::span<T> p;
    int ndim = 0;
    std::size_t cells = 0;

    operator StateView<const T>() const
        requires(!std::is_const_v<T>)
    {
        StateView<const T> v;
        v.rho = rho;
        for (std::size_t d = 0; d < kMaxDim; ++d) v.m[d] = m[d];
        v.p = p;
        v.ndim = ndim;
        v.cells = cells;
        return v;
    }
};

template <class T>
inline StateView<T> state_view(const Grid& g, std::span<T> flat) {
    if (flat.size() != g.state_size())
        throw ValidationError("state_view: buffer holds " + std::to_string(flat.size()) +
                              " entries, grid needs " + std::to_string(g.state_size()));
    StateView<T> v;
    v.ndim = g.ndim;
    v.cells = g.cells();
    v.rho = flat.subspan(0, v.cells);
    for (int d = 0; d < g.ndim; ++d) v.m[d] = flat.subspan((1 + d) * v.cells, v.cells);
    v.p = flat.subspan((1 + g.ndim) * v.cells, v.cells);
    return v;
}

/// Owning state container. Values are unconstrained; physical validity
/// (positive density and pressure) is asserted only where the time loop
/// accepts a step, so the same container can hold sensitivities.
template <class T>
class BasicStateField {
public:
    BasicStateField() = default;
    explicit BasicStateField(const Grid& g) : grid_(g), data_(g.state_size(), T{}) {}

    const Grid& grid() const { return grid_; }

    std::span<T> flat() { return data_; }
    std::span<const T> flat() const { return data_; }

    StateView<T> view() { return state_view<T>(grid_, std::span<T>(data_)); }
    StateView<const T> view() const {
        return state_view<const T>(grid_, std::span<const T>(data_));
    }

    std::span<T> component(int c) { return std::span<T>(data_).subspan(c * grid_.cells(), grid_.cells()); }
    std::span<const T> component(int c) const {
        return std::span<const T>(data_).subspan(c * grid_.cells(), grid_.cells());
    }

    std::span<T> rho() { return component(0); }
    std::span<T> mom(int d) { return component(1 + d); }
    std::span<T> pres() { return component(1 + grid_.ndim); }
    std::span<const T> rho() const { return component(0); }
    std::span<const T> mom(int d) const { return component(1 + d); }
    std::span<const T> pres() const { return component(1 + grid_.ndim); }

private:
    Grid grid_;
    std::vector<T> data_;
};

using StateField = BasicStateField<double>;
using ComplexStateField = BasicStateField<std::complex<double>>;

/// Unweighted Euclidean inner product over all components, summed with the
/// component-outermost, cell-ascending order that the flat layout realizes.
inline double inner_product(const StateField& a, const StateField& b) {
    if (!(a.grid() == b.grid()))
        throw ValidationError("inner_product: fields live on different grids");
    return dot(a.flat(), b.flat());
}

inline double l2_norm(const StateField& a) { return std::sqrt(dot(a.flat(), a.flat())); }

namespace detail {
inline std::string cell_label(const Grid& g, std::size_t cell) {
    if (g.ndim == 1) return "(" + std::to_string(cell) + ")";
    const std::size_t i = cell / static_cast<std::size_t>(g.n[1]);
    const std::size_t j = cell % static_cast<std::size_t>(g.n[1]);
    return "(" + std::to_string(i) + "," + std::to_string(j) + ")";
}
} // namespace detail

/// Throws unless rho > 0, p > 0 and every entry is finite. The message names
/// the first offending component and cell.
inline void check_physical(const Grid& g, std::span<const double> flat) {
    const auto v = state_view<const double>(g, flat);
    for (std::size_t c = 0; c < v.cells; ++c)
        if (!(v.rho[c] > 0.0))
            throw RuntimeError("state invalid: rho <= 0 at cell " + detail::cell_label(g, c));
    for (std::size_t c = 0; c < v.cells; ++c)
        if (!(v.p[c] > 0.0))
            throw RuntimeError("state invalid: p <= 0 at cell " + detail::cell_label(g, c));
    for (std::size_t i = 0; i < flat.size(); ++i)
        if (!std::isfinite(flat[i]))
            throw RuntimeError("state invalid: non-finite entry at flat index " + std::to_string(i));
}

inline void check_physical(const StateField& f) { check_physical(f.grid(), f.flat()); }

} // namespace afl
