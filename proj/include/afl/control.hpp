#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "error.hpp"
#include "vec.hpp"

namespace afl {

/// The control region is an axis-aligned block of cells, independent of the
/// flow grid's dimension cap; three axes cover every case the tooling needs.
inline constexpr int kMaxControlDim = 3;

/// Coarse space-time layout of the control degrees of freedom: per-axis
/// subsampling strides over the controlled region plus the time iteration
/// index of every stored control snapshot.
struct ControlLayout {
    int ndim = 0;
    std::array<int, kMaxControlDim> extent{};  ///< fine cells per axis
    std::array<int, kMaxControlDim> stride{};  ///< knot spacing per axis, >= 1
    std::vector<long> snapshot_substeps;       ///< strictly increasing sub-step indices

    int coarse_extent(int d) const { return extent[d] / stride[d]; }
    std::size_t fine_cells() const {
        std::size_t n = 1;
        for (int d = 0; d < ndim; ++d) n *= static_cast<std::size_t>(extent[d]);
        return n;
    }
    std::size_t coarse_cells() const {
        std::size_t n = 1;
        for (int d = 0; d < ndim; ++d) n *= static_cast<std::size_t>(coarse_extent(d));
        return n;
    }
    std::size_t snapshot_count() const { return snapshot_substeps.size(); }
};

/// `snapshot_steps` are time-iteration indices; sub-step indices are those
/// times the stage count of the scheme, which is how the integration loop
/// counts right-hand-side evaluations.
inline ControlLayout make_control_layout(int ndim, std::span<const int> extent,
                                         std::span<const int> stride,
                                         std::span<const long> snapshot_steps, int stages) {
    if (ndim < 1 || ndim > kMaxControlDim)
        throw ValidationError("control layout: ndim must be 1, 2 or 3");
    if (extent.size() != static_cast<std::size_t>(ndim) ||
        stride.size() != static_cast<std::size_t>(ndim))
        throw ValidationError("control layout: extent/stride arrays must have ndim entries");
    if (stages < 1) throw ValidationError("control layout: stages must be positive");
    if (snapshot_steps.empty()) throw ValidationError("control layout: no snapshots");
    ControlLayout l;
    l.ndim = ndim;
    for (int d = 0; d < ndim; ++d) {
        if (extent[d] < 1)
            throw ValidationError("control layout: extent on axis " + std::to_string(d) +
                                  " must be positive");
        if (stride[d] < 1)
            throw ValidationError("control layout: stride on axis " + std::to_string(d) +
                                  " must be at least 1");
        if (extent[d] % stride[d] != 0)
            throw ValidationError("control layout: stride on axis " + std::to_string(d) +
                                  " does not divide the region extent");
        l.extent[d] = extent[d];
        l.stride[d] = stride[d];
    }
    l.snapshot_substeps.reserve(snapshot_steps.size());
    for (std::size_t i = 0; i < snapshot_steps.size(); ++i) {
        if (i > 0 && snapshot_steps[i] <= snapshot_steps[i - 1])
            throw ValidationError("control layout: snapshot steps must increase strictly");
        l.snapshot_substeps.push_back(snapshot_steps[i] * stages);
    }
    return l;
}

/// Snapshot iteration indices covering [first, last] every `delta` iterations.
inline std::vector<long> uniform_snapshot_steps(long first, long last, long delta) {
    if (delta < 1) throw ValidationError("snapshot steps: delta must be at least 1");
    if (last < first) throw ValidationError("snapshot steps: empty interval");
    if ((last - first) % delta != 0)
        throw ValidationError("snapshot steps: delta does not divide the interval");
    std::vector<long> steps;
    for (long k = first; k <= last; k += delta) steps.push_back(k);
    return steps;
}

/// Sparse temporal interpolation weights: at most two adjacent snapshots
/// carry the value at sub-step s, linearly in s. Outside the covered interval
/// every weight is zero; a single stored snapshot means a time-constant
/// control, weight one everywhere.
struct GammaWeights {
    int count = 0;
    std::array<int, 2> index{};
    std::array<double, 2> weight{};
};

inline GammaWeights gamma_weights(const ControlLayout& l, long s) {
    const auto& S = l.snapshot_substeps;
    GammaWeights g;
    if (S.size() == 1) {
        g.count = 1;
        g.index[0] = 0;
        g.weight[0] = 1.0;
        return g;
    }
    if (s < S.front() || s > S.back()) return g;
    const auto it = std::lower_bound(S.begin(), S.end(), s);
    const auto i = static_cast<std::size_t>(it - S.begin());
    if (it != S.end() && *it == s) {
        g.count = 1;
        g.index[0] = static_cast<int>(i);
        g.weight[0] = 1.0;
        return g;
    }
    const std::size_t left = i - 1;
    const double t = static_cast<double>(s - S[left]) / static_cast<double>(S[left + 1] - S[left]);
    g.count = 2;
    g.index[0] = static_cast<int>(left);
    g.index[1] = static_cast<int>(left + 1);
    g.weight[0] = 1.0 - t;
    g.weight[1] = t;
    return g;
}

namespace detail {

/// Catmull-Rom basis at parameter u in [0,1). The middle weight is closed to
/// make the four weights an exact partition of unity.
inline std::array<double, 4> catmull_rom_basis(double u) {
    std::array<double, 4> b;
    b[0] = 0.5 * u * (-1.0 + u * (2.0 - u));
    b[2] = 0.5 * u * (1.0 + u * (4.0 - 3.0 * u));
    b[3] = 0.5 * u * u * (-1.0 + u);
    b[1] = 1.0 - b[0] - b[2] - b[3];
    return b;
}

/// Per-axis interpolation taps from coarse knots to fine points. Ghost knots
/// beyond either end are linear extrapolations of the two nearest interior
/// knots (so straight lines pass through unchanged); their contributions are
/// folded back onto interior indices at construction. Zero-weight taps are
/// dropped, which makes stride 1 an exact single-tap identity.
struct AxisMap {
    int fine = 0, coarse = 0;
    std::vector<int> start; ///< fine+1 offsets into idx/w
    std::vector<int> idx;
    std::vector<double> w;
};

inline AxisMap build_axis_map(int extent, int stride) {
    AxisMap m;
    m.fine = extent;
    m.coarse = extent / stride;
    const int K = m.coarse;
    m.start.assign(static_cast<std::size_t>(extent) + 1, 0);
    auto push = [&m](int i, double v) {
        if (v == 0.0) return;
        m.idx.push_back(i);
        m.w.push_back(v);
    };
    for (int x = 0; x < extent; ++x) {
        const int j = x / stride;
        const int r = x - j * stride;
        const auto b = catmull_rom_basis(static_cast<double>(r) / static_cast<double>(stride));
        for (int t = 0; t < 4; ++t) {
            const int i = j + t - 1;
            const double v = b[static_cast<std::size_t>(t)];
            if (i >= 0 && i < K) {
                push(i, v);
            } else if (K == 1) {
                push(0, v); // single knot: constant extrapolation
            } else if (i == -1) {
                push(0, 2.0 * v);
                push(1, -v);
            } else if (i == K) {
                push(K - 1, 2.0 * v);
                push(K - 2, -v);
            } else { // i == K + 1
                push(K - 1, 3.0 * v);
                push(K - 2, -2.0 * v);
            }
        }
        m.start[static_cast<std::size_t>(x) + 1] = static_cast<int>(m.idx.size());
    }
    return m;
}

inline void axis_expand(const AxisMap& m, std::span<const double> in, std::span<double> out,
                        std::size_t outer, std::size_t inner) {
    fill<double>(out, 0.0);
    for (std::size_t o = 0; o < outer; ++o)
        for (int x = 0; x < m.fine; ++x) {
            const std::size_t ob = (o * static_cast<std::size_t>(m.fine) +
                                    static_cast<std::size_t>(x)) * inner;
            for (int t = m.start[static_cast<std::size_t>(x)];
                 t < m.start[static_cast<std::size_t>(x) + 1]; ++t) {
                const std::size_t ib = (o * static_cast<std::size_t>(m.coarse) +
                                        static_cast<std::size_t>(m.idx[static_cast<std::size_t>(t)])) * inner;
                const double wv = m.w[static_cast<std::size_t>(t)];
                for (std::size_t c = 0; c < inner; ++c) out[ob + c] += wv * in[ib + c];
            }
        }
}

inline void axis_restrict(const AxisMap& m, std::span<const double> in, std::span<double> out,
                          std::size_t outer, std::size_t inner) {
    fill<double>(out, 0.0);
    for (std::size_t o = 0; o < outer; ++o)
        for (int x = 0; x < m.fine; ++x) {
            const std::size_t ib = (o * static_cast<std::size_t>(m.fine) +
                                    static_cast<std::size_t>(x)) * inner;
            for (int t = m.start[static_cast<std::size_t>(x)];
                 t < m.start[static_cast<std::size_t>(x) + 1]; ++t) {
                const std::size_t ob = (o * static_cast<std::size_t>(m.coarse) +
                                        static_cast<std::size_t>(m.idx[static_cast<std::size_t>(t)])) * inner;
                const double wv = m.w[static_cast<std::size_t>(t)];
                for (std::size_t c = 0; c < inner; ++c) out[ob + c] += wv * in[ib + c];
            }
        }
}

struct AxisMaps {
    std::array<AxisMap, kMaxControlDim> map;
};

inline AxisMaps build_axis_maps(const ControlLayout& l) {
    AxisMaps maps;
    for (int d = 0; d < l.ndim; ++d) maps.map[static_cast<std::size_t>(d)] = build_axis_map(l.extent[d], l.stride[d]);
    return maps;
}

} // namespace detail

/// Tensor-product Catmull-Rom interpolation from the coarse knot array to the
/// full-resolution control region (row-major, last axis fastest).
inline void expand_control(const ControlLayout& l, std::span<const double> coarse,
                           std::span<double> fine) {
    if (coarse.size() != l.coarse_cells() || fine.size() != l.fine_cells())
        throw ValidationError("expand_control: array sizes do not match the layout");
    const auto maps = detail::build_axis_maps(l);
    std::array<int, kMaxControlDim> shape{};
    for (int d = 0; d < l.ndim; ++d) shape[d] = l.coarse_extent(d);
    std::vector<double> buf_a(coarse.begin(), coarse.end());
    std::vector<double> buf_b(l.fine_cells());
    std::span<const double> cur(buf_a);
    for (int a = l.ndim - 1; a >= 0; --a) {
        std::size_t outer = 1, inner = 1;
        for (int d = 0; d < a; ++d) outer *= static_cast<std::size_t>(shape[d]);
        for (int d = a + 1; d < l.ndim; ++d) inner *= static_cast<std::size_t>(shape[d]);
        const auto& m = maps.map[static_cast<std::size_t>(a)];
        std::span<double> dst = (a == 0) ? fine : std::span<double>(buf_b).subspan(
            0, outer * static_cast<std::size_t>(m.fine) * inner);
        detail::axis_expand(m, cur, dst, outer, inner);
        shape[a] = l.extent[a];
        if (a != 0) {
            buf_a.assign(dst.begin(), dst.end());
            cur = std::span<const double>(buf_a).subspan(0, dst.size());
        }
    }
}

/// Exact transpose of expand_control: scatters a full-resolution gradient
/// back onto the coarse knots so that <expand(c), f> == <c, restrict(f)>.
inline void restrict_gradient(const ControlLayout& l, std::span<const double> fine,
                              std::span<double> coarse) {
    if (coarse.size() != l.coarse_cells() || fine.size() != l.fine_cells())
        throw ValidationError("restrict_gradient: array sizes do not match the layout");
    const auto maps = detail::build_axis_maps(l);
    std::array<int, kMaxControlDim> shape{};
    for (int d = 0; d < l.ndim; ++d) shape[d] = l.extent[d];
    std::vector<double> buf_a(fine.begin(), fine.end());
    std::vector<double> buf_b(l.fine_cells());
    std::span<const double> cur(buf_a);
    for (int a = 0; a < l.ndim; ++a) {
        std::size_t outer = 1, inner = 1;
        for (int d = 0; d < a; ++d) outer *= static_cast<std::size_t>(shape[d]);
        for (int d = a + 1; d < l.ndim; ++d) inner *= static_cast<std::size_t>(shape[d]);
        const auto& m = maps.map[static_cast<std::size_t>(a)];
        const std::size_t out_size = outer * static_cast<std::size_t>(m.coarse) * inner;
        std::span<double> dst = (a == l.ndim - 1) ? coarse
                                                  : std::span<double>(buf_b).subspan(0, out_size);
        detail::axis_restrict(m, cur, dst, outer, inner);
        shape[a] = l.coarse_extent(a);
        if (a != l.ndim - 1) {
            buf_a.assign(dst.begin(), dst.end());
            cur = std::span<const double>(buf_a).subspan(0, dst.size());
        }
    }
}

/// The full control state: one coarse knot array per stored snapshot.
struct ControlParameterization {
    ControlLayout layout;
    std::vector<std::vector<double>> snapshots;
};

inline ControlParameterization make_control(const ControlLayout& l) {
    ControlParameterization p;
    p.layout = l;
    p.snapshots.assign(l.snapshot_count(), std::vector<double>(l.coarse_cells(), 0.0));
    return p;
}

inline void validate_control(const ControlParameterization& p) {
    if (p.snapshots.size() != p.layout.snapshot_count())
        throw ValidationError("control: snapshot count does not match the layout");
    for (const auto& s : p.snapshots)
        if (s.size() != p.layout.coarse_cells())
            throw ValidationError("control: snapshot array does not match the coarse region");
}

/// Full-resolution control over the region at sub-step s: the temporal
/// interpolation acts on the coarse knots first (the maps commute), then one
/// spatial expansion produces the fine values.
inline void control_value_at(const ControlParameterization& p, long s, std::span<double> fine) {
    validate_control(p);
    const auto g = gamma_weights(p.layout, s);
    std::vector<double> coarse(p.layout.coarse_cells(), 0.0);
    for (int k = 0; k < g.count; ++k)
        axpy(g.weight[static_cast<std::size_t>(k)],
             std::span<const double>(p.snapshots[static_cast<std::size_t>(g.index[static_cast<std::size_t>(k)])]),
             std::span<double>(coarse));
    expand_control(p.layout, coarse, fine);
}

inline std::size_t control_dof_count(const ControlLayout& l) {
    return l.snapshot_count() * l.coarse_cells();
}

inline std::vector<double> pack_control(const ControlParameterization& p) {
    std::vector<double> x;
    x.reserve(control_dof_count(p.layout));
    for (const auto& s : p.snapshots) x.insert(x.end(), s.begin(), s.end());
    return x;
}

inline void unpack_control(std::span<const double> x, ControlParameterization& p) {
    if (x.size() != control_dof_count(p.layout))
        throw ValidationError("unpack_control: flat vector length does not match the layout");
    std::size_t off = 0;
    for (auto& s : p.snapshots) {
        std::copy(x.begin() + static_cast<std::ptrdiff_t>(off),
                  x.begin() + static_cast<std::ptrdiff_t>(off + s.size()), s.begin());
        off += s.size();
    }
}

/// Accumulates per-sub-step control-space terms into per-snapshot gradients:
/// grad_i = sum_s gamma_{s,i} * scale * term(s) on the fine region, restricted
/// to the coarse knots once at the end.
class GradientAccumulator {
public:
    explicit GradientAccumulator(const ControlLayout& l)
        : layout_(l), fine_(l.snapshot_count(), std::vector<double>(l.fine_cells(), 0.0)) {}

    /// `s_rhs` is the sub-step at which the right-hand side was evaluated.
    void add(long s_rhs, std::span<const double> fine_term, double scale) {
        if (fine_term.size() != layout_.fine_cells())
            throw ValidationError("gradient accumulator: term does not match the region");
        const auto g = gamma_weights(layout_, s_rhs);
        for (int k = 0; k < g.count; ++k)
            axpy(scale * g.weight[static_cast<std::size_t>(k)], fine_term,
                 std::span<double>(fine_[static_cast<std::size_t>(g.index[static_cast<std::size_t>(k)])]));
    }

    std::span<const double> fine(std::size_t i) const { return fine_[i]; }

    std::vector<std::vector<double>> finalize() const {
        std::vector<std::vector<double>> out(fine_.size(),
                                             std::vector<double>(layout_.coarse_cells()));
        for (std::size_t i = 0; i < fine_.size(); ++i)
            restrict_gradient(layout_, fine_[i], out[i]);
        return out;
    }

private:
    ControlLayout layout_;
    std::vector<std::vector<double>> fine_;
};

} // namespace afl
