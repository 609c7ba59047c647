#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "control.hpp"
#include "error.hpp"
#include "grid.hpp"
#include "timeloop.hpp"

namespace afl {

// Binary formats, all little-endian regardless of host:
//
//   snapshot  "AFL1" | u32 ndim | u64 extent[ndim] | u32 ncomp
//             | f64 data[ncomp * prod(extent)]   (component-major)
//
//   trajectory  snapshot records back to back, then an index footer
//             u64 count | (i64 substep, u64 offset)[count]
//             | u64 footer_offset | "AFLI"
//
//   control   "AFC1" | u32 ndim | (u64 extent, u64 stride)[ndim]
//             | u64 snapshot_count | i64 substep[count]
//             | f64 values[count * coarse_cells]

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    os.write(b, 4);
}

inline void put_u64(std::ostream& os, std::uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    os.write(b, 8);
}

inline void put_i64(std::ostream& os, std::int64_t v) { put_u64(os, static_cast<std::uint64_t>(v)); }

inline void put_f64(std::ostream& os, double v) { put_u64(os, std::bit_cast<std::uint64_t>(v)); }

inline std::uint32_t take_u32(std::istream& is, const char* what) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4))
        throw RuntimeError(std::string(what) + ": file truncated");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

inline std::uint64_t take_u64(std::istream& is, const char* what) {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8))
        throw RuntimeError(std::string(what) + ": file truncated");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

inline std::int64_t take_i64(std::istream& is, const char* what) {
    return static_cast<std::int64_t>(take_u64(is, what));
}

inline double take_f64(std::istream& is, const char* what) {
    return std::bit_cast<double>(take_u64(is, what));
}

inline void put_magic(std::ostream& os, const char m[4]) { os.write(m, 4); }

inline void expect_magic(std::istream& is, const char m[4], const char* what) {
    char b[4];
    if (!is.read(b, 4) || b[0] != m[0] || b[1] != m[1] || b[2] != m[2] || b[3] != m[3])
        throw RuntimeError(std::string(what) + ": bad magic (not a " + std::string(m, 4) +
                           " file)");
}

} // namespace detail

/// Array shape of one stored state: grid extents plus the component count
/// for flow fields, or a single flat axis for small systems.
struct SnapshotShape {
    int ndim = 1;
    std::array<std::size_t, kMaxDim> extent{};
    std::size_t ncomp = 1;

    std::size_t cells() const {
        std::size_t n = 1;
        for (int d = 0; d < ndim; ++d) n *= extent[static_cast<std::size_t>(d)];
        return n;
    }
    std::size_t values() const { return ncomp * cells(); }
};

inline SnapshotShape snapshot_shape(const Grid& g) {
    SnapshotShape s;
    s.ndim = g.ndim;
    for (int d = 0; d < g.ndim; ++d)
        s.extent[static_cast<std::size_t>(d)] = static_cast<std::size_t>(g.n[static_cast<std::size_t>(d)]);
    s.ncomp = static_cast<std::size_t>(g.ndim) + 2;
    return s;
}

inline SnapshotShape flat_shape(std::size_t n) {
    SnapshotShape s;
    s.ndim = 1;
    s.extent[0] = n;
    s.ncomp = 1;
    return s;
}

inline void write_snapshot(std::ostream& os, const SnapshotShape& shape,
                           std::span<const double> data) {
    if (data.size() != shape.values())
        throw ValidationError("snapshot: data has " + std::to_string(data.size()) +
                              " values, the shape needs " + std::to_string(shape.values()));
    detail::put_magic(os, "AFL1");
    detail::put_u32(os, static_cast<std::uint32_t>(shape.ndim));
    for (int d = 0; d < shape.ndim; ++d)
        detail::put_u64(os, shape.extent[static_cast<std::size_t>(d)]);
    detail::put_u32(os, static_cast<std::uint32_t>(shape.ncomp));
    for (double v : data) detail::put_f64(os, v);
    if (!os) throw RuntimeError("snapshot: write failed");
}

struct Snapshot {
    SnapshotShape shape;
    std::vector<double> data;
};

inline Snapshot read_snapshot(std::istream& is) {
    Snapshot s;
    detail::expect_magic(is, "AFL1", "snapshot");
    s.shape.ndim = static_cast<int>(detail::take_u32(is, "snapshot"));
    if (s.shape.ndim < 1 || s.shape.ndim > kMaxDim)
        throw RuntimeError("snapshot: unsupported dimension count " +
                           std::to_string(s.shape.ndim));
    for (int d = 0; d < s.shape.ndim; ++d)
        s.shape.extent[static_cast<std::size_t>(d)] = detail::take_u64(is, "snapshot");
    s.shape.ncomp = detail::take_u32(is, "snapshot");
    if (s.shape.ncomp < 1) throw RuntimeError("snapshot: no components");
    s.data.resize(s.shape.values());
    for (auto& v : s.data) v = detail::take_f64(is, "snapshot");
    return s;
}

inline void write_snapshot(const std::string& path, const SnapshotShape& shape,
                           std::span<const double> data) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw RuntimeError("snapshot: cannot open '" + path + "' for writing");
    write_snapshot(os, shape, data);
}

inline Snapshot read_snapshot(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw RuntimeError("snapshot: cannot open '" + path + "'");
    return read_snapshot(is);
}

/// Writes every state the store holds as consecutive snapshot records,
/// indexed by an (sub-step, offset) footer for selective access.
inline void save_trajectory(const std::string& path, const TrajectoryStore& store,
                            const SnapshotShape& shape) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw RuntimeError("trajectory: cannot open '" + path + "' for writing");
    std::vector<std::pair<std::int64_t, std::uint64_t>> index;
    for (const auto& [s, u] : store.states()) {
        index.emplace_back(s, static_cast<std::uint64_t>(os.tellp()));
        write_snapshot(os, shape, u);
    }
    const auto footer = static_cast<std::uint64_t>(os.tellp());
    detail::put_u64(os, index.size());
    for (const auto& [s, off] : index) {
        detail::put_i64(os, s);
        detail::put_u64(os, off);
    }
    detail::put_u64(os, footer);
    detail::put_magic(os, "AFLI");
    if (!os) throw RuntimeError("trajectory: write failed");
}

/// Loads every indexed record into the given store (which keeps its own
/// mode; a checkpoint-mode store accepts any recorded anchor). Returns the
/// shape found in the first record.
inline SnapshotShape load_trajectory(const std::string& path, TrajectoryStore& store) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw RuntimeError("trajectory: cannot open '" + path + "'");
    is.seekg(-12, std::ios::end);
    if (!is) throw RuntimeError("trajectory: file truncated");
    const auto footer = detail::take_u64(is, "trajectory");
    detail::expect_magic(is, "AFLI", "trajectory");
    is.seekg(static_cast<std::streamoff>(footer), std::ios::beg);
    const auto count = detail::take_u64(is, "trajectory");
    std::vector<std::pair<std::int64_t, std::uint64_t>> index(count);
    for (auto& [s, off] : index) {
        s = detail::take_i64(is, "trajectory");
        off = detail::take_u64(is, "trajectory");
    }
    if (index.empty()) throw RuntimeError("trajectory: no records");
    SnapshotShape shape;
    bool first = true;
    for (const auto& [s, off] : index) {
        is.seekg(static_cast<std::streamoff>(off), std::ios::beg);
        auto snap = read_snapshot(is);
        if (first) {
            shape = snap.shape;
            first = false;
        } else if (snap.shape.values() != shape.values()) {
            throw RuntimeError("trajectory: record at sub-step " + std::to_string(s) +
                               " has a different shape");
        }
        store.force(s, snap.data);
    }
    return shape;
}

inline void write_control(const std::string& path, const ControlParameterization& c) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw RuntimeError("control file: cannot open '" + path + "' for writing");
    const auto& l = c.layout;
    detail::put_magic(os, "AFC1");
    detail::put_u32(os, static_cast<std::uint32_t>(l.ndim));
    for (int d = 0; d < l.ndim; ++d) {
        detail::put_u64(os, static_cast<std::uint64_t>(l.extent[static_cast<std::size_t>(d)]));
        detail::put_u64(os, static_cast<std::uint64_t>(l.stride[static_cast<std::size_t>(d)]));
    }
    detail::put_u64(os, l.snapshot_substeps.size());
    for (long s : l.snapshot_substeps) detail::put_i64(os, s);
    for (const auto& snap : c.snapshots) {
        if (snap.size() != l.coarse_cells())
            throw ValidationError("control file: snapshot size does not match the layout");
        for (double v : snap) detail::put_f64(os, v);
    }
    if (!os) throw RuntimeError("control file: write failed");
}

inline ControlParameterization read_control(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw RuntimeError("control file: cannot open '" + path + "'");
    detail::expect_magic(is, "AFC1", "control file");
    ControlLayout l;
    l.ndim = static_cast<int>(detail::take_u32(is, "control file"));
    if (l.ndim < 1 || l.ndim > kMaxControlDim)
        throw RuntimeError("control file: unsupported dimension count " + std::to_string(l.ndim));
    for (int d = 0; d < l.ndim; ++d) {
        l.extent[static_cast<std::size_t>(d)] = static_cast<int>(detail::take_u64(is, "control file"));
        l.stride[static_cast<std::size_t>(d)] = static_cast<int>(detail::take_u64(is, "control file"));
    }
    const auto count = detail::take_u64(is, "control file");
    if (count == 0) throw RuntimeError("control file: no snapshots");
    l.snapshot_substeps.resize(count);
    long prev = 0;
    for (std::size_t i = 0; i < count; ++i) {
        l.snapshot_substeps[i] = static_cast<long>(detail::take_i64(is, "control file"));
        if (i > 0 && l.snapshot_substeps[i] <= prev)
            throw RuntimeError("control file: snapshot sub-steps out of order");
        prev = l.snapshot_substeps[i];
    }
    auto c = make_control(l);
    for (auto& snap : c.snapshots)
        for (auto& v : snap) v = detail::take_f64(is, "control file");
    return c;
}

/// CSV with a header row; numbers carry full round-trip precision, so a
/// rerun with identical inputs reproduces the file bitwise.
class CsvWriter {
public:
    CsvWriter(const std::string& path, std::span<const std::string> header)
        : os_(path) {
        if (!os_) throw RuntimeError("csv: cannot open '" + path + "' for writing");
        if (header.empty()) throw ValidationError("csv: empty header");
        os_.precision(17);
        for (std::size_t i = 0; i < header.size(); ++i)
            os_ << header[i] << (i + 1 < header.size() ? ',' : '\n');
        columns_ = header.size();
    }

    template <class... Ts>
    void row(Ts... vals) {
        if (sizeof...(vals) != columns_)
            throw ValidationError("csv: row has " + std::to_string(sizeof...(vals)) +
                                  " cells, the header has " + std::to_string(columns_));
        std::size_t i = 0;
        ((os_ << vals << (++i < sizeof...(vals) ? "," : "\n")), ...);
        if (!os_) throw RuntimeError("csv: write failed");
    }

    void flush() { os_.flush(); }

private:
    std::ofstream os_;
    std::size_t columns_ = 0;
};

/// Power ratio in decibels, the only acoustic unit helper the tools expose.
inline double decibels(double power_ratio) {
    if (!(power_ratio > 0.0))
        throw ValidationError("decibels: the power ratio must be positive");
    return 10.0 * std::log10(power_ratio);
}

} // namespace afl
