// aflow: configuration-driven front end for the flow sensitivity toolkit.
//
// Subcommands: simulate, gradient, tangent, optimize, verify, lyapunov, blowup.
// Every run writes resolved.ini (the merged configuration) and run.log into
// the output directory; rerunning from resolved.ini reproduces the outputs
// bit for bit, so no wall-clock data ever lands in an output file.
//
// Exit codes: 0 success, 1 configuration or runtime error, 2 a verification
// gate failed.

#include <CLI11.hpp>

#include <afl/chaos.hpp>
#include <afl/config.hpp>
#include <afl/cost.hpp>
#include <afl/io.hpp>
#include <afl/lorenz.hpp>
#include <afl/optimize.hpp>
#include <afl/sensitivity.hpp>
#include <afl/stencil.hpp>
#include <afl/system.hpp>
#include <afl/verify.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace afl;

namespace {

std::string fnum(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

std::string pad6(long v) {
    std::ostringstream os;
    os << std::setw(6) << std::setfill('0') << v;
    return os.str();
}

struct CommandInputs {
    std::string config_path;
    std::string out_dir;
    long threads = 0;
    std::uint64_t seed = 0;
    bool seed_given = false;
};

struct RunContext {
    Config cfg;
    fs::path out;
    std::ofstream log;

    void note(const std::string& line) {
        log << line << '\n';
        std::cout << line << '\n';
    }
    std::string path(const std::string& name) const { return (out / name).string(); }
};

RunContext make_context(const CommandInputs& in, const std::string& command) {
    RunContext ctx;
    ctx.cfg = Config::parse_file(in.config_path);
    if (in.seed_given) ctx.cfg.set("seed", std::to_string(in.seed));
    if (in.threads > 0) ctx.cfg.set("run.threads", std::to_string(in.threads));

    const std::string out =
        in.out_dir.empty() ? ctx.cfg.get_string("run.out", "aflow_out") : in.out_dir;
    ctx.out = fs::path(out);
    std::error_code ec;
    fs::create_directories(ctx.out, ec);
    if (ec) throw RuntimeError("cannot create output directory '" + out + "': " + ec.message());

    std::ofstream resolved(ctx.path("resolved.ini"));
    resolved << ctx.cfg.dump();
    if (!resolved) throw RuntimeError("cannot write '" + ctx.path("resolved.ini") + "'");
    resolved.close();

    ctx.log.open(ctx.path("run.log"));
    if (!ctx.log) throw RuntimeError("cannot write '" + ctx.path("run.log") + "'");
    ctx.note("command: " + command);
    ctx.note("system: " + ctx.cfg.get_string("run.system"));
    if (ctx.cfg.has("provenance.scaled_from"))
        ctx.note("scaled-from: " + ctx.cfg.get_string("provenance.scaled_from"));
    return ctx;
}

std::uint64_t seed_for(const Config& cfg, std::uint64_t purpose) {
    // one root seed governs every random draw; consumers get fixed offsets
    return cfg.get_seed("seed", 12345) + purpose;
}

// purpose offsets for seed_for
constexpr std::uint64_t kSeedDirection = 1;
constexpr std::uint64_t kSeedProbes = 2;
constexpr std::uint64_t kSeedIdentity = 3;
constexpr std::uint64_t kSeedDuality = 4;
constexpr std::uint64_t kSeedInit = 6;
constexpr std::uint64_t kSeedMle = 8;

int system_ndim(const Config& cfg) {
    const auto s = cfg.get_string("run.system");
    if (s == "lorenz") return 0;
    if (s == "ns1d") return 1;
    if (s == "ns2d") return 2;
    throw ValidationError("config: unknown run.system '" + s + "' (expected lorenz, ns1d or ns2d)");
}

IntegrateOptions base_options(const Config& cfg, int stages, long steps) {
    IntegrateOptions opt;
    opt.dt = cfg.get_double("run.dt");
    opt.n_substeps = steps * stages;
    opt.filter = cfg.get_bool("run.filter", true);
    opt.filter_stride = static_cast<int>(cfg.get_long("run.filter_stride", 2));
    opt.check_states = cfg.get_bool("run.check_states", true);
    return opt;
}

std::vector<double> double_list(const Config& cfg, const std::string& key, std::size_t want) {
    auto v = cfg.get_doubles(key);
    if (v.size() != want)
        throw ValidationError("config: " + key + " needs " + std::to_string(want) + " entries");
    return v;
}

std::array<int, kMaxDim> int_list(const Config& cfg, const std::string& key, int ndim) {
    const auto v = double_list(cfg, key, static_cast<std::size_t>(ndim));
    std::array<int, kMaxDim> a{};
    for (int d = 0; d < ndim; ++d) a[static_cast<std::size_t>(d)] = static_cast<int>(std::llround(v[static_cast<std::size_t>(d)]));
    return a;
}

Grid config_grid(const Config& cfg, int ndim) {
    if (ndim == 1)
        return make_grid_1d(static_cast<int>(cfg.get_long("grid.n0")),
                            cfg.get_double("grid.L0", 1.0));
    return make_grid_2d(static_cast<int>(cfg.get_long("grid.n0")),
                        static_cast<int>(cfg.get_long("grid.n1")),
                        cfg.get_double("grid.L0", 1.0), cfg.get_double("grid.L1", 1.0));
}

FluidParams config_fluid(const Config& cfg) {
    return make_fluid_params(cfg.get_double("fluid.gamma", 1.4), cfg.get_double("fluid.re", 2000.0),
                             cfg.get_double("fluid.ma", 0.9), cfg.get_double("fluid.pr", 0.7));
}

LorenzSystem build_lorenz(const Config& cfg) {
    return LorenzSystem(cfg.get_double("lorenz.sigma", 10.0), cfg.get_double("lorenz.rho", 28.0),
                        cfg.get_double("lorenz.beta", 8.0 / 3.0),
                        static_cast<int>(cfg.get_long("lorenz.forcing_component", 0)));
}

std::vector<double> lorenz_initial(const Config& cfg) {
    return {cfg.get_double("init.x0", 1.0), cfg.get_double("init.y0", 1.0),
            cfg.get_double("init.z0", 1.0)};
}

/// Low-pass filtered noise around the quiescent background.
StateField smooth_random_state(const Grid& g, const FluidParams& par, std::uint64_t seed,
                               double amplitude) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    StateField f(g);
    const double p0 = background_pressure(par);
    std::vector<double> noise(g.cells()), work(g.cells());
    auto smooth = [&](std::span<double> out) {
        for (auto& x : noise) x = dist(rng);
        std::span<const double> src(noise);
        for (int axis = 0; axis < g.ndim; ++axis) {
            auto filt = build_filter(10, axis, g, 1.0);
            apply(filt, g, src, std::span<double>(work));
            apply(filt, g, std::span<const double>(work), out);
            src = out;
        }
    };
    std::vector<double> s(g.cells());
    smooth(s);
    for (std::size_t c = 0; c < g.cells(); ++c) f.rho()[c] = 1.0 + amplitude * s[c];
    for (int d = 0; d < g.ndim; ++d) {
        smooth(s);
        for (std::size_t c = 0; c < g.cells(); ++c) f.mom(d)[c] = amplitude * s[c];
    }
    smooth(s);
    for (std::size_t c = 0; c < g.cells(); ++c) f.pres()[c] = p0 * (1.0 + amplitude * s[c]);
    return f;
}

std::vector<double> ns_initial(const NsSystem& sys, const Config& cfg) {
    const auto& g = sys.grid();
    const auto kind = cfg.get_string("init.kind", "quiescent");
    StateField f(g);
    if (kind == "quiescent") {
        f = quiescent_state(g, sys.params());
    } else if (kind == "jet2d") {
        f = jet2d_state(g, sys.params(), cfg.get_double("init.velocity", 0.5),
                        cfg.get_double("init.thickness", 0.05),
                        cfg.get_double("init.seed_amplitude", 1e-3));
    } else if (kind == "random") {
        f = smooth_random_state(g, sys.params(), seed_for(cfg, kSeedInit),
                                cfg.get_double("init.amplitude", 0.05));
    } else {
        throw ValidationError("config: unknown init.kind '" + kind + "'");
    }
    return {f.flat().begin(), f.flat().end()};
}

template <class System>
void warm_start(System& sys, const RKScheme& rk, const Config& cfg, std::vector<double>& u) {
    const long warm = cfg.get_long("init.warm_steps", 0);
    if (warm <= 0) return;
    auto opt = base_options(cfg, rk.stages, warm);
    integrate(sys, rk, opt, std::span<double>(u));
}

long control_stride(const Config& cfg, long steps) {
    return cfg.get_long("control.snapshot_stride", std::max<long>(1, steps / 4));
}

void attach_lorenz_control(LorenzSystem& sys, const Config& cfg, const RKScheme& rk, long steps) {
    if (cfg.has("control.file")) {
        sys.set_control(read_control(cfg.get_string("control.file")));
        return;
    }
    const auto snaps = uniform_snapshot_steps(0, steps, control_stride(cfg, steps));
    const int one[1] = {1};
    auto layout = make_control_layout(1, std::span<const int>(one, 1),
                                      std::span<const int>(one, 1), snaps, rk.stages);
    auto c = make_control(layout);
    if (cfg.has("control.values")) {
        const auto v = double_list(cfg, "control.values", c.snapshots.size());
        for (std::size_t k = 0; k < v.size(); ++k) c.snapshots[k][0] = v[k];
    }
    sys.set_control(std::move(c));
}

void attach_ns_control(NsSystem& sys, const Config& cfg, const RKScheme& rk, long steps,
                       double dt) {
    const auto& g = sys.grid();
    ControlSourceConfig src;
    for (int d = 0; d < g.ndim; ++d) {
        // default: a centered box covering three quarters of the domain per
        // axis (the source ramps need headroom on small grids)
        src.box_lo[static_cast<std::size_t>(d)] = g.n[static_cast<std::size_t>(d)] / 8;
        src.box_hi[static_cast<std::size_t>(d)] =
            g.n[static_cast<std::size_t>(d)] - g.n[static_cast<std::size_t>(d)] / 8;
    }
    if (cfg.has("control.box_lo") != cfg.has("control.box_hi"))
        throw ValidationError("config: control.box_lo and control.box_hi must be given together");
    if (cfg.has("control.box_lo")) {
        src.box_lo = int_list(cfg, "control.box_lo", g.ndim);
        src.box_hi = int_list(cfg, "control.box_hi", g.ndim);
    }
    src.t_start = cfg.get_double("control.t_start", 0.0);
    src.t_end = cfg.get_double("control.t_end",
                               std::max(static_cast<double>(steps) * dt, 21.0 * dt));
    src.dt = dt;
    sys.enable_control_source(src);

    int ext[kMaxDim] = {1, 1};
    std::array<int, kMaxDim> stride{};
    stride.fill(1);
    if (cfg.has("control.stride")) stride = int_list(cfg, "control.stride", g.ndim);
    for (int d = 0; d < g.ndim; ++d) {
        ext[d] = src.box_extent(d);
        if (!cfg.has("control.stride") && ext[d] % 4 == 0)
            stride[static_cast<std::size_t>(d)] = 4;
    }
    const auto snaps = uniform_snapshot_steps(0, steps, control_stride(cfg, steps));
    auto layout = make_control_layout(g.ndim, std::span<const int>(ext, static_cast<std::size_t>(g.ndim)),
                                      std::span<const int>(stride.data(), static_cast<std::size_t>(g.ndim)),
                                      snaps, rk.stages);
    if (cfg.has("control.file")) {
        sys.set_control(read_control(cfg.get_string("control.file")));
    } else {
        sys.set_control(make_control(layout));
    }
}

bool wants_control(const Config& cfg) {
    return cfg.get_bool("control.enabled", false) || cfg.has("control.file") ||
           cfg.has("control.values");
}

std::vector<double> cost_target(const Config& cfg, std::size_t n) {
    if (cfg.has("cost.target")) return double_list(cfg, "cost.target", n);
    return std::vector<double>(n, 0.0);
}

QuadraticCost lorenz_cost(const Config& cfg, int stages, long steps) {
    const long w0 = cfg.get_long("cost.window_start", 0);
    const long w1 = cfg.get_long("cost.window_end", steps);
    return QuadraticCost(cost_target(cfg, 3), w0 * stages, w1 * stages,
                         cfg.get_double("cost.weight", 1.0));
}

CostRegion config_region(const Config& cfg, const Grid& g) {
    CostRegion r;
    for (int d = 0; d < g.ndim; ++d) r.hi[static_cast<std::size_t>(d)] = g.n[static_cast<std::size_t>(d)] - 1;
    if (cfg.has("cost.region_lo") != cfg.has("cost.region_hi"))
        throw ValidationError("config: cost.region_lo and cost.region_hi must be given together");
    if (cfg.has("cost.region_lo")) {
        r.lo = int_list(cfg, "cost.region_lo", g.ndim);
        r.hi = int_list(cfg, "cost.region_hi", g.ndim);
    }
    return r;
}

MeanMode config_mean(const Config& cfg) {
    const auto m = cfg.get_string("cost.mean", "running");
    if (m == "running") return MeanMode::running;
    if (m == "frozen") return MeanMode::frozen;
    throw ValidationError("config: cost.mean must be running or frozen");
}

PressureCost ns_cost(const Config& cfg, const Grid& g, int stages, long steps, double dt) {
    const long w0 = cfg.get_long("cost.window_start", 0);
    const long w1 = cfg.get_long("cost.window_end", steps);
    return PressureCost(g, config_region(cfg, g), w0 * stages, w1 * stages, dt / stages,
                        config_mean(cfg));
}

/// Random perturbation of the attached control; envelope_width > 0 applies a
/// Gaussian window over the snapshot index, peaked mid-horizon.
ControlParameterization random_direction(const ControlParameterization& base, std::uint64_t seed,
                                         double amplitude, double envelope_width) {
    auto d = make_control(base.layout);
    std::mt19937_64 prng(seed);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    const double mid = 0.5 * static_cast<double>(d.snapshots.size() - 1);
    for (std::size_t k = 0; k < d.snapshots.size(); ++k) {
        double env = 1.0;
        if (envelope_width > 0.0) {
            const double z = (static_cast<double>(k) - mid) / envelope_width;
            env = std::exp(-z * z);
        }
        for (auto& x : d.snapshots[k]) x = amplitude * env * unit(prng);
    }
    return d;
}

template <class System>
ControlParameterization config_direction(const RunContext& ctx, const System& sys) {
    if (ctx.cfg.has("tangent.file")) return read_control(ctx.cfg.get_string("tangent.file"));
    return random_direction(sys.control(), seed_for(ctx.cfg, kSeedDirection),
                            ctx.cfg.get_double("tangent.amplitude", 1.0), -1.0);
}

TrajectoryStore make_store(const Config& cfg, const RKScheme& rk) {
    const auto mode = cfg.get_string("adjoint.store", "all");
    if (mode == "all") return TrajectoryStore(TrajectoryStore::Mode::store_all, rk.stages);
    if (mode == "checkpoint")
        return TrajectoryStore(TrajectoryStore::Mode::checkpoint, rk.stages,
                               cfg.get_long("adjoint.checkpoint_iters", 50));
    throw ValidationError("config: adjoint.store must be all or checkpoint");
}

double total_mass(const Grid& g, std::span<const double> u) {
    auto sv = state_view<const double>(g, u);
    double m = 0.0;
    for (std::size_t c = 0; c < g.cells(); ++c) m += sv.rho[c];
    return m * g.cell_volume();
}

const std::vector<std::string> kCostHeader{"substep", "time", "instantaneous", "cumulative"};

// ---------------------------------------------------------------------------
// simulate

int simulate_lorenz(RunContext& ctx) {
    const auto rk = rk_carpenter_kennedy5();
    const long steps = ctx.cfg.get_long("run.steps");
    const auto opt = base_options(ctx.cfg, rk.stages, steps);
    const double dt_sub = opt.dt / rk.stages;
    const long snap_stride = ctx.cfg.get_long("run.snapshot_stride", 0);

    auto sys = build_lorenz(ctx.cfg);
    auto u = lorenz_initial(ctx.cfg);
    warm_start(sys, rk, ctx.cfg, u);
    if (wants_control(ctx.cfg)) attach_lorenz_control(sys, ctx.cfg, rk, steps);

    auto cost = lorenz_cost(ctx.cfg, rk.stages, steps);
    const auto target = cost_target(ctx.cfg, 3);
    const double weight = ctx.cfg.get_double("cost.weight", 1.0);
    const long c0 = cost.interval_begin(), c1 = cost.interval_end();

    CsvWriter ccsv(ctx.path("cost.csv"), kCostHeader);
    double cum = 0.0;
    cost.reset();
    integrate(sys, rk, opt, std::span<double>(u), nullptr,
              [&](long s, std::span<const double> uu) {
                  cost.collect(s, uu);
                  if (s >= c0 && s <= c1) {
                      double inst = 0.0;
                      for (std::size_t i = 0; i < uu.size(); ++i) {
                          const double d = uu[i] - target[i];
                          inst += weight * d * d;
                      }
                      cum += inst;
                      ccsv.row(s, static_cast<double>(s) * dt_sub, inst, cum);
                  }
                  if (snap_stride > 0 && s % (rk.stages * snap_stride) == 0)
                      write_snapshot(ctx.path("snap_" + pad6(s / rk.stages) + ".bin"),
                                     flat_shape(uu.size()), uu);
              });
    cost.finalize();
    ccsv.flush();
    write_snapshot(ctx.path("final.bin"), flat_shape(u.size()), u);
    ctx.note("steps: " + std::to_string(steps) + ", dt: " + fnum(opt.dt));
    ctx.note("cost: " + fnum(cost.value()));
    ctx.note("final state: " + fnum(u[0]) + " " + fnum(u[1]) + " " + fnum(u[2]));
    return 0;
}

int simulate_ns(RunContext& ctx, int nd) {
    const auto rk = rk_carpenter_kennedy5();
    const long steps = ctx.cfg.get_long("run.steps");
    const auto opt = base_options(ctx.cfg, rk.stages, steps);
    const double dt_sub = opt.dt / rk.stages;
    const long snap_stride = ctx.cfg.get_long("run.snapshot_stride", 0);

    NsSystem sys(config_grid(ctx.cfg, nd), config_fluid(ctx.cfg),
                 ctx.cfg.get_bool("run.filter", true));
    const auto& g = sys.grid();
    auto u = ns_initial(sys, ctx.cfg);
    warm_start(sys, rk, ctx.cfg, u);
    if (wants_control(ctx.cfg)) attach_ns_control(sys, ctx.cfg, rk, steps, opt.dt);

    auto cost = ns_cost(ctx.cfg, g, rk.stages, steps, opt.dt);
    cost.keep_series(true);

    const std::vector<std::string> mass_header{"step", "time", "mass", "relative_drift"};
    CsvWriter mcsv(ctx.path("mass.csv"), mass_header);
    double m_init = 0.0;
    bool have_m0 = false;

    cost.reset();
    integrate(sys, rk, opt, std::span<double>(u), nullptr,
              [&](long s, std::span<const double> uu) {
                  cost.collect(s, uu);
                  if (s % rk.stages == 0) {
                      const double m = total_mass(g, uu);
                      if (!have_m0) {
                          m_init = m;
                          have_m0 = true;
                      }
                      mcsv.row(s / rk.stages, static_cast<double>(s) * dt_sub, m,
                               (m - m_init) / m_init);
                  }
                  if (snap_stride > 0 && s % (rk.stages * snap_stride) == 0)
                      write_snapshot(ctx.path("snap_" + pad6(s / rk.stages) + ".bin"),
                                     snapshot_shape(g), uu);
              });
    cost.finalize();
    mcsv.flush();

    CsvWriter ccsv(ctx.path("cost.csv"), kCostHeader);
    const auto& ser = cost.series();
    double cum = 0.0;
    for (std::size_t k = 0; k < ser.size(); ++k) {
        const long s = cost.interval_begin() + static_cast<long>(k);
        cum += ser[k];
        ccsv.row(s, static_cast<double>(s) * dt_sub, ser[k], cum);
    }
    ccsv.flush();
    write_snapshot(ctx.path("final.bin"), snapshot_shape(g), u);

    const double m_final = total_mass(g, u);
    ctx.note("steps: " + std::to_string(steps) + ", dt: " + fnum(opt.dt));
    ctx.note("cost: " + fnum(cost.value()));
    ctx.note("mass drift: " + fnum((m_final - m_init) / m_init));
    return 0;
}

int cmd_simulate(RunContext& ctx) {
    const int nd = system_ndim(ctx.cfg);
    return nd == 0 ? simulate_lorenz(ctx) : simulate_ns(ctx, nd);
}

// ---------------------------------------------------------------------------
// gradient

template <class System, class Cost>
int gradient_core(RunContext& ctx, System& sys, const RKScheme& rk, const IntegrateOptions& opt,
                  const std::vector<double>& u0, Cost& cost, const SnapshotShape& shape,
                  double volume) {
    auto store = make_store(ctx.cfg, rk);
    AdjointOptions aopt;
    aopt.instrument = ctx.cfg.get_bool("adjoint.instrument", false);
    aopt.record_gradient_energy = true;

    run_cost_forward(sys, rk, opt, u0, cost, &store);
    const auto res = integrate_adjoint(sys, rk, opt, store, cost, aopt);
    if (!res.has_gradient) throw RuntimeError("gradient: the system has no control attached");

    write_control(ctx.path("gradient.afc"), res.gradient);
    write_snapshot(ctx.path("initial_sensitivity.bin"), shape, res.initial_sensitivity);

    const std::vector<std::string> eh{"substep", "time", "energy"};
    CsvWriter ecsv(ctx.path("gradient_energy.csv"), eh);
    const double dt_sub = opt.dt / rk.stages;
    for (std::size_t i = 0; i < res.gradient_energy.size(); ++i) {
        const long s = opt.s_begin + static_cast<long>(i);
        ecsv.row(s, static_cast<double>(s) * dt_sub, res.gradient_energy[i] * volume);
    }
    ecsv.flush();

    const auto x = pack_control(res.gradient);
    ctx.note("cost: " + fnum(cost.value()));
    ctx.note("gradient-norm: " + fnum(norm2(std::span<const double>(x))));
    ctx.note("control-dofs: " + std::to_string(x.size()));
    if (aopt.instrument)
        ctx.note("transpose-defect: " + fnum(res.max_transpose_defect) + " over " +
                 std::to_string(res.transpose_checks) + " checks");
    return 0;
}

int cmd_gradient(RunContext& ctx) {
    const auto rk = rk_carpenter_kennedy5();
    const int nd = system_ndim(ctx.cfg);
    const long steps = ctx.cfg.get_long("run.steps");
    const auto opt = base_options(ctx.cfg, rk.stages, steps);

    if (nd == 0) {
        auto sys = build_lorenz(ctx.cfg);
        auto u = lorenz_initial(ctx.cfg);
        warm_start(sys, rk, ctx.cfg, u);
        attach_lorenz_control(sys, ctx.cfg, rk, steps);
        auto cost = lorenz_cost(ctx.cfg, rk.stages, steps);
        return gradient_core(ctx, sys, rk, opt, u, cost, flat_shape(3), 1.0);
    }
    NsSystem sys(config_grid(ctx.cfg, nd), config_fluid(ctx.cfg),
                 ctx.cfg.get_bool("run.filter", true));
    auto u = ns_initial(sys, ctx.cfg);
    warm_start(sys, rk, ctx.cfg, u);
    attach_ns_control(sys, ctx.cfg, rk, steps, opt.dt);
    auto cost = ns_cost(ctx.cfg, sys.grid(), rk.stages, steps, opt.dt);
    return gradient_core(ctx, sys, rk, opt, u, cost, snapshot_shape(sys.grid()),
                         sys.grid().cell_volume());
}

// ---------------------------------------------------------------------------
// tangent

template <class System, class Cost>
int tangent_core(RunContext& ctx, System& sys, const RKScheme& rk, const IntegrateOptions& opt,
                 const std::vector<double>& u0, Cost& cost, const SnapshotShape& shape) {
    const auto dir = config_direction(ctx, sys);
    std::vector<double> v0(sys.state_size(), 0.0);

    const auto res = integrate_tangent(sys, rk, opt, u0, v0, &dir, &cost);

    const std::vector<std::string> th{"substep", "time", "tangent_norm"};
    CsvWriter tcsv(ctx.path("tangent.csv"), th);
    const double dt_sub = opt.dt / rk.stages;
    for (std::size_t i = 0; i < res.ydot_norm.size(); ++i) {
        const long s = opt.s_begin + static_cast<long>(i);
        tcsv.row(s, static_cast<double>(s) * dt_sub, res.ydot_norm[i]);
    }
    tcsv.flush();
    write_snapshot(ctx.path("tangent_final.bin"), shape, res.tangent);

    ctx.note("cost: " + fnum(cost.value()));
    ctx.note("jdot: " + fnum(res.jdot));
    return 0;
}

int cmd_tangent(RunContext& ctx) {
    const auto rk = rk_carpenter_kennedy5();
    const int nd = system_ndim(ctx.cfg);
    const long steps = ctx.cfg.get_long("run.steps");
    const auto opt = base_options(ctx.cfg, rk.stages, steps);

    if (nd == 0) {
        auto sys = build_lorenz(ctx.cfg);
        auto u = lorenz_initial(ctx.cfg);
        warm_start(sys, rk, ctx.cfg, u);
        attach_lorenz_control(sys, ctx.cfg, rk, steps);
        auto cost = lorenz_cost(ctx.cfg, rk.stages, steps);
        return tangent_core(ctx, sys, rk, opt, u, cost, flat_shape(3));
    }
    NsSystem sys(config_grid(ctx.cfg, nd), config_fluid(ctx.cfg),
                 ctx.cfg.get_bool("run.filter", true));
    auto u = ns_initial(sys, ctx.cfg);
    warm_start(sys, rk, ctx.cfg, u);
    attach_ns_control(sys, ctx.cfg, rk, steps, opt.dt);
    auto cost = ns_cost(ctx.cfg, sys.grid(), rk.stages, steps, opt.dt);
    return tangent_core(ctx, sys, rk, opt, u, cost, snapshot_shape(sys.grid()));
}

// ---------------------------------------------------------------------------
// optimize

template <class System, class Cost>
int optimize_core(RunContext& ctx, System& sys, const RKScheme& rk, const IntegrateOptions& opt,
                  const std::vector<double>& u0, Cost& cost) {
    LBFGSOptions lo;
    lo.max_iters = static_cast<int>(ctx.cfg.get_long("optimize.max_iters", 20));
    lo.memory = static_cast<int>(ctx.cfg.get_long("optimize.memory", 8));
    lo.grad_tol = ctx.cfg.get_double("optimize.grad_tol", 1e-8);
    lo.c1 = ctx.cfg.get_double("optimize.c1", 1e-4);
    lo.c2 = ctx.cfg.get_double("optimize.c2", 0.9);
    lo.alpha0 = ctx.cfg.get_double("optimize.alpha0", 1.0);
    lo.max_line_evals = static_cast<int>(ctx.cfg.get_long("optimize.max_line_evals", 25));

    const auto x0 = pack_control(sys.control());
    auto eval = [&](std::span<const double> x, std::span<double> gout) {
        auto c = sys.control();
        unpack_control(x, c);
        sys.set_control(std::move(c));
        auto store = make_store(ctx.cfg, rk);
        run_cost_forward(sys, rk, opt, u0, cost, &store);
        const auto res = integrate_adjoint(sys, rk, opt, store, cost, {});
        const auto gx = pack_control(res.gradient);
        std::copy(gx.begin(), gx.end(), gout.begin());
        return cost.value();
    };
    const auto res = optimize_control(eval, x0, lo);

    const std::vector<std::string> hh{"iteration", "cost", "gradient_norm", "alpha",
                                      "evaluations"};
    CsvWriter hcsv(ctx.path("history.csv"), hh);
    for (const auto& rec : res.history)
        hcsv.row(rec.iteration, rec.j, rec.grad_norm, rec.alpha, rec.evaluations);
    hcsv.flush();

    auto best = sys.control();
    unpack_control(res.x, best);
    write_control(ctx.path("control_opt.afc"), best);

    ctx.note("iterations: " + std::to_string(res.iterations));
    ctx.note("cost: " + fnum(res.history.front().j) + " -> " + fnum(res.j));
    ctx.note("gradient-norm: " + fnum(norm2(std::span<const double>(res.g))));
    ctx.note("stop: " + res.stop_reason);
    return 0;
}

int cmd_optimize(RunContext& ctx) {
    const auto rk = rk_carpenter_kennedy5();
    const int nd = system_ndim(ctx.cfg);
    const long steps = ctx.cfg.get_long("run.steps");
    const auto opt = base_options(ctx.cfg, rk.stages, steps);

    if (nd == 0) {
        auto sys = build_lorenz(ctx.cfg);
        auto u = lorenz_initial(ctx.cfg);
        warm_start(sys, rk, ctx.cfg, u);
        attach_lorenz_control(sys, ctx.cfg, rk, steps);
        auto cost = lorenz_cost(ctx.cfg, rk.stages, steps);
        return optimize_core(ctx, sys, rk, opt, u, cost);
    }
    NsSystem sys(config_grid(ctx.cfg, nd), config_fluid(ctx.cfg),
                 ctx.cfg.get_bool("run.filter", true));
    auto u = ns_initial(sys, ctx.cfg);
    warm_start(sys, rk, ctx.cfg, u);
    attach_ns_control(sys, ctx.cfg, rk, steps, opt.dt);
    auto cost = ns_cost(ctx.cfg, sys.grid(), rk.stages, steps, opt.dt);
    return optimize_core(ctx, sys, rk, opt, u, cost);
}

// ---------------------------------------------------------------------------
// verify

double relative_gap(double a, double b) {
    const double mag = std::max(std::abs(a), std::abs(b));
    return mag == 0.0 ? 0.0 : std::abs(a - b) / mag;
}

int cmd_verify(RunContext& ctx) {
    const auto rk = rk_carpenter_kennedy5();
    const int nd = system_ndim(ctx.cfg);
    VerifyReport rep;

    const int trials = static_cast<int>(ctx.cfg.get_long("verify.trials", 100));
    const double g_dot = ctx.cfg.get_double("verify.max_transpose_defect", 1e-13);
    const double g_cs = ctx.cfg.get_double("verify.max_complex_step", 1e-12);
    const double g_dual = ctx.cfg.get_double("verify.max_duality_defect", 1e-10);
    const double envelope = ctx.cfg.get_double("verify.envelope", 0.8);

    if (nd == 0) {
        auto sys = build_lorenz(ctx.cfg);
        auto u = lorenz_initial(ctx.cfg);
        warm_start(sys, rk, ctx.cfg, u);

        rep.check_below("transpose-defect", dot_product_test(sys, u, trials, seed_for(ctx.cfg, kSeedProbes)),
                        g_dot);
        double worst = 0.0;
        for (std::size_t c = 0; c < 3; ++c) worst = std::max(worst, complex_step_test(sys, u, c));
        rep.check_below("complex-step", worst, g_cs);

        const long substeps = ctx.cfg.get_long("verify.substeps", 500);
        const long steps = substeps / rk.stages;
        auto opt = base_options(ctx.cfg, rk.stages, steps);
        attach_lorenz_control(sys, ctx.cfg, rk, steps);
        auto cost = lorenz_cost(ctx.cfg, rk.stages, steps);

        auto xdot = random_direction(sys.control(), seed_for(ctx.cfg, kSeedIdentity), 1.0, envelope);
        const auto id = gradient_identity_test(sys, rk, opt, u, cost, &xdot);
        rep.check_above("gradient-identity-digits", id.digits,
                        ctx.cfg.get_double("verify.min_digits", 12.0));

        auto dual = random_direction(sys.control(), seed_for(ctx.cfg, kSeedDuality), 1.0, -1.0);
        const auto id2 = gradient_identity_test(sys, rk, opt, u, cost, &dual);
        rep.check_below("duality-defect", relative_gap(id2.lhs, id2.rhs), g_dual);
    } else {
        NsSystem sys(config_grid(ctx.cfg, nd), config_fluid(ctx.cfg),
                     ctx.cfg.get_bool("run.filter", true));
        const auto& g = sys.grid();
        auto uf = smooth_random_state(g, sys.params(), seed_for(ctx.cfg, kSeedInit),
                                      ctx.cfg.get_double("init.amplitude", 0.05));
        std::vector<double> u(uf.flat().begin(), uf.flat().end());

        rep.check_below("transpose-defect", dot_product_test(sys, u, trials, seed_for(ctx.cfg, kSeedProbes)),
                        g_dot);
        double worst = 0.0;
        for (int f = 0; f < g.ncomp(); ++f) {
            const std::size_t c = static_cast<std::size_t>(f) * g.cells() +
                                  (g.cells() / 2 + 7 * static_cast<std::size_t>(f)) % g.cells();
            worst = std::max(worst, complex_step_test(sys, u, c));
        }
        rep.check_below("complex-step", worst, g_cs);

        const long substeps = ctx.cfg.get_long("verify.substeps", 200);
        const long steps = substeps / rk.stages;
        auto opt = base_options(ctx.cfg, rk.stages, steps);
        attach_ns_control(sys, ctx.cfg, rk, steps, opt.dt);
        auto cost = ns_cost(ctx.cfg, g, rk.stages, steps, opt.dt);

        const double amp = ctx.cfg.get_double("verify.amplitude", 1e-4);
        auto xdot = random_direction(sys.control(), seed_for(ctx.cfg, kSeedIdentity), amp, envelope);
        const auto id = gradient_identity_test(sys, rk, opt, u, cost, &xdot);
        rep.check_above("gradient-identity-digits", id.digits,
                        ctx.cfg.get_double("verify.min_digits", 10.0));

        auto dual = random_direction(sys.control(), seed_for(ctx.cfg, kSeedDuality), 1.0, -1.0);
        const auto id2 = gradient_identity_test(sys, rk, opt, u, cost, &dual);
        rep.check_below("duality-defect", relative_gap(id2.lhs, id2.rhs), g_dual);
    }

    std::ofstream r(ctx.path("report.json"));
    r << rep.to_json() << '\n';
    if (!r) throw RuntimeError("cannot write '" + ctx.path("report.json") + "'");

    for (const auto& line : rep.lines)
        ctx.note(std::string(line.pass ? "PASS " : "FAIL ") + line.test + ": " + fnum(line.metric) +
                 " " + line.op + " " + fnum(line.threshold));
    ctx.note(rep.all_pass() ? "verification: all checks passed" : "verification: FAILED");
    return rep.all_pass() ? 0 : 2;
}

// ---------------------------------------------------------------------------
// lyapunov

MleOptions mle_options(const Config& cfg) {
    MleOptions mo;
    mo.integrate.dt = cfg.get_double("run.dt");
    mo.integrate.filter = cfg.get_bool("run.filter", true);
    mo.integrate.filter_stride = static_cast<int>(cfg.get_long("run.filter_stride", 2));
    mo.integrate.check_states = cfg.get_bool("run.check_states", true);
    mo.t_transient = cfg.get_double("lyapunov.t_transient", 0.0);
    mo.t_fit = cfg.get_double("lyapunov.t_fit");
    mo.renorm_substeps = static_cast<int>(cfg.get_long("lyapunov.renorm_substeps", 100));
    mo.seed = seed_for(cfg, kSeedMle);
    mo.warn_threshold = cfg.get_double("lyapunov.warn_threshold", 0.98);
    return mo;
}

void write_growth_csv(const RunContext& ctx, const std::string& name, const MleResult& res) {
    const std::vector<std::string> gh{"time", "log_growth"};
    CsvWriter gcsv(ctx.path(name), gh);
    for (std::size_t i = 0; i < res.t.size(); ++i) gcsv.row(res.t[i], res.log_growth[i]);
    gcsv.flush();
}

void note_mle(RunContext& ctx, const MleResult& res) {
    ctx.note("lambda: " + fnum(res.lambda));
    ctx.note("r-squared: " + fnum(res.r_squared));
    if (res.fit_warning) ctx.note("warning: growth fit is below the confidence threshold");
}

int cmd_lyapunov(RunContext& ctx) {
    const auto rk = rk_carpenter_kennedy5();
    const int nd = system_ndim(ctx.cfg);
    const auto mo = mle_options(ctx.cfg);

    if (nd == 0) {
        auto sys = build_lorenz(ctx.cfg);
        auto u = lorenz_initial(ctx.cfg);
        warm_start(sys, rk, ctx.cfg, u);
        const auto res = estimate_mle(sys, rk, mo, u);
        write_growth_csv(ctx, "growth.csv", res);
        note_mle(ctx, res);
        return 0;
    }

    if (ctx.cfg.has("lyapunov.re")) {
        const auto re_values = ctx.cfg.get_doubles("lyapunov.re");
        std::vector<MleResult> runs;
        const auto sweep = mle_re_sweep(
            [&](double re) {
                const auto base = config_fluid(ctx.cfg);
                NsSystem sys(config_grid(ctx.cfg, nd),
                             make_fluid_params(base.gamma, re, base.Ma, base.Pr),
                             ctx.cfg.get_bool("run.filter", true));
                auto u = ns_initial(sys, ctx.cfg);
                warm_start(sys, rk, ctx.cfg, u);
                auto res = estimate_mle(sys, rk, mo, u);
                runs.push_back(res);
                return res;
            },
            re_values);
        const std::vector<std::string> sh{"re", "lambda", "r_squared"};
        CsvWriter scsv(ctx.path("sweep.csv"), sh);
        for (const auto& p : sweep.points) scsv.row(p.re, p.lambda, p.r_squared);
        scsv.flush();
        for (std::size_t i = 0; i < runs.size(); ++i)
            write_growth_csv(ctx, "growth_" + pad6(static_cast<long>(i)) + ".csv", runs[i]);
        for (const auto& p : sweep.points)
            ctx.note("re " + fnum(p.re) + ": lambda " + fnum(p.lambda) + ", r-squared " +
                     fnum(p.r_squared));
        ctx.note("scaling-exponent: " + fnum(sweep.exponent));
        return 0;
    }

    NsSystem sys(config_grid(ctx.cfg, nd), config_fluid(ctx.cfg),
                 ctx.cfg.get_bool("run.filter", true));
    auto u = ns_initial(sys, ctx.cfg);
    warm_start(sys, rk, ctx.cfg, u);
    const auto res = estimate_mle(sys, rk, mo, u);
    write_growth_csv(ctx, "growth.csv", res);
    note_mle(ctx, res);
    return 0;
}

// ---------------------------------------------------------------------------
// blowup

template <class System, class CostFactory>
int blowup_core(RunContext& ctx, System& sys, const RKScheme& rk, const std::vector<double>& u0,
                const std::vector<double>& horizons, CostFactory&& make_cost) {
    BlowupOptions bo;
    bo.dt = ctx.cfg.get_double("run.dt");
    bo.fd_eps = ctx.cfg.get_double("blowup.fd_eps", 1e-6);
    bo.growth_fit_frac = ctx.cfg.get_double("blowup.growth_fit_frac", 0.2);
    bo.filter = ctx.cfg.get_bool("run.filter", true);

    const auto xdot = config_direction(ctx, sys);
    const auto study = blowup_study(sys, rk, horizons, u0, xdot, make_cost, bo);

    const std::vector<std::string> bh{"horizon",      "substeps", "jdot_tangent",
                                      "jdot_fd",      "relative_gap", "overflow_substep"};
    CsvWriter bcsv(ctx.path("blowup.csv"), bh);
    for (const auto& p : study.points)
        bcsv.row(p.horizon, p.n_substeps, p.jdot_tangent, p.jdot_fd, p.rel_gap,
                 p.tangent_overflow ? p.overflow_substep : -1L);
    bcsv.flush();

    for (std::size_t k = 0; k < study.points.size(); ++k) {
        const auto& p = study.points[k];
        const std::vector<std::string> nh{"time", "tangent_norm"};
        CsvWriter ncsv(ctx.path("blowup_norms_" + pad6(static_cast<long>(k)) + ".csv"), nh);
        for (std::size_t i = 0; i < p.ydot_norm.size(); ++i) ncsv.row(p.t[i], p.ydot_norm[i]);
        ncsv.flush();
    }

    for (const auto& p : study.points)
        ctx.note("horizon " + fnum(p.horizon) + ": gap " + fnum(p.rel_gap) +
                 (p.tangent_overflow ? " (tangent overflow at sub-step " +
                                           std::to_string(p.overflow_substep) + ")"
                                     : ""));
    ctx.note("growth-rate: " + fnum(study.growth_rate));
    ctx.note("growth-r-squared: " + fnum(study.growth_r_squared));

    if (ctx.cfg.has("lyapunov.t_fit")) {
        const auto mo = mle_options(ctx.cfg);
        const auto mle = estimate_mle(sys, rk, mo, u0);
        ctx.note("mle: " + fnum(mle.lambda));
        if (mle.lambda != 0.0)
            ctx.note("growth-vs-mle: " + fnum(study.growth_rate / mle.lambda));
    }
    return 0;
}

int cmd_blowup(RunContext& ctx) {
    const auto rk = rk_carpenter_kennedy5();
    const int nd = system_ndim(ctx.cfg);
    std::vector<double> horizons{1.0, 5.0, 30.0};
    if (ctx.cfg.has("blowup.horizons")) horizons = ctx.cfg.get_doubles("blowup.horizons");
    const double dt = ctx.cfg.get_double("run.dt");
    const long steps_max = std::lround(horizons.back() / dt);

    if (nd == 0) {
        auto sys = build_lorenz(ctx.cfg);
        auto u = lorenz_initial(ctx.cfg);
        warm_start(sys, rk, ctx.cfg, u);
        attach_lorenz_control(sys, ctx.cfg, rk, steps_max);
        const auto target = cost_target(ctx.cfg, 3);
        const double weight = ctx.cfg.get_double("cost.weight", 1.0);
        return blowup_core(ctx, sys, rk, u, horizons, [&](long n) {
            return QuadraticCost(target, n, n, weight);
        });
    }
    NsSystem sys(config_grid(ctx.cfg, nd), config_fluid(ctx.cfg),
                 ctx.cfg.get_bool("run.filter", true));
    const auto& g = sys.grid();
    auto u = ns_initial(sys, ctx.cfg);
    warm_start(sys, rk, ctx.cfg, u);
    attach_ns_control(sys, ctx.cfg, rk, steps_max, dt);
    const auto region = config_region(ctx.cfg, g);
    const auto mean = config_mean(ctx.cfg);
    const double dt_sub = dt / rk.stages;
    return blowup_core(ctx, sys, rk, u, horizons, [&, region, mean, dt_sub](long n) {
        return PressureCost(g, region, 0, n, dt_sub, mean);
    });
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"sensitivity and control toolkit for small compressible-flow problems"};
    app.require_subcommand(1);

    CommandInputs in;
    std::vector<std::pair<CLI::App*, CLI::Option*>> seed_opts;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", in.config_path, "configuration file (ini-style key = value)")
            ->required();
        sub->add_option("--out", in.out_dir, "output directory (default: run.out, else aflow_out)");
        sub->add_option("--threads", in.threads, "worker thread budget (recorded; runs are serial)");
        auto* s = sub->add_option("--seed", in.seed, "override the root seed");
        seed_opts.emplace_back(sub, s);
    };
    add_common(app.add_subcommand("simulate", "integrate the primal dynamics and record outputs"));
    add_common(app.add_subcommand("gradient", "adjoint sweep: cost gradient for the control"));
    add_common(app.add_subcommand("tangent", "tangent sweep along a control perturbation"));
    add_common(app.add_subcommand("optimize", "minimize the cost over the control knots"));
    add_common(app.add_subcommand("verify", "run the derivative identities against their gates"));
    add_common(app.add_subcommand("lyapunov", "estimate the maximal Lyapunov exponent"));
    add_common(app.add_subcommand("blowup", "tangent versus finite differences over horizons"));

    CLI11_PARSE(app, argc, argv);

    CLI::App* sub = app.get_subcommands().front();
    for (const auto& [s, o] : seed_opts)
        if (s == sub && o->count() > 0) in.seed_given = true;

    try {
        RunContext ctx = make_context(in, sub->get_name());
        const auto& name = sub->get_name();
        if (name == "simulate") return cmd_simulate(ctx);
        if (name == "gradient") return cmd_gradient(ctx);
        if (name == "tangent") return cmd_tangent(ctx);
        if (name == "optimize") return cmd_optimize(ctx);
        if (name == "verify") return cmd_verify(ctx);
        if (name == "lyapunov") return cmd_lyapunov(ctx);
        if (name == "blowup") return cmd_blowup(ctx);
        throw RuntimeError("unknown command '" + name + "'");
    } catch (const std::exception& e) {
        std::cerr << "aflow: " << e.what() << '\n';
        return 1;
    }
}
