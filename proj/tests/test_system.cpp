#include <catch2/catch_amalgamated.hpp>

#include <complex>
#include <numbers>

#include "afl/system.hpp"
#include "afl/vec.hpp"

#include "helpers.hpp"

using namespace afl;

namespace {

ControlSourceConfig box_source() {
    ControlSourceConfig cfg;
    cfg.box_lo = {4, 6};
    cfg.box_hi = {16, 18}; // 12 x 12 cells
    cfg.t_start = 0.0;
    cfg.t_end = 0.5;
    cfg.dt = 0.01;
    return cfg;
}

ControlParameterization box_control(const NsSystem& sys, unsigned seed) {
    const auto& cfg = sys.control_source();
    const int ext[2] = {cfg.box_extent(0), cfg.box_extent(1)};
    const int str[2] = {4, 4};
    const long steps[2] = {0, 2};
    auto layout = make_control_layout(2, ext, str, steps, 5);
    auto c = make_control(layout);
    for (auto& snap : c.snapshots) {
        auto r = testutil::random_vector(snap.size(), seed++, -1.0, 1.0);
        snap.assign(r.begin(), r.end());
    }
    return c;
}

} // namespace

TEST_CASE("system evaluation matches the bare operator without control", "[system]") {
    auto g = make_grid_2d(24, 24, 2.0, 2.0);
    auto par = make_fluid_params(1.4, 2000.0, 0.9);
    NsSystem sys(g, par);
    auto u = testutil::random_smooth_state(g, par, 1201);

    StateField a(g), b(g);
    sys.rhs(0.1, 3, u.flat(), a.flat());
    ns_rhs<double>(g, par, sys.derivatives(), u.view(), {}, b.view());
    CHECK(testutil::max_abs_diff(a.flat(), b.flat()) == 0.0);

    CHECK(sys.state_size() == g.state_size());
    CHECK_FALSE(sys.has_control());
    CHECK(sys.filtered());
}

TEST_CASE("attached control reproduces the windowed source oracle", "[system]") {
    auto g = make_grid_2d(24, 24, 2.0, 2.0);
    auto par = make_fluid_params(1.4, 2000.0, 0.9);
    NsSystem sys(g, par);
    auto cfg = box_source();
    sys.enable_control_source(cfg);
    auto c = box_control(sys, 1301);
    sys.set_control(c);

    auto u = testutil::random_smooth_state(g, par, 1302);
    const double t = 0.21;
    const long s = 7;

    StateField got(g), expect(g);
    sys.rhs(t, s, u.flat(), got.flat());

    // oracle: gamma-combined fine control, multiplied by the full-grid window
    // of the rhs module, masked to the box
    std::vector<double> fine(c.layout.fine_cells());
    control_value_at(c, s, fine);
    auto w = control_window(cfg, g, t);
    std::vector<double> src(g.cells(), 0.0);
    std::size_t b = 0;
    for (int i = cfg.box_lo[0]; i < cfg.box_hi[0]; ++i)
        for (int j = cfg.box_lo[1]; j < cfg.box_hi[1]; ++j) {
            const std::size_t cell = static_cast<std::size_t>(i * g.n[1] + j);
            src[cell] = w[cell] * fine[b++];
        }
    ns_rhs<double>(g, par, sys.derivatives(), u.view(), src, expect.view());
    CHECK(testutil::max_abs_diff(got.flat(), expect.flat()) < 1e-15);

    SECTION("support stays inside the box") {
        StateField bare(g);
        ns_rhs<double>(g, par, sys.derivatives(), u.view(), {}, bare.view());
        auto gp = got.view();
        auto bp = bare.view();
        for (int i = 0; i < g.n[0]; ++i)
            for (int j = 0; j < g.n[1]; ++j) {
                const std::size_t cell = static_cast<std::size_t>(i * g.n[1] + j);
                const bool inside = i >= cfg.box_lo[0] && i < cfg.box_hi[0] &&
                                    j >= cfg.box_lo[1] && j < cfg.box_hi[1];
                if (!inside) {
                    CHECK(gp.p[cell] == bp.p[cell]);
                }
                CHECK(gp.rho[cell] == bp.rho[cell]); // source enters pressure only
            }
    }
}

TEST_CASE("control attachment is validated against the source box", "[system]") {
    auto g = make_grid_2d(24, 24, 2.0, 2.0);
    auto par = make_fluid_params(1.4, 2000.0, 0.9);
    NsSystem sys(g, par);

    const int ext[2] = {12, 12}, str[2] = {4, 4};
    const long steps[1] = {0};
    auto c = make_control(make_control_layout(2, ext, str, steps, 5));
    CHECK_THROWS_AS(sys.set_control(c), ValidationError); // region not declared yet

    sys.enable_control_source(box_source());
    CHECK_NOTHROW(sys.set_control(c));
    CHECK(sys.has_control());

    const int bad_ext[2] = {16, 12};
    auto wrong = make_control(make_control_layout(2, bad_ext, str, steps, 5));
    CHECK_THROWS_AS(sys.set_control(wrong), ValidationError);

    const int ext1[1] = {12}, str1[1] = {4};
    auto flat = make_control(make_control_layout(1, ext1, str1, steps, 5));
    CHECK_THROWS_AS(sys.set_control(flat), ValidationError);

    sys.clear_control();
    CHECK_FALSE(sys.has_control());
}

TEST_CASE("tangent and adjoint stay dual through the system wrapper", "[system]") {
    auto g = make_grid_2d(16, 16, 1.0, 1.5);
    auto par = make_fluid_params(1.4, 1000.0, 0.9);
    NsSystem sys(g, par);
    ControlSourceConfig cfg;
    cfg.box_lo = {2, 3};
    cfg.box_hi = {14, 15};
    cfg.t_start = 0.0;
    cfg.t_end = 0.4;
    cfg.dt = 0.005;
    sys.enable_control_source(cfg);
    const int ext[2] = {12, 12}, str[2] = {3, 4};
    const long steps[2] = {0, 4};
    auto c = make_control(make_control_layout(2, ext, str, steps, 5));
    for (auto& snap : c.snapshots) {
        auto r = testutil::random_vector(snap.size(), 1401, -2.0, 2.0);
        snap.assign(r.begin(), r.end());
    }
    sys.set_control(c);

    auto u = testutil::random_smooth_state(g, par, 1402);
    auto v = testutil::random_vector(g.state_size(), 1403, -1.0, 1.0);
    auto xi = testutil::random_vector(g.state_size(), 1404, -1.0, 1.0);
    const double t = 0.13;
    const long s = 11;

    std::vector<double> jv(g.state_size()), jtxi(g.state_size());
    sys.rhs_tangent(t, s, u.flat(), v, nullptr, jv);
    sys.rhs_adjoint(t, s, u.flat(), xi, jtxi);
    const double a = dot(jv, xi), b = dot(v, jtxi);
    CHECK(std::abs(a - b) < 1e-13 * std::max({1.0, std::abs(a), std::abs(b)}));

    SECTION("control gradient term closes the source duality") {
        auto dir = box_control(sys, 1405);
        std::vector<double> with(g.state_size()), without(g.state_size());
        sys.rhs_tangent(t, s, u.flat(), v, &dir, with);
        sys.rhs_tangent(t, s, u.flat(), v, nullptr, without);
        const double lhs = dot(with, xi) - dot(without, xi);

        std::vector<double> gterm(sys.source_region_cells());
        sys.control_gradient_term(t, s, u.flat(), xi, gterm);
        std::vector<double> fine(dir.layout.fine_cells());
        control_value_at(dir, s, fine);
        const double rhs_val = dot(gterm, fine);
        CHECK(std::abs(lhs - rhs_val) < 1e-12 * std::max(1.0, std::abs(lhs)));
    }
}

TEST_CASE("complex evaluation reproduces the real path and the tangent", "[system]") {
    auto g = make_grid_2d(16, 16, 1.0, 1.0);
    auto par = make_fluid_params(1.4, 500.0, 0.9);
    NsSystem sys(g, par);
    ControlSourceConfig cfg;
    cfg.box_lo = {2, 2};
    cfg.box_hi = {14, 14};
    cfg.t_start = 0.0;
    cfg.t_end = 0.3;
    cfg.dt = 0.005;
    sys.enable_control_source(cfg);
    auto c = box_control(sys, 1501);
    sys.set_control(c);

    auto u = testutil::random_smooth_state(g, par, 1502);
    const double t = 0.11;
    const long s = 4;

    std::vector<std::complex<double>> uc(g.state_size()), fc(g.state_size());
    for (std::size_t i = 0; i < uc.size(); ++i) uc[i] = u.flat()[i];

    SECTION("real parts agree bitwise") {
        std::vector<double> f(g.state_size());
        sys.rhs(t, s, u.flat(), f);
        sys.rhs_complex(t, s, uc, nullptr, 0.0, fc);
        double worst = 0.0;
        for (std::size_t i = 0; i < fc.size(); ++i) {
            worst = std::max(worst, std::abs(fc[i].real() - f[i]));
            worst = std::max(worst, std::abs(fc[i].imag()));
        }
        CHECK(worst == 0.0);
    }

    SECTION("imaginary part carries the control derivative") {
        auto dir = box_control(sys, 1503);
        const double h = 1e-150;
        sys.rhs_complex(t, s, uc, &dir, h, fc);

        std::vector<double> zeros(g.state_size(), 0.0), tan(g.state_size());
        sys.rhs_tangent(t, s, u.flat(), zeros, &dir, tan);
        double worst = 0.0, scale = 0.0;
        for (std::size_t i = 0; i < fc.size(); ++i) {
            worst = std::max(worst, std::abs(fc[i].imag() / h - tan[i]));
            scale = std::max(scale, std::abs(tan[i]));
        }
        CHECK(worst < 1e-13 * std::max(1.0, scale));
    }
}

TEST_CASE("tensor filter and its transpose are adjoint to rounding", "[system]") {
    auto g = make_grid_2d(16, 12, 1.0, 1.0);
    auto par = make_fluid_params(1.4, 2000.0, 0.9);
    NsSystem sys(g, par);

    auto a = testutil::random_vector(g.state_size(), 1601, -1.0, 1.0);
    auto b = testutil::random_vector(g.state_size(), 1602, -1.0, 1.0);
    auto fa = a, ftb = b;
    sys.apply_filter(fa);
    sys.apply_filter_transpose(ftb);
    const double lhs = dot(fa, b), rhs = dot(a, ftb);
    CHECK(std::abs(lhs - rhs) < 1e-13 * std::max(1.0, std::abs(lhs)));

    SECTION("constants pass through unchanged") {
        std::vector<double> u(g.state_size());
        for (int comp = 0; comp < g.ncomp(); ++comp)
            for (std::size_t i = 0; i < g.cells(); ++i)
                u[static_cast<std::size_t>(comp) * g.cells() + i] = 1.0 + comp;
        auto v = u;
        sys.apply_filter(v);
        double worst = 0.0;
        for (std::size_t i = 0; i < u.size(); ++i) worst = std::max(worst, std::abs(v[i] - u[i]));
        CHECK(worst < 1e-14);
    }

    SECTION("grid-frequency noise is damped") {
        std::vector<double> u(g.state_size(), 0.0);
        auto pv = state_view<double>(g, std::span<double>(u));
        for (int i = 0; i < g.n[0]; ++i)
            for (int j = 0; j < g.n[1]; ++j)
                pv.p[static_cast<std::size_t>(i * g.n[1] + j)] = ((i + j) % 2 == 0) ? 1.0 : -1.0;
        sys.apply_filter(u);
        double after = 0.0;
        for (std::size_t i = 0; i < g.cells(); ++i) after = std::max(after, std::abs(pv.p[i]));
        CHECK(after < 0.1); // checkerboard mode nearly annihilated
    }
}

TEST_CASE("flow initializers produce physical periodic fields", "[system]") {
    auto par = make_fluid_params(1.4, 2000.0, 0.9);

    SECTION("quiescent state") {
        auto g = make_grid_2d(16, 16, 1.0, 1.0);
        auto f = quiescent_state(g, par);
        check_physical(f);
        CHECK(f.rho()[5] == 1.0);
        CHECK(f.pres()[9] == background_pressure(par));
        CHECK(f.mom(0)[3] == 0.0);

        NsSystem sys(g, par);
        StateField r(g);
        sys.rhs(0.0, 0, f.flat(), r.flat());
        CHECK(l2_norm(r) == 0.0); // rest state is an equilibrium
    }

    SECTION("opposed shear layers") {
        auto g = make_grid_2d(64, 64, 1.0, 1.0);
        auto f = jet2d_state(g, par, 0.5, 0.05, 1e-3);
        check_physical(f);
        auto mx = f.mom(1);
        // core of the jet moves forward, the outer band backward
        CHECK(mx[static_cast<std::size_t>(32 * 64 + 7)] > 0.49);
        CHECK(mx[7] < -0.49);
        // profile is continuous across the periodic seam: the two boundary
        // rows differ by at most the tanh tail
        double seam = 0.0;
        for (int j = 0; j < 64; ++j)
            seam = std::max(seam, std::abs(mx[static_cast<std::size_t>(j)] -
                                           mx[static_cast<std::size_t>(63 * 64 + j)]));
        CHECK(seam < 1e-3);
        NsSystem sys(g, par);
        CHECK_NOTHROW(sys.check_state(f.flat()));
    }
}
