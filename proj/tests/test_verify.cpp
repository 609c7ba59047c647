#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

#include "afl/chaos.hpp"
#include "afl/cost.hpp"
#include "afl/lorenz.hpp"
#include "afl/system.hpp"
#include "afl/verify.hpp"

#include "helpers.hpp"

using namespace afl;

namespace {

ControlParameterization lorenz_forcing(std::vector<long> steps, int stages,
                                       std::vector<double> values) {
    const int one[1] = {1};
    auto layout = make_control_layout(1, one, one, steps, stages);
    auto c = make_control(layout);
    for (std::size_t i = 0; i < values.size(); ++i) c.snapshots[i][0] = values[i];
    return c;
}

NsSystem small_flow() {
    auto g = make_grid_2d(16, 16, 1.0, 1.0);
    auto par = make_fluid_params(1.4, 2000.0, 0.9);
    return NsSystem(g, par);
}

} // namespace

TEST_CASE("random probes keep the transpose identity at machine precision", "[verify]") {
    SECTION("small flow") {
        auto sys = small_flow();
        auto state = testutil::random_smooth_state(sys.grid(), sys.params(), 901);
        CHECK(dot_product_test(sys, state.flat(), 100, 17) < 1e-13);
    }
    SECTION("Lorenz") {
        LorenzSystem sys;
        std::vector<double> state{1.2, 3.4, 15.0};
        CHECK(dot_product_test(sys, state, 1000, 18) < 1e-14);
    }
}

TEST_CASE("a zero probe is exactly defect-free", "[verify]") {
    LorenzSystem sys;
    std::vector<double> state{1.2, 3.4, 15.0};
    std::vector<double> a(3, 0.0);
    auto b = testutil::random_vector(3, 19);
    CHECK(transpose_defect(sys, 0.0, 0, state, a, b) == 0.0);
    CHECK_THROWS_AS(dot_product_test(sys, state, 0, 1), ValidationError);
}

TEST_CASE("complex step matches the tangent at machine precision", "[verify]") {
    auto sys = small_flow();
    auto state = testutil::random_smooth_state(sys.grid(), sys.params(), 902);
    const std::size_t nc = sys.grid().cells();
    for (std::size_t comp : {std::size_t{5}, nc + 33, 2 * nc + 200, 3 * nc + 77})
        CHECK(complex_step_test(sys, state.flat(), comp) < 1e-13);
}

TEST_CASE("a parabola differentiates exactly through one complex evaluation", "[verify]") {
    auto square = [](std::complex<double> z) { return z * z; };
    CHECK(complex_step_derivative(square, 3.0, 1e-20) == 6.0);
    CHECK(complex_step_derivative(square, 3.0) == 6.0);
    CHECK_THROWS_AS(complex_step_derivative(square, 3.0, 0.0), ValidationError);
}

TEST_CASE("complex step error stays flat across tiny step sizes", "[verify]") {
    auto sys = small_flow();
    auto state = testutil::random_smooth_state(sys.grid(), sys.params(), 903);
    const std::size_t comp = sys.grid().cells() + 33;
    std::vector<double> errs;
    for (double h : {1e-10, 1e-20, 1e-30}) errs.push_back(complex_step_test(sys, state.flat(), comp, h));
    double emin = errs[0], emax = errs[0];
    for (double e : errs) {
        emin = std::min(emin, e);
        emax = std::max(emax, e);
        CHECK(e < 1e-13);
    }
    // no cancellation: shrinking h ten orders of magnitude leaves the error
    // at the roundoff floor instead of amplifying it
    CHECK(emax <= 10.0 * std::max(emin, 1e-16));
}

TEST_CASE("both sensitivity routes agree to twelve digits on the Lorenz chain", "[verify]") {
    auto rk = rk_carpenter_kennedy5();
    LorenzSystem sys;
    sys.set_control(lorenz_forcing({0, 25, 50, 75, 100}, rk.stages, {0.4, -0.2, 0.7, -0.5, 0.3}));

    IntegrateOptions opt;
    opt.dt = 0.01;
    opt.n_substeps = 500;
    std::vector<double> u0{1.0, 3.0, 15.0};
    QuadraticCost cost(std::vector<double>(3, 0.0), 0, opt.n_substeps, 1.0);

    SECTION("control perturbation") {
        auto xdot = lorenz_forcing({0, 25, 50, 75, 100}, rk.stages, {1.0, -0.8, 0.6, 0.9, -0.4});
        auto id = gradient_identity_test(sys, rk, opt, u0, cost, &xdot);
        CHECK(id.lhs != 0.0);
        CHECK(id.digits >= 12.0);
    }
    SECTION("initial-state perturbation") {
        auto v0 = testutil::random_vector(3, 23);
        auto id = gradient_identity_test(sys, rk, opt, u0, cost, nullptr, v0);
        CHECK(id.lhs != 0.0);
        CHECK(id.digits >= 12.0);
    }
    SECTION("no control attached") {
        sys.clear_control();
        auto xdot = lorenz_forcing({0, 100}, rk.stages, {1.0, 1.0});
        CHECK_THROWS_AS(gradient_identity_test(sys, rk, opt, u0, cost, &xdot), ValidationError);
    }
}

TEST_CASE("a zero perturbation yields exactly zero on both routes", "[verify]") {
    auto rk = rk_carpenter_kennedy5();
    LorenzSystem sys;
    sys.set_control(lorenz_forcing({0, 50, 100}, rk.stages, {0.4, -0.2, 0.7}));

    IntegrateOptions opt;
    opt.dt = 0.01;
    opt.n_substeps = 250;
    std::vector<double> u0{1.0, 3.0, 15.0};
    QuadraticCost cost(std::vector<double>(3, 0.0), 0, opt.n_substeps, 1.0);

    auto xdot = lorenz_forcing({0, 50, 100}, rk.stages, {0.0, 0.0, 0.0});
    auto id = gradient_identity_test(sys, rk, opt, u0, cost, &xdot);
    CHECK(id.lhs == 0.0);
    CHECK(id.rhs == 0.0);
    CHECK(std::isinf(id.digits));
}

TEST_CASE("both routes agree to ten digits on the small flow problem", "[verify]") {
    auto rk = rk_carpenter_kennedy5();
    auto sys = small_flow();
    const auto& g = sys.grid();

    IntegrateOptions opt;
    opt.dt = 0.01;
    opt.n_substeps = 20;

    ControlSourceConfig cfg;
    cfg.box_lo = {2, 2};
    cfg.box_hi = {14, 14}; // 12 cells per axis
    cfg.t_start = 0.0;
    cfg.t_end = 0.25;
    cfg.dt = opt.dt;
    sys.enable_control_source(cfg);

    const int ext[2] = {cfg.box_extent(0), cfg.box_extent(1)};
    const int stride[2] = {4, 4};
    const long snap_steps[3] = {0, 2, 4};
    auto layout = make_control_layout(2, ext, stride, snap_steps, rk.stages);
    sys.set_control(make_control(layout));

    // small Gaussian-in-time perturbation with smooth spatial content,
    // peaked mid-horizon and decayed toward both ends
    auto xdot = make_control(layout);
    std::mt19937_64 prng(29);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    for (std::size_t k = 0; k < xdot.snapshots.size(); ++k) {
        const double env = std::exp(-std::pow((static_cast<double>(k) - 1.0) / 0.8, 2.0));
        for (auto& x : xdot.snapshots[k]) x = 1e-4 * env * unit(prng);
    }

    auto u0f = testutil::random_smooth_state(g, sys.params(), 904);
    std::vector<double> u0(u0f.flat().begin(), u0f.flat().end());

    CostRegion region;
    region.lo = {4, 4};
    region.hi = {11, 11};
    PressureCost cost(g, region, 0, opt.n_substeps, opt.dt / rk.stages);

    auto id = gradient_identity_test(sys, rk, opt, u0, cost, &xdot);
    CHECK(id.lhs != 0.0);
    CHECK(id.digits >= 10.0);
}

TEST_CASE("finite differences bifurcate beyond the predictability horizon", "[verify]") {
    auto rk = rk_carpenter_kennedy5();
    LorenzSystem sys;
    const std::vector<long> steps{0, 1000, 2000, 3000};
    sys.set_control(lorenz_forcing(steps, rk.stages, {0.0, 0.0, 0.0, 0.0}));
    auto xdot = lorenz_forcing(steps, rk.stages, {1.0, -0.6, 0.8, -0.3});

    // start on the attractor
    std::vector<double> u0{1.0, 3.0, 15.0};
    IntegrateOptions warm;
    warm.dt = 0.01;
    warm.n_substeps = 10000;
    integrate(sys, rk, warm, u0);

    auto make_cost = [](long n) {
        return QuadraticCost(std::vector<double>(3, 0.0), n, n, 1.0);
    };
    const std::vector<double> horizons{1.0, 5.0, 30.0};
    auto study = blowup_study(sys, rk, horizons, u0, xdot, make_cost);

    REQUIRE(study.points.size() == 3);
    CHECK(study.points[0].rel_gap < 1e-3);
    CHECK(study.points[1].rel_gap < 1e-3);
    CHECK(study.points[2].rel_gap > 1.0);
    CHECK_FALSE(study.points[0].tangent_overflow);

    // the tangent norm grows at the attractor's expansion rate
    MleOptions mo;
    mo.integrate.dt = 0.01;
    mo.t_transient = 5.0;
    mo.t_fit = 50.0;
    mo.seed = 21;
    const double lam = estimate_mle(sys, rk, mo, u0).lambda;
    CHECK(std::abs(study.growth_rate - lam) < 0.2 * lam);

    // fixed inputs reproduce the same bifurcation data bitwise
    const std::vector<double> shorter{1.0, 5.0};
    auto again1 = blowup_study(sys, rk, shorter, u0, xdot, make_cost);
    auto again2 = blowup_study(sys, rk, shorter, u0, xdot, make_cost);
    for (std::size_t i = 0; i < again1.points.size(); ++i) {
        CHECK(again1.points[i].jdot_tangent == again2.points[i].jdot_tangent);
        CHECK(again1.points[i].jdot_fd == again2.points[i].jdot_fd);
    }

    SECTION("input validation") {
        const std::vector<double> unordered{5.0, 1.0};
        CHECK_THROWS_AS(blowup_study(sys, rk, unordered, u0, xdot, make_cost), ValidationError);
        const std::vector<double> none;
        CHECK_THROWS_AS(blowup_study(sys, rk, none, u0, xdot, make_cost), ValidationError);
    }
}

TEST_CASE("a stable linear chain never bifurcates", "[verify]") {
    auto rk = rk_carpenter_kennedy5();
    LorenzSystem sys(2.0, 0.5, 1.0); // contracting parameter set, fixed-point dynamics
    const std::vector<long> steps{0, 1500, 3000};
    sys.set_control(lorenz_forcing(steps, rk.stages, {0.2, -0.1, 0.15}));
    auto xdot = lorenz_forcing(steps, rk.stages, {1.0, 0.5, -0.7});

    std::vector<double> u0{0.3, 0.2, 0.1};
    auto make_cost = [](long n) {
        return QuadraticCost(std::vector<double>(3, 1.0), n, n, 1.0);
    };
    const std::vector<double> horizons{1.0, 5.0, 30.0};
    BlowupOptions bopt;
    bopt.fd_eps = 1e-7;
    auto study = blowup_study(sys, rk, horizons, u0, xdot, make_cost, bopt);
    for (const auto& p : study.points) {
        CHECK(p.rel_gap < 1e-6);
        CHECK_FALSE(p.tangent_overflow);
    }
}

TEST_CASE("the verification report serializes pass and fail lines", "[verify]") {
    VerifyReport rep;
    rep.check_below("transpose-defect", 3.2e-15, 1e-13);
    rep.check_above("late-horizon-gap", 7.4, 1.0);
    CHECK(rep.all_pass());
    rep.check_above("gradient-digits", 9.1, 10.0); // fails: too few digits
    CHECK_FALSE(rep.all_pass());

    const auto json = rep.to_json();
    CHECK(json.front() == '[');
    CHECK(json.find("\"test\": \"transpose-defect\"") != std::string::npos);
    CHECK(json.find("\"op\": \">\"") != std::string::npos);
    CHECK(json.find("\"pass\": true") != std::string::npos);
    CHECK(json.find("\"pass\": false") != std::string::npos);
}
