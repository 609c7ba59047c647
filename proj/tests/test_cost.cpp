#include <catch2/catch_amalgamated.hpp>

#include <numeric>

#include "afl/cost.hpp"
#include "afl/vec.hpp"

#include "helpers.hpp"

using namespace afl;

namespace {

std::vector<std::vector<double>> random_trajectory(const Grid& g, long n, unsigned seed) {
    std::vector<std::vector<double>> traj;
    for (long s = 0; s < n; ++s) {
        auto u = testutil::random_vector(g.state_size(), seed + static_cast<unsigned>(s), -1.0, 1.0);
        // push pressures to a realistic background so fluctuations are small
        const std::size_t off = static_cast<std::size_t>(1 + g.ndim) * g.cells();
        for (std::size_t i = off; i < u.size(); ++i) u[i] = 0.9 + 1e-3 * u[i];
        traj.push_back(std::move(u));
    }
    return traj;
}

double evaluate_running(const Grid& g, const CostRegion& box, double dt,
                        const std::vector<std::vector<double>>& traj) {
    PressureCost c(g, box, 0, static_cast<long>(traj.size()) - 1, dt);
    for (std::size_t s = 0; s < traj.size(); ++s) c.collect(static_cast<long>(s), traj[s]);
    c.finalize();
    return c.value();
}

} // namespace

TEST_CASE("time-constant pressure scores zero", "[cost]") {
    auto g = make_grid_1d(8, 8.0);
    CostRegion box;
    box.lo[0] = 2;
    box.hi[0] = 5;
    std::vector<double> u(g.state_size(), 0.3);
    PressureCost c(g, box, 0, 9, 0.01);
    for (long s = 0; s <= 9; ++s) c.collect(s, u);
    c.finalize();
    CHECK(c.value() == 0.0);

    std::vector<double> dj(g.state_size(), 0.0);
    c.add_dJ_du(4, u, dj);
    for (double x : dj) CHECK(x == 0.0);
}

TEST_CASE("alternating fluctuation at one cell sums directly", "[cost]") {
    auto g = make_grid_1d(8, 8.0); // dx = 1, dV = 1
    CostRegion box;
    box.lo[0] = 3;
    box.hi[0] = 3;
    const double a = 0.5, dt = 0.25, pbar = 1.0;
    const long N = 6;
    PressureCost c(g, box, 0, N - 1, dt);
    std::vector<double> u(g.state_size(), 0.0);
    const std::size_t pcell = 2 * g.cells() + 3; // pressure block, cell 3
    for (long s = 0; s < N; ++s) {
        u[pcell] = pbar + ((s % 2 == 0) ? a : -a);
        c.collect(s, u);
    }
    c.finalize();
    CHECK(c.value() == static_cast<double>(N) * a * a * dt * 1.0);

    SECTION("doubling the quadrature step doubles the value") {
        PressureCost c2(g, box, 0, N - 1, 2 * dt);
        for (long s = 0; s < N; ++s) {
            u[pcell] = pbar + ((s % 2 == 0) ? a : -a);
            c2.collect(s, u);
        }
        c2.finalize();
        CHECK(c2.value() == 2.0 * c.value());
    }
}

TEST_CASE("derivative matches a central difference of the value", "[cost]") {
    auto g = make_grid_2d(8, 8, 1.0, 1.0);
    CostRegion box;
    box.lo = {1, 3};
    box.hi = {2, 5};
    const double dt = 0.02;
    const long N = 7;
    auto traj = random_trajectory(g, N, 501);

    PressureCost c(g, box, 0, N - 1, dt);
    for (long s = 0; s < N; ++s) c.collect(s, traj[static_cast<std::size_t>(s)]);
    c.finalize();

    const std::size_t poff = 3 * g.cells();
    const std::size_t probe_cell = static_cast<std::size_t>(1) * 8 + 4; // inside the box
    const double eps = 1e-6 * 0.9;

    // the objective is quadratic in each sample, so the centered quotient is
    // exact up to rounding; perturbing sub-step 0 also exercises the
    // shift-reference path
    for (long s : {0L, 3L, N - 1}) {
        std::vector<double> dj(g.state_size(), 0.0);
        c.add_dJ_du(s, traj[static_cast<std::size_t>(s)], dj);

        auto tp = traj, tm = traj;
        tp[static_cast<std::size_t>(s)][poff + probe_cell] += eps;
        tm[static_cast<std::size_t>(s)][poff + probe_cell] -= eps;
        const double fd =
            (evaluate_running(g, box, dt, tp) - evaluate_running(g, box, dt, tm)) / (2 * eps);
        CHECK(std::abs(fd - dj[poff + probe_cell]) < 1e-9 * std::max(1.0, std::abs(fd)));
    }
}

TEST_CASE("derivative support is confined to the region pressures", "[cost]") {
    auto g = make_grid_2d(8, 8, 1.0, 1.0);
    CostRegion box;
    box.lo = {2, 2};
    box.hi = {4, 4};
    const long N = 5;
    auto traj = random_trajectory(g, N, 601);
    PressureCost c(g, box, 0, N - 1, 0.1);
    for (long s = 0; s < N; ++s) c.collect(s, traj[static_cast<std::size_t>(s)]);
    c.finalize();

    std::vector<double> dj(g.state_size(), 0.0);
    c.add_dJ_du(2, traj[2], dj);
    const std::size_t poff = 3 * g.cells();
    for (std::size_t i = 0; i < poff; ++i) CHECK(dj[i] == 0.0); // rho, momenta untouched
    long nonzero = 0;
    for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 8; ++j) {
            const bool inside = i >= 2 && i <= 4 && j >= 2 && j <= 4;
            const double v = dj[poff + static_cast<std::size_t>(i * 8 + j)];
            if (!inside) CHECK(v == 0.0);
            if (v != 0.0) ++nonzero;
        }
    CHECK(nonzero > 0);

    SECTION("sub-steps outside the interval contribute a zero field") {
        std::vector<double> out(g.state_size(), 0.0);
        c.add_dJ_du(N + 3, traj[0], out);
        for (double x : out) CHECK(x == 0.0);
    }
}

TEST_CASE("tangent accumulation equals the derivative chain", "[cost]") {
    auto g = make_grid_1d(12, 3.0);
    CostRegion box;
    box.lo[0] = 4;
    box.hi[0] = 9;
    const long N = 9;
    const double dt = 0.05;
    auto traj = random_trajectory(g, N, 701);
    std::vector<std::vector<double>> vtraj;
    for (long s = 0; s < N; ++s)
        vtraj.push_back(testutil::random_vector(g.state_size(), 801 + static_cast<unsigned>(s), -1.0, 1.0));

    PressureCost c(g, box, 0, N - 1, dt);
    for (long s = 0; s < N; ++s) {
        c.collect(s, traj[static_cast<std::size_t>(s)]);
        c.collect_tangent(s, traj[static_cast<std::size_t>(s)], vtraj[static_cast<std::size_t>(s)]);
    }
    c.finalize();

    double chained = 0.0;
    for (long s = 0; s < N; ++s) {
        std::vector<double> dj(g.state_size(), 0.0);
        c.add_dJ_du(s, traj[static_cast<std::size_t>(s)], dj);
        chained += dot(dj, vtraj[static_cast<std::size_t>(s)]);
    }
    CHECK(std::abs(c.tangent_value() - chained) < 1e-14 * std::max(1.0, std::abs(chained) / dt));
}

TEST_CASE("frozen baseline from the running mean reproduces the value", "[cost]") {
    auto g = make_grid_1d(10, 1.0);
    CostRegion box;
    box.lo[0] = 1;
    box.hi[0] = 7;
    const long N = 8;
    const double dt = 0.03;
    auto traj = random_trajectory(g, N, 901);

    PressureCost running(g, box, 0, N - 1, dt);
    for (long s = 0; s < N; ++s) running.collect(s, traj[static_cast<std::size_t>(s)]);
    running.finalize();

    std::vector<double> mean(g.cells(), 0.0);
    running.write_mean(mean);

    PressureCost frozen(g, box, 0, N - 1, dt, MeanMode::frozen);
    frozen.set_baseline(mean);
    for (long s = 0; s < N; ++s) frozen.collect(s, traj[static_cast<std::size_t>(s)]);
    frozen.finalize();

    // same deviations measured two ways
    CHECK(std::abs(frozen.value() - running.value()) <
          1e-12 * std::max(running.value(), 1e-30));

    SECTION("frozen collection without a baseline is rejected") {
        PressureCost bare(g, box, 0, N - 1, dt, MeanMode::frozen);
        CHECK_THROWS_AS(bare.collect(0, traj[0]), RuntimeError);
    }
}

TEST_CASE("per-sub-step series sums to the value", "[cost]") {
    auto g = make_grid_1d(8, 2.0);
    CostRegion box;
    box.lo[0] = 0;
    box.hi[0] = 7;
    const long N = 6;
    auto traj = random_trajectory(g, N, 921);
    PressureCost c(g, box, 0, N - 1, 0.04);
    c.keep_series(true);
    for (long s = 0; s < N; ++s) c.collect(s, traj[static_cast<std::size_t>(s)]);
    c.finalize();
    REQUIRE(c.series().size() == static_cast<std::size_t>(N));
    const double total = std::accumulate(c.series().begin(), c.series().end(), 0.0);
    CHECK(std::abs(total - c.value()) < 1e-12 * std::max(c.value(), 1e-30));
    for (double x : c.series()) CHECK(x >= 0.0);
}

TEST_CASE("configuration and usage errors are caught", "[cost]") {
    auto g = make_grid_1d(8, 1.0);
    CostRegion box;
    box.lo[0] = 2;
    box.hi[0] = 5;
    CHECK_THROWS_AS(PressureCost(g, box, 5, 2, 0.1), ValidationError);  // empty interval
    CHECK_THROWS_AS(PressureCost(g, box, 0, 5, 0.0), ValidationError);  // zero step
    CostRegion outside;
    outside.lo[0] = 4;
    outside.hi[0] = 9;
    CHECK_THROWS_AS(PressureCost(g, outside, 0, 5, 0.1), ValidationError);
    CostRegion inverted;
    inverted.lo[0] = 5;
    inverted.hi[0] = 2;
    CHECK_THROWS_AS(PressureCost(g, inverted, 0, 5, 0.1), ValidationError);

    PressureCost c(g, box, 0, 5, 0.1);
    std::vector<double> u(g.state_size(), 1.0);
    c.collect(0, u);
    CHECK_THROWS_AS(c.finalize(), RuntimeError); // only 1 of 6 sub-steps seen
    CHECK_THROWS_AS(c.value(), RuntimeError);    // never finalized
    std::vector<double> out(g.state_size(), 0.0);
    CHECK_THROWS_AS(c.add_dJ_du(0, u, out), RuntimeError);
    std::vector<double> short_u(3, 0.0);
    CHECK_THROWS_AS(c.collect(1, short_u), ValidationError);
}

TEST_CASE("terminal-state objective and its derivative", "[cost]") {
    std::vector<double> target{1.0, -2.0, 0.5};
    QuadraticCost c(target, 5, 5);
    std::vector<double> u{2.0, 0.0, 0.5};
    for (long s = 0; s <= 5; ++s) c.collect(s, u); // only s=5 lands in the interval
    c.finalize();
    CHECK(c.value() == 1.0 + 4.0 + 0.0);

    std::vector<double> dj(3, 0.0);
    c.add_dJ_du(5, u, dj);
    CHECK(dj[0] == 2.0);
    CHECK(dj[1] == 4.0);
    CHECK(dj[2] == 0.0);
    std::fill(dj.begin(), dj.end(), 0.0);
    c.add_dJ_du(3, u, dj);
    for (double x : dj) CHECK(x == 0.0);

    SECTION("windowed variant accumulates and checks coverage") {
        QuadraticCost w(target, 2, 4, 0.5);
        std::vector<double> a{1.0, -2.0, 1.5}; // distance^2 = 1
        w.collect(2, a);
        w.collect(3, a);
        CHECK_THROWS_AS(w.finalize(), RuntimeError);
        w.reset();
        for (long s = 2; s <= 4; ++s) {
            w.collect(s, a);
            std::vector<double> v{0.0, 0.0, 2.0};
            w.collect_tangent(s, a, v);
        }
        w.finalize();
        CHECK(w.value() == 3 * 0.5 * 1.0);
        CHECK(w.tangent_value() == 3 * 2.0 * 0.5 * 1.0 * 2.0);
    }

    SECTION("size mismatches are rejected") {
        QuadraticCost q(target, 0, 0);
        std::vector<double> wrong{1.0};
        CHECK_THROWS_AS(q.collect(0, wrong), ValidationError);
        CHECK_THROWS_AS(QuadraticCost(std::vector<double>{}, 0, 0), ValidationError);
    }
}
