#include <catch2/catch_amalgamated.hpp>

#include "afl/lorenz.hpp"
#include "afl/timeloop.hpp"

#include "helpers.hpp"

using namespace afl;

namespace {

/// y' = lambda * y on a single component.
struct ScalarLinear {
    double lambda = -1.0;
    std::size_t state_size() const { return 1; }
    void rhs(double, long, std::span<const double> u, std::span<double> out) const {
        out[0] = lambda * u[0];
    }
    bool filtered() const { return false; }
    void apply_filter(std::span<double>) const {}
    void check_state(std::span<const double>) const {}
};

struct ZeroRhs {
    std::size_t state_size() const { return 4; }
    void rhs(double, long, std::span<const double>, std::span<double> out) const {
        for (auto& x : out) x = 0.0;
    }
    bool filtered() const { return false; }
    void apply_filter(std::span<double>) const {}
    void check_state(std::span<const double>) const {}
};

/// Halves the state on every filter application and counts them.
struct CountingFilter {
    mutable int applications = 0;
    std::size_t state_size() const { return 2; }
    void rhs(double, long, std::span<const double>, std::span<double> out) const {
        for (auto& x : out) x = 0.0;
    }
    bool filtered() const { return true; }
    void apply_filter(std::span<double> u) const {
        ++applications;
        for (auto& x : u) x *= 0.5;
    }
    void check_state(std::span<const double>) const {}
};

struct Bomb {
    std::size_t state_size() const { return 1; }
    void rhs(double, long, std::span<const double>, std::span<double> out) const { out[0] = 1.0; }
    bool filtered() const { return false; }
    void apply_filter(std::span<double>) const {}
    void check_state(std::span<const double> u) const {
        if (u[0] > 0.05) throw RuntimeError("state invalid: runaway");
    }
};

double poly_eval(const std::vector<double>& c, double z) {
    double acc = 0.0;
    for (std::size_t j = c.size(); j-- > 0;) acc = acc * z + c[j];
    return acc;
}

} // namespace

TEST_CASE("scheme construction validates the Taylor expansion", "[timeloop]") {
    auto rk = rk_carpenter_kennedy5();
    CHECK(rk.stages == 5);
    CHECK(rk.order == 4);
    CHECK(rk.alpha[0] == 0.0);

    auto c = stability_coefficients(rk);
    REQUIRE(c.size() == 6);
    double fact = 1.0;
    for (int j = 0; j <= 4; ++j) {
        if (j > 0) fact *= j;
        CHECK(std::abs(c[static_cast<std::size_t>(j)] - 1.0 / fact) < 1e-15);
    }
    // genuinely fourth order: the fifth coefficient misses 1/120
    CHECK(std::abs(c[5] - 1.0 / 120.0) > 1e-6);

    SECTION("tampered coefficients are rejected") {
        auto bad = rk;
        bad.beta[2] += 1e-6;
        CHECK_THROWS_AS(make_rk_scheme("bad", bad.alpha, bad.beta, 4), ValidationError);
        CHECK_THROWS_AS(make_rk_scheme("bad", {0.1, 0.0}, {0.5, 0.5}, 1), ValidationError);
        CHECK_THROWS_AS(make_rk_scheme("bad", {}, {}, 1), ValidationError);
        CHECK_THROWS_AS(make_rk_scheme("bad", {0.0}, {1.0}, 2), ValidationError);
    }
}

TEST_CASE("classical step matches the truncated exponential", "[timeloop]") {
    const double z = 0.1;
    std::vector<double> y{1.0};
    ScalarLinear sys{1.0};
    rk4_classic_step([&](double t, std::span<const double> u, std::span<double> out) {
        sys.rhs(t, 0, u, out);
    }, 0.0, z, y);
    const double taylor = 1.0 + z + z * z / 2.0 + z * z * z / 6.0 + z * z * z * z / 24.0;
    CHECK(std::abs(y[0] - taylor) < 1e-14);
}

TEST_CASE("one low-storage iteration realizes its stability polynomial", "[timeloop]") {
    auto rk = rk_carpenter_kennedy5();
    const double z = 0.37;
    ScalarLinear sys{1.0};
    std::vector<double> y{1.0};
    IntegrateOptions opt;
    opt.n_substeps = rk.stages;
    opt.dt = z; // lambda = 1 makes dt the test variable
    opt.filter = false;
    integrate(sys, rk, opt, y, nullptr);
    CHECK(std::abs(y[0] - poly_eval(stability_coefficients(rk), z)) < 1e-14);
}

TEST_CASE("temporal convergence order is four", "[timeloop]") {
    auto rk = rk_carpenter_kennedy5();
    ScalarLinear sys{-1.0};
    auto solve = [&](long iters) {
        std::vector<double> y{1.0};
        IntegrateOptions opt;
        opt.n_substeps = iters * rk.stages;
        opt.dt = 1.0 / static_cast<double>(iters);
        opt.filter = false;
        integrate(sys, rk, opt, y, nullptr);
        return std::abs(y[0] - std::exp(-1.0));
    };
    const double e1 = solve(10), e2 = solve(20);
    const double order = std::log2(e1 / e2);
    CHECK(order > 3.9);
    CHECK(order < 4.1);
}

TEST_CASE("a zero right-hand side leaves the state untouched", "[timeloop]") {
    auto rk = rk_carpenter_kennedy5();
    ZeroRhs sys;
    std::vector<double> y{1.0, -2.5, 3.25, 0.125};
    auto y0 = y;
    IntegrateOptions opt;
    opt.n_substeps = 3 * rk.stages;
    opt.dt = 0.1;
    opt.filter = false;
    integrate(sys, rk, opt, y, nullptr);
    CHECK(y == y0);
}

TEST_CASE("integration options are validated", "[timeloop]") {
    auto rk = rk_carpenter_kennedy5();
    ScalarLinear sys;
    std::vector<double> y{1.0};
    IntegrateOptions opt;
    opt.dt = 0.1;
    opt.n_substeps = 0;
    CHECK_THROWS_AS(integrate(sys, rk, opt, y, nullptr), ValidationError);
    opt.n_substeps = 7; // not a whole iteration
    CHECK_THROWS_AS(integrate(sys, rk, opt, y, nullptr), ValidationError);
    opt.n_substeps = 5;
    opt.s_begin = 3;
    CHECK_THROWS_AS(integrate(sys, rk, opt, y, nullptr), ValidationError);
    opt.s_begin = 0;
    opt.dt = 0.0;
    CHECK_THROWS_AS(integrate(sys, rk, opt, y, nullptr), ValidationError);
}

TEST_CASE("filter schedule hits every second iteration end", "[timeloop]") {
    IntegrateOptions opt;
    opt.filter = true;
    opt.filter_stride = 2;
    const int stages = 5;
    CHECK_FALSE(filter_applies(opt, stages, 3));  // mid-iteration
    CHECK_FALSE(filter_applies(opt, stages, 5));  // end of iteration 0
    CHECK(filter_applies(opt, stages, 10));       // end of iteration 1
    CHECK_FALSE(filter_applies(opt, stages, 15));
    CHECK(filter_applies(opt, stages, 20));
    opt.filter_stride = 1;
    CHECK(filter_applies(opt, stages, 5));
    CHECK(filter_applies(opt, stages, 10));
    opt.filter = false;
    CHECK_FALSE(filter_applies(opt, stages, 10));

    auto rk = rk_carpenter_kennedy5();
    CountingFilter sys;
    std::vector<double> y{1.0, 2.0};
    IntegrateOptions run;
    run.n_substeps = 8 * rk.stages;
    run.dt = 0.1;
    run.filter_stride = 2;
    integrate(sys, rk, run, y, nullptr);
    CHECK(sys.applications == 4); // iterations 1, 3, 5, 7
    CHECK(y[0] == 1.0 / 16.0);    // halved exactly four times
}

TEST_CASE("state checks name the failing iteration", "[timeloop]") {
    auto rk = rk_carpenter_kennedy5();
    Bomb sys;
    std::vector<double> y{0.0};
    IntegrateOptions opt;
    opt.n_substeps = 10 * rk.stages;
    opt.dt = 0.02; // u grows by 0.02 per iteration, exceeds 0.05 at iteration 3
    CHECK_THROWS_WITH(integrate(sys, rk, opt, y, nullptr),
                      Catch::Matchers::ContainsSubstring("iteration 3") &&
                          Catch::Matchers::ContainsSubstring("runaway"));
}

TEST_CASE("lorenz trajectory is bounded and replays bitwise", "[timeloop]") {
    auto rk = rk_carpenter_kennedy5();
    LorenzSystem sys;
    std::vector<double> y{1.0, 1.0, 1.0};
    TrajectoryStore store(TrajectoryStore::Mode::store_all, rk.stages);
    IntegrateOptions opt;
    opt.n_substeps = 10000 * rk.stages;
    opt.dt = 0.005;
    opt.filter = false;
    double max_abs = 0.0;
    integrate(sys, rk, opt, y, &store, [&](long, std::span<const double> u) {
        for (double x : u) max_abs = std::max(max_abs, std::abs(x));
    });
    CHECK(max_abs < 100.0);

    // restart from the midpoint and compare the tail bitwise
    const long mid = opt.n_substeps / 2; // iteration boundary
    std::vector<double> z(store.state(mid).begin(), store.state(mid).end());
    IntegrateOptions tail;
    tail.n_substeps = opt.n_substeps - mid;
    tail.dt = opt.dt;
    tail.filter = false;
    tail.s_begin = mid;
    std::vector<std::vector<double>> replay;
    integrate(sys, rk, tail, z, nullptr, [&](long, std::span<const double> u) {
        replay.emplace_back(u.begin(), u.end());
    });
    long s = mid;
    long mismatches = 0;
    for (const auto& snap : replay) {
        auto orig = store.state(s);
        for (std::size_t i = 0; i < 3; ++i)
            if (snap[i] != orig[i]) ++mismatches;
        ++s;
    }
    CHECK(s == opt.n_substeps + 1);
    CHECK(mismatches == 0);
}

TEST_CASE("checkpoint stores keep only stride states plus the forced final", "[timeloop]") {
    auto rk = rk_carpenter_kennedy5();
    LorenzSystem sys;
    std::vector<double> y{1.0, 1.0, 1.0};
    TrajectoryStore store(TrajectoryStore::Mode::checkpoint, rk.stages, 2); // every 2 iterations
    IntegrateOptions opt;
    opt.n_substeps = 7 * rk.stages; // 35 sub-steps, stride 10
    opt.dt = 0.005;
    opt.filter = false;
    integrate(sys, rk, opt, y, &store);
    CHECK(store.checkpoint_substride() == 10);
    CHECK(store.has(0));
    CHECK(store.has(10));
    CHECK(store.has(20));
    CHECK(store.has(30));
    CHECK(store.has(35)); // forced final
    CHECK_FALSE(store.has(5));
    CHECK_FALSE(store.has(12));
    CHECK_THROWS_AS(store.state(12), RuntimeError);
    auto fin = store.state(35);
    for (std::size_t i = 0; i < 3; ++i) CHECK(fin[i] == y[i]);
}
