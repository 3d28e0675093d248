#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstring>
#include <random>

#include "bavsl/errors.hpp"
#include "bavsl/experiments.hpp"
#include "bavsl/mpc.hpp"

using namespace bavsl;

namespace {

constexpr double kSecond = 1.0 / 3600.0;

ScenarioConfig weighted(double mu1) {
    ScenarioConfig c;
    c.weights.mu1 = mu1;
    c.weights.mu2 = 1.0 - mu1;
    return c;
}

// Shared noise-free closed loop for the emission-weighted case.
const MpcBaseline& baseline() {
    static const MpcBaseline b = mpc_baseline(weighted(2.0 / 3.0), MpcConfig{});
    return b;
}

}  // namespace

TEST_CASE("configuration validation") {
    MpcConfig m;
    m.validate();
    m.sample = 0.0;
    CHECK_THROWS_AS(m.validate(), ConfigError);
    m = MpcConfig{};
    m.horizon = 5.0 * m.sample;
    CHECK_THROWS_AS(m.validate(), ConfigError);
    m = MpcConfig{};
    m.predictor_dt = 2.0 * m.sample;
    CHECK_THROWS_AS(m.validate(), ConfigError);
    m = MpcConfig{};
    m.forecast_window = m.forecast_cell;
    CHECK_THROWS_AS(m.validate(), ConfigError);
}

TEST_CASE("AR(1) fit recovers the coefficient of a synthetic series") {
    std::mt19937_64 rng(8);
    std::normal_distribution<double> e(0.0, 1.0);
    for (int rep = 0; rep < 5; ++rep) {
        std::vector<double> x(1000);
        x[0] = e(rng);
        for (std::size_t i = 1; i < x.size(); ++i) x[i] = 0.8 * x[i - 1] + e(rng);
        const Ar1Fit f = fit_ar1(x);
        CHECK(std::abs(f.coefficient - 0.8) <= 0.1);
        CHECK(f.innovation_variance == doctest::Approx(1.0).epsilon(0.15));
        CHECK(f.samples == 1000);
    }
    CHECK_THROWS_AS(fit_ar1({1.0}), DomainError);
    CHECK(fit_ar1({0.0, 0.0, 0.0}).coefficient == 0.0);
    CHECK(fit_ar1({25.0, 25.0, 25.0, 25.0}).coefficient == 0.0);
}

TEST_CASE("noise-free history forecasts the base profile") {
    const DemandProfile d = DemandProfile::i880_reference();
    const std::vector<double> dev = cell_deviations(base_curve(d), d, 1.0, 1.0 + 10.0 / 60.0, kSecond);
    CHECK(dev.size() == 600);
    for (double x : dev) CHECK(std::abs(x) < 1e-6);
    const RateCurve f = ar1_forecast(d, std::vector<double>(600, 0.0), 1.2, kSecond);
    for (double t = 1.2; t < 5.0; t += 0.01) CHECK(f.rate(t) == doctest::Approx(d.base_rate(t)).epsilon(1e-13));
}

TEST_CASE("forecast deviations decay geometrically") {
    const DemandProfile d = DemandProfile::i880_reference();
    std::vector<double> hist(100);
    for (std::size_t i = 0; i < hist.size(); ++i) hist[i] = 200.0 * std::pow(0.9, static_cast<double>(i));
    const double t0 = 1.0;
    const RateCurve f = ar1_forecast(d, hist, t0, kSecond);
    const double last = hist.back();
    for (int j : {0, 1, 5, 20}) {
        const double t = t0 + (j + 0.5) * kSecond;
        CHECK(f.rate(t) - d.base_rate(t) == doctest::Approx(last * std::pow(0.9, j + 1)).epsilon(1e-6));
    }
    CHECK(f.rate(t0 + 1.0) == doctest::Approx(d.base_rate(t0 + 1.0)).epsilon(1e-12));
    CHECK(f.rate(4.5) == 0.0);
}

TEST_CASE("shifted plans drop completed moves") {
    PhasePlan p;
    p.v1 = 95.0;
    p.moves = {{1.0, PhasePlan::Switch::Ramp, 120.0}, {3.0, PhasePlan::Switch::Drop, 90.0}};
    CorridorState s;
    s.t = 2.0;
    s.v = 120.0;
    const PhasePlan q = shift_plan(p, s);
    CHECK(q.t0 == 2.0);
    CHECK(q.v1 == 120.0);
    REQUIRE(q.moves.size() == 1);
    CHECK(q.moves[0].kind == PhasePlan::Switch::Drop);
    s.v = 110.0;
    const PhasePlan r = shift_plan(p, s);
    REQUIRE(r.moves.size() == 2);
    CHECK(r.moves[0].time == 2.0);
}

TEST_CASE("noise-free closed loop") {
    const MpcBaseline& b = baseline();
    const MpcResult& r = b.run;
    CHECK(r.failures == 0);
    CHECK(r.final_state.l_q == 0.0);
    CHECK(r.objective > 0.0);
    CHECK(r.log.front().t == 0.0);
    for (std::size_t i = 1; i < r.log.size(); ++i) CHECK(r.log[i].t - r.log[i - 1].t == doctest::Approx(60.0 * kSecond));

    // Every plant step honours the gradient cap, seams included.
    const ScenarioConfig& c = b.config;
    int rising = 0;
    for (std::size_t i = 1; i < r.rows.size(); ++i) {
        const auto& a = r.rows[i - 1];
        const auto& z = r.rows[i];
        const double slope = (z.v - a.v) / (z.t - a.t);
        if (slope <= 0.0) continue;
        ++rising;
        const double cap = std::max(bln_gradient_cap(a.v, std::min(a.u_0, a.v), c.law(), c.length),
                                    bln_gradient_cap(z.v, std::min(z.u_0, z.v), c.law(), c.length));
        CHECK(slope <= cap * (1.0 + 1e-6));
    }
    CHECK(rising > 0);
}

TEST_CASE("certainty equivalence with the open-loop solve") {
    const MpcBaseline& b = baseline();
    const OcpProblem pb = make_problem(b.config, b.config.t_final);
    const OcpSolution open = solve_ocp(pb);
    CHECK(std::abs(b.run.objective - open.objective) <= 0.002 * open.objective);
}

TEST_CASE("a demand spike is acted on from the next sampling instant") {
    const MpcBaseline& b = baseline();
    const DemandProfile& d = b.config.demand;
    const RateCurve plain = base_curve(d);
    std::vector<RateCurve::Piece> pieces;
    for (const auto& p : plain.pieces()) pieces.push_back(p);
    // Extra 3000 veh/h for ten seconds from t = 1 h, on the rising branch.
    const double t1 = 1.0, t2 = 1.0 + 10.0 * kSecond;
    std::vector<RateCurve::Piece> spiked;
    for (const auto& p : pieces) {
        if (p.start < t1) spiked.push_back(p);
    }
    spiked.push_back({t1, d.base_rate(t1) + 3000.0, d.base_slope(t1)});
    spiked.push_back({t2, d.base_rate(t2), d.base_slope(t2)});
    for (const auto& p : pieces) {
        if (p.start > t2) spiked.push_back(p);
    }
    const MpcResult r = mpc_run(b.config, MpcConfig{}, RateCurve(spiked), &b.first);
    const auto& base_log = b.run.log;
    REQUIRE(r.log.size() >= 62);
    std::size_t first_diff = r.log.size();
    for (std::size_t i = 0; i < std::min(r.log.size(), base_log.size()); ++i) {
        if (r.log[i].v_applied != base_log[i].v_applied || r.log[i].predicted_objective != base_log[i].predicted_objective) {
            first_diff = i;
            break;
        }
    }
    REQUIRE(first_diff < r.log.size());
    CHECK(r.log[first_diff].t > t1 + 1e-9);
    CHECK(r.log[first_diff].t == doctest::Approx(t1 + 60.0 * kSecond));
}

TEST_CASE("identical seeds give identical closed loops") {
    ScenarioConfig c = baseline().config;
    c.demand.noise.kind = NoiseKind::Ar1;
    c.demand.seed = 77;
    const MpcResult a = mpc_run(c, MpcConfig{}, &baseline().first);
    const MpcResult z = mpc_run(c, MpcConfig{}, &baseline().first);
    CHECK(std::memcmp(&a.objective, &z.objective, sizeof(double)) == 0);
    REQUIRE(a.rows.size() == z.rows.size());
    bool same = true;
    for (std::size_t i = 0; i < a.rows.size(); ++i) {
        same = same && std::memcmp(&a.rows[i], &z.rows[i], sizeof(TrajectoryRow)) == 0;
    }
    CHECK(same);
    CHECK(a.objective != baseline().run.objective);
}

TEST_CASE("closed loop under noise does not beat the clairvoyant plan") {
    ScenarioConfig c = baseline().config;
    c.demand.noise.kind = NoiseKind::White;
    c.demand.seed = 5;
    const MpcResult closed = mpc_run(c, MpcConfig{}, &baseline().first);
    OcpOptions o;
    o.max_switches = 3;
    const OcpSolution clairvoyant = solve_ocp(make_problem(c, c.t_final), o);
    INFO("closed " << closed.objective << " clairvoyant " << clairvoyant.objective);
    CHECK(closed.objective >= clairvoyant.objective);
}
