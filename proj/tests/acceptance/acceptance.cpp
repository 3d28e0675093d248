// End-to-end acceptance run: one PASS/FAIL line per criterion, exit status 1
// if any criterion fails. `--samples FILE` reuses a regret CSV from an earlier
// run instead of repeating the Monte Carlo study; the study's samples are
// always written to acceptance_regret.csv in the working directory.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "bavsl/errors.hpp"
#include "bavsl/experiments.hpp"
#include "bavsl/kinematics.hpp"
#include "bavsl/mpc.hpp"
#include "bavsl/ocp.hpp"
#include "ocp_points.hpp"

using namespace bavsl;

namespace {

constexpr double kSecond = 1.0 / 3600.0;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

int failures = 0;

void report(int id, const std::string& name, bool pass, const std::string& detail) {
    if (!pass) ++failures;
    std::printf("[%s] %2d %s: %s\n", pass ? "PASS" : "FAIL", id, name.c_str(), detail.c_str());
    std::fflush(stdout);
}

template <typename... A>
std::string fmt(const char* f, A... a) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, a...);
    return buf;
}

ScenarioConfig weighted(double mu1) {
    ScenarioConfig c;
    c.weights.mu1 = mu1;
    c.weights.mu2 = 1.0 - mu1;
    return c;
}

// Least-squares slope of log(err) on log(step).
double empirical_order(const std::vector<double>& step, const std::vector<double>& err) {
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < step.size(); ++i) {
        mx += std::log(step[i]);
        my += std::log(err[i]);
    }
    mx /= static_cast<double>(step.size());
    my /= static_cast<double>(step.size());
    double sxy = 0, sxx = 0;
    for (std::size_t i = 0; i < step.size(); ++i) {
        sxy += (std::log(step[i]) - mx) * (std::log(err[i]) - my);
        sxx += (std::log(step[i]) - mx) * (std::log(step[i]) - mx);
    }
    return sxy / sxx;
}

void chord_oracle() {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(101);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const std::vector<double> taus{1e-3, 5e-4, 2.5e-4, 1.25e-4};
    double worst = 1e9;
    for (int law = 0; law < 100; ++law) {
        // Affine law A(v) = a - b v has the closed-form speed history below.
        const double a = 6000.0 + 8000.0 * u(rng);
        const double v_top = 110.0 + 20.0 * u(rng);
        const double b = a / (v_top + 40.0 * u(rng) + 5.0);
        const double v0 = 20.0 + 40.0 * u(rng);
        const double c = 10.0 + 20.0 * u(rng);
        const double limit = a / b;
        const auto v = [=](double t) { return t <= 0.0 ? v0 : limit - (limit - v0) * std::exp(-b * t); };
        std::vector<double> times;
        for (int i = 0; i <= 40; ++i) times.push_back(0.002 + 0.0001 * i);
        std::vector<double> err;
        for (double tau : taus) err.push_back(std::abs(chord_slope(leader_follower_oracle(v, c, tau, times)) + c));
        worst = std::min(worst, empirical_order(taus, err));
    }
    const double took = seconds_since(t0);
    report(1, "chord-slope oracle", worst >= 0.9 && took < 30.0,
           fmt("min empirical order %.3f over 100 laws, %.2f s", worst, took));
}

// Discrete release: virtual vehicles cross the boundary at headway h in its own
// frame, then accelerate at the law's maximum until the target speed.
void release_equivalence() {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(202);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double worst = 0.0;
    for (int n = 0; n < 20; ++n) {
        const double q_up = 6000.0 + 2400.0 * u(rng);
        const double r = 10.0 + 15.0 * u(rng);
        const double v_c = 20.0 + 40.0 * u(rng);
        const double V_e = v_c + 20.0 + (120.0 - v_c - 20.0) * u(rng);
        const double a0 = 4000.0 + 10000.0 * u(rng);
        const AccelerationLaw law = AccelerationLaw::constant(a0);
        const ReleaseBoundary b{0.0, 0.0, r, v_c, q_up, V_e};
        const double d_e = (V_e * V_e - v_c * v_c) / (2.0 * a0);
        const auto cross = [&](double t_rel) {
            const double dist = r * t_rel;
            if (dist <= d_e) return t_rel + (std::sqrt(v_c * v_c + 2.0 * a0 * dist) - v_c) / a0;
            return t_rel + (V_e - v_c) / a0 + (dist - d_e) / V_e;
        };
        const double t_plus = acceleration_end_time(b, law);
        for (double h : {1e-4, 5e-5}) {
            const double share = q_up * h;  // vehicles per virtual vehicle
            double prev = cross(0.0);
            for (int i = 1;; ++i) {
                const double next = cross(i * h);
                if (next > 1.2 * t_plus) break;
                const double sim = share / (next - prev);
                const double model = detector_flow(b, law, 0.5 * (prev + next));
                worst = std::max(worst, std::abs(sim - model) / model);
                prev = next;
            }
        }
    }
    const double took = seconds_since(t0);
    report(2, "release equivalence", worst <= 0.005 && took < 60.0,
           fmt("worst pointwise gap %.4f%% over 20 tuples, %.2f s", 100.0 * worst, took));
}

void bln_soundness() {
    std::mt19937_64 rng(303);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const ScenarioConfig c;
    const AccelerationLaw law = c.law();
    int violations = 0;
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
        // Admissible state on a free-acceleration arc: the traffic speed trails
        // the limit and rises at A_0 r / u_0.
        const double v = c.v_min + (c.v_max - c.v_min) * u(rng);
        const double u0 = 10.0 + (v - 10.0) * u(rng);
        const double r = release_speed(c.fd, c.fd.k_crit() + (c.fd.k_j() - c.fd.k_crit()) * u(rng));
        const double u0_rate = v > u0 ? c.a0 * r / u0 : 0.0;
        const double applied = bln_gradient_cap(v, u0, law, c.length);
        const double exact = bln_exact_bound(v, u0, u0_rate, law, c.length);
        if (applied > exact * (1.0 + 1e-12)) {
            ++violations;
            worst = std::max(worst, applied - exact);
        }
    }
    report(3, "gradient-cap soundness", violations == 0,
           fmt("%d of 1000 states exceed the exact bound (worst excess %.0f km/h per h)", violations, worst));
}

void gradient_audit() {
    using testing::Point;
    std::mt19937_64 rng(404);
    const ScenarioConfig c = weighted(2.0 / 3.0);
    const RateCurve arr = base_curve(c.demand);
    double worst = 0.0;
    for (int n = 0; n < 100; ++n) {
        const Point p = testing::random_point(rng, c);
        PlantVector neg = costate_rhs(p.x, p.lambda, p.a, p.mu, p.regime, p.t, c, arr);
        for (int i = 0; i < 7; ++i) {
            PlantVector xp = p.x, xm = p.x;
            const double h = 1e-6 * std::max(1.0, std::abs(testing::slot(xp, i)));
            testing::slot(xp, i) += h;
            testing::slot(xm, i) -= h;
            const double fd = (hamiltonian(xp, p.lambda, p.a, p.mu, p.regime, p.t, c, arr) -
                               hamiltonian(xm, p.lambda, p.a, p.mu, p.regime, p.t, c, arr)) /
                              (2.0 * h);
            const double coded = -testing::slot(neg, i);
            worst = std::max(worst, std::abs(fd - coded) / std::max({std::abs(fd), std::abs(coded), 1e-6}));
        }
    }
    report(4, "costate gradient audit", worst <= 1e-5, fmt("worst relative gap %.2e at 100 points", worst));
}

struct Baseline {
    double mu1;
    OcpSolution sol;
    double seconds;
};

std::vector<Baseline> solve_baselines() {
    std::vector<Baseline> out;
    for (const auto& s : baseline_scenarios()) {
        const auto t0 = Clock::now();
        OcpSolution sol = solve_ocp(make_problem(s.config, s.config.t_final));
        out.push_back({s.config.weights.mu1, std::move(sol), seconds_since(t0)});
    }
    return out;
}

void kkt_audit_check(const std::vector<Baseline>& runs) {
    bool ok = true;
    std::string detail;
    for (const auto& b : runs) {
        const KktReport& k = b.sol.kkt;
        ok = ok && b.sol.converged && k.stationarity < 1e-6 && k.feasibility <= 1e-6 && k.complementarity < 1e-6;
        detail += fmt("mu1=%.3f %s stat %.1e feas %.1e comp %.1e (ramp multiplier min %.2e); ", b.mu1,
                      b.sol.plan.pattern().c_str(), k.stationarity, k.feasibility, k.complementarity,
                      k.min_ramp_multiplier);
    }
    report(5, "KKT audit", ok, detail);
}

void oracle_dominance() {
    std::mt19937_64 rng(606);
    std::uniform_real_distribution<double> mu(1.0 / 3.0, 1.0), scale(0.85, 1.1);
    int wins = 0;
    double slowest = 0.0, worst = -1e9;
    for (int i = 0; i < 10; ++i) {
        ScenarioConfig c = weighted(mu(rng));
        c.demand = DemandProfile::i880_reference().scaled(scale(rng));
        const OcpProblem pb = make_problem(c, c.t_final);
        OracleGrid g;
        g.dt = 30.0 * kSecond;
        const OracleResult o = grid_oracle(pb, g);
        const auto t0 = Clock::now();
        const OcpSolution s = solve_ocp(pb);
        slowest = std::max(slowest, seconds_since(t0));
        const double gap = (s.objective - o.objective) / o.objective;
        worst = std::max(worst, gap);
        if (gap <= 0.005) ++wins;
    }
    report(6, "oracle dominance", wins == 10 && slowest < 60.0,
           fmt("%d of 10 within +0.5%% (worst %+.3f%%), slowest solve %.1f s", wins, 100.0 * worst, slowest));
}

void table1(const std::vector<Baseline>& runs) {
    bool tt_up = true, em_down = true;
    std::string detail;
    for (std::size_t i = 0; i < runs.size(); ++i) {
        const SimResult& s = runs[i].sol.sim;
        detail += fmt("mu1=%.3f TT %.3f min CO %.4f NOx %.5f HC %.5f; ", runs[i].mu1, 60.0 * s.avg_travel_time,
                      s.avg_emissions[0], s.avg_emissions[1], s.avg_emissions[2]);
        if (i == 0) continue;
        const SimResult& p = runs[i - 1].sol.sim;
        tt_up = tt_up && s.avg_travel_time > p.avg_travel_time;
        for (std::size_t k = 0; k < 3; ++k) em_down = em_down && s.avg_emissions[k] < p.avg_emissions[k];
    }
    const SimResult& ref = runs[0].sol.sim;
    const double identity = std::abs(ref.objective_per_vehicle() - ref.avg_travel_time);
    detail += fmt("|J/veh - TT| %.1e h", identity);
    report(7, "travel-time/emission trade-off", tt_up && em_down && identity <= 1e-6, detail);
}

void conservation_and_convergence(const std::vector<Baseline>& runs) {
    double worst_count = 0.0, worst_dt = 0.0;
    for (const auto& b : runs) {
        for (std::uint64_t seed : {0ull, 7ull}) {
            ScenarioConfig c = weighted(b.mu1);
            if (seed) {
                c.demand.noise.kind = NoiseKind::Ar1;
                c.demand.seed = seed;
            }
            const RateCurve arr = realize_arrivals(c.demand);
            SimOptions o;
            o.t_end = c.t_final;
            const SimResult r = simulate(c, b.sol.plan.program(), arr, initial_state(c, c.v_max), o);
            worst_count = std::max({worst_count, std::abs(r.served - arr.total()),
                                    std::abs(r.final_state.arrived - r.final_state.departed - r.final_state.l_q)});
            c.dt *= 0.5;
            o.dt = c.dt;
            const SimResult h = simulate(c, b.sol.plan.program(), arr, initial_state(c, c.v_max), o);
            worst_dt = std::max(worst_dt, std::abs(h.objective - r.objective) / r.objective);
        }
    }
    report(10, "conservation and step convergence", worst_count <= 0.1 && worst_dt < 1e-3,
           fmt("worst count gap %.2e veh, worst J change on halving dt %.4f%%", worst_count, 100.0 * worst_dt));
}

void certainty_equivalence(const std::vector<Baseline>& runs) {
    bool ok = true;
    std::string detail;
    for (const auto& b : runs) {
        const MpcBaseline m = mpc_baseline(weighted(b.mu1), MpcConfig{});
        const double gap = (m.run.objective - b.sol.objective) / b.sol.objective;
        ok = ok && std::abs(gap) <= 0.002;
        detail += fmt("mu1=%.3f closed %.3f open %.3f (%+.3f%%); ", b.mu1, m.run.objective, b.sol.objective, 100.0 * gap);
    }
    report(11, "certainty equivalence", ok, detail);
}

std::vector<RegretSample> run_study(int runs, int jobs) {
    std::vector<RegretSample> all;
    for (int w : {33, 67}) {
        for (NoiseKind k : {NoiseKind::White, NoiseKind::Ar1}) {
            MonteCarloOptions o;
            o.runs = runs;
            o.jobs = jobs;
            const auto t0 = Clock::now();
            const MonteCarloResult r = monte_carlo(ScenarioConfig{}, w, k, o);
            std::fprintf(stderr, "  cell %d/%s: %d runs in %.0f s\n", w, noise_name(k), runs, seconds_since(t0));
            all.insert(all.end(), r.samples.begin(), r.samples.end());
        }
    }
    return all;
}

void table3(const std::vector<RegretSample>& all, double seconds, int jobs) {
    std::map<std::pair<int, NoiseKind>, std::vector<RegretSample>> cells;
    for (const auto& s : all) cells[{s.weights_id, s.noise}].push_back(s);
    bool median_ok = true, worst_ok = true, tails_ok = true;
    std::string detail;
    for (int w : {33, 67}) {
        const Quantiles white = regret_quantiles(cells[{w, NoiseKind::White}]);
        const Quantiles ar1 = regret_quantiles(cells[{w, NoiseKind::Ar1}]);
        for (const Quantiles& q : {white, ar1}) {
            median_ok = median_ok && q.p50 >= 0.001 && q.p50 <= 0.01;
            worst_ok = worst_ok && q.p100 <= 0.03;
        }
        tails_ok = tails_ok && ar1.p95 > white.p95;
        detail += fmt("%d%% white p50 %.5f p95 %.5f max %.5f, ar1 p50 %.5f p95 %.5f max %.5f; ", w, white.p50, white.p95,
                      white.p100, ar1.p50, ar1.p95, ar1.p100);
    }
    detail += fmt("n=%zu per cell, %.0f s with %d jobs", cells.begin()->second.size(), seconds, jobs);
    report(8, "regret quantiles", median_ok && worst_ok && tails_ok, detail);
}

// Ten syntheses from disjoint seed blocks of the same study.
void table4(const std::vector<RegretSample>& all) {
    std::map<std::pair<int, NoiseKind>, std::vector<RegretSample>> cells;
    for (const auto& s : all) cells[{s.weights_id, s.noise}].push_back(s);
    const std::size_t per = cells.begin()->second.size() / 10;
    int significant = 0;
    double min_resid = 100.0, max_inter = 0.0;
    for (std::size_t block = 0; block < 10; ++block) {
        std::vector<RegretSample> sub;
        for (auto& [key, v] : cells) sub.insert(sub.end(), v.begin() + block * per, v.begin() + (block + 1) * per);
        const AnovaTable t = two_factor_anova(sub);
        min_resid = std::min(min_resid, t.row("residual").variance_pct);
        max_inter = std::max(max_inter, t.row("interaction").variance_pct);
        if (t.row("noise").p < 0.05) ++significant;
    }
    report(9, "variance decomposition", min_resid >= 95.0 && max_inter <= 1.0 && significant >= 8,
           fmt("residual share min %.2f%%, interaction max %.3f%%, noise p<0.05 in %d of 10 (n=%zu per cell)", min_resid,
               max_inter, significant, per));
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance run"};
    std::string samples_path;
    int runs = 1000;
    int jobs = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    app.add_option("--samples", samples_path, "Reuse a regret CSV instead of running the study");
    app.add_option("--runs", runs, "Monte Carlo runs per cell")->check(CLI::PositiveNumber);
    app.add_option("--jobs", jobs, "Worker threads")->check(CLI::PositiveNumber);
    CLI11_PARSE(app, argc, argv);

    try {
        chord_oracle();
        release_equivalence();
        bln_soundness();
        gradient_audit();
        const std::vector<Baseline> runs3 = solve_baselines();
        kkt_audit_check(runs3);
        oracle_dominance();
        table1(runs3);
        conservation_and_convergence(runs3);
        certainty_equivalence(runs3);

        std::vector<RegretSample> all;
        double seconds = 0.0;
        if (!samples_path.empty()) {
            std::ifstream in(samples_path);
            if (!in) throw ConfigError("cannot open " + samples_path);
            all = read_regret_csv(in);
        } else {
            const auto t0 = Clock::now();
            all = run_study(runs, jobs);
            seconds = seconds_since(t0);
            std::ofstream out("acceptance_regret.csv");
            write_regret_csv(out, all, "");
        }
        table3(all, seconds, jobs);
        table4(all);
    } catch (const std::exception& e) {
        std::printf("[FAIL] acceptance run aborted: %s\n", e.what());
        return 2;
    }
    std::printf("%d criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
