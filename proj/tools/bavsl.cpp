// Command-line front end: simulation, open-loop and closed-loop control,
// Monte Carlo regret studies and figure data.
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "bavsl/errors.hpp"
#include "bavsl/experiments.hpp"
#include "bavsl/mpc.hpp"
#include "bavsl/ocp.hpp"

using namespace bavsl;

namespace {

constexpr int kUserError = 1;
constexpr int kInternalError = 2;

ScenarioFile load_or_default(const std::string& path) {
    return path.empty() ? ScenarioFile{} : load_scenario(path);
}

// Output goes to the named file, or stdout for "-".
class Sink {
public:
    explicit Sink(const std::string& path) {
        if (path.empty() || path == "-") return;
        file_.open(path);
        if (!file_) throw ConfigError("cannot write " + path);
    }
    std::ostream& get() { return file_.is_open() ? static_cast<std::ostream&>(file_) : std::cout; }

private:
    std::ofstream file_;
};

std::vector<std::vector<std::string>> read_csv(const std::string& path, std::vector<std::string>& header,
                                               std::vector<std::string>& comments) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path);
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (line[0] == '#') {
            comments.push_back(line);
            continue;
        }
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string f;
        while (std::getline(ss, f, ',')) fields.push_back(f);
        if (header.empty()) {
            header = fields;
        } else {
            rows.push_back(fields);
        }
    }
    if (header.empty()) throw ConfigError(path + " has no column header");
    return rows;
}

std::size_t column(const std::vector<std::string>& header, const std::string& name, const std::string& path) {
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (header[i] == name) return i;
    }
    throw ConfigError(path + " lacks column " + name);
}

double number(const std::string& s) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::logic_error&) {
        throw ConfigError("not a number: '" + s + "'");
    }
}

ControlProgram parse_vsl(const std::string& spec) {
    if (spec.rfind("constant:", 0) == 0) return ControlProgram::constant(number(spec.substr(9)));
    std::vector<std::string> header, comments;
    const auto rows = read_csv(spec, header, comments);
    const std::size_t ct = column(header, "t_h", spec), cv = column(header, "v_kmh", spec);
    std::vector<double> t, v;
    for (const auto& r : rows) {
        t.push_back(number(r.at(ct)));
        v.push_back(number(r.at(cv)));
    }
    return ControlProgram::piecewise_linear(t, v);
}

std::string header_for(const ScenarioFile& f, const std::string& command) {
    return "# command: " + command + "\n" + describe(f);
}

void print_emissions(const CurveSet& curves, double v) {
    std::cout << std::setprecision(10);
    for (const auto& c : curves) {
        std::cout << pollutant_name(c.pollutant) << " v=" << v << " factor_g_km=" << emission_factor(c, v)
                  << " coefficients alpha=" << c.alpha << " beta=" << c.beta << " gamma=" << c.gamma
                  << " delta=" << c.delta << " epsilon=" << c.epsilon << " zeta=" << c.zeta << " eta=" << c.eta
                  << "\n";
    }
}

void write_plan_csv(std::ostream& os, const PhasePlan& plan, const std::string& header) {
    os << header << "phase,kind,time_h,target_kmh\n" << std::setprecision(12);
    os << "0,level," << plan.t0 << ',' << plan.v1 << '\n';
    for (std::size_t i = 0; i < plan.moves.size(); ++i) {
        const auto& m = plan.moves[i];
        os << i + 1 << ',' << (m.kind == PhasePlan::Switch::Ramp ? "ramp" : "drop") << ',' << m.time << ','
           << m.target << '\n';
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Bounded-acceleration variable speed limit control"};
    app.require_subcommand(1);

    std::string config_path, out_path, log_path, vsl = "constant:120";
    double horizon = 5.0;
    std::uint64_t seed = 0;
    std::string noise = "none";
    int runs = 1000, weights = 33, jobs = 1;
    std::vector<std::string> sample_files;
    double speed = -1.0;
    std::string profile, from, what;

    auto* sim = app.add_subcommand("simulate", "Forward run under a given limit profile");
    sim->add_option("--config", config_path, "Scenario file (YAML)");
    sim->add_option("--vsl", vsl, "constant:V or a CSV with t_h,v_kmh knots");
    sim->add_option("--out", out_path, "Trajectory CSV (stdout when omitted)");

    auto* opt = app.add_subcommand("optimize", "Open-loop optimal limit schedule");
    opt->add_option("--config", config_path, "Scenario file (YAML)");
    opt->add_option("--horizon", horizon, "Horizon in hours")->check(CLI::PositiveNumber);
    opt->add_option("--out", out_path, "Solution CSV (stdout when omitted)");
    opt->add_option("--trajectory", log_path, "Trajectory CSV of the optimal schedule");

    auto* mpc = app.add_subcommand("mpc", "Closed-loop receding-horizon run");
    mpc->add_option("--config", config_path, "Scenario file (YAML)");
    mpc->add_option("--seed", seed, "Noise seed");
    mpc->add_option("--noise", noise, "none|white|ar1")->check(CLI::IsMember({"none", "white", "ar1"}));
    mpc->add_option("--out", out_path, "Trajectory CSV (stdout when omitted)");
    mpc->add_option("--log", log_path, "Control log CSV");

    auto* mc = app.add_subcommand("montecarlo", "Regret of the closed loop under demand noise");
    mc->add_option("--config", config_path, "Scenario file (YAML)");
    mc->add_option("--runs", runs, "Replications")->required()->check(CLI::PositiveNumber);
    mc->add_option("--weights", weights, "Travel-time share in percent")->check(CLI::IsMember({33, 67}));
    mc->add_option("--noise", noise, "white|ar1")->required()->check(CLI::IsMember({"white", "ar1"}));
    mc->add_option("--jobs", jobs, "Worker threads")->check(CLI::PositiveNumber);
    mc->add_option("--seed", seed, "Base seed; run i uses seed + i");
    mc->add_option("--out", out_path, "Regret CSV (stdout when omitted)");

    auto* an = app.add_subcommand("anova", "Two-factor decomposition of regret samples");
    an->add_option("--samples", sample_files, "Regret CSV files")->required()->check(CLI::ExistingFile);
    an->add_option("--out", out_path, "ANOVA CSV (stdout when omitted)");

    auto* em = app.add_subcommand("emissions", "Emission factors at a speed or along a trajectory");
    em->add_option("--config", config_path, "Scenario file (YAML)");
    auto* em_speed = em->add_option("--speed", speed, "Speed in km/h");
    auto* em_profile = em->add_option("--profile", profile, "Trajectory CSV")->check(CLI::ExistingFile);
    em_speed->excludes(em_profile);

    auto* pd = app.add_subcommand("plotdata", "Two-column series for figures");
    pd->add_option("--from", from, "Trajectory or regret CSV")->required()->check(CLI::ExistingFile);
    pd->add_option("--what", what, "vsl|tt|emissions|regret")
        ->required()
        ->check(CLI::IsMember({"vsl", "tt", "emissions", "regret"}));
    pd->add_option("--out", out_path, "Output (stdout when omitted)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kUserError;
    }

    try {
        if (*sim) {
            ScenarioFile f = load_or_default(config_path);
            const SimResult r = simulate(f.scenario, parse_vsl(vsl));
            Sink sink(out_path);
            write_trajectory_csv(sink.get(), r.rows, header_for(f, "simulate --vsl " + vsl));
            std::cerr << std::setprecision(10) << "J=" << r.objective << " served=" << r.served
                      << " avg_tt_min=" << r.avg_travel_time * 60.0 << " final_queue=" << r.final_state.l_q << "\n";
        } else if (*opt) {
            ScenarioFile f = load_or_default(config_path);
            OcpProblem pb = make_problem(f.scenario, horizon, f.scenario.dt);
            OcpOptions o;
            o.log = &std::cerr;
            const OcpSolution s = solve_ocp(pb, o);
            Sink sink(out_path);
            std::ostringstream h;
            h << header_for(f, "optimize") << std::setprecision(12) << "# horizon_h: " << horizon << "\n"
              << "# objective: " << s.objective << "\n# residual: " << s.residual_norm
              << "\n# converged: " << (s.converged ? 1 : 0) << "\n# iterations: " << s.iterations
              << "\n# kkt_stationarity: " << s.kkt.stationarity << "\n# kkt_feasibility: " << s.kkt.feasibility
              << "\n# kkt_complementarity: " << s.kkt.complementarity
              << "\n# avg_tt_min: " << s.sim.avg_travel_time * 60.0 << "\n";
            write_plan_csv(sink.get(), s.plan, h.str());
            if (!log_path.empty()) {
                const SimResult full = simulate(f.scenario, s.plan.program());
                Sink traj(log_path);
                write_trajectory_csv(traj.get(), full.rows, h.str());
            }
        } else if (*mpc) {
            ScenarioFile f = load_or_default(config_path);
            if (mpc->count("--noise")) f.scenario.demand.noise.kind = parse_noise(noise.c_str());
            if (mpc->count("--seed")) f.scenario.demand.seed = seed;
            const MpcResult r = mpc_run(f.scenario, f.mpc);
            const std::string h = header_for(f, "mpc");
            Sink sink(out_path);
            write_trajectory_csv(sink.get(), r.rows, h);
            if (!log_path.empty()) {
                Sink lg(log_path);
                write_control_log_csv(lg.get(), r.log, h);
            }
            std::cerr << std::setprecision(10) << "J=" << r.objective << " served=" << r.served
                      << " avg_tt_min=" << r.avg_travel_time * 60.0 << " solves=" << r.solves
                      << " failures=" << r.failures << "\n";
        } else if (*mc) {
            if (runs < 1) throw ConfigError("--runs must be at least 1");
            ScenarioFile f = load_or_default(config_path);
            MonteCarloOptions o;
            o.runs = runs;
            o.jobs = jobs;
            o.base_seed = seed;
            o.sigma = f.scenario.demand.noise.sigma_rel;
            o.rho = f.scenario.demand.noise.rho;
            o.mpc = f.mpc;
            const NoiseKind kind = parse_noise(noise.c_str());
            const MonteCarloResult r = monte_carlo(f.scenario, weights, kind, o);
            std::ostringstream h;
            h << header_for(f, "montecarlo") << "# runs: " << runs << "\n# weights: " << weights
              << "\n# noise: " << noise << "\n# base_seed: " << seed << "\n";
            Sink sink(out_path);
            write_regret_csv(sink.get(), r.samples, h.str());
            std::cerr << std::setprecision(8) << "J_base=" << r.j_base << " p50=" << r.quantiles.p50
                      << " p80=" << r.quantiles.p80 << " p95=" << r.quantiles.p95 << " p100=" << r.quantiles.p100
                      << "\n";
        } else if (*an) {
            std::vector<RegretSample> all;
            std::string h = "# command: anova\n";
            for (const auto& path : sample_files) {
                std::ifstream in(path);
                if (!in) throw ConfigError("cannot open " + path);
                const auto s = read_regret_csv(in);
                all.insert(all.end(), s.begin(), s.end());
                h += "# samples: " + path + "\n";
            }
            const AnovaTable t = two_factor_anova(all);
            Sink sink(out_path);
            write_anova_csv(sink.get(), t, h);
        } else if (*em) {
            ScenarioFile f = load_or_default(config_path);
            if (*em_speed) {
                print_emissions(f.scenario.curves, speed);
            } else if (*em_profile) {
                std::vector<std::string> header, comments;
                const auto rows = read_csv(profile, header, comments);
                const std::size_t ct = column(header, "t_h", profile), cv = column(header, "v_kmh", profile);
                std::cout << "t_h,v_kmh,CO_g_km,NOx_g_km,HC_g_km\n" << std::setprecision(10);
                for (const auto& r : rows) {
                    const double v = number(r.at(cv));
                    std::cout << r.at(ct) << ',' << v;
                    for (const auto& c : f.scenario.curves) std::cout << ',' << emission_factor(c, v);
                    std::cout << '\n';
                }
            } else {
                throw ConfigError("emissions needs --speed or --profile");
            }
        } else if (*pd) {
            std::vector<std::string> header, comments;
            const auto rows = read_csv(from, header, comments);
            Sink sink(out_path);
            std::ostream& os = sink.get();
            os << std::setprecision(10);
            if (what == "regret") {
                const std::size_t cr = column(header, "regret_rel", from);
                std::vector<double> r;
                for (const auto& row : rows) r.push_back(number(row.at(cr)));
                std::sort(r.begin(), r.end());
                os << "regret_rel,cdf\n";
                for (std::size_t i = 0; i < r.size(); ++i) {
                    os << r[i] << ',' << static_cast<double>(i + 1) / static_cast<double>(r.size()) << '\n';
                }
            } else {
                const std::size_t ct = column(header, "t_h", from);
                if (what == "vsl") {
                    const std::size_t cv = column(header, "v_kmh", from);
                    os << "t_h,v_kmh\n";
                    for (const auto& row : rows) os << row.at(ct) << ',' << row.at(cv) << '\n';
                } else if (what == "tt") {
                    const std::size_t cw = column(header, "w_q_h", from), cf = column(header, "tau_f_h", from);
                    os << "t_h,travel_time_min\n";
                    for (const auto& row : rows) {
                        os << row.at(ct) << ',' << 60.0 * (number(row.at(cw)) + number(row.at(cf))) << '\n';
                    }
                } else {
                    // The section mean speed comes from the travel time and the corridor length in the header.
                    ScenarioFile f;
                    for (const auto& c : comments) {
                        const std::string key = "# corridor.length_km: ";
                        if (c.rfind(key, 0) == 0) f.scenario.length = number(c.substr(key.size()));
                    }
                    f.scenario.weights.length = f.scenario.length;
                    const std::size_t cf = column(header, "tau_f_h", from);
                    os << "t_h,weighted_emission_g_km\n";
                    for (const auto& row : rows) {
                        const double tau = number(row.at(cf));
                        if (!(tau > 0.0)) continue;
                        const double v = f.scenario.length / tau;
                        os << row.at(ct) << ',' << weighted_emission(f.scenario.weights, f.scenario.curves, v)
                           << '\n';
                    }
                }
            }
        }
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUserError;
    } catch (const ConstraintError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUserError;
    } catch (const DomainError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUserError;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return kInternalError;
    }
    return 0;
}
