#include "bavsl/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <istream>
#include <map>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include <boost/math/distributions/fisher_f.hpp>
#include <yaml-cpp/yaml.h>

#include "bavsl/errors.hpp"

namespace bavsl {

std::vector<Scenario> baseline_scenarios() {
    std::vector<Scenario> out;
    const std::array<std::pair<const char*, double>, 3> runs{{{"mu1=1", 1.0}, {"mu1=2/3", 2.0 / 3.0}, {"mu1=1/3", 1.0 / 3.0}}};
    for (const auto& [name, mu1] : runs) {
        ScenarioConfig c;
        c.weights.mu1 = mu1;
        c.weights.mu2 = 1.0 - mu1;
        c.weights.lambda = {1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
        c.weights.length = c.length;
        out.push_back({name, c});
    }
    return out;
}

ScenarioConfig weighted_scenario(const ScenarioConfig& base, int weights_id) {
    if (weights_id != 33 && weights_id != 67) throw ConfigError("weights id must be 33 or 67");
    ScenarioConfig c = base;
    c.weights.mu1 = weights_id == 33 ? 1.0 / 3.0 : 2.0 / 3.0;
    c.weights.mu2 = 1.0 - c.weights.mu1;
    return c;
}

double nearest_rank(std::vector<double> values, double p) {
    if (values.empty()) throw DomainError("quantile of an empty sample");
    if (!(p > 0.0 && p <= 1.0)) throw DomainError("quantile level must be in (0, 1]");
    std::sort(values.begin(), values.end());
    const auto rank = static_cast<std::size_t>(std::ceil(p * static_cast<double>(values.size()) - 1e-9));
    return values[std::max<std::size_t>(rank, 1) - 1];
}

Quantiles regret_quantiles(const std::vector<RegretSample>& samples) {
    std::vector<double> r;
    r.reserve(samples.size());
    for (const auto& s : samples) r.push_back(s.regret);
    return {nearest_rank(r, 0.5), nearest_rank(r, 0.8), nearest_rank(r, 0.95), nearest_rank(r, 1.0)};
}

MpcBaseline mpc_baseline(const ScenarioConfig& config, const MpcConfig& mpc) {
    MpcBaseline b;
    b.config = config;
    b.config.demand.noise.kind = NoiseKind::None;
    const RateCurve arrivals = base_curve(b.config.demand);
    const OcpProblem pb = predictor_problem(b.config, mpc, arrivals, initial_state(b.config, b.config.v_max, 0.0));
    b.first = solve_ocp(pb, mpc.solver);
    b.run = mpc_run(b.config, mpc, arrivals, &b.first);
    return b;
}

MonteCarloResult monte_carlo(const ScenarioConfig& base, int weights_id, NoiseKind noise,
                             const MonteCarloOptions& options) {
    if (options.runs < 1) throw ConfigError("Monte Carlo needs at least one run");
    if (options.jobs < 1) throw ConfigError("job count must be at least one");
    if (noise == NoiseKind::None) throw ConfigError("Monte Carlo needs a noise kind");
    const MpcBaseline baseline = mpc_baseline(weighted_scenario(base, weights_id), options.mpc);
    const double j_base = baseline.run.objective;
    if (!(j_base > 0.0)) throw DomainError("noise-free baseline cost must be positive");

    MonteCarloResult out;
    out.j_base = j_base;
    out.samples.resize(static_cast<std::size_t>(options.runs));
    std::atomic<int> next{0};
    std::atomic<int> done{0};
    std::mutex guard;
    std::exception_ptr failure;
    const auto worker = [&] {
        for (int i = next++; i < options.runs; i = next++) {
            try {
                ScenarioConfig c = baseline.config;
                c.demand.noise.kind = noise;
                c.demand.noise.sigma_rel = options.sigma;
                c.demand.noise.rho = options.rho;
                c.demand.seed = options.base_seed + static_cast<std::uint64_t>(i);
                const MpcResult r = mpc_run(c, options.mpc, &baseline.first);
                RegretSample s;
                s.seed = c.demand.seed;
                s.weights_id = weights_id;
                s.noise = noise;
                s.j_noise = r.objective;
                s.j_base = j_base;
                s.regret = (r.objective - j_base) / j_base;
                if (!std::isfinite(s.regret)) {
                    throw DomainError("non-finite regret for seed " + std::to_string(s.seed));
                }
                out.samples[static_cast<std::size_t>(i)] = s;
            } catch (...) {
                std::lock_guard<std::mutex> lock(guard);
                if (!failure) failure = std::current_exception();
                next = options.runs;
                return;
            }
            const int d = ++done;
            if (options.progress) {
                std::lock_guard<std::mutex> lock(guard);
                options.progress(d, options.runs);
            }
        }
    };
    const int jobs = std::min(options.jobs, options.runs);
    if (jobs == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
    }
    if (failure) std::rethrow_exception(failure);
    out.quantiles = regret_quantiles(out.samples);
    return out;
}

const AnovaRow& AnovaTable::row(const std::string& source) const {
    for (const auto& r : rows) {
        if (r.source == source) return r;
    }
    throw DomainError("no ANOVA row named " + source);
}

AnovaTable two_factor_anova(const std::vector<RegretSample>& samples) {
    std::map<int, int> weight_level;
    std::map<NoiseKind, int> noise_level;
    for (const auto& s : samples) {
        weight_level.emplace(s.weights_id, 0);
        noise_level.emplace(s.noise, 0);
    }
    if (weight_level.size() != 2 || noise_level.size() != 2) {
        throw DomainError("ANOVA needs exactly two weightings and two noise kinds");
    }
    int idx = 0;
    for (auto& [k, v] : weight_level) v = idx++;
    idx = 0;
    for (auto& [k, v] : noise_level) v = idx++;

    std::array<std::array<std::vector<double>, 2>, 2> cell;
    for (const auto& s : samples) cell[weight_level[s.weights_id]][noise_level[s.noise]].push_back(s.regret);
    const std::size_t n = cell[0][0].size();
    for (const auto& row : cell) {
        for (const auto& c : row) {
            if (c.size() != n) throw DomainError("ANOVA design is unbalanced");
        }
    }
    if (n < 2) throw DomainError("ANOVA needs at least two samples per cell");

    double grand = 0.0;
    std::array<std::array<double, 2>, 2> mean{};
    for (int a = 0; a < 2; ++a) {
        for (int b = 0; b < 2; ++b) {
            double sum = 0.0;
            for (double y : cell[a][b]) sum += y;
            mean[a][b] = sum / static_cast<double>(n);
            grand += mean[a][b] / 4.0;
        }
    }
    const std::array<double, 2> mean_a{(mean[0][0] + mean[0][1]) / 2.0, (mean[1][0] + mean[1][1]) / 2.0};
    const std::array<double, 2> mean_b{(mean[0][0] + mean[1][0]) / 2.0, (mean[0][1] + mean[1][1]) / 2.0};
    const double nd = static_cast<double>(n);
    double ss_a = 0.0, ss_b = 0.0, ss_ab = 0.0, ss_e = 0.0;
    for (int a = 0; a < 2; ++a) {
        ss_a += 2.0 * nd * std::pow(mean_a[a] - grand, 2);
        ss_b += 2.0 * nd * std::pow(mean_b[a] - grand, 2);
        for (int b = 0; b < 2; ++b) {
            ss_ab += nd * std::pow(mean[a][b] - mean_a[a] - mean_b[b] + grand, 2);
            for (double y : cell[a][b]) ss_e += std::pow(y - mean[a][b], 2);
        }
    }
    const double total = ss_a + ss_b + ss_ab + ss_e;
    const int dof_e = 4 * (static_cast<int>(n) - 1);
    const double ms_e = ss_e / dof_e;
    const auto test = [&](const std::string& name, double ss) {
        AnovaRow r;
        r.source = name;
        r.sum_squares = ss;
        r.dof = 1;
        r.variance_pct = total > 0.0 ? 100.0 * ss / total : 0.0;
        if (ms_e > 0.0) {
            r.f = ss / ms_e;
            boost::math::fisher_f dist(1.0, dof_e);
            r.p = boost::math::cdf(boost::math::complement(dist, r.f));
        } else {
            r.f = ss > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
            r.p = ss > 0.0 ? 0.0 : 1.0;
        }
        return r;
    };
    AnovaTable t;
    t.rows.push_back(test("weight", ss_a));
    t.rows.push_back(test("noise", ss_b));
    t.rows.push_back(test("interaction", ss_ab));
    AnovaRow res;
    res.source = "residual";
    res.sum_squares = ss_e;
    res.dof = dof_e;
    res.variance_pct = total > 0.0 ? 100.0 * ss_e / total : 100.0;
    t.rows.push_back(res);
    return t;
}

// ---------------------------------------------------------------------------
// Scenario files

namespace {

template <class T>
void read(const YAML::Node& node, const char* key, T& value) {
    if (!node) return;
    const YAML::Node v = node[key];
    if (!v) return;
    try {
        value = v.as<T>();
    } catch (const YAML::Exception& e) {
        throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
    }
}

void reject_unknown(const YAML::Node& node, const std::string& where, std::initializer_list<const char*> keys) {
    if (!node) return;
    if (!node.IsMap()) throw ConfigError("section '" + where + "' must be a mapping");
    for (const auto& kv : node) {
        const std::string k = kv.first.as<std::string>();
        if (std::none_of(keys.begin(), keys.end(), [&](const char* s) { return k == s; })) {
            throw ConfigError("unknown key '" + k + "' in " + where);
        }
    }
}

}  // namespace

ScenarioFile parse_scenario(const std::string& yaml_text) {
    YAML::Node root;
    try {
        root = YAML::Load(yaml_text);
    } catch (const YAML::Exception& e) {
        throw ConfigError(std::string("malformed scenario file: ") + e.what());
    }
    ScenarioFile f;
    if (!root || root.IsNull()) return f;
    reject_unknown(root, "scenario", {"fd", "corridor", "weights", "demand", "noise", "simulation", "mpc"});
    ScenarioConfig& c = f.scenario;

    const YAML::Node fd = root["fd"];
    reject_unknown(fd, "fd", {"free_speed", "wave_speed", "capacity"});
    double vf = c.fd.v_f(), w = c.fd.w(), qmax = c.fd.q_max();
    read(fd, "free_speed", vf);
    read(fd, "wave_speed", w);
    read(fd, "capacity", qmax);
    if (!(vf > 0.0 && w > 0.0 && qmax > 0.0)) throw ConfigError("diagram parameters must be positive");
    c.fd = TriangularFD::from_capacity(vf, w, qmax);

    const YAML::Node cor = root["corridor"];
    reject_unknown(cor, "corridor", {"length_km", "max_acceleration", "v_min", "v_max"});
    read(cor, "length_km", c.length);
    read(cor, "max_acceleration", c.a0);
    read(cor, "v_min", c.v_min);
    read(cor, "v_max", c.v_max);
    c.weights.length = c.length;

    const YAML::Node wt = root["weights"];
    reject_unknown(wt, "weights", {"mu1", "mu2", "lambda"});
    read(wt, "mu1", c.weights.mu1);
    c.weights.mu2 = 1.0 - c.weights.mu1;
    read(wt, "mu2", c.weights.mu2);
    if (wt && wt["lambda"]) {
        std::vector<double> l;
        read(wt, "lambda", l);
        if (l.size() != 3) throw ConfigError("weights.lambda needs three entries (CO, NOx, HC)");
        c.weights.lambda = {l[0], l[1], l[2]};
    }

    const YAML::Node dm = root["demand"];
    reject_unknown(dm, "demand", {"times_h", "rates_veh_h", "cutoff_h"});
    if (dm) {
        std::vector<double> t = c.demand.knot_times(), r = c.demand.knot_rates();
        double cutoff = c.demand.cutoff();
        read(dm, "times_h", t);
        read(dm, "rates_veh_h", r);
        read(dm, "cutoff_h", cutoff);
        try {
            c.demand = DemandProfile(t, r, cutoff);
        } catch (const DomainError& e) {
            throw ConfigError(std::string("demand: ") + e.what());
        }
    }

    const YAML::Node nz = root["noise"];
    reject_unknown(nz, "noise", {"kind", "sigma", "rho", "cell_s", "seed"});
    if (nz && nz["kind"]) {
        try {
            c.demand.noise.kind = parse_noise(nz["kind"].as<std::string>().c_str());
        } catch (const YAML::Exception&) {
            throw ConfigError("noise.kind must be a string");
        }
    }
    read(nz, "sigma", c.demand.noise.sigma_rel);
    read(nz, "rho", c.demand.noise.rho);
    double cell_s = c.demand.noise.cell * 3600.0;
    read(nz, "cell_s", cell_s);
    c.demand.noise.cell = cell_s / 3600.0;
    read(nz, "seed", c.demand.seed);

    const YAML::Node sim = root["simulation"];
    reject_unknown(sim, "simulation", {"dt_s", "t_final_h", "output_every_s"});
    double dt_s = c.dt * 3600.0, out_s = c.output_every * 3600.0;
    read(sim, "dt_s", dt_s);
    read(sim, "t_final_h", c.t_final);
    read(sim, "output_every_s", out_s);
    c.dt = dt_s / 3600.0;
    c.output_every = out_s / 3600.0;

    const YAML::Node mp = root["mpc"];
    reject_unknown(mp, "mpc", {"sample_s", "horizon_h", "predictor_dt_s", "forecast_window_min", "tolerance",
                               "max_iterations"});
    MpcConfig& m = f.mpc;
    double sample_s = m.sample * 3600.0, pdt_s = m.predictor_dt * 3600.0, win_min = m.forecast_window * 60.0;
    read(mp, "sample_s", sample_s);
    read(mp, "horizon_h", m.horizon);
    read(mp, "predictor_dt_s", pdt_s);
    read(mp, "forecast_window_min", win_min);
    read(mp, "tolerance", m.solver.tol);
    read(mp, "max_iterations", m.solver.max_iter);
    m.sample = sample_s / 3600.0;
    m.predictor_dt = pdt_s / 3600.0;
    m.forecast_window = win_min / 60.0;

    c.validate();
    m.validate();
    return f;
}

ScenarioFile load_scenario(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open scenario file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_scenario(ss.str());
}

std::string describe(const ScenarioFile& file, const std::string& prefix) {
    const ScenarioConfig& c = file.scenario;
    const MpcConfig& m = file.mpc;
    std::ostringstream os;
    os << std::setprecision(17);
    const auto line = [&](const std::string& key, const auto& value) { os << prefix << key << ": " << value << "\n"; };
    line("fd.free_speed", c.fd.v_f());
    line("fd.wave_speed", c.fd.w());
    line("fd.capacity", c.fd.q_max());
    line("corridor.length_km", c.length);
    line("corridor.max_acceleration", c.a0);
    line("corridor.v_min", c.v_min);
    line("corridor.v_max", c.v_max);
    line("weights.mu1", c.weights.mu1);
    line("weights.mu2", c.weights.mu2);
    std::ostringstream lam;
    lam << std::setprecision(17) << "[" << c.weights.lambda[0] << ", " << c.weights.lambda[1] << ", "
        << c.weights.lambda[2] << "]";
    line("weights.lambda", lam.str());
    std::ostringstream t, r;
    t << std::setprecision(17) << "[";
    r << std::setprecision(17) << "[";
    for (std::size_t i = 0; i < c.demand.knot_times().size(); ++i) {
        t << (i ? ", " : "") << c.demand.knot_times()[i];
        r << (i ? ", " : "") << c.demand.knot_rates()[i];
    }
    line("demand.times_h", t.str() + "]");
    line("demand.rates_veh_h", r.str() + "]");
    line("demand.cutoff_h", c.demand.cutoff());
    line("noise.kind", noise_name(c.demand.noise.kind));
    line("noise.sigma", c.demand.noise.sigma_rel);
    line("noise.rho", c.demand.noise.rho);
    line("noise.cell_s", c.demand.noise.cell * 3600.0);
    line("noise.seed", c.demand.seed);
    line("simulation.dt_s", c.dt * 3600.0);
    line("simulation.t_final_h", c.t_final);
    line("simulation.output_every_s", c.output_every * 3600.0);
    line("mpc.sample_s", m.sample * 3600.0);
    line("mpc.horizon_h", m.horizon);
    line("mpc.predictor_dt_s", m.predictor_dt * 3600.0);
    line("mpc.forecast_window_min", m.forecast_window * 60.0);
    line("mpc.tolerance", m.solver.tol);
    line("mpc.max_iterations", m.solver.max_iter);
    return os.str();
}

// ---------------------------------------------------------------------------
// CSV

void write_trajectory_csv(std::ostream& os, const std::vector<TrajectoryRow>& rows, const std::string& header) {
    os << header << "t_h,l_q_veh,w_q_h,q0_vph,k0_vpkm,v_kmh,u0_kmh,tau_f_h,cost_rate\n";
    os << std::setprecision(10);
    for (const auto& r : rows) {
        os << r.t << ',' << r.l_q << ',' << r.w_q << ',' << r.q_0 << ',' << r.k_0 << ',' << r.v << ',' << r.u_0 << ','
           << r.tau_f << ',' << r.cost_rate << '\n';
    }
}

void write_control_log_csv(std::ostream& os, const std::vector<ControlLogRow>& rows, const std::string& header) {
    os << header << "t_k,v_applied_kmh,J_pred,solver_iters,converged\n";
    os << std::setprecision(10);
    for (const auto& r : rows) {
        os << r.t << ',' << r.v_applied << ',' << r.predicted_objective << ',' << r.iterations << ','
           << (r.converged ? 1 : 0) << '\n';
    }
}

void write_regret_csv(std::ostream& os, const std::vector<RegretSample>& samples, const std::string& header) {
    os << header << "seed,weights_id,noise_kind,J_noise,J_base,regret_rel\n";
    os << std::setprecision(17);
    for (const auto& s : samples) {
        os << s.seed << ',' << s.weights_id << ',' << noise_name(s.noise) << ',' << s.j_noise << ',' << s.j_base << ','
           << s.regret << '\n';
    }
}

void write_anova_csv(std::ostream& os, const AnovaTable& table, const std::string& header) {
    os << header << "source,variance_pct,sum_squares,dof,F,p\n";
    os << std::setprecision(10);
    for (const auto& r : table.rows) {
        os << r.source << ',' << r.variance_pct << ',' << r.sum_squares << ',' << r.dof << ',' << r.f << ',' << r.p
           << '\n';
    }
}

std::vector<RegretSample> read_regret_csv(std::istream& is) {
    std::vector<RegretSample> out;
    std::string line;
    bool header_seen = false;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        if (!header_seen) {
            if (line.rfind("seed,", 0) != 0) throw ConfigError("regret CSV lacks its column header");
            header_seen = true;
            continue;
        }
        std::stringstream ss(line);
        std::string f[6];
        for (auto& x : f) {
            if (!std::getline(ss, x, ',')) throw ConfigError("regret CSV row has too few fields: " + line);
        }
        RegretSample s;
        try {
            s.seed = std::stoull(f[0]);
            s.weights_id = std::stoi(f[1]);
            s.noise = parse_noise(f[2].c_str());
            s.j_noise = std::stod(f[3]);
            s.j_base = std::stod(f[4]);
            s.regret = std::stod(f[5]);
        } catch (const std::logic_error&) {
            throw ConfigError("regret CSV row is malformed: " + line);
        }
        out.push_back(s);
    }
    return out;
}

}  // namespace bavsl
