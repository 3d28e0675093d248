#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "bavsl/corridor.hpp"
#include "bavsl/mpc.hpp"

namespace bavsl {

struct Scenario {
    std::string name;
    ScenarioConfig config;
};

// Reference weighting (travel time only) and the two emission-weighted variants.
std::vector<Scenario> baseline_scenarios();

// Weighting by its travel-time share in percent: 33 or 67.
ScenarioConfig weighted_scenario(const ScenarioConfig& base, int weights_id);

struct RegretSample {
    std::uint64_t seed = 0;
    int weights_id = 0;
    NoiseKind noise = NoiseKind::None;
    double j_noise = 0.0;
    double j_base = 0.0;
    double regret = 0.0;
};

struct Quantiles {
    double p50 = 0.0, p80 = 0.0, p95 = 0.0, p100 = 0.0;
};

// Nearest-rank quantile, p in (0, 1].
double nearest_rank(std::vector<double> values, double p);
Quantiles regret_quantiles(const std::vector<RegretSample>& samples);

struct MonteCarloOptions {
    int runs = 1000;
    std::uint64_t base_seed = 1;
    int jobs = 1;
    double sigma = 0.02;
    double rho = 0.8;
    MpcConfig mpc;
    std::function<void(int done, int total)> progress;
};

struct MonteCarloResult {
    std::vector<RegretSample> samples;  // in run order
    Quantiles quantiles;
    double j_base = 0.0;
};

// Closed-loop cost under noise against the noise-free closed loop. Run i uses
// seed base_seed + i; results do not depend on the job count.
MonteCarloResult monte_carlo(const ScenarioConfig& base, int weights_id, NoiseKind noise,
                             const MonteCarloOptions& options);

// Noise-free closed loop and the shared first solve for one weighting.
struct MpcBaseline {
    ScenarioConfig config;
    OcpSolution first;
    MpcResult run;
};
MpcBaseline mpc_baseline(const ScenarioConfig& config, const MpcConfig& mpc);

struct AnovaRow {
    std::string source;
    double variance_pct = 0.0;
    double sum_squares = 0.0;
    int dof = 0;
    double f = 0.0;  // zero on the residual row
    double p = 1.0;  // one on the residual row
};

struct AnovaTable {
    std::vector<AnovaRow> rows;  // weight, noise, interaction, residual
    const AnovaRow& row(const std::string& source) const;
};

// Balanced two-way fixed-effects decomposition of the regret over weighting
// and noise kind. Needs two levels per factor, equal cell counts and at
// least two samples per cell.
AnovaTable two_factor_anova(const std::vector<RegretSample>& samples);

// Scenario file: YAML mapping with optional sections fd, corridor, weights,
// demand, noise, simulation, mpc. Missing keys keep the reference values.
struct ScenarioFile {
    ScenarioConfig scenario;
    MpcConfig mpc;
};
ScenarioFile load_scenario(const std::string& path);
ScenarioFile parse_scenario(const std::string& yaml_text);
// Resolved configuration as "key: value" lines (prefixed for CSV headers).
std::string describe(const ScenarioFile& file, const std::string& prefix = "# ");

// CSV writers. Each row set is preceded by the header lines given.
void write_trajectory_csv(std::ostream& os, const std::vector<TrajectoryRow>& rows, const std::string& header);
void write_control_log_csv(std::ostream& os, const std::vector<ControlLogRow>& rows, const std::string& header);
void write_regret_csv(std::ostream& os, const std::vector<RegretSample>& samples, const std::string& header);
void write_anova_csv(std::ostream& os, const AnovaTable& table, const std::string& header);
std::vector<RegretSample> read_regret_csv(std::istream& is);

}  // namespace bavsl
