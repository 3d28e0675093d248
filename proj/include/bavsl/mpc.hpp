#pragma once

#include <iosfwd>
#include <vector>

#include "bavsl/corridor.hpp"
#include "bavsl/ocp.hpp"

namespace bavsl {

struct MpcConfig {
    double sample = 60.0 / 3600.0;         // h between solves
    double horizon = 4.0;                  // prediction horizon, h
    double predictor_dt = 30.0 / 3600.0;   // integration step inside the predictor
    double forecast_window = 10.0 / 60.0;  // trailing window for the AR(1) fit
    double forecast_cell = 1.0 / 3600.0;   // resolution of the measured arrival series
    // The coarse predictor grid puts a floor near 1e-5 under the relative gradient,
    // so the receding solves stop well above the offline tolerance.
    OcpOptions solver = receding_options();

    static OcpOptions receding_options() {
        OcpOptions o;
        o.tol = 1e-4;
        o.max_iter = 20;
        return o;
    }

    void validate() const;
};

struct Ar1Fit {
    double coefficient = 0.0;
    double innovation_variance = 0.0;
    std::size_t samples = 0;
};

// Least squares through the origin on consecutive pairs. Needs two points; a
// constant series (no excitation) fits a zero coefficient.
Ar1Fit fit_ar1(const std::vector<double>& deviations);

// Mean arrival-rate deviation from the base profile per cell on [from, to).
std::vector<double> cell_deviations(const RateCurve& measured, const DemandProfile& base, double from, double to,
                                    double cell);

// Base profile from t0 on plus the last deviation decayed by the fitted
// coefficient once per cell. Rates are truncated at zero.
RateCurve ar1_forecast(const DemandProfile& base, const std::vector<double>& history, double t0, double cell);

struct ControlLogRow {
    double t;
    double v_applied;
    double predicted_objective;
    int iterations;
    bool converged;
};

struct MpcResult {
    double objective = 0.0;
    double served = 0.0;
    double avg_travel_time = 0.0;
    std::array<double, 3> avg_emissions{};
    CorridorState final_state;
    std::vector<TrajectoryRow> rows;
    std::vector<ControlLogRow> log;
    // Posted limit at each plant step boundary, for seam checks.
    std::vector<std::pair<double, double>> limit;
    int solves = 0;
    int failures = 0;
    long evaluations = 0;  // predictor shots over the run

    double objective_per_vehicle() const { return served > 0.0 ? objective / served : 0.0; }
};

// Closed loop against the realized arrivals of config.demand. `first` is the
// solution of the t = 0 predictor; it depends only on the base profile, so
// repeated runs can share it.
MpcResult mpc_run(const ScenarioConfig& config, const MpcConfig& mpc, const OcpSolution* first = nullptr,
                  std::ostream* log = nullptr);
MpcResult mpc_run(const ScenarioConfig& config, const MpcConfig& mpc, const RateCurve& arrivals,
                  const OcpSolution* first = nullptr, std::ostream* log = nullptr);

// Predictor instance at a sampling instant: measured state, spliced history
// and forecast arrivals.
OcpProblem predictor_problem(const ScenarioConfig& config, const MpcConfig& mpc, const RateCurve& arrivals,
                             const CorridorState& state);

// Previous plan moved to a later instant: completed switches dropped, a running
// ramp restarted at t, the level taken from the measured state.
PhasePlan shift_plan(const PhasePlan& plan, const CorridorState& state);

}  // namespace bavsl
