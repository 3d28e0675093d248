#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "bavsl/corridor.hpp"

namespace bavsl {

// Pointwise optimal-control terms. The state and costate share the
// PlantVector layout; x_r carries no dynamics into the cost, so its costate
// stays zero.
//
// Dynamics per regime (u is q_0/k_0 on free acceleration arcs and v otherwise):
//   queued:    l' = d(t) - q_0,  w' = 1 - q_0 / d(t - w)
//   free arc:  q_0' = r M, k_0' = -M,  M = A_0 r k_0^3 / (q_0 (q_0 + r k_0))
//   tracking:  q_0' = r K a, k_0' = -K a,  K = (q_0 + r k_0) / (v + r)^2
//   v' = a, r' = 0
// Running cost: F C(w + tau_f(v, u)), F = q_0 when queued, d(t) otherwise.
PlantVector plant_rhs(const PlantVector& x, double a, const Regime& regime, double t,
                      const ScenarioConfig& config, const RateCurve& arrivals);
double running_integrand(const PlantVector& x, const Regime& regime, double t,
                         const ScenarioConfig& config, const RateCurve& arrivals);
// Gradient cap h(v, u) at the regime's traffic speed.
double feasible_rate(const PlantVector& x, const Regime& regime, const ScenarioConfig& config);

// Augmented Hamiltonian L + lambda . f + mu (a - h).
double hamiltonian(const PlantVector& x, const PlantVector& lambda, double a, double mu,
                   const Regime& regime, double t, const ScenarioConfig& config, const RateCurve& arrivals);
// -dH/dx, hand-derived.
PlantVector costate_rhs(const PlantVector& x, const PlantVector& lambda, double a, double mu,
                        const Regime& regime, double t, const ScenarioConfig& config,
                        const RateCurve& arrivals);
// dH/da without the multiplier term; the switching function is this plus mu.
double control_gain(const PlantVector& x, const PlantVector& lambda, const Regime& regime);

// Limit schedule: level v1 posted at t0, then up to two switches, each a ramp
// at the gradient cap or an instantaneous decrease. Phases alternate
// plateau / switch, so two switches give five phases.
struct PhasePlan {
    enum class Switch { Ramp, Drop };
    struct Move {
        double time;
        Switch kind;
        double target;
    };
    double t0 = 0.0;
    double v1 = 120.0;
    std::vector<Move> moves;

    ControlProgram program() const;
    std::string pattern() const;  // e.g. "P-R-P"
    std::size_t unknowns() const { return 1 + 2 * moves.size(); }
    // Unknowns in solver units: speeds in km/h, times in minutes after t0.
    std::vector<double> pack() const;
    void unpack(const std::vector<double>& z);
};

// One instance: plant, forecast arrivals, starting state and horizon end.
struct OcpProblem {
    ScenarioConfig config;
    RateCurve arrivals;
    CorridorState initial;
    double t_end = 5.0;
    double dt = 1.0 / 3600.0;
};

OcpProblem make_problem(const ScenarioConfig& config, double horizon, double dt = 1.0 / 3600.0);

struct AdjointSample {
    double t;
    PlantVector lambda;
    double gain;   // dH/da
    double mu;     // multiplier on the cap, non-zero on ramps only
    double lower;  // dJ/dv for an instantaneous decrease posted at t
    SpeedMode speed;
};

struct ShootResult {
    double objective = 0.0;
    std::vector<double> gradient;  // dJ/dz in solver units
    std::vector<AdjointSample> adjoint;
    SimResult sim;
};

// Forward pass over the phases then the costate sweep back from t_end; the
// gradient is the vector of switching conditions on levels, switch times and
// ramp targets. Simulation errors propagate.
ShootResult shoot(const OcpProblem& problem, const PhasePlan& plan, bool keep_adjoint = false);

struct Bounds {
    std::vector<double> lo, hi;
};
Bounds plan_bounds(const OcpProblem& problem, const PhasePlan& plan);

struct KktReport {
    double stationarity = 0.0;     // max |projected residual| over the free unknowns
    double feasibility = 0.0;      // worst bound or cap excess along the trajectory
    double complementarity = 0.0;  // max |mu (a - h)|
    double min_ramp_multiplier = 0.0;
    bool ok(double tol = 1e-6) const {
        return stationarity < tol && feasibility <= tol && complementarity < tol;
    }
};

struct OcpOptions {
    double tol = 1e-6;
    int max_iter = 50;
    int max_switches = 2;
    bool try_patterns = true;
    double oracle_dt = 30.0 / 3600.0;  // cold-start grid search step
    std::ostream* log = nullptr;       // line-delimited diagnostics when set
};

struct OcpSolution {
    PhasePlan plan;
    double objective = 0.0;
    std::vector<double> residual;  // projected gradient / |J|, solver units
    double residual_norm = 0.0;
    int iterations = 0;
    int evaluations = 0;
    bool converged = false;
    KktReport kkt;
    std::vector<double> hessian;  // free-variable curvature, row-major, reused by warm starts
    std::vector<AdjointSample> adjoint;
    SimResult sim;
};

OcpSolution solve_ocp(const OcpProblem& problem, const OcpOptions& options = {},
                      const std::optional<OcpSolution>& warm = std::nullopt);

// Newton iterations from a given plan without the cold-start search or pattern updates.
OcpSolution refine_plan(const OcpProblem& problem, PhasePlan plan, const OcpOptions& options,
                        const std::vector<double>* hessian = nullptr);

KktReport kkt_audit(const OcpProblem& problem, const PhasePlan& plan, const ShootResult& shot,
                    const std::vector<double>& projected_residual);

struct OracleGrid {
    double speed_step = 2.5;
    double time_step = 5.0 / 60.0;
    std::optional<double> dt;  // simulation step; the problem's when unset
};

struct OracleResult {
    PhasePlan plan;
    double objective = 0.0;
    std::size_t evaluated = 0;
    std::size_t infeasible = 0;
};

// Exhaustive search over plateau / cap-ramp / plateau profiles.
OracleResult grid_oracle(const OcpProblem& problem, const OracleGrid& grid = {});

// Objective of a plan on the problem's own grid.
double evaluate_plan(const OcpProblem& problem, const PhasePlan& plan);

}  // namespace bavsl
