#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "bavsl/demand.hpp"
#include "bavsl/emissions.hpp"
#include "bavsl/fundamental_diagram.hpp"
#include "bavsl/kinematics.hpp"

namespace bavsl {

struct ScenarioConfig {
    TriangularFD fd = TriangularFD::from_capacity(120.0, 24.0, 8400.0);
    double length = 10.0;     // km
    double a0 = 9000.0;       // km/h per h
    double v_min = 40.0;
    double v_max = 120.0;
    double t_final = 5.0;     // h
    CostWeights weights;
    CurveSet curves = copert_euro5_petrol();
    DemandProfile demand = DemandProfile::i880_reference();
    double dt = 1.0 / 3600.0;
    double output_every = 10.0 / 3600.0;

    AccelerationLaw law() const { return AccelerationLaw::constant(a0); }
    void validate() const;
};

enum class TrafficPhase { Equilibrium, Acceleration };

// Queue and sign-location state. (q_0, k_0) is the discharge operating point
// at the sign; during acceleration it stays on the episode chord
// q = q_up - r k and u_0 = q_0 / k_0 is the traffic speed there.
struct CorridorState {
    double t = 0.0;
    double l_q = 0.0;
    double w_q = 0.0;
    double q_0 = 0.0;
    double k_0 = 0.0;
    double v = 0.0;
    double x_r = 0.0;
    TrafficPhase phase = TrafficPhase::Equilibrium;
    // Valid during acceleration: (t0, v_c) re-anchor whenever free acceleration
    // resumes, so u_0(t) = sqrt(v_c^2 + 2 A_0 r (t - t0)) while u_0 < v.
    ReleaseBoundary episode;
    bool tracking = false;  // acceleration with u_0 pinned to a slowly rising v
    double arrived = 0.0;   // cumulative arrivals
    double departed = 0.0;  // cumulative admissions into the section

    double u0() const { return q_0 / k_0; }
};

// Equilibrium at limit v on the capped diagram, empty queue.
CorridorState initial_state(const ScenarioConfig& config, double v, double t = 0.0);

struct QueueStepResult {
    double l_q;
    double admitted;     // mean admitted flow over the step
    double empty_after;  // time into the step at which the queue emptied, or -1
};

// Point queue under constant rates over one step; drains exactly to zero.
QueueStepResult queue_step(const CorridorState& state, double supply, double demand, double dt);

// FIFO virtual waiting time of the vehicle at the head of the queue.
double waiting_time(const RateCurve& arrivals, double departed, double t, double l_q);

// Posting a new limit. A decrease below the traffic speed resets to
// equilibrium at the new limit; an increase opens (or retargets) an episode.
CorridorState apply_limit_change(const CorridorState& state, double v_new, const ScenarioConfig& config);

// One planned change of the posted limit.
struct ControlMove {
    enum class Kind { Ramp, Drop, Linear };
    double time = 0.0;    // earliest start; deferred while a previous move is still running
    Kind kind = Kind::Ramp;
    double target = 0.0;  // speed reached (ramp, linear) or posted (drop, only if below the current limit)
    double duration = 0.0;  // linear only
};

// Limit schedule: optional level posted at `start`, then moves separated by holds.
struct ControlProgram {
    double start = 0.0;
    std::optional<double> initial_level;
    std::vector<ControlMove> moves;

    static ControlProgram constant(double v, double start = 0.0);
    // Knots (t, v) joined linearly; equal consecutive times with a lower speed
    // encode an instantaneous decrease.
    static ControlProgram piecewise_linear(const std::vector<double>& t, const std::vector<double>& v);
};

enum class QueueMode { Queued, Free };
enum class SpeedMode { Hold, Ramp, Linear };
enum class WaveMode { Equilibrium, Free, Tracking };

// State vector used by the optimal-control layer.
struct PlantVector {
    double l_q = 0.0;
    double x_r = 0.0;
    double k_0 = 0.0;
    double q_0 = 0.0;
    double w_q = 0.0;
    double v = 0.0;
    double r = 0.0;  // release speed of the active episode
};

struct Regime {
    QueueMode queue = QueueMode::Free;
    SpeedMode speed = SpeedMode::Hold;
    WaveMode wave = WaveMode::Equilibrium;
    double slope = 0.0;  // dv/dt for linear segments
};

enum class EventKind {
    None,
    QueueEmpty,
    QueueStart,
    EpisodeStart,
    EpisodeEnd,
    TrackingStart,
    TrackingEnd,
    RampEnd,
    Drop,
    SegmentBoundary
};

const char* event_name(EventKind kind);

// One sub-interval of the forward pass with constant regime.
struct Interval {
    double t_a = 0.0;
    double t_b = 0.0;
    Regime regime;
    PlantVector x_a, x_m, x_b;
    EventKind end_event = EventKind::None;
    int move_index = -1;  // move executing (or last started) during the interval
};

// A discontinuity at a single instant (reset of the plant state).
struct Jump {
    double t = 0.0;
    EventKind kind = EventKind::None;
    int move_index = -1;
    PlantVector before, after;
    Regime regime_before, regime_after;
    std::size_t next_interval = 0;  // index of the first interval recorded after t
};

struct TrajectoryRow {
    double t;
    double l_q;
    double w_q;
    double q_0;
    double k_0;
    double v;
    double u_0;
    double tau_f;
    double cost_rate;
    double flow;
};

struct SimOptions {
    double dt = 1.0 / 3600.0;
    double t_end = 5.0;
    double output_every = 10.0 / 3600.0;  // 0 disables row output
    bool record_intervals = false;        // keep per-interval states for the adjoint pass
    bool record_nodes = false;            // keep every quadrature node
    double max_substep = 10.0 / 3600.0;   // RK4 substep on free-acceleration ramps
};

struct CostNode {
    double t;
    double flow;
    double tau;    // waiting + section travel time
    double tau_f;  // section travel time
    double weight;
};

struct SimResult {
    CorridorState final_state;
    double objective = 0.0;       // integral of admitted flow times running cost
    double served = 0.0;          // integral of admitted flow
    double arrivals = 0.0;        // arrivals over the run
    double avg_travel_time = 0.0; // h per served vehicle, queue wait included
    std::array<double, 3> avg_emissions{};  // g/km per served vehicle at the section speed
    double avg_weighted_emission = 0.0;
    std::vector<TrajectoryRow> rows;
    std::vector<CostNode> nodes;
    std::vector<Interval> intervals;
    std::vector<Jump> jumps;
    std::vector<std::pair<double, EventKind>> events;

    double objective_per_vehicle() const { return served > 0.0 ? objective / served : 0.0; }
};

SimResult simulate(const ScenarioConfig& config, const ControlProgram& program, const RateCurve& arrivals,
                   const CorridorState& initial, const SimOptions& options);

// Full scenario from t = 0 with realized demand and the equilibrium at v_max.
SimResult simulate(const ScenarioConfig& config, const ControlProgram& program);

// Advances by dt under constant dv/dt = a (a <= gradient cap); a < 0 lowers the
// limit continuously.
CorridorState step(const CorridorState& state, const ScenarioConfig& config, const RateCurve& arrivals,
                   double a, double dt);

// Recomputes the objective from logged nodes by the trapezoidal rule.
double recompute_objective(const ScenarioConfig& config, const std::vector<CostNode>& nodes);

}  // namespace bavsl
