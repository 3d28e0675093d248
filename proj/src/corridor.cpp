#include "bavsl/corridor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "bavsl/errors.hpp"
#include "bavsl/kernels.hpp"

namespace bavsl {

void ScenarioConfig::validate() const {
    if (!(length > 0.0)) throw ConfigError("corridor length must be positive");
    if (!(a0 > 0.0)) throw ConfigError("maximum acceleration must be positive");
    if (!(v_min > 0.0 && v_min < v_max && v_max <= fd.v_f())) {
        throw ConfigError("speed bounds must satisfy 0 < v_min < v_max <= v_f");
    }
    if (!(t_final > 0.0)) throw ConfigError("horizon must be positive");
    if (!(dt > 0.0)) throw ConfigError("time step must be positive");
    if (!(output_every >= 0.0)) throw ConfigError("output cadence must be >= 0");
    weights.validate();
    if (std::abs(weights.length - length) > 1e-12) throw ConfigError("cost length must equal corridor length");
    for (const auto& c : curves) c.validate();
    // The cap stays finite for every admissible pair (v, u_0) only if this holds.
    if (!(2.0 * a0 * length > v_max * v_max)) {
        throw ConfigError("gradient cap ill-posed: 2 A_0 L must exceed v_max^2");
    }
}

CorridorState initial_state(const ScenarioConfig& config, double v, double t) {
    const OperatingPoint eq = equilibrium_under_limit(config.fd, v);
    CorridorState s;
    s.t = t;
    s.q_0 = eq.q;
    s.k_0 = eq.q / v;
    s.v = v;
    return s;
}

QueueStepResult queue_step(const CorridorState& state, double supply, double demand, double dt) {
    if (!(dt > 0.0)) throw DomainError("queue step needs dt > 0");
    if (supply < 0.0 || demand < 0.0) throw DomainError("queue rates must be non-negative");
    if (state.l_q > 0.0) {
        const double next = state.l_q + (demand - supply) * dt;
        if (next > 0.0) return {next, supply, -1.0};
        // Drains inside the step; afterwards the queue passes demand through.
        const double empty_at = state.l_q / (supply - demand);
        const double served = supply * empty_at + std::min(supply, demand) * (dt - empty_at);
        return {0.0, served / dt, empty_at};
    }
    const double admitted = std::min(supply, demand);
    return {(demand - admitted) * dt, admitted, -1.0};
}

double waiting_time(const RateCurve& arrivals, double departed, double t, double l_q) {
    if (l_q <= 0.0) return 0.0;
    return std::max(0.0, t - arrivals.inverse(departed));
}

namespace {

constexpr double kTimeTol = 1e-12;

// Cost columns and the waiting time are filled from the quadrature nodes afterwards.
TrajectoryRow state_row(const CorridorState& s) {
    TrajectoryRow row{};
    row.t = s.t;
    row.l_q = s.l_q;
    row.q_0 = s.q_0;
    row.k_0 = s.k_0;
    row.v = s.v;
    row.u_0 = s.k_0 > 0.0 ? s.u0() : s.v;
    return row;
}

double release_for(const ScenarioConfig& c, double v_old) {
    return release_speed(c.fd, equilibrium_under_limit(c.fd, v_old).k);
}

void end_episode(CorridorState& s) {
    s.phase = TrafficPhase::Equilibrium;
    s.tracking = false;
    s.x_r = 0.0;
    s.k_0 = s.q_0 / s.v;
}

void drop_to(CorridorState& s, const ScenarioConfig& c, double v_new) {
    const double q = std::min(s.q_0, capacity_under_limit(c.fd, v_new));
    s.v = v_new;
    s.q_0 = q;
    end_episode(s);
}

void open_episode(CorridorState& s, const ScenarioConfig& c, double t) {
    const double u = s.v;
    const double r = release_for(c, u);
    s.phase = TrafficPhase::Acceleration;
    s.x_r = 0.0;
    s.episode = ReleaseBoundary{t, 0.0, r, u, s.q_0 + r * s.k_0, s.v};
    s.tracking = true;
}

}  // namespace

CorridorState apply_limit_change(const CorridorState& state, double v_new, const ScenarioConfig& config) {
    if (!(v_new >= config.v_min - 1e-12 && v_new <= config.v_max + 1e-12)) {
        throw ConstraintError("speed limit " + std::to_string(v_new) + " outside bounds");
    }
    CorridorState s = state;
    if (v_new == s.v) return s;
    const double u = s.u0();
    if (v_new <= u) {
        drop_to(s, config, v_new);
        return s;
    }
    if (s.phase == TrafficPhase::Equilibrium) open_episode(s, config, s.t);
    s.v = v_new;
    s.episode.V_e = v_new;
    if (s.episode.r == 0.0) {
        // Degenerate boundary: discharge jumps straight to the chord at v_new.
        s.tracking = true;
        s.k_0 = s.episode.q_up / v_new;
        s.q_0 = s.episode.q_up;
        return s;
    }
    if (s.tracking || s.episode.v_c != u) {
        s.tracking = false;
        s.episode.t0 = s.t;
        s.episode.v_c = u;
    }
    return s;
}

ControlProgram ControlProgram::constant(double v, double start) {
    ControlProgram p;
    p.start = start;
    p.initial_level = v;
    return p;
}

ControlProgram ControlProgram::piecewise_linear(const std::vector<double>& t, const std::vector<double>& v) {
    if (t.empty() || t.size() != v.size()) throw ConfigError("speed profile needs matching time and speed columns");
    ControlProgram p;
    p.start = t.front();
    p.initial_level = v.front();
    for (std::size_t i = 1; i < t.size(); ++i) {
        if (t[i] < t[i - 1]) throw ConfigError("speed profile times must be non-decreasing");
        if (t[i] == t[i - 1]) {
            if (v[i] > v[i - 1]) throw ConstraintError("speed profile jumps upward at t = " + std::to_string(t[i]));
            if (v[i] < v[i - 1]) p.moves.push_back({t[i], ControlMove::Kind::Drop, v[i], 0.0});
            continue;
        }
        if (v[i] != v[i - 1]) p.moves.push_back({t[i - 1], ControlMove::Kind::Linear, v[i], t[i] - t[i - 1]});
    }
    return p;
}

const char* event_name(EventKind kind) {
    switch (kind) {
        case EventKind::None:
            return "none";
        case EventKind::QueueEmpty:
            return "queue_empty";
        case EventKind::QueueStart:
            return "queue_start";
        case EventKind::EpisodeStart:
            return "episode_start";
        case EventKind::EpisodeEnd:
            return "episode_end";
        case EventKind::TrackingStart:
            return "tracking_start";
        case EventKind::TrackingEnd:
            return "tracking_end";
        case EventKind::RampEnd:
            return "ramp_end";
        case EventKind::Drop:
            return "drop";
        case EventKind::SegmentBoundary:
            return "segment_boundary";
    }
    return "?";
}

namespace {

// Regime data frozen at the start of a sub-interval; closed forms (or a fixed
// RK4 grid) give every quantity at any later time inside it.
struct Frozen {
    double t_a = 0.0;
    Regime reg;
    double v_a = 0.0, u_a = 0.0, q_a = 0.0, k_a = 0.0;
    double r = 0.0, q_s = 0.0, xr_a = 0.0;
    double l_a = 0.0, dep_a = 0.0, arr_a = 0.0;
    double d_a = 0.0, d_s = 0.0;
    double target = 0.0;
    int substeps = 1;
    double a0 = 0.0, length = 0.0;
};

struct Dense {
    double v, u, q, k, l, dep, arr, flow, xr;
};

double cap(const Frozen& f, double v, double u) {
    return bln_gradient_cap_partials(v, u, f.a0, f.length).h;
}

double u_free(const Frozen& f, double t) {
    return std::sqrt(f.u_a * f.u_a + 2.0 * f.a0 * f.r * (t - f.t_a));
}

double v_at(const Frozen& f, double t) {
    const double x = t - f.t_a;
    switch (f.reg.speed) {
        case SpeedMode::Hold:
            return f.v_a;
        case SpeedMode::Linear:
            return f.v_a + f.reg.slope * x;
        case SpeedMode::Ramp:
            break;
    }
    if (f.reg.wave == WaveMode::Tracking) return f.v_a / (1.0 - f.v_a * x / f.length);
    if (x <= 0.0) return f.v_a;
    const double h = x / f.substeps;
    double v = f.v_a;
    double s = f.t_a;
    for (int i = 0; i < f.substeps; ++i) {
        const double k1 = cap(f, v, u_free(f, s));
        const double k2 = cap(f, v + 0.5 * h * k1, u_free(f, s + 0.5 * h));
        const double k3 = cap(f, v + 0.5 * h * k2, u_free(f, s + 0.5 * h));
        const double k4 = cap(f, v + h * k3, u_free(f, s + h));
        v += h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0;
        s += h;
    }
    return v;
}

void discharge_at(const Frozen& f, double v, double u, double& q, double& k, const ScenarioConfig& c) {
    switch (f.reg.wave) {
        case WaveMode::Equilibrium:
            if (f.reg.speed == SpeedMode::Linear && f.reg.slope < 0.0) {
                q = std::min(f.q_a, capacity_under_limit(c.fd, v));
                k = q / v;
            } else {
                q = f.q_a;
                k = f.k_a;
            }
            return;
        case WaveMode::Free:
        case WaveMode::Tracking:
            q = f.q_s * u / (u + f.r);
            k = f.q_s / (u + f.r);
            return;
    }
}

// 8-point Gauss-Legendre on [a, b].
template <class F>
double gauss8(F g, double a, double b) {
    static constexpr double x[8] = {-0.9602898564975363, -0.7966664774136267, -0.5255324099163290,
                                    -0.1834346424956498, 0.1834346424956498,  0.5255324099163290,
                                    0.7966664774136267,  0.9602898564975363};
    static constexpr double w[8] = {0.1012285362903763, 0.2223810344533745, 0.3137066458778873,
                                    0.3626837833783620, 0.3626837833783620, 0.3137066458778873,
                                    0.2223810344533745, 0.1012285362903763};
    const double half = 0.5 * (b - a);
    const double mid = 0.5 * (a + b);
    double s = 0.0;
    for (int i = 0; i < 8; ++i) s += w[i] * g(mid + half * x[i]);
    return s * half;
}

Dense eval(const Frozen& f, double t, const ScenarioConfig& c) {
    Dense d{};
    const double x = t - f.t_a;
    d.v = v_at(f, t);
    switch (f.reg.wave) {
        case WaveMode::Equilibrium:
            d.u = d.v;
            break;
        case WaveMode::Free:
            d.u = u_free(f, t);
            break;
        case WaveMode::Tracking:
            d.u = d.v;
            break;
    }
    discharge_at(f, d.v, d.u, d.q, d.k, c);
    double served = 0.0;
    if (x > 0.0) {
        if (f.reg.wave == WaveMode::Equilibrium &&
            !(f.reg.speed == SpeedMode::Linear && f.reg.slope < 0.0)) {
            served = f.q_a * x;
        } else if (f.reg.wave == WaveMode::Free) {
            const double du = d.u - f.u_a;
            served = f.q_s * (x - du / f.a0 + (f.r / f.a0) * std::log1p(du / (f.u_a + f.r)));
        } else {
            served = gauss8(
                [&](double s) {
                    const double vs = v_at(f, s);
                    const double us = f.reg.wave == WaveMode::Free ? u_free(f, s) : vs;
                    double qs = 0.0;
                    double ks = 0.0;
                    discharge_at(f, vs, us, qs, ks, c);
                    return qs;
                },
                f.t_a, t);
        }
    }
    const double arrivals = x * (f.d_a + 0.5 * f.d_s * x);
    d.arr = f.arr_a + arrivals;
    if (f.reg.queue == QueueMode::Queued) {
        d.l = f.l_a + arrivals - served;
        d.dep = f.dep_a + served;
        d.flow = d.q;
    } else {
        d.l = 0.0;
        d.dep = f.dep_a + arrivals;
        d.flow = f.d_a + f.d_s * x;
    }
    d.xr = f.reg.wave == WaveMode::Equilibrium ? 0.0 : f.xr_a - f.r * x;
    return d;
}

// Illinois false position on a bracket with g(a) < 0 <= g(b).
template <class G>
double find_root(G g, double a, double b, double ga, double gb) {
    int side = 0;
    for (int it = 0; it < 200 && b - a > kTimeTol; ++it) {
        double c = (a * gb - b * ga) / (gb - ga);
        if (!(c > a && c < b)) c = 0.5 * (a + b);
        const double gc = g(c);
        if (gc >= 0.0) {
            b = c;
            gb = gc;
            if (side == 1) ga *= 0.5;
            side = 1;
        } else {
            a = c;
            ga = gc;
            if (side == -1) gb *= 0.5;
            side = -1;
        }
    }
    return b;
}

PlantVector plant_vector(const CorridorState& s) {
    return {s.l_q, s.x_r, s.k_0, s.q_0, s.w_q, s.v, s.episode.r};
}

struct Cursor {
    std::size_t next = 0;
    int running = -1;
    double linear_end = 0.0;
    double linear_slope = 0.0;
};

class Engine {
public:
    Engine(const ScenarioConfig& c, const ControlProgram& p, const RateCurve& arr, const SimOptions& o)
        : cfg_(c), prog_(p), arr_(arr), opt_(o) {
        v_cap_ = c.curves[0].v_lo;
        for (const auto& cv : c.curves) v_cap_ = std::max(v_cap_, cv.v_lo);
        tau_limit_ = c.length / v_cap_;
    }

    SimResult run(CorridorState s);

private:
    void start_due_moves(CorridorState& s, SimResult& out);
    Frozen settle(CorridorState& s, SimResult& out, double t_end_nominal);
    double vdot(const CorridorState& s, SpeedMode mode, double slope) const;
    void push_node(const Frozen& f, const Dense& d, double t, double weight);
    PlantVector vector_of(const Frozen& f, const Dense& d, double t) const;

    const ScenarioConfig& cfg_;
    const ControlProgram& prog_;
    const RateCurve& arr_;
    const SimOptions& opt_;
    Cursor cur_;
    bool force_free_ = false;
    bool force_queue_ = false;
    bool caught_up_ = false;  // settle found u_0 = v without a located event
    double v_cap_ = 10.0;
    double tau_limit_ = 1.0;
    std::vector<double> node_t_, node_flow_, node_tau_, node_tauf_, node_w_;
};

double Engine::vdot(const CorridorState& s, SpeedMode mode, double slope) const {
    if (mode == SpeedMode::Linear) return slope;
    if (mode == SpeedMode::Ramp) return bln_gradient_cap_partials(s.v, s.u0(), cfg_.a0, cfg_.length).h;
    return 0.0;
}

void Engine::start_due_moves(CorridorState& s, SimResult& out) {
    while (cur_.running < 0 && cur_.next < prog_.moves.size() &&
           prog_.moves[cur_.next].time <= s.t + kTimeTol) {
        const int idx = static_cast<int>(cur_.next);
        const ControlMove& m = prog_.moves[cur_.next++];
        switch (m.kind) {
            case ControlMove::Kind::Drop: {
                if (m.target < cfg_.v_min - 1e-9) throw ConstraintError("limit below v_min");
                // Recorded even when it posts nothing: the adjoint pass needs the one-sided sensitivity.
                Jump j;
                j.t = s.t;
                j.kind = EventKind::Drop;
                j.move_index = idx;
                j.before = plant_vector(s);
                j.next_interval = out.intervals.size();
                if (m.target < s.v) {
                    if (m.target <= s.u0()) {
                        drop_to(s, cfg_, m.target);
                    } else {
                        s.v = m.target;
                        s.episode.V_e = m.target;
                    }
                    out.events.emplace_back(s.t, EventKind::Drop);
                }
                j.after = plant_vector(s);
                if (opt_.record_intervals) out.jumps.push_back(j);
                break;
            }
            case ControlMove::Kind::Ramp: {
                const double target = std::min(m.target, cfg_.v_max);
                if (target > s.v) cur_.running = idx;
                break;
            }
            case ControlMove::Kind::Linear: {
                if (!(m.duration > 0.0)) throw ConfigError("linear segment needs a positive duration");
                if (m.target < cfg_.v_min - 1e-9 || m.target > cfg_.v_max + 1e-9) {
                    throw ConstraintError("linear segment target outside speed bounds");
                }
                cur_.running = idx;
                cur_.linear_end = s.t + m.duration;
                cur_.linear_slope = (m.target - s.v) / m.duration;
                break;
            }
        }
    }
}

Frozen Engine::settle(CorridorState& s, SimResult& out, double t_end_nominal) {
    Frozen f;
    f.a0 = cfg_.a0;
    f.length = cfg_.length;
    f.reg.speed = SpeedMode::Hold;
    if (cur_.running >= 0) {
        const ControlMove& m = prog_.moves[static_cast<std::size_t>(cur_.running)];
        if (m.kind == ControlMove::Kind::Ramp) {
            f.reg.speed = SpeedMode::Ramp;
            f.target = std::min(m.target, cfg_.v_max);
        } else {
            f.reg.speed = SpeedMode::Linear;
            f.reg.slope = cur_.linear_slope;
            f.target = m.target;
        }
    }
    const bool rising = f.reg.speed == SpeedMode::Ramp ||
                        (f.reg.speed == SpeedMode::Linear && f.reg.slope > 0.0);
    const bool falling = f.reg.speed == SpeedMode::Linear && f.reg.slope < 0.0;

    if (s.phase == TrafficPhase::Equilibrium && rising) {
        Jump j;
        j.t = s.t;
        j.kind = EventKind::EpisodeStart;
        j.move_index = cur_.running;
        j.before = plant_vector(s);
        j.next_interval = out.intervals.size();
        open_episode(s, cfg_, s.t);
        if (f.reg.speed == SpeedMode::Ramp) s.episode.V_e = f.target;
        j.after = plant_vector(s);
        if (opt_.record_intervals) out.jumps.push_back(j);
        out.events.emplace_back(s.t, EventKind::EpisodeStart);
    }

    f.reg.wave = WaveMode::Equilibrium;
    if (s.phase == TrafficPhase::Acceleration) {
        const double r = s.episode.r;
        const double v = s.v;
        const double u = s.u0();
        const double vd = rising ? vdot(s, f.reg.speed, f.reg.slope) : 0.0;
        const bool slow = r == 0.0 || vd * v <= cfg_.a0 * r;
        if (s.tracking) {
            if (!rising) {
                end_episode(s);
                out.events.emplace_back(s.t, EventKind::EpisodeEnd);
            } else if (force_free_ || !slow) {
                s.tracking = false;
                s.episode.t0 = s.t;
                s.episode.v_c = u;
                f.reg.wave = WaveMode::Free;
            } else {
                f.reg.wave = WaveMode::Tracking;
            }
        } else if (u >= v * (1.0 - 1e-12)) {
            caught_up_ = true;
            if (rising && slow && !force_free_) {
                s.tracking = true;
                f.reg.wave = WaveMode::Tracking;
                out.events.emplace_back(s.t, EventKind::TrackingStart);
            } else if (rising) {
                f.reg.wave = WaveMode::Free;
            } else {
                end_episode(s);
                out.events.emplace_back(s.t, EventKind::EpisodeEnd);
            }
        } else {
            f.reg.wave = WaveMode::Free;
        }
    }
    force_free_ = false;
    (void)falling;

    f.t_a = s.t;
    f.v_a = s.v;
    f.q_a = s.q_0;
    f.k_a = s.k_0;
    f.u_a = f.reg.wave == WaveMode::Tracking || f.reg.wave == WaveMode::Equilibrium ? s.v : s.u0();
    f.r = s.episode.r;
    f.q_s = s.episode.q_up;
    f.xr_a = s.x_r;
    f.l_a = s.l_q;
    f.dep_a = s.departed;
    f.arr_a = s.arrived;
    f.d_a = arr_.rate(s.t);
    f.d_s = arr_.slope(s.t);
    f.substeps = std::max(1, static_cast<int>(std::ceil((t_end_nominal - s.t) / opt_.max_substep - 1e-9)));

    if (s.l_q > 0.0 || force_queue_ || f.d_a > s.q_0 + 1e-9) f.reg.queue = QueueMode::Queued;
    else f.reg.queue = QueueMode::Free;
    force_queue_ = false;
    return f;
}

PlantVector Engine::vector_of(const Frozen& f, const Dense& d, double t) const {
    PlantVector x;
    x.l_q = d.l;
    x.x_r = d.xr;
    x.k_0 = d.k;
    x.q_0 = d.q;
    x.w_q = f.reg.queue == QueueMode::Queued ? std::max(0.0, t - arr_.inverse(d.dep)) : 0.0;
    x.v = d.v;
    x.r = f.r;
    return x;
}

void Engine::push_node(const Frozen& f, const Dense& d, double t, double weight) {
    const double w = f.reg.queue == QueueMode::Queued ? std::max(0.0, t - arr_.inverse(d.dep)) : 0.0;
    const double tau_f = travel_time_partials(d.u, d.v, cfg_.a0, cfg_.length).tau;
    const double tau = w + tau_f;
    if (tau > tau_limit_ * (1.0 + 1e-12)) {
        throw DomainError("mean trip speed " + std::to_string(cfg_.length / tau) + " km/h at t = " +
                          std::to_string(t) + " h is below the emission-curve range");
    }
    node_t_.push_back(t);
    node_flow_.push_back(d.flow);
    node_tau_.push_back(tau);
    node_tauf_.push_back(tau_f);
    node_w_.push_back(weight);
}

SimResult Engine::run(CorridorState s) {
    SimResult out;
    const double t0 = s.t;
    const double t_end = opt_.t_end;
    if (!(t_end > t0)) throw DomainError("simulation end must follow its start");
    if (!(opt_.dt > 0.0)) throw DomainError("time step must be positive");
    s.arrived = arr_.cumulative(t0);
    const double arrivals_start = s.arrived;
    if (prog_.initial_level) {
        const double lvl = *prog_.initial_level;
        if (lvl < cfg_.v_min - 1e-9 || lvl > cfg_.v_max + 1e-9) throw ConstraintError("initial limit outside bounds");
        if (lvl > s.v + 1e-9) throw ConstraintError("initial limit above the current limit");
        Jump j;
        j.t = s.t;
        j.kind = EventKind::Drop;
        j.before = plant_vector(s);
        if (lvl < s.v) {
            if (lvl <= s.u0()) {
                drop_to(s, cfg_, lvl);
            } else {
                s.v = lvl;
                s.episode.V_e = lvl;
            }
            out.events.emplace_back(s.t, EventKind::Drop);
        }
        j.after = plant_vector(s);
        if (opt_.record_intervals) out.jumps.push_back(j);
    }
    // Moves scheduled before the start are treated as due immediately.
    const long every = opt_.output_every > 0.0
                           ? std::max(1L, std::lround(opt_.output_every / opt_.dt))
                           : 0;
    const std::size_t expected = static_cast<std::size_t>((t_end - t0) / opt_.dt) + 8;
    node_t_.reserve(2 * expected);
    node_flow_.reserve(2 * expected);
    node_tau_.reserve(2 * expected);
    node_tauf_.reserve(2 * expected);
    node_w_.reserve(2 * expected);
    std::vector<std::size_t> row_nodes;
    std::vector<TrajectoryRow> rows;

    long n = 0;
    double grid_end = t0 + opt_.dt;
    bool first = true;
    while (s.t < t_end - kTimeTol) {
        start_due_moves(s, out);
        if (cur_.running >= 0) {
            const ControlMove& m = prog_.moves[static_cast<std::size_t>(cur_.running)];
            if (m.kind == ControlMove::Kind::Linear && s.t >= cur_.linear_end - kTimeTol) {
                cur_.running = -1;
                continue;
            }
        }
        double t_b = std::min({grid_end, t_end, arr_.next_break(s.t)});
        if (cur_.running < 0 && cur_.next < prog_.moves.size()) t_b = std::min(t_b, prog_.moves[cur_.next].time);
        if (cur_.running >= 0 && prog_.moves[static_cast<std::size_t>(cur_.running)].kind == ControlMove::Kind::Linear) {
            t_b = std::min(t_b, cur_.linear_end);
        }
        if (t_b <= s.t) t_b = std::min(grid_end, t_end);

        Frozen f = settle(s, out, t_b);
        if (caught_up_) {
            // Rounding put the crossing a hair past the previous boundary; attribute it there.
            if (!out.intervals.empty() && out.intervals.back().t_b == s.t &&
                out.intervals.back().end_event == EventKind::None) {
                out.intervals.back().end_event = EventKind::EpisodeEnd;
            }
            caught_up_ = false;
        }
        if (f.reg.speed == SpeedMode::Linear && f.reg.slope > 0.0) {
            const double h = bln_gradient_cap_partials(s.v, s.u0(), cfg_.a0, cfg_.length).h;
            if (f.reg.slope > h + 1e-9) {
                throw ConstraintError("limit rises at " + std::to_string(f.reg.slope) + " km/h per h, above the cap " +
                                      std::to_string(h) + " at t = " + std::to_string(s.t));
            }
        }
        if (first) {
            const Dense d0 = eval(f, s.t, cfg_);
            rows.push_back(state_row(s));
            push_node(f, d0, s.t, 0.0);
            row_nodes.push_back(node_t_.size() - 1);
            first = false;
        }

        // Earliest state event inside (t_a, t_b].
        EventKind ev = EventKind::None;
        double t_ev = t_b;
        const Dense db = eval(f, t_b, cfg_);
        auto consider = [&](EventKind kind, double when) {
            // An event landing exactly on the nominal end still owns that boundary.
            if (when > f.t_a && (when < t_ev || (when == t_ev && ev == EventKind::None))) {
                t_ev = when;
                ev = kind;
            }
        };
        if (f.reg.wave == WaveMode::Free) {
            if (db.u >= db.v) {
                if (f.reg.speed == SpeedMode::Hold) {
                    consider(EventKind::EpisodeEnd, f.t_a + (f.v_a * f.v_a - f.u_a * f.u_a) / (2.0 * cfg_.a0 * f.r));
                } else {
                    auto g = [&](double t) {
                        const Dense d = eval(f, t, cfg_);
                        return d.u - d.v;
                    };
                    consider(EventKind::EpisodeEnd, find_root(g, f.t_a, t_b, f.u_a - f.v_a, db.u - db.v));
                }
            }
        }
        if (f.reg.wave == WaveMode::Tracking && f.r > 0.0) {
            double v_star = std::numeric_limits<double>::infinity();
            if (f.reg.speed == SpeedMode::Ramp) v_star = std::cbrt(cfg_.a0 * f.r * cfg_.length);
            else if (f.reg.speed == SpeedMode::Linear && f.reg.slope > 0.0) v_star = cfg_.a0 * f.r / f.reg.slope;
            if (db.v > v_star && f.v_a < v_star) {
                const double when = f.reg.speed == SpeedMode::Ramp
                                        ? f.t_a + cfg_.length * (1.0 / f.v_a - 1.0 / v_star)
                                        : f.t_a + (v_star - f.v_a) / f.reg.slope;
                consider(EventKind::TrackingEnd, when);
            }
        }
        if (f.reg.speed == SpeedMode::Ramp && db.v >= f.target) {
            if (f.reg.wave == WaveMode::Tracking) {
                consider(EventKind::RampEnd, f.t_a + cfg_.length * (1.0 / f.v_a - 1.0 / f.target));
            } else {
                auto g = [&](double t) { return v_at(f, t) - f.target; };
                consider(EventKind::RampEnd, find_root(g, f.t_a, t_b, f.v_a - f.target, db.v - f.target));
            }
        }
        if (f.reg.queue == QueueMode::Queued && db.l <= 0.0) {
            auto g = [&](double t) { return -eval(f, t, cfg_).l; };
            consider(EventKind::QueueEmpty, find_root(g, f.t_a, t_b, -f.l_a - 1e-300, -db.l));
        }
        if (f.reg.queue == QueueMode::Free && db.flow > db.q + 1e-9) {
            auto g = [&](double t) {
                const Dense d = eval(f, t, cfg_);
                return d.flow - d.q;
            };
            const Dense da = eval(f, f.t_a, cfg_);
            consider(EventKind::QueueStart, find_root(g, f.t_a, t_b, std::min(da.flow - da.q, -1e-300), db.flow - db.q));
        }

        const Dense de = ev == EventKind::None ? db : eval(f, t_ev, cfg_);
        const double len = t_ev - f.t_a;
        const Dense da = eval(f, f.t_a, cfg_);
        if (len > 0.0) {
            push_node(f, da, f.t_a, 0.5 * len);
            push_node(f, de, t_ev, 0.5 * len);
        }
        if (opt_.record_intervals && len > 0.0) {
            Interval iv;
            iv.t_a = f.t_a;
            iv.t_b = t_ev;
            iv.regime = f.reg;
            iv.x_a = vector_of(f, da, f.t_a);
            iv.x_m = vector_of(f, eval(f, 0.5 * (f.t_a + t_ev), cfg_), 0.5 * (f.t_a + t_ev));
            iv.x_b = vector_of(f, de, t_ev);
            iv.end_event = ev;
            iv.move_index = cur_.running;
            out.intervals.push_back(iv);
        }

        s.t = t_ev;
        s.v = de.v;
        s.q_0 = de.q;
        s.k_0 = de.k;
        s.l_q = std::max(0.0, de.l);
        s.departed = de.dep;
        s.arrived = de.arr;
        s.x_r = de.xr;
        switch (ev) {
            case EventKind::EpisodeEnd:
                s.k_0 = s.q_0 / s.v;
                break;
            case EventKind::TrackingEnd:
                force_free_ = true;
                break;
            case EventKind::RampEnd:
                s.v = f.target;
                cur_.running = -1;
                break;
            case EventKind::QueueEmpty:
                s.l_q = 0.0;
                s.departed = s.arrived;
                break;
            case EventKind::QueueStart:
                force_queue_ = true;
                break;
            default:
                break;
        }
        // Catching up is reported by the next settle, which knows what follows it.
        if (ev != EventKind::None && ev != EventKind::EpisodeEnd) out.events.emplace_back(t_ev, ev);
        s.w_q = f.reg.queue == QueueMode::Queued && s.l_q > 0.0 ? std::max(0.0, s.t - arr_.inverse(s.departed)) : 0.0;

        if (s.t >= grid_end - kTimeTol) {
            ++n;
            grid_end = t0 + static_cast<double>(n + 1) * opt_.dt;
            if (every > 0 && n % every == 0) {
                rows.push_back(state_row(s));
                row_nodes.push_back(node_t_.size() - 1);
            }
        }
    }

    // Batch cost and emission evaluation over every quadrature node.
    const std::size_t count = node_t_.size();
    std::vector<double> cost(count);
    const std::size_t bad = kernels::running_cost_batch(cfg_.weights, cfg_.curves, node_tau_.data(), cost.data(), count);
    if (bad > 0) throw DomainError("running cost undefined at " + std::to_string(bad) + " quadrature nodes");
    out.objective = kernels::weighted_product_sum(node_w_.data(), node_flow_.data(), cost.data(), count);
    std::vector<double> ones(count, 1.0);
    out.served = kernels::weighted_product_sum(node_w_.data(), node_flow_.data(), ones.data(), count);
    const double tt = kernels::weighted_product_sum(node_w_.data(), node_flow_.data(), node_tau_.data(), count);
    std::vector<double> factor(count);
    for (std::size_t p = 0; p < 3; ++p) {
        CostWeights unit;
        unit.mu1 = 0.0;
        unit.mu2 = 1.0;
        unit.lambda = {0.0, 0.0, 0.0};
        unit.lambda[p] = 1.0;
        unit.length = cfg_.length;
        kernels::running_cost_batch(unit, cfg_.curves, node_tauf_.data(), factor.data(), count);
        out.avg_emissions[p] = kernels::weighted_product_sum(node_w_.data(), node_flow_.data(), factor.data(), count);
    }
    if (out.served > 0.0) {
        out.avg_travel_time = tt / out.served;
        out.avg_weighted_emission = 0.0;
        for (std::size_t p = 0; p < 3; ++p) {
            out.avg_emissions[p] /= out.served;
            out.avg_weighted_emission += cfg_.weights.lambda[p] * out.avg_emissions[p];
        }
    }
    out.arrivals = s.arrived - arrivals_start;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const std::size_t k = row_nodes[i];
        rows[i].cost_rate = node_flow_[k] * cost[k];
        rows[i].flow = node_flow_[k];
        rows[i].tau_f = node_tauf_[k];
        rows[i].w_q = node_tau_[k] - node_tauf_[k];
    }
    out.rows = std::move(rows);
    if (opt_.record_nodes) {
        out.nodes.reserve(count);
        for (std::size_t k = 0; k < count; ++k) {
            out.nodes.push_back({node_t_[k], node_flow_[k], node_tau_[k], node_tauf_[k], node_w_[k]});
        }
    }
    out.final_state = s;
    return out;
}

}  // namespace

SimResult simulate(const ScenarioConfig& config, const ControlProgram& program, const RateCurve& arrivals,
                   const CorridorState& initial, const SimOptions& options) {
    Engine engine(config, program, arrivals, options);
    return engine.run(initial);
}

SimResult simulate(const ScenarioConfig& config, const ControlProgram& program) {
    SimOptions o;
    o.dt = config.dt;
    o.t_end = config.t_final;
    o.output_every = config.output_every;
    const RateCurve arrivals = realize_arrivals(config.demand);
    CorridorState init = initial_state(config, config.v_max, program.start);
    return simulate(config, program, arrivals, init, o);
}

CorridorState step(const CorridorState& state, const ScenarioConfig& config, const RateCurve& arrivals, double a,
                   double dt) {
    if (!(dt > 0.0)) throw DomainError("step needs dt > 0");
    ControlProgram p;
    p.start = state.t;
    const double target = state.v + a * dt;
    if (a != 0.0) p.moves.push_back({state.t, ControlMove::Kind::Linear, target, dt});
    SimOptions o;
    o.dt = dt;
    o.t_end = state.t + dt;
    o.output_every = 0.0;
    return simulate(config, p, arrivals, state, o).final_state;
}

double recompute_objective(const ScenarioConfig& config, const std::vector<CostNode>& nodes) {
    double total = 0.0;
    for (std::size_t i = 0; i + 1 < nodes.size(); ++i) {
        const double width = nodes[i + 1].t - nodes[i].t;
        if (width <= 0.0) continue;
        const double g0 = nodes[i].flow * running_cost(config.weights, config.curves, nodes[i].tau);
        const double g1 = nodes[i + 1].flow * running_cost(config.weights, config.curves, nodes[i + 1].tau);
        total += 0.5 * width * (g0 + g1);
    }
    return total;
}

}  // namespace bavsl
