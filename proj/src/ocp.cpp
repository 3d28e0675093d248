#include "bavsl/ocp.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

#include "bavsl/errors.hpp"

namespace bavsl {

namespace {

constexpr double kMinutes = 60.0;  // solver time unit per hour
constexpr double kRateFloor = 1e-9;

// Everything the Hamiltonian and its state partials need at one point.
struct Terms {
    bool queued = false;
    bool free_wave = false;
    bool tracking = false;
    double u = 0.0, u_q = 0.0, u_k = 0.0, u_v = 0.0;
    double tau = 0.0, tau_q = 0.0, tau_k = 0.0, tau_v = 0.0, tau_w = 0.0;
    double cost = 0.0, cost_slope = 0.0;
    double flow = 0.0, flow_q = 0.0;
    double d_now = 0.0, d_lag = 0.0, d_lag_slope = 0.0;
    double h = 0.0, h_v = 0.0, h_u = 0.0;
    bool h_valid = false;
};

Terms terms_at(const PlantVector& x, const Regime& regime, double t, const ScenarioConfig& c,
               const RateCurve& arrivals) {
    Terms m;
    m.queued = regime.queue == QueueMode::Queued;
    m.free_wave = regime.wave == WaveMode::Free;
    m.tracking = regime.wave == WaveMode::Tracking;
    if (m.free_wave) {
        m.u = x.q_0 / x.k_0;
        m.u_q = 1.0 / x.k_0;
        m.u_k = -x.q_0 / (x.k_0 * x.k_0);
    } else {
        m.u = x.v;
        m.u_v = 1.0;
    }
    const TravelTimePartials tf = travel_time_partials(m.u, x.v, c.a0, c.length);
    m.tau = tf.tau + (m.queued ? x.w_q : 0.0);
    m.tau_q = tf.d_u * m.u_q;
    m.tau_k = tf.d_u * m.u_k;
    m.tau_v = tf.d_v + tf.d_u * m.u_v;
    m.tau_w = m.queued ? 1.0 : 0.0;
    m.cost = running_cost(c.weights, c.curves, m.tau);
    m.cost_slope = running_cost_slope(c.weights, c.curves, m.tau);
    m.d_now = arrivals.rate(t);
    if (m.queued) {
        const double lag = std::max(t - x.w_q, arrivals.begin());
        m.d_lag = std::max(arrivals.rate(lag), kRateFloor);
        m.d_lag_slope = arrivals.slope(lag);
        m.flow = x.q_0;
        m.flow_q = 1.0;
    } else {
        m.flow = m.d_now;
    }
    const double den = 2.0 * c.a0 * c.length - (x.v * x.v - m.u * m.u);
    if (den > 0.0 && x.v > 0.0) {
        const CapPartials hp = bln_gradient_cap_partials(x.v, m.u, c.a0, c.length);
        m.h = hp.h;
        m.h_v = hp.d_v;
        m.h_u = hp.d_u;
        m.h_valid = true;
    }
    return m;
}

double free_rate(const PlantVector& x, const ScenarioConfig& c) {
    return c.a0 * x.r * x.k_0 * x.k_0 * x.k_0 / (x.q_0 * (x.q_0 + x.r * x.k_0));
}

double tracking_gain(const PlantVector& x) {
    const double e = x.v + x.r;
    return (x.q_0 + x.r * x.k_0) / (e * e);
}

PlantVector rhs_from(const PlantVector& x, double a, const Terms& m, const ScenarioConfig& c) {
    PlantVector f;
    f.l_q = m.queued ? m.d_now - x.q_0 : 0.0;
    f.w_q = m.queued ? 1.0 - x.q_0 / m.d_lag : 0.0;
    f.v = a;
    f.r = 0.0;
    f.x_r = (m.free_wave || m.tracking) ? -x.r : 0.0;
    if (m.free_wave) {
        const double rate = free_rate(x, c);
        f.q_0 = x.r * rate;
        f.k_0 = -rate;
    } else if (m.tracking) {
        const double gain = tracking_gain(x);
        f.q_0 = x.r * gain * a;
        f.k_0 = -gain * a;
    }
    return f;
}

double dot(const PlantVector& a, const PlantVector& b) {
    return a.l_q * b.l_q + a.x_r * b.x_r + a.k_0 * b.k_0 + a.q_0 * b.q_0 + a.w_q * b.w_q + a.v * b.v + a.r * b.r;
}

void require_cap(const Terms& m) {
    if (!m.h_valid) throw ConstraintError("gradient cap undefined at this state");
}

}  // namespace

PlantVector plant_rhs(const PlantVector& x, double a, const Regime& regime, double t, const ScenarioConfig& config,
                      const RateCurve& arrivals) {
    return rhs_from(x, a, terms_at(x, regime, t, config, arrivals), config);
}

double running_integrand(const PlantVector& x, const Regime& regime, double t, const ScenarioConfig& config,
                         const RateCurve& arrivals) {
    const Terms m = terms_at(x, regime, t, config, arrivals);
    return m.flow * m.cost;
}

double feasible_rate(const PlantVector& x, const Regime& regime, const ScenarioConfig& config) {
    const double u = regime.wave == WaveMode::Free ? x.q_0 / x.k_0 : x.v;
    return bln_gradient_cap_partials(x.v, u, config.a0, config.length).h;
}

double hamiltonian(const PlantVector& x, const PlantVector& lambda, double a, double mu, const Regime& regime,
                   double t, const ScenarioConfig& config, const RateCurve& arrivals) {
    const Terms m = terms_at(x, regime, t, config, arrivals);
    double value = m.flow * m.cost + dot(lambda, rhs_from(x, a, m, config));
    if (mu != 0.0) {
        require_cap(m);
        value += mu * (a - m.h);
    }
    return value;
}

PlantVector costate_rhs(const PlantVector& x, const PlantVector& lambda, double a, double mu, const Regime& regime,
                        double t, const ScenarioConfig& config, const RateCurve& arrivals) {
    const Terms m = terms_at(x, regime, t, config, arrivals);
    // Partials of H are accumulated here, negated at the end.
    PlantVector g;
    const double fc = m.flow * m.cost_slope;
    g.q_0 = m.flow_q * m.cost + fc * m.tau_q;
    g.k_0 = fc * m.tau_k;
    g.v = fc * m.tau_v;
    g.w_q = fc * m.tau_w;

    if (m.queued) {
        g.q_0 += -lambda.l_q;
        g.q_0 += -lambda.w_q / m.d_lag;
        // d/dw of 1/d(t - w) is d'(t - w) / d(t - w)^2.
        g.w_q += -lambda.w_q * x.q_0 * m.d_lag_slope / (m.d_lag * m.d_lag);
    }
    if (m.free_wave || m.tracking) g.r += -lambda.x_r;

    if (m.free_wave) {
        const double s = x.q_0 + x.r * x.k_0;
        const double rate = free_rate(x, config);
        const double rate_q = rate * (-1.0 / x.q_0 - 1.0 / s);
        const double rate_k = rate * (3.0 / x.k_0 - x.r / s);
        const double rate_r = config.a0 * x.k_0 * x.k_0 * x.k_0 / (x.q_0 * s) - rate * x.k_0 / s;
        // q' = r M, k' = -M
        g.q_0 += lambda.q_0 * x.r * rate_q - lambda.k_0 * rate_q;
        g.k_0 += lambda.q_0 * x.r * rate_k - lambda.k_0 * rate_k;
        g.r += lambda.q_0 * (rate + x.r * rate_r) - lambda.k_0 * rate_r;
    } else if (m.tracking) {
        const double e = x.v + x.r;
        const double s = x.q_0 + x.r * x.k_0;
        const double gain = s / (e * e);
        const double gain_q = 1.0 / (e * e);
        const double gain_k = x.r / (e * e);
        const double gain_v = -2.0 * s / (e * e * e);
        const double gain_r = x.k_0 / (e * e) - 2.0 * s / (e * e * e);
        // q' = r K a, k' = -K a
        g.q_0 += (lambda.q_0 * x.r - lambda.k_0) * gain_q * a;
        g.k_0 += (lambda.q_0 * x.r - lambda.k_0) * gain_k * a;
        g.v += (lambda.q_0 * x.r - lambda.k_0) * gain_v * a;
        g.r += lambda.q_0 * (gain + x.r * gain_r) * a - lambda.k_0 * gain_r * a;
    }
    if (mu != 0.0) {
        require_cap(m);
        g.v += -mu * (m.h_v + m.h_u * m.u_v);
        g.q_0 += -mu * m.h_u * m.u_q;
        g.k_0 += -mu * m.h_u * m.u_k;
    }
    PlantVector out;
    out.l_q = -g.l_q;
    out.x_r = -g.x_r;
    out.k_0 = -g.k_0;
    out.q_0 = -g.q_0;
    out.w_q = -g.w_q;
    out.v = -g.v;
    out.r = -g.r;
    return out;
}

double control_gain(const PlantVector& x, const PlantVector& lambda, const Regime& regime) {
    double gain = lambda.v;
    if (regime.wave == WaveMode::Tracking) {
        const double k = tracking_gain(x);
        gain += lambda.q_0 * x.r * k - lambda.k_0 * k;
    }
    return gain;
}

// ---------------------------------------------------------------------------
// Phase plans

ControlProgram PhasePlan::program() const {
    ControlProgram p;
    p.start = t0;
    p.initial_level = v1;
    for (const Move& m : moves) {
        const ControlMove::Kind kind = m.kind == Switch::Ramp ? ControlMove::Kind::Ramp : ControlMove::Kind::Drop;
        p.moves.push_back({m.time, kind, m.target, 0.0});
    }
    return p;
}

std::string PhasePlan::pattern() const {
    std::string s = "P";
    for (const Move& m : moves) s += m.kind == Switch::Ramp ? "-R-P" : "-D-P";
    return s;
}

std::vector<double> PhasePlan::pack() const {
    std::vector<double> z{v1};
    for (const Move& m : moves) {
        z.push_back((m.time - t0) * kMinutes);
        z.push_back(m.target);
    }
    return z;
}

void PhasePlan::unpack(const std::vector<double>& z) {
    if (z.size() != unknowns()) throw DomainError("unknown vector does not match the phase pattern");
    v1 = z[0];
    for (std::size_t i = 0; i < moves.size(); ++i) {
        moves[i].time = t0 + z[1 + 2 * i] / kMinutes;
        moves[i].target = z[2 + 2 * i];
    }
}

OcpProblem make_problem(const ScenarioConfig& config, double horizon, double dt) {
    config.validate();
    OcpProblem p;
    p.config = config;
    p.arrivals = realize_arrivals(config.demand);
    p.initial = initial_state(config, config.v_max, 0.0);
    p.t_end = horizon;
    p.dt = dt;
    return p;
}

Bounds plan_bounds(const OcpProblem& problem, const PhasePlan& plan) {
    const ScenarioConfig& c = problem.config;
    Bounds b;
    const double top = std::min(c.v_max, problem.initial.v);
    b.lo.push_back(std::min(c.v_min, top));
    b.hi.push_back(top);
    double level = plan.v1;
    const double span = (problem.t_end - plan.t0) * kMinutes;
    for (const auto& m : plan.moves) {
        b.lo.push_back(0.0);
        b.hi.push_back(span);
        if (m.kind == PhasePlan::Switch::Ramp) {
            b.lo.push_back(level);
            b.hi.push_back(c.v_max);
            level = std::max(level, m.target);
        } else {
            b.lo.push_back(c.v_min);
            b.hi.push_back(level);
            level = std::min(level, m.target);
        }
    }
    return b;
}

// ---------------------------------------------------------------------------
// Forward pass and costate sweep

namespace {

double release_slope(const TriangularFD& fd, double v) {
    // r(v) = Q_max v / q_cap(v) - v on the congested branch.
    const double q = capacity_under_limit(fd, v);
    const double dq = capacity_under_limit_slope(fd, v);
    if (release_speed(fd, q / v) <= 0.0) return 0.0;
    return fd.q_max() * (q - v * dq) / (q * q) - 1.0;
}

struct Sweep {
    const OcpProblem& pb;
    const PhasePlan& plan;
    const SimResult& sim;
    std::vector<double> grad;  // physical units: per km/h, per hour

    double accel(const PlantVector& x, const Regime& r) const {
        if (r.speed == SpeedMode::Ramp) return feasible_rate(x, r, pb.config);
        if (r.speed == SpeedMode::Linear) return r.slope;
        return 0.0;
    }

    // H with the regime's own control and no multiplier term (zero on every arc).
    double ham(const PlantVector& x, const PlantVector& lam, const Regime& r, double t) const {
        return hamiltonian(x, lam, accel(x, r), 0.0, r, t, pb.config, pb.arrivals);
    }

    PlantVector slope_back(const PlantVector& x, PlantVector lam, const Regime& r, double t) const {
        if (r.queue == QueueMode::Free) {
            lam.l_q = 0.0;
            lam.w_q = 0.0;
        }
        const double a = accel(x, r);
        double mu = 0.0;
        if (r.speed == SpeedMode::Ramp) mu = -control_gain(x, lam, r);
        PlantVector d = costate_rhs(x, lam, a, mu, r, t, pb.config, pb.arrivals);
        // Backward in time: d(lambda)/ds = -lambda'.
        d.l_q = -d.l_q;
        d.x_r = 0.0;
        d.k_0 = -d.k_0;
        d.q_0 = -d.q_0;
        d.w_q = -d.w_q;
        d.v = -d.v;
        d.r = -d.r;
        return d;
    }

    static PlantVector axpy(const PlantVector& y, double s, const PlantVector& d) {
        PlantVector o = y;
        o.l_q += s * d.l_q;
        o.k_0 += s * d.k_0;
        o.q_0 += s * d.q_0;
        o.w_q += s * d.w_q;
        o.v += s * d.v;
        o.r += s * d.r;
        return o;
    }

    PlantVector integrate(const Interval& iv, const PlantVector& lam_b) const {
        const double h = iv.t_b - iv.t_a;
        const double tm = 0.5 * (iv.t_a + iv.t_b);
        const PlantVector k1 = slope_back(iv.x_b, lam_b, iv.regime, iv.t_b);
        const PlantVector k2 = slope_back(iv.x_m, axpy(lam_b, 0.5 * h, k1), iv.regime, tm);
        const PlantVector k3 = slope_back(iv.x_m, axpy(lam_b, 0.5 * h, k2), iv.regime, tm);
        const PlantVector k4 = slope_back(iv.x_a, axpy(lam_b, h, k3), iv.regime, iv.t_a);
        PlantVector lam = lam_b;
        lam = axpy(lam, h / 6.0, k1);
        lam = axpy(lam, h / 3.0, k2);
        lam = axpy(lam, h / 3.0, k3);
        lam = axpy(lam, h / 6.0, k4);
        if (iv.regime.queue == QueueMode::Free) {
            lam.l_q = 0.0;
            lam.w_q = 0.0;
        }
        if (iv.regime.wave == WaveMode::Equilibrium) lam.r = 0.0;
        return lam;
    }

    std::size_t level_slot(int move) const { return move < 0 ? 0 : 2 + 2 * static_cast<std::size_t>(move); }
    std::size_t time_slot(int move) const { return 1 + 2 * static_cast<std::size_t>(move); }

    // Sensitivity of J to the level posted by a decrease, given the costate just after it.
    double drop_sensitivity(const PlantVector& before, const PlantVector& lam_after, double v_new) const {
        const double u = before.q_0 / before.k_0;
        if (v_new > u * (1.0 + 1e-12)) return lam_after.v;
        const TriangularFD& fd = pb.config.fd;
        const double q_cap = capacity_under_limit(fd, v_new);
        const bool capped = q_cap <= before.q_0;
        const double q_after = capped ? q_cap : before.q_0;
        const double dq = capped ? capacity_under_limit_slope(fd, v_new) : 0.0;
        const double dk = dq / v_new - q_after / (v_new * v_new);
        return lam_after.v + lam_after.q_0 * dq + lam_after.k_0 * dk;
    }

    PlantVector drop_costate(const PlantVector& before, const PlantVector& lam_after, double v_new) const {
        PlantVector lam = lam_after;
        lam.v = 0.0;
        const double u = before.q_0 / before.k_0;
        if (v_new > u * (1.0 + 1e-12)) return lam;
        const bool capped = capacity_under_limit(pb.config.fd, v_new) <= before.q_0;
        lam.q_0 = capped ? 0.0 : lam_after.q_0 + lam_after.k_0 / v_new;
        lam.k_0 = 0.0;
        lam.r = 0.0;
        return lam;
    }

    Regime before_regime(std::size_t j, const Regime& after, bool episode_opened) const {
        Regime r = after;
        r.speed = SpeedMode::Hold;
        r.slope = 0.0;
        if (j > 0 && sim.intervals[j - 1].t_b == sim.intervals[j].t_a) {
            r.wave = sim.intervals[j - 1].regime.wave;
            if (r.wave == WaveMode::Tracking) r.wave = WaveMode::Equilibrium;
        } else if (episode_opened) {
            r.wave = WaveMode::Equilibrium;
        }
        return r;
    }

    double scheduled(int move) const {
        return plan.moves[static_cast<std::size_t>(move)].time;
    }

    PlantVector run(std::vector<AdjointSample>* samples) {
        grad.assign(plan.unknowns(), 0.0);
        const auto& ivs = sim.intervals;
        const auto& jumps = sim.jumps;
        std::size_t jp = jumps.size();
        while (jp > 0 && jumps[jp - 1].next_interval >= ivs.size()) --jp;
        PlantVector lam;
        for (std::size_t j = ivs.size(); j-- > 0;) {
            const Interval& iv = ivs[j];
            lam = integrate(iv, lam);
            const double t = iv.t_a;
            if (samples) {
                AdjointSample s;
                s.t = t;
                s.lambda = lam;
                s.gain = control_gain(iv.x_a, lam, iv.regime);
                s.mu = iv.regime.speed == SpeedMode::Ramp ? -s.gain : 0.0;
                s.lower = drop_sensitivity(iv.x_a, lam, iv.x_a.v);
                s.speed = iv.regime.speed;
                samples->push_back(s);
            }

            // Ramp started at its scheduled time at the head of this interval.
            const bool ramp_start = iv.regime.speed == SpeedMode::Ramp && iv.move_index >= 0 &&
                                    (j == 0 || ivs[j - 1].move_index != iv.move_index ||
                                     ivs[j - 1].regime.speed != SpeedMode::Ramp);
            PlantVector lam_plus = lam;
            PlantVector x_minus = iv.x_a;
            bool opened = false;

            // Resets recorded at this instant, undone in reverse order.
            while (jp > 0 && jumps[jp - 1].next_interval == j) {
                const Jump& jmp = jumps[jp - 1];
                --jp;
                if (jmp.kind == EventKind::EpisodeStart) {
                    lam.v += lam.r * release_slope(pb.config.fd, jmp.before.v);
                    lam.r = 0.0;
                    x_minus = jmp.before;
                    opened = true;
                } else if (jmp.kind == EventKind::Drop) {
                    const double v_new = jmp.move_index < 0
                                             ? plan.v1
                                             : plan.moves[static_cast<std::size_t>(jmp.move_index)].target;
                    const std::size_t slot = level_slot(jmp.move_index);
                    if (v_new > jmp.before.v + 1e-9) continue;  // posts nothing
                    grad[slot] += drop_sensitivity(jmp.before, lam, v_new);
                    const bool moved = jmp.after.v < jmp.before.v;
                    const PlantVector lam_after = lam;
                    if (moved) lam = drop_costate(jmp.before, lam_after, v_new);
                    if (jmp.move_index >= 0 && moved && std::abs(jmp.t - scheduled(jmp.move_index)) < 1e-9) {
                        const Regime r_after = iv.regime;
                        const Regime r_before = before_regime(j, r_after, false);
                        grad[time_slot(jmp.move_index)] +=
                            ham(jmp.before, lam, r_before, t) - ham(jmp.after, lam_after, r_after, t);
                    }
                }
            }
            if (ramp_start && std::abs(t - scheduled(iv.move_index)) < 1e-9) {
                const Regime r_before = before_regime(j, iv.regime, opened);
                grad[time_slot(iv.move_index)] += ham(x_minus, lam, r_before, t) - ham(iv.x_a, lam_plus, iv.regime, t);
            }

            // State event that closed the previous interval.
            if (j == 0) break;
            const Interval& prev = ivs[j - 1];
            if (prev.t_b != iv.t_a) continue;
            const PlantVector& xm = prev.x_b;
            const double gap = [&] {
                switch (prev.end_event) {
                    case EventKind::QueueEmpty:
                    case EventKind::EpisodeEnd:
                    case EventKind::RampEnd:
                        return ham(xm, lam, prev.regime, t) - ham(iv.x_a, lam, iv.regime, t);
                    default:
                        return 0.0;
                }
            }();
            if (gap == 0.0) continue;
            const PlantVector f = plant_rhs(xm, accel(xm, prev.regime), prev.regime, t, pb.config, pb.arrivals);
            if (prev.end_event == EventKind::QueueEmpty) {
                if (std::abs(f.l_q) > kRateFloor) lam.l_q -= gap / f.l_q;
            } else if (prev.end_event == EventKind::EpisodeEnd) {
                const double gq = 1.0 / xm.k_0;
                const double gk = -xm.q_0 / (xm.k_0 * xm.k_0);
                const double rate = gq * f.q_0 + gk * f.k_0 - f.v;
                if (std::abs(rate) > kRateFloor) {
                    const double s = gap / rate;
                    lam.q_0 -= s * gq;
                    lam.k_0 -= s * gk;
                    lam.v += s;
                }
            } else if (prev.end_event == EventKind::RampEnd) {
                if (f.v > kRateFloor) {
                    const double s = gap / f.v;
                    if (prev.move_index >= 0) grad[level_slot(prev.move_index)] += s;
                    lam.v -= s;
                }
            }
        }
        return lam;
    }
};

}  // namespace

ShootResult shoot(const OcpProblem& problem, const PhasePlan& plan, bool keep_adjoint) {
    SimOptions o;
    o.dt = problem.dt;
    o.t_end = problem.t_end;
    o.output_every = 0.0;
    o.record_intervals = true;
    ShootResult out;
    out.sim = simulate(problem.config, plan.program(), problem.arrivals, problem.initial, o);
    out.objective = out.sim.objective;
    Sweep sweep{problem, plan, out.sim, {}};
    sweep.run(keep_adjoint ? &out.adjoint : nullptr);
    if (keep_adjoint) std::reverse(out.adjoint.begin(), out.adjoint.end());
    out.gradient = sweep.grad;
    for (std::size_t i = 0; i < plan.moves.size(); ++i) out.gradient[1 + 2 * i] /= kMinutes;
    return out;
}

double evaluate_plan(const OcpProblem& problem, const PhasePlan& plan) {
    SimOptions o;
    o.dt = problem.dt;
    o.t_end = problem.t_end;
    o.output_every = 0.0;
    return simulate(problem.config, plan.program(), problem.arrivals, problem.initial, o).objective;
}

// ---------------------------------------------------------------------------
// Audit

KktReport kkt_audit(const OcpProblem& problem, const PhasePlan& plan, const ShootResult& shot,
                    const std::vector<double>& projected_residual) {
    (void)plan;
    KktReport k;
    for (double r : projected_residual) k.stationarity = std::max(k.stationarity, std::abs(r));
    const ScenarioConfig& c = problem.config;
    double min_mu = std::numeric_limits<double>::infinity();
    for (const Interval& iv : shot.sim.intervals) {
        for (const PlantVector* x : {&iv.x_a, &iv.x_m, &iv.x_b}) {
            k.feasibility = std::max({k.feasibility, c.v_min - x->v, x->v - c.v_max});
        }
        const double dt = iv.t_b - iv.t_a;
        if (dt <= 0.0) continue;
        const double rise = (iv.x_b.v - iv.x_a.v) / dt;
        const double cap = std::max({feasible_rate(iv.x_a, iv.regime, c), feasible_rate(iv.x_m, iv.regime, c),
                                     feasible_rate(iv.x_b, iv.regime, c)});
        k.feasibility = std::max(k.feasibility, (rise - cap) / cap);
    }
    for (const AdjointSample& s : shot.adjoint) {
        if (s.speed != SpeedMode::Ramp) continue;
        min_mu = std::min(min_mu, s.mu);
    }
    // mu vanishes off the ramps and a = h on them, so the product is zero up to rounding.
    for (std::size_t i = 0; i < shot.adjoint.size() && i < shot.sim.intervals.size(); ++i) {
        const Interval& iv = shot.sim.intervals[i];
        const AdjointSample& s = shot.adjoint[i];
        const double a = iv.regime.speed == SpeedMode::Ramp ? feasible_rate(iv.x_a, iv.regime, c) : 0.0;
        const double slack = a - feasible_rate(iv.x_a, iv.regime, c);
        k.complementarity = std::max(k.complementarity, std::abs(s.mu * slack) / std::max(1.0, std::abs(shot.objective)));
    }
    k.feasibility = std::max(k.feasibility, 0.0);
    k.min_ramp_multiplier = std::isfinite(min_mu) ? min_mu : 0.0;
    return k;
}

// ---------------------------------------------------------------------------
// Solver

namespace {

struct Eval {
    bool ok = false;
    ShootResult shot;
};

Eval try_shoot(const OcpProblem& pb, const PhasePlan& plan, bool keep) {
    Eval e;
    try {
        e.shot = shoot(pb, plan, keep);
        e.ok = std::isfinite(e.shot.objective);
    } catch (const DomainError&) {
        e.ok = false;
    } catch (const ConstraintError&) {
        e.ok = false;
    }
    return e;
}

void clamp_to(std::vector<double>& z, const Bounds& b) {
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = std::clamp(z[i], b.lo[i], b.hi[i]);
}

struct Projection {
    std::vector<double> residual;
    std::vector<std::size_t> free;
    double norm = 0.0;
};

Projection project(const std::vector<double>& z, const std::vector<double>& g, const Bounds& b, double scale) {
    Projection p;
    p.residual.assign(z.size(), 0.0);
    for (std::size_t i = 0; i < z.size(); ++i) {
        const double width = b.hi[i] - b.lo[i];
        const double eps = 1e-9 * std::max(1.0, std::abs(z[i]));
        const bool at_lo = z[i] <= b.lo[i] + eps;
        const bool at_hi = z[i] >= b.hi[i] - eps;
        const bool pinned = width <= eps || (at_lo && g[i] > 0.0) || (at_hi && g[i] < 0.0);
        if (pinned) continue;
        p.free.push_back(i);
        p.residual[i] = g[i] / scale;
        p.norm = std::max(p.norm, std::abs(p.residual[i]));
    }
    return p;
}

// A plan whose switches cannot act (ramp to its own level, drop to its own level) leaves the
// switch time without effect; the curvature row is then zero and damping keeps it fixed.
Eigen::VectorXd newton_step(const Eigen::MatrixXd& hess, const Eigen::VectorXd& g, double& damping) {
    const Eigen::Index n = g.size();
    const double scale = std::max(1e-12, hess.diagonal().cwiseAbs().maxCoeff());
    for (int attempt = 0; attempt < 40; ++attempt) {
        Eigen::MatrixXd m = hess;
        for (Eigen::Index i = 0; i < n; ++i) m(i, i) += damping * scale + 1e-14 * scale;
        Eigen::LLT<Eigen::MatrixXd> llt(m);
        if (llt.info() == Eigen::Success) return llt.solve(-g);
        damping = std::max(1e-8, damping * 10.0);
    }
    return -g / scale;
}

}  // namespace

OcpSolution refine_plan(const OcpProblem& problem, PhasePlan plan, const OcpOptions& options,
                        const std::vector<double>* hessian) {
    OcpSolution sol;
    std::vector<double> z = plan.pack();
    Bounds bounds = plan_bounds(problem, plan);
    clamp_to(z, bounds);
    plan.unpack(z);
    Eval cur = try_shoot(problem, plan, false);
    ++sol.evaluations;
    if (!cur.ok) throw DomainError("starting plan " + plan.pattern() + " is not admissible");

    std::vector<double> reuse = hessian ? *hessian : std::vector<double>{};
    double damping = 0.0;
    Projection proj;
    int it = 0;
    double best_norm = std::numeric_limits<double>::infinity();
    int stalled = 0;
    for (; it < options.max_iter; ++it) {
        bounds = plan_bounds(problem, plan);
        const double scale = std::max(std::abs(cur.shot.objective), 1e-12);
        proj = project(z, cur.shot.gradient, bounds, scale);
        if (options.log) {
            *options.log << "iter=" << it << " pattern=" << plan.pattern() << " J=" << cur.shot.objective
                         << " residual=" << proj.norm << "\n";
        }
        if (proj.norm < options.tol) {
            sol.converged = true;
            break;
        }
        // Accepted steps that no longer shrink the residual mean the gradient has hit its noise floor.
        stalled = proj.norm < 0.9 * best_norm ? 0 : stalled + 1;
        best_norm = std::min(best_norm, proj.norm);
        if (stalled >= 4) break;
        const Eigen::Index n = static_cast<Eigen::Index>(proj.free.size());
        Eigen::VectorXd g(n);
        for (Eigen::Index a = 0; a < n; ++a) g(a) = cur.shot.gradient[proj.free[static_cast<std::size_t>(a)]];
        Eigen::MatrixXd hess(n, n);
        bool fresh = true;
        if (reuse.size() == static_cast<std::size_t>(n * n)) {
            hess = Eigen::Map<const Eigen::MatrixXd>(reuse.data(), n, n);
            fresh = false;
        } else {
            for (Eigen::Index a = 0; a < n; ++a) {
                const std::size_t i = proj.free[static_cast<std::size_t>(a)];
                double step = 1e-3;
                if (z[i] + step > bounds.hi[i]) step = -step;
                std::vector<double> zp = z;
                zp[i] += step;
                PhasePlan pp = plan;
                pp.unpack(zp);
                Eval e = try_shoot(problem, pp, false);
                ++sol.evaluations;
                if (!e.ok) {
                    zp[i] = z[i] - step;
                    pp.unpack(zp);
                    e = try_shoot(problem, pp, false);
                    ++sol.evaluations;
                    step = -step;
                }
                for (Eigen::Index b2 = 0; b2 < n; ++b2) {
                    const std::size_t k = proj.free[static_cast<std::size_t>(b2)];
                    hess(b2, a) = e.ok ? (e.shot.gradient[k] - cur.shot.gradient[k]) / step : 0.0;
                }
            }
            hess = 0.5 * (hess + hess.transpose()).eval();
        }

        bool accepted = false;
        for (int retry = 0; retry < 2 && !accepted; ++retry) {
            const Eigen::VectorXd d = newton_step(hess, g, damping);
            double alpha = 1.0;
            for (int half = 0; half < 12; ++half, alpha *= 0.5) {
                std::vector<double> zn = z;
                for (Eigen::Index a = 0; a < n; ++a) zn[proj.free[static_cast<std::size_t>(a)]] += alpha * d(a);
                PhasePlan pn = plan;
                pn.unpack(zn);
                const Bounds bn = plan_bounds(problem, pn);
                clamp_to(zn, bn);
                pn.unpack(zn);
                Eval e = try_shoot(problem, pn, false);
                ++sol.evaluations;
                if (!e.ok) continue;
                const double jn = e.shot.objective;
                const double jc = cur.shot.objective;
                const Projection pn_proj =
                    project(zn, e.shot.gradient, bn, std::max(std::abs(jn), 1e-12));
                const bool lower = jn < jc - 1e-13 * std::abs(jc);
                const bool flat = jn <= jc + 1e-12 * std::abs(jc) && pn_proj.norm < proj.norm;
                if (lower || flat) {
                    z = zn;
                    plan = pn;
                    cur = std::move(e);
                    accepted = true;
                    break;
                }
            }
            if (!accepted) {
                if (!fresh) break;  // recompute curvature below
                damping = std::max(1e-6, damping * 100.0);
            }
        }
        if (!accepted) {
            if (!fresh) {
                reuse.clear();
                continue;
            }
            break;
        }
        damping *= 0.1;
        if (damping < 1e-10) damping = 0.0;
        reuse.assign(hess.data(), hess.data() + hess.size());
    }
    Eval last = try_shoot(problem, plan, true);
    ++sol.evaluations;
    sol.plan = plan;
    sol.iterations = it;
    sol.objective = last.shot.objective;
    bounds = plan_bounds(problem, plan);
    proj = project(z, last.shot.gradient, bounds, std::max(std::abs(last.shot.objective), 1e-12));
    sol.residual = proj.residual;
    sol.residual_norm = proj.norm;
    sol.converged = proj.norm < options.tol;
    sol.hessian = reuse;
    sol.kkt = kkt_audit(problem, plan, last.shot, proj.residual);
    sol.adjoint = std::move(last.shot.adjoint);
    sol.sim = std::move(last.shot.sim);
    return sol;
}

namespace {

// Candidate plans with one more switch on the last plateau, placed where the
// decrease sensitivity says a lower (or higher) level pays.
std::vector<PhasePlan> extensions(const OcpProblem& pb, const OcpSolution& s) {
    std::vector<PhasePlan> out;
    const PhasePlan& plan = s.plan;
    double level = plan.v1;
    double from = plan.t0;
    for (const auto& m : plan.moves) {
        level = m.kind == PhasePlan::Switch::Ramp ? std::max(level, m.target) : std::min(level, m.target);
        from = std::max(from, m.time);
    }
    const AdjointSample* best_drop = nullptr;
    const AdjointSample* best_rise = nullptr;
    for (const AdjointSample& a : s.adjoint) {
        if (a.t <= from || a.speed != SpeedMode::Hold) continue;
        if (a.lower > 0.0 && (!best_drop || a.lower > best_drop->lower)) best_drop = &a;
        if (a.lower < 0.0 && (!best_rise || a.lower < best_rise->lower)) best_rise = &a;
    }
    const ScenarioConfig& c = pb.config;
    if (best_drop && level - 2.5 >= c.v_min) {
        PhasePlan p = plan;
        p.moves.push_back({best_drop->t, PhasePlan::Switch::Drop, level - 2.5});
        out.push_back(p);
    }
    if (best_rise && level + 2.5 <= c.v_max) {
        PhasePlan p = plan;
        p.moves.push_back({best_rise->t, PhasePlan::Switch::Ramp, std::min(c.v_max, level + 5.0)});
        out.push_back(p);
    }
    return out;
}

}  // namespace

OcpSolution solve_ocp(const OcpProblem& problem, const OcpOptions& options, const std::optional<OcpSolution>& warm) {
    problem.config.validate();
    if (warm) {
        return refine_plan(problem, warm->plan, options, warm->hessian.empty() ? nullptr : &warm->hessian);
    }
    OracleGrid grid;
    grid.dt = std::max(problem.dt, options.oracle_dt);
    const OracleResult start = grid_oracle(problem, grid);
    OcpSolution best = refine_plan(problem, start.plan, options);
    if (options.log) *options.log << "pattern=" << best.plan.pattern() << " J=" << best.objective << "\n";
    while (options.try_patterns && static_cast<int>(best.plan.moves.size()) < options.max_switches) {
        bool improved = false;
        OcpSolution next = best;
        for (const PhasePlan& cand : extensions(problem, best)) {
            OcpSolution s;
            try {
                s = refine_plan(problem, cand, options);
            } catch (const DomainError&) {
                continue;
            }
            if (options.log) *options.log << "pattern=" << s.plan.pattern() << " J=" << s.objective << "\n";
            if (s.objective < next.objective - 1e-9 * std::abs(next.objective)) {
                next = std::move(s);
                improved = true;
            }
        }
        if (!improved) break;
        best = std::move(next);
    }
    return best;
}

OracleResult grid_oracle(const OcpProblem& problem, const OracleGrid& grid) {
    OcpProblem pb = problem;
    if (grid.dt) pb.dt = *grid.dt;
    const ScenarioConfig& c = pb.config;
    const double top = std::min(c.v_max, pb.initial.v);
    std::vector<double> levels;
    for (double v = c.v_min; v < top - 1e-9; v += grid.speed_step) levels.push_back(v);
    levels.push_back(top);
    std::vector<double> times;
    for (double t = pb.initial.t; t < pb.t_end - 1e-9; t += grid.time_step) times.push_back(t);

    OracleResult best;
    best.objective = std::numeric_limits<double>::infinity();
    auto consider = [&](const PhasePlan& p) {
        ++best.evaluated;
        double j = 0.0;
        try {
            j = evaluate_plan(pb, p);
        } catch (const DomainError&) {
            ++best.infeasible;
            return;
        } catch (const ConstraintError&) {
            ++best.infeasible;
            return;
        }
        if (j < best.objective) {
            best.objective = j;
            best.plan = p;
        }
    };
    for (double v1 : levels) {
        PhasePlan p;
        p.t0 = pb.initial.t;
        p.v1 = v1;
        consider(p);
        for (double t1 : times) {
            for (double v2 = v1 + grid.speed_step; v2 <= c.v_max + 1e-9; v2 += grid.speed_step) {
                PhasePlan q = p;
                q.moves.push_back({t1, PhasePlan::Switch::Ramp, std::min(v2, c.v_max)});
                consider(q);
            }
        }
    }
    if (!std::isfinite(best.objective)) throw DomainError("no admissible profile on the oracle grid");
    if (grid.dt && *grid.dt != problem.dt) best.objective = evaluate_plan(problem, best.plan);
    return best;
}

}  // namespace bavsl
