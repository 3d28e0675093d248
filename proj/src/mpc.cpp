#include "bavsl/mpc.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "bavsl/errors.hpp"

namespace bavsl {

namespace {

constexpr double kTimeTol = 1e-9;

}  // namespace

void MpcConfig::validate() const {
    if (!(sample > 0.0)) throw ConfigError("MPC sampling interval must be positive");
    if (!(horizon >= 10.0 * sample)) throw ConfigError("prediction horizon must be at least ten sampling intervals");
    if (!(predictor_dt > 0.0) || predictor_dt > sample) {
        throw ConfigError("predictor step must be positive and no longer than the sampling interval");
    }
    if (!(forecast_cell > 0.0) || !(forecast_window >= 2.0 * forecast_cell)) {
        throw ConfigError("forecast window must hold at least two cells");
    }
}

Ar1Fit fit_ar1(const std::vector<double>& deviations) {
    if (deviations.size() < 2) throw DomainError("AR(1) fit needs at least two points");
    Ar1Fit fit;
    fit.samples = deviations.size();
    double num = 0.0;
    double den = 0.0;
    for (std::size_t i = 1; i < deviations.size(); ++i) {
        num += deviations[i] * deviations[i - 1];
        den += deviations[i - 1] * deviations[i - 1];
    }
    const auto [lo, hi] = std::minmax_element(deviations.begin(), deviations.end());
    if (den <= 0.0 || *hi - *lo <= 1e-12 * std::max(1.0, std::abs(*hi))) return fit;
    // Keep the extrapolation stable even when a short window suggests a unit root.
    fit.coefficient = std::clamp(num / den, -0.999, 0.999);
    double sse = 0.0;
    for (std::size_t i = 1; i < deviations.size(); ++i) {
        const double e = deviations[i] - fit.coefficient * deviations[i - 1];
        sse += e * e;
    }
    fit.innovation_variance = sse / static_cast<double>(deviations.size() - 1);
    return fit;
}

std::vector<double> cell_deviations(const RateCurve& measured, const DemandProfile& base, double from, double to,
                                    double cell) {
    if (!(cell > 0.0)) throw DomainError("cell must be positive");
    std::vector<double> out;
    const auto cells = static_cast<long>(std::floor((to - from) / cell + 1e-9));
    for (long i = 0; i < cells; ++i) {
        const double a = from + static_cast<double>(i) * cell;
        const double b = a + cell;
        const double seen = measured.cumulative(b) - measured.cumulative(a);
        const double expected = base.base_cumulative(b) - base.base_cumulative(a);
        out.push_back((seen - expected) / cell);
    }
    return out;
}

RateCurve ar1_forecast(const DemandProfile& base, const std::vector<double>& history, double t0, double cell) {
    const Ar1Fit fit = fit_ar1(history);
    const double last = history.back();
    const double cutoff = base.cutoff();

    // Deviation cells until the decay drops below a microvehicle per hour.
    std::vector<double> dev;
    if (fit.coefficient != 0.0 && last != 0.0) {
        double d = last * fit.coefficient;
        while (std::abs(d) > 1e-6 && t0 + static_cast<double>(dev.size()) * cell < cutoff) {
            dev.push_back(d);
            d *= fit.coefficient;
        }
    }
    const double dev_end = t0 + static_cast<double>(dev.size()) * cell;

    std::vector<double> cuts{t0};
    for (std::size_t i = 1; i < dev.size(); ++i) cuts.push_back(t0 + static_cast<double>(i) * cell);
    if (!dev.empty()) cuts.push_back(dev_end);
    for (double k : base.knot_times()) {
        if (k > t0 && k < cutoff) cuts.push_back(k);
    }
    std::sort(cuts.begin(), cuts.end());
    cuts.erase(std::unique(cuts.begin(), cuts.end(), [](double a, double b) { return std::abs(a - b) < 1e-12; }),
               cuts.end());

    std::vector<RateCurve::Piece> pieces;
    for (double s : cuts) {
        if (s >= cutoff) break;
        double d = 0.0;
        if (s < dev_end - kTimeTol) {
            const auto idx = static_cast<std::size_t>(std::floor((s - t0) / cell + 1e-9));
            d = dev[std::min(idx, dev.size() - 1)];
        }
        const double rate = base.base_rate(s) + d;
        // A truncated piece stays flat so it cannot dip below zero inside the cell.
        if (rate <= 0.0) {
            pieces.push_back({s, 0.0, 0.0});
        } else {
            pieces.push_back({s, rate, base.base_slope(s)});
        }
    }
    pieces.push_back({std::max(cutoff, t0), 0.0, 0.0});
    if (pieces.size() > 1 && pieces[pieces.size() - 1].start <= pieces[pieces.size() - 2].start) pieces.pop_back();
    return RateCurve(std::move(pieces));
}

OcpProblem predictor_problem(const ScenarioConfig& config, const MpcConfig& mpc, const RateCurve& arrivals,
                             const CorridorState& state) {
    const double t = state.t;
    const double cell = mpc.forecast_cell;
    const double from_fit = std::max(0.0, t - mpc.forecast_window);
    std::vector<double> history = t - from_fit >= 2.0 * cell - kTimeTol
                                      ? cell_deviations(arrivals, config.demand, from_fit, t, cell)
                                      : std::vector<double>{0.0, 0.0};
    if (history.size() < 2) history = {0.0, 0.0};
    const RateCurve future = ar1_forecast(config.demand, history, t, cell);

    OcpProblem p;
    p.config = config;
    // Queued vehicles still need their arrival times for the waiting-time lookup.
    const double from = std::max(arrivals.begin(), std::min(t, arrivals.inverse(state.departed)) - cell);
    p.arrivals = RateCurve::splice(arrivals, from, t, future);
    p.initial = state;
    p.t_end = t + mpc.horizon;
    p.dt = mpc.predictor_dt;
    return p;
}

PhasePlan shift_plan(const PhasePlan& plan, const CorridorState& state) {
    PhasePlan out;
    out.t0 = state.t;
    out.v1 = state.v;
    bool busy = false;  // an earlier ramp is still running, so later moves have not started
    for (const auto& m : plan.moves) {
        const bool started = m.time < state.t - kTimeTol && !busy;
        if (started) {
            if (m.kind == PhasePlan::Switch::Drop) continue;
            if (state.v >= m.target - 1e-9) continue;
            busy = true;
        }
        out.moves.push_back({std::max(m.time, state.t), m.kind, m.target});
    }
    return out;
}

namespace {

struct Accumulator {
    MpcResult& out;
    double tt = 0.0;
    std::array<double, 3> em{};

    void add(const SimResult& seg) {
        out.objective += seg.objective;
        out.served += seg.served;
        tt += seg.avg_travel_time * seg.served;
        for (std::size_t p = 0; p < 3; ++p) em[p] += seg.avg_emissions[p] * seg.served;
        const std::size_t skip = out.rows.empty() ? 0 : 1;
        out.rows.insert(out.rows.end(), seg.rows.begin() + static_cast<long>(std::min(skip, seg.rows.size())),
                        seg.rows.end());
        out.final_state = seg.final_state;
    }

    void finish() {
        if (out.served <= 0.0) return;
        out.avg_travel_time = tt / out.served;
        for (std::size_t p = 0; p < 3; ++p) out.avg_emissions[p] = em[p] / out.served;
    }
};

}  // namespace

MpcResult mpc_run(const ScenarioConfig& config, const MpcConfig& mpc, const OcpSolution* first, std::ostream* log) {
    return mpc_run(config, mpc, realize_arrivals(config.demand), first, log);
}

MpcResult mpc_run(const ScenarioConfig& config, const MpcConfig& mpc, const RateCurve& arrivals,
                  const OcpSolution* first, std::ostream* log) {
    config.validate();
    mpc.validate();
    MpcResult out;
    Accumulator acc{out};
    CorridorState state = initial_state(config, config.v_max, 0.0);
    out.final_state = state;

    SimOptions plant;
    plant.dt = config.dt;
    plant.output_every = config.output_every;
    const auto record_limit = [&](const SimResult& seg) {
        for (const auto& r : seg.rows) {
            if (out.limit.empty() || r.t > out.limit.back().first) out.limit.emplace_back(r.t, r.v);
        }
    };

    std::optional<OcpSolution> prev;
    PhasePlan applied;
    applied.t0 = 0.0;
    applied.v1 = state.v;
    long k = 0;
    while (true) {
        const double t = static_cast<double>(k) * mpc.sample;
        if (t >= config.t_final - kTimeTol) break;
        if (t > config.demand.cutoff() && state.l_q <= 0.0) break;
        state.t = t;

        ControlLogRow row{t, state.v, 0.0, 0, false};
        bool solved = false;
        try {
            OcpProblem pb = predictor_problem(config, mpc, arrivals, state);
            OcpSolution sol;
            if (k == 0 && first) {
                sol = *first;
            } else if (prev) {
                PhasePlan warm = shift_plan(prev->plan, state);
                const bool same_shape = warm.moves.size() == prev->plan.moves.size();
                sol = refine_plan(pb, warm, mpc.solver, same_shape && !prev->hessian.empty() ? &prev->hessian : nullptr);
            } else {
                sol = solve_ocp(pb, mpc.solver);
            }
            ++out.solves;
            out.evaluations += sol.evaluations;
            row.predicted_objective = sol.objective;
            row.iterations = sol.iterations;
            row.converged = sol.converged;
            // A stalled solve still beats its warm start, so it is applied; only a failure holds.
            solved = std::isfinite(sol.objective);
            if (solved) {
                applied = sol.plan;
                prev = std::move(sol);
                prev->adjoint.clear();
                prev->sim = SimResult{};
            }
        } catch (const DomainError& e) {
            if (log) *log << "t=" << t << " solve failed: " << e.what() << "\n";
        } catch (const ConstraintError& e) {
            if (log) *log << "t=" << t << " solve failed: " << e.what() << "\n";
        }
        if (!solved) {
            ++out.failures;
            applied = shift_plan(applied, state);
        }
        row.v_applied = std::min(applied.v1, state.v);
        out.log.push_back(row);
        if (log) {
            *log << "t=" << t << " v=" << row.v_applied << " J_pred=" << row.predicted_objective
                 << " iters=" << row.iterations << " converged=" << row.converged << "\n";
        }

        plant.t_end = std::min(t + mpc.sample, config.t_final);
        const SimResult seg = simulate(config, applied.program(), arrivals, state, plant);
        acc.add(seg);
        record_limit(seg);
        state = seg.final_state;
        applied = shift_plan(applied, state);
        if (prev) prev->plan = applied;
        ++k;
    }
    acc.finish();
    return out;
}

}  // namespace bavsl
