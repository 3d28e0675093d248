#pragma once

#include <random>

#include "bavsl/ocp.hpp"

namespace bavsl::testing {

inline double& slot(PlantVector& x, int i) {
    switch (i) {
        case 0: return x.l_q;
        case 1: return x.x_r;
        case 2: return x.k_0;
        case 3: return x.q_0;
        case 4: return x.w_q;
        case 5: return x.v;
        default: return x.r;
    }
}

struct Point {
    PlantVector x, lambda;
    Regime regime;
    double t = 0.0, a = 0.0, mu = 0.0;
};

// Admissible state in one of the six queue and wave combinations.
inline Point random_point(std::mt19937_64& rng, const ScenarioConfig& c) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Point p;
    p.regime.queue = u(rng) < 0.5 ? QueueMode::Queued : QueueMode::Free;
    const int wave = static_cast<int>(u(rng) * 3.0);
    p.regime.wave = wave == 0 ? WaveMode::Equilibrium : wave == 1 ? WaveMode::Free : WaveMode::Tracking;
    p.regime.speed = p.regime.wave == WaveMode::Equilibrium ? SpeedMode::Hold : SpeedMode::Ramp;
    p.t = 0.5 + 3.0 * u(rng);
    p.x.v = 50.0 + 70.0 * u(rng);
    const double speed = p.regime.wave == WaveMode::Free ? p.x.v * (0.5 + 0.45 * u(rng)) : p.x.v;
    p.x.k_0 = 40.0 + 40.0 * u(rng);
    p.x.q_0 = speed * p.x.k_0;
    p.x.r = release_speed(c.fd, 80.0 + 200.0 * u(rng));
    p.x.l_q = p.regime.queue == QueueMode::Queued ? 50.0 + 100.0 * u(rng) : 0.0;
    p.x.w_q = p.regime.queue == QueueMode::Queued ? 0.03 * u(rng) : 0.0;
    p.x.x_r = -2.0 * u(rng);
    for (int i = 0; i < 7; ++i) slot(p.lambda, i) = 2.0 * u(rng) - 1.0;
    p.lambda.l_q *= 1e-3;
    p.lambda.w_q *= 1e2;
    p.a = feasible_rate(p.x, p.regime, c) * u(rng);
    p.mu = p.regime.speed == SpeedMode::Ramp ? u(rng) * 1e-3 : 0.0;
    return p;
}

}  // namespace bavsl::testing
