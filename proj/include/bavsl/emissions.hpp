#pragma once

#include <array>
#include <string>

namespace bavsl {

enum class Pollutant { CO = 0, NOx = 1, HC = 2 };

const char* pollutant_name(Pollutant p);

// Hot-exhaust factor (g/km) as a rational function of mean speed (km/h):
// (alpha v^2 + beta v + gamma + delta / v) / (epsilon v^2 + zeta v + eta).
struct RationalEmissionCurve {
    Pollutant pollutant = Pollutant::CO;
    double alpha = 0.0;
    double beta = 0.0;
    double gamma = 0.0;
    double delta = 0.0;
    double epsilon = 0.0;
    double zeta = 0.0;
    double eta = 0.0;
    double v_lo = 10.0;
    double v_hi = 130.0;

    // Rejects curves whose denominator vanishes or whose value is not positive
    // anywhere on a 0.1 km/h grid over the valid range.
    void validate() const;
};

using CurveSet = std::array<RationalEmissionCurve, 3>;

// Euro 5 petrol passenger car coefficients (CO, NOx, HC).
CurveSet copert_euro5_petrol();

double emission_factor(const RationalEmissionCurve& curve, double v);
double emission_factor_slope(const RationalEmissionCurve& curve, double v);

// Scalarization of travel time (h) and emissions; mu and lambda each sum to 1.
struct CostWeights {
    double mu1 = 1.0;
    double mu2 = 0.0;
    std::array<double, 3> lambda{1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
    double length = 10.0;

    void validate() const;
};

struct EmissionModel {
    CurveSet curves = copert_euro5_petrol();
    CostWeights weights;
};

// Per-vehicle cost for a trip of duration tau (h) over the weighted length.
double running_cost(const CostWeights& weights, const CurveSet& curves, double tau);
double running_cost_slope(const CostWeights& weights, const CurveSet& curves, double tau);

// Lambda-weighted factor sum at mean speed v.
double weighted_emission(const CostWeights& weights, const CurveSet& curves, double v);

}  // namespace bavsl
