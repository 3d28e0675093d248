#include "bavsl/emissions.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "bavsl/errors.hpp"

namespace bavsl {

const char* pollutant_name(Pollutant p) {
    switch (p) {
        case Pollutant::CO:
            return "CO";
        case Pollutant::NOx:
            return "NOx";
        case Pollutant::HC:
            return "HC";
    }
    return "?";
}

namespace {

double numerator(const RationalEmissionCurve& c, double v) {
    return (c.alpha * v + c.beta) * v + c.gamma + c.delta / v;
}

double denominator(const RationalEmissionCurve& c, double v) {
    return (c.epsilon * v + c.zeta) * v + c.eta;
}

void check_speed(const RationalEmissionCurve& c, double v) {
    if (!(v >= c.v_lo && v <= c.v_hi)) {
        throw DomainError(std::string(pollutant_name(c.pollutant)) + " factor queried at " +
                          std::to_string(v) + " km/h outside [" + std::to_string(c.v_lo) + ", " +
                          std::to_string(c.v_hi) + "]");
    }
}

}  // namespace

void RationalEmissionCurve::validate() const {
    if (!(v_lo > 0.0 && v_hi > v_lo)) throw ConfigError("emission curve range must be positive and ordered");
    const int steps = static_cast<int>(std::round((v_hi - v_lo) * 10.0));
    for (int i = 0; i <= steps; ++i) {
        const double v = std::min(v_lo + 0.1 * i, v_hi);
        const double den = denominator(*this, v);
        if (den == 0.0 || !std::isfinite(den)) {
            throw ConfigError(std::string(pollutant_name(pollutant)) + " curve denominator vanishes at " +
                              std::to_string(v) + " km/h");
        }
        if (!(numerator(*this, v) / den > 0.0)) {
            throw ConfigError(std::string(pollutant_name(pollutant)) + " curve is not positive at " +
                              std::to_string(v) + " km/h");
        }
    }
}

CurveSet copert_euro5_petrol() {
    CurveSet set;
    set[0] = {Pollutant::CO, 0.000445, -0.102076, 6.876928, 10.383849, 0.001621, -0.437563, 30.337333};
    set[1] = {Pollutant::NOx, -0.000315, 0.103057, 0.239057, -0.339279, 0.034536, 1.986013, 1.263763};
    set[2] = {Pollutant::HC, 0.000004, -0.000707, 0.045249, 0.173074, 0.000070, -0.047538, 6.212053};
    return set;
}

double emission_factor(const RationalEmissionCurve& curve, double v) {
    check_speed(curve, v);
    return numerator(curve, v) / denominator(curve, v);
}

double emission_factor_slope(const RationalEmissionCurve& curve, double v) {
    check_speed(curve, v);
    const double n = numerator(curve, v);
    const double d = denominator(curve, v);
    const double dn = 2.0 * curve.alpha * v + curve.beta - curve.delta / (v * v);
    const double dd = 2.0 * curve.epsilon * v + curve.zeta;
    return (dn * d - n * dd) / (d * d);
}

void CostWeights::validate() const {
    constexpr double kTol = 1e-9;
    if (mu1 < 0.0 || mu2 < 0.0 || std::abs(mu1 + mu2 - 1.0) > kTol) {
        throw ConfigError("travel-time/emission weights must be non-negative and sum to 1");
    }
    double sum = 0.0;
    for (double l : lambda) {
        if (l < 0.0) throw ConfigError("pollutant weights must be non-negative");
        sum += l;
    }
    if (std::abs(sum - 1.0) > kTol) throw ConfigError("pollutant weights must sum to 1");
    if (!(length > 0.0)) throw ConfigError("corridor length must be positive");
}

double weighted_emission(const CostWeights& weights, const CurveSet& curves, double v) {
    double sum = 0.0;
    for (std::size_t i = 0; i < curves.size(); ++i) sum += weights.lambda[i] * emission_factor(curves[i], v);
    return sum;
}

double running_cost(const CostWeights& weights, const CurveSet& curves, double tau) {
    if (!(tau > 0.0)) throw DomainError("travel time must be positive");
    const double v = weights.length / tau;
    return weights.mu1 * tau + weights.mu2 * weighted_emission(weights, curves, v);
}

double running_cost_slope(const CostWeights& weights, const CurveSet& curves, double tau) {
    if (!(tau > 0.0)) throw DomainError("travel time must be positive");
    const double v = weights.length / tau;
    double de = 0.0;
    for (std::size_t i = 0; i < curves.size(); ++i) de += weights.lambda[i] * emission_factor_slope(curves[i], v);
    return weights.mu1 - weights.mu2 * de * v / tau;
}

}  // namespace bavsl
