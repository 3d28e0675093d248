#include <algorithm>
#include <limits>

#include "bavsl/kernels.hpp"

namespace bavsl::kernels::detail {

CostTable make_table(const CostWeights& weights, const CurveSet& curves) {
    CostTable t{};
    t.mu1 = weights.mu1;
    t.mu2 = weights.mu2;
    t.length = weights.length;
    t.v_lo = curves[0].v_lo;
    t.v_hi = curves[0].v_hi;
    for (int i = 0; i < 3; ++i) {
        const auto& c = curves[static_cast<std::size_t>(i)];
        t.v_lo = std::max(t.v_lo, c.v_lo);
        t.v_hi = std::min(t.v_hi, c.v_hi);
        t.lambda[i] = weights.lambda[static_cast<std::size_t>(i)];
        t.alpha[i] = c.alpha;
        t.beta[i] = c.beta;
        t.gamma[i] = c.gamma;
        t.delta[i] = c.delta;
        t.epsilon[i] = c.epsilon;
        t.zeta[i] = c.zeta;
        t.eta[i] = c.eta;
    }
    return t;
}

std::size_t running_cost_scalar(const CostTable& t, const double* tau, double* out, std::size_t n) {
    std::size_t bad = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double v = t.length / tau[i];
        if (!(tau[i] > 0.0 && v >= t.v_lo && v <= t.v_hi)) {
            out[i] = std::numeric_limits<double>::quiet_NaN();
            ++bad;
            continue;
        }
        double e[3];
        for (int c = 0; c < 3; ++c) {
            const double num = (t.alpha[c] * v + t.beta[c]) * v + t.gamma[c] + t.delta[c] / v;
            const double den = (t.epsilon[c] * v + t.zeta[c]) * v + t.eta[c];
            e[c] = num / den;
        }
        const double mix = (t.lambda[0] * e[0] + t.lambda[1] * e[1]) + t.lambda[2] * e[2];
        out[i] = t.mu1 * tau[i] + t.mu2 * mix;
    }
    return bad;
}

double weighted_product_sum_scalar(const double* w, const double* a, const double* b, std::size_t n) {
    double lane[4] = {0.0, 0.0, 0.0, 0.0};
    for (std::size_t i = 0; i < n; ++i) lane[i % 4] += (w[i] * a[i]) * b[i];
    return (lane[0] + lane[1]) + (lane[2] + lane[3]);
}

}  // namespace bavsl::kernels::detail
