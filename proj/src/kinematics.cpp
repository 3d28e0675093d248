#include "bavsl/kinematics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

#include "bavsl/errors.hpp"

namespace bavsl {

namespace {

// 8-point Gauss-Legendre nodes and weights on [-1, 1].
constexpr std::array<double, 8> kGlNodes = {
    -0.9602898564975363, -0.7966664774136267, -0.5255324099163290, -0.1834346424956498,
    0.1834346424956498,  0.5255324099163290,  0.7966664774136267,  0.9602898564975363};
constexpr std::array<double, 8> kGlWeights = {
    0.1012285362903763, 0.2223810344533745, 0.3137066458778873, 0.3626837833783620,
    0.3626837833783620, 0.3137066458778873, 0.2223810344533745, 0.1012285362903763};

double integrate(const std::function<double(double)>& f, double a, double b) {
    const double half = 0.5 * (b - a);
    const double mid = 0.5 * (a + b);
    double sum = 0.0;
    for (std::size_t i = 0; i < kGlNodes.size(); ++i) sum += kGlWeights[i] * f(mid + half * kGlNodes[i]);
    return sum * half;
}

}  // namespace

AccelerationLaw AccelerationLaw::constant(double a0) {
    if (!(a0 > 0.0)) throw DomainError("acceleration must be positive");
    AccelerationLaw law;
    law.kind_ = Kind::Constant;
    law.a_ = a0;
    return law;
}

AccelerationLaw AccelerationLaw::affine(double a, double b, double v_top) {
    if (!(a > 0.0) || !(a - b * v_top > 0.0) || b < 0.0) {
        throw DomainError("affine acceleration law must stay positive and non-increasing");
    }
    AccelerationLaw law;
    law.kind_ = Kind::Affine;
    law.a_ = a;
    law.b_ = b;
    return law;
}

AccelerationLaw AccelerationLaw::tabulated(std::vector<double> v, std::vector<double> a) {
    if (v.size() < 2 || v.size() != a.size()) {
        throw DomainError("tabulated acceleration law needs >= 2 matching knots");
    }
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (!(a[i] > 0.0)) throw DomainError("tabulated acceleration must be positive");
        if (i > 0 && !(v[i] > v[i - 1])) throw DomainError("tabulated speeds must increase");
    }
    AccelerationLaw law;
    law.kind_ = Kind::Tabulated;
    const std::size_t n = v.size();
    law.slopes_.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t lo = i == 0 ? 0 : i - 1;
        const std::size_t hi = i + 1 == n ? i : i + 1;
        law.slopes_[i] = (a[hi] - a[lo]) / (v[hi] - v[lo]);
    }
    law.knots_ = std::move(v);
    law.values_ = std::move(a);
    // Hermite cubics can undershoot between knots; positivity must survive.
    for (std::size_t i = 0; i + 1 < n; ++i) {
        for (int j = 1; j < 16; ++j) {
            const double x = law.knots_[i] + (law.knots_[i + 1] - law.knots_[i]) * j / 16.0;
            if (!(law(x) > 0.0)) throw DomainError("tabulated acceleration dips to <= 0");
        }
    }
    return law;
}

double AccelerationLaw::a0() const {
    if (kind_ != Kind::Constant) throw DomainError("operation requires a constant acceleration law");
    return a_;
}

double AccelerationLaw::operator()(double v) const {
    switch (kind_) {
        case Kind::Constant:
            return a_;
        case Kind::Affine:
            return a_ - b_ * v;
        case Kind::Tabulated:
            break;
    }
    if (v < knots_.front() || v > knots_.back()) {
        throw DomainError("speed " + std::to_string(v) + " outside tabulated acceleration range");
    }
    const auto it = std::upper_bound(knots_.begin(), knots_.end(), v);
    const std::size_t i = std::min<std::size_t>(static_cast<std::size_t>(it - knots_.begin()), knots_.size() - 1) - 1;
    const double h = knots_[i + 1] - knots_[i];
    const double s = (v - knots_[i]) / h;
    const double s2 = s * s;
    const double s3 = s2 * s;
    return (2 * s3 - 3 * s2 + 1) * values_[i] + (s3 - 2 * s2 + s) * h * slopes_[i] +
           (-2 * s3 + 3 * s2) * values_[i + 1] + (s3 - s2) * h * slopes_[i + 1];
}

double release_speed(const TriangularFD& fd, double k_plus) {
    if (!(k_plus > 0.0 && k_plus <= fd.k_j())) {
        throw DomainError("release speed needs density in (0, k_j]");
    }
    const double r = fd.q_max() / k_plus - flow(fd, k_plus) / k_plus;
    // Exactly zero on the free branch; rounding must not flip the sign.
    return std::max(r, 0.0);
}

double speed_at_distance(double v_c, const AccelerationLaw& law, double distance) {
    if (distance < 0.0) throw DomainError("distance must be non-negative");
    if (v_c < 0.0) throw DomainError("speed must be non-negative");
    if (law.is_constant()) return std::sqrt(v_c * v_c + 2.0 * law.a0() * distance);
    // Integrate d(v^2/2)/dx = A(v) in 1 m steps; smooth even from rest.
    constexpr double kStep = 1e-3;
    double s = 0.5 * v_c * v_c;
    double x = 0.0;
    auto rhs = [&](double energy) { return law(std::sqrt(2.0 * std::max(energy, 0.0))); };
    while (x < distance) {
        const double dx = std::min(kStep, distance - x);
        const double k1 = rhs(s);
        const double k2 = rhs(s + 0.5 * dx * k1);
        const double k3 = rhs(s + 0.5 * dx * k2);
        const double k4 = rhs(s + dx * k3);
        s += dx * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0;
        x += dx;
    }
    return std::sqrt(2.0 * s);
}

double accel_distance(double v_c, double V_e, const AccelerationLaw& law) {
    if (V_e < v_c) throw DomainError("target speed below release speed");
    return (V_e * V_e - v_c * v_c) / (2.0 * law.a0());
}

double acceleration_end_time(const ReleaseBoundary& b, const AccelerationLaw& law) {
    if (b.r == 0.0) return b.t0;
    return b.t0 + accel_distance(b.v_c, b.V_e, law) / b.r;
}

double detector_flow(const ReleaseBoundary& b, const AccelerationLaw& law, double t) {
    if (t < b.t0) throw DomainError("detector flow queried before the release onset");
    if (b.r == 0.0) return b.q_up;
    if (t >= acceleration_end_time(b, law)) return b.q_up / (1.0 + b.r / b.V_e);
    const double u = std::sqrt(b.v_c * b.v_c + 2.0 * law.a0() * b.r * (t - b.t0));
    return b.q_up / (1.0 + b.r / u);
}

Chord qk_chord(double q_up, double r) { return {q_up, -r}; }

std::vector<ChordSample> leader_follower_oracle(const std::function<double(double)>& v_profile,
                                                double c, double tau,
                                                const std::vector<double>& times) {
    if (!(tau > 0.0)) throw DomainError("headway must be positive");
    std::vector<ChordSample> out;
    out.reserve(times.size());
    for (double t : times) {
        const double spacing = c * tau + integrate(v_profile, t - tau, t);
        const double k = 1.0 / spacing;
        out.push_back({t, k, k * v_profile(t)});
    }
    return out;
}

double chord_slope(const std::vector<ChordSample>& samples) {
    if (samples.size() < 2) throw DomainError("slope needs at least two samples");
    double mk = 0.0;
    double mq = 0.0;
    for (const auto& s : samples) {
        mk += s.k;
        mq += s.q;
    }
    mk /= static_cast<double>(samples.size());
    mq /= static_cast<double>(samples.size());
    double sxy = 0.0;
    double sxx = 0.0;
    for (const auto& s : samples) {
        sxy += (s.k - mk) * (s.q - mq);
        sxx += (s.k - mk) * (s.k - mk);
    }
    if (sxx == 0.0) throw DomainError("degenerate chord: density does not vary");
    return sxy / sxx;
}

double speed_after_time(const AccelerationLaw& law, double v0, double duration) {
    if (duration < 0.0) throw DomainError("duration must be non-negative");
    if (law.is_constant()) return v0 + law.a0() * duration;
    constexpr double kStep = 1e-5;
    double v = v0;
    double t = 0.0;
    while (t < duration) {
        const double dt = std::min(kStep, duration - t);
        const double k1 = law(v);
        const double k2 = law(v + 0.5 * dt * k1);
        const double k3 = law(v + 0.5 * dt * k2);
        const double k4 = law(v + dt * k3);
        v += dt * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0;
        t += dt;
    }
    return v;
}

TravelTimePartials travel_time_partials(double u0, double v, double a0, double length) {
    if (!(length > 0.0)) throw DomainError("corridor length must be positive");
    if (u0 <= 0.0 && v <= 0.0) throw DomainError("travel time undefined at zero speed");
    if (v <= u0) {
        return {length / v, -length / (v * v), 0.0};
    }
    const double gap = v * v - u0 * u0;
    if (gap <= 2.0 * a0 * length) {
        const double tau = (v - u0) / a0 + (length - gap / (2.0 * a0)) / v;
        const double d_v = (gap - 2.0 * a0 * length) / (2.0 * a0 * v * v);
        const double d_u = -(v - u0) / (a0 * v);
        return {tau, d_v, d_u};
    }
    const double top = std::sqrt(u0 * u0 + 2.0 * a0 * length);
    return {(top - u0) / a0, 0.0, (u0 / top - 1.0) / a0};
}

double travel_time_with_accel(double u0, double v, const AccelerationLaw& law, double length) {
    return travel_time_partials(u0, v, law.a0(), length).tau;
}

CapPartials bln_gradient_cap_partials(double v, double u0, double a0, double length) {
    const double den = 2.0 * a0 * length - (v * v - u0 * u0);
    if (!(den > 0.0) || !(v > 0.0)) {
        throw ConstraintError("gradient cap undefined: acceleration cannot complete within the corridor");
    }
    const double h = 2.0 * a0 * v * v / den;
    const double d_v = 4.0 * a0 * v * (2.0 * a0 * length + u0 * u0) / (den * den);
    const double d_u = -4.0 * a0 * v * v * u0 / (den * den);
    return {h, d_v, d_u};
}

double bln_gradient_cap(double v, double u0, const AccelerationLaw& law, double length) {
    return bln_gradient_cap_partials(v, u0, law.a0(), length).h;
}

double bln_exact_bound(double v, double u0, double u0_rate, const AccelerationLaw& law,
                       double length) {
    const double a0 = law.a0();
    const double h = bln_gradient_cap(v, u0, law, length);
    if (v <= u0) return v * v / length;
    return (1.0 - (v - u0) * u0_rate / (a0 * v)) * h;
}

}  // namespace bavsl
