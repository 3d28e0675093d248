#pragma once

#include <functional>
#include <vector>

#include "bavsl/fundamental_diagram.hpp"

namespace bavsl {

// Maximum acceleration as a function of speed (km/h per h).
class AccelerationLaw {
public:
    static AccelerationLaw constant(double a0);
    // A(v) = a - b*v; must stay positive on [0, v_top].
    static AccelerationLaw affine(double a, double b, double v_top);
    // Piecewise cubic Hermite through (v_i, A_i) with centred-difference slopes (C1).
    static AccelerationLaw tabulated(std::vector<double> v, std::vector<double> a);

    bool is_constant() const { return kind_ == Kind::Constant; }
    // Throws unless the law is constant.
    double a0() const;
    double operator()(double v) const;

private:
    enum class Kind { Constant, Affine, Tabulated };
    Kind kind_ = Kind::Constant;
    double a_ = 0.0;
    double b_ = 0.0;
    std::vector<double> knots_;
    std::vector<double> values_;
    std::vector<double> slopes_;
};

// Moving interface where vehicles start accelerating out of a congested state.
struct ReleaseBoundary {
    double t0 = 0.0;
    double x0 = 0.0;
    double r = 0.0;     // upstream propagation speed magnitude
    double v_c = 0.0;   // speed at release
    double q_up = 0.0;  // release rate, i.e. the chord intercept
    double V_e = 0.0;   // target speed
};

double release_speed(const TriangularFD& fd, double k_plus);
double speed_at_distance(double v_c, const AccelerationLaw& law, double distance);
double accel_distance(double v_c, double V_e, const AccelerationLaw& law);
// Time at which the last vehicle still accelerating passes the fixed observer.
double acceleration_end_time(const ReleaseBoundary& b, const AccelerationLaw& law);
double detector_flow(const ReleaseBoundary& b, const AccelerationLaw& law, double t);

struct Chord {
    double intercept;
    double slope;
    double at(double k) const { return intercept + slope * k; }
};

Chord qk_chord(double q_up, double r);

struct ChordSample {
    double t;
    double k;
    double q;
};

// Virtual leader/follower pair riding a boundary with mean slope c; follower
// trails by headway tau with identical speed history.
std::vector<ChordSample> leader_follower_oracle(const std::function<double(double)>& v_profile,
                                                double c, double tau,
                                                const std::vector<double>& times);

// Least-squares slope of q against k.
double chord_slope(const std::vector<ChordSample>& samples);

// Speed after accelerating for `duration` from v0 at the law's maximum rate.
double speed_after_time(const AccelerationLaw& law, double v0, double duration);

double travel_time_with_accel(double u0, double v, const AccelerationLaw& law, double length);

struct TravelTimePartials {
    double tau;
    double d_v;
    double d_u;
};
TravelTimePartials travel_time_partials(double u0, double v, double a0, double length);

// Gradient cap on the posted limit that keeps departure order equal to arrival order.
double bln_gradient_cap(double v, double u0, const AccelerationLaw& law, double length);

struct CapPartials {
    double h;
    double d_v;
    double d_u;
};
CapPartials bln_gradient_cap_partials(double v, double u0, double a0, double length);

// Exact ordering bound on dv/dt when the traffic speed itself changes at rate u0_rate.
double bln_exact_bound(double v, double u0, double u0_rate, const AccelerationLaw& law,
                       double length);

}  // namespace bavsl
