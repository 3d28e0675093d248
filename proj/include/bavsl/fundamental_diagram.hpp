#pragma once

#include <utility>

namespace bavsl {

// Triangular flow-density relation. Speeds km/h, densities veh/km, flows veh/h.
class TriangularFD {
public:
    // Parameterized by capacity; jam and critical density are derived.
    static TriangularFD from_capacity(double v_f, double w, double q_max);
    static TriangularFD from_jam_density(double v_f, double w, double k_j);

    double v_f() const { return v_f_; }
    double w() const { return w_; }
    double k_j() const { return k_j_; }
    double k_crit() const { return k_crit_; }
    double q_max() const { return q_max_; }

private:
    TriangularFD(double v_f, double w, double k_j);

    double v_f_;
    double w_;
    double k_j_;
    double k_crit_;
    double q_max_;
};

double flow(const TriangularFD& fd, double k);
double demand_fn(const TriangularFD& fd, double k);
double supply_fn(const TriangularFD& fd, double k);
double boundary_flux(const TriangularFD& fd, double k_up, double k_down);

// Discharge capacity when the posted limit v caps the free-flow branch.
double capacity_under_limit(const TriangularFD& fd, double v);
double capacity_under_limit_slope(const TriangularFD& fd, double v);

struct OperatingPoint {
    double k;
    double q;
};

// Capped-diagram apex at limit v: q = capacity_under_limit(v), k = q / v.
OperatingPoint equilibrium_under_limit(const TriangularFD& fd, double v);

}  // namespace bavsl
