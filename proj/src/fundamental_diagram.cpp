#include "bavsl/fundamental_diagram.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "bavsl/errors.hpp"

namespace bavsl {

namespace {

void check_density(const TriangularFD& fd, double k) {
    if (!(k >= 0.0 && k <= fd.k_j())) {
        throw DomainError("density " + std::to_string(k) + " outside [0, " +
                          std::to_string(fd.k_j()) + "]");
    }
}

void check_limit(const TriangularFD& fd, double v) {
    if (!(v > 0.0 && v <= fd.v_f())) {
        throw DomainError("speed limit " + std::to_string(v) + " outside (0, " +
                          std::to_string(fd.v_f()) + "]");
    }
}

}  // namespace

TriangularFD::TriangularFD(double v_f, double w, double k_j) : v_f_(v_f), w_(w), k_j_(k_j) {
    if (!(v_f > 0.0 && w > 0.0 && k_j > 0.0)) {
        throw DomainError("fundamental diagram parameters must be positive");
    }
    k_crit_ = k_j * w / (v_f + w);
    q_max_ = v_f * k_crit_;
}

TriangularFD TriangularFD::from_capacity(double v_f, double w, double q_max) {
    if (!(v_f > 0.0 && w > 0.0 && q_max > 0.0)) {
        throw DomainError("fundamental diagram parameters must be positive");
    }
    const double k_crit = q_max / v_f;
    TriangularFD fd(v_f, w, q_max / w + k_crit);
    // Keep the stated capacity exact rather than re-derived through k_j.
    fd.k_crit_ = k_crit;
    fd.q_max_ = q_max;
    return fd;
}

TriangularFD TriangularFD::from_jam_density(double v_f, double w, double k_j) {
    return TriangularFD(v_f, w, k_j);
}

double flow(const TriangularFD& fd, double k) {
    check_density(fd, k);
    return std::min(fd.v_f() * k, fd.w() * (fd.k_j() - k));
}

double demand_fn(const TriangularFD& fd, double k) {
    check_density(fd, k);
    return k <= fd.k_crit() ? fd.v_f() * k : fd.q_max();
}

double supply_fn(const TriangularFD& fd, double k) {
    check_density(fd, k);
    return k <= fd.k_crit() ? fd.q_max() : fd.w() * (fd.k_j() - k);
}

double boundary_flux(const TriangularFD& fd, double k_up, double k_down) {
    return std::min(demand_fn(fd, k_up), supply_fn(fd, k_down));
}

double capacity_under_limit(const TriangularFD& fd, double v) {
    check_limit(fd, v);
    if (v == fd.v_f()) return fd.q_max();
    return fd.k_j() * v * fd.w() / (v + fd.w());
}

double capacity_under_limit_slope(const TriangularFD& fd, double v) {
    check_limit(fd, v);
    const double s = v + fd.w();
    return fd.k_j() * fd.w() * fd.w() / (s * s);
}

OperatingPoint equilibrium_under_limit(const TriangularFD& fd, double v) {
    const double q = capacity_under_limit(fd, v);
    return {q / v, q};
}

}  // namespace bavsl
