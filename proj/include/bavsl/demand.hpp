#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace bavsl {

enum class NoiseKind { None, White, Ar1 };

const char* noise_name(NoiseKind kind);
NoiseKind parse_noise(const char* text);

// Relative noise realized once per cell: marginal sd = sigma_rel * base(t),
// lag-1 correlation rho for the autoregressive kind.
struct NoiseModel {
    NoiseKind kind = NoiseKind::None;
    double sigma_rel = 0.02;
    double rho = 0.8;
    double cell = 1.0 / 3600.0;
};

// Continuous piecewise-linear base arrival rate (veh/h), zero from `cutoff` on.
class DemandProfile {
public:
    DemandProfile(std::vector<double> times, std::vector<double> rates, double cutoff);

    // Two linear ramps meeting at 9000 veh/h at t = 2 h, switched off at 4 h.
    static DemandProfile i880_reference();

    double base_rate(double t) const;
    double base_slope(double t) const;
    double cutoff() const { return cutoff_; }
    const std::vector<double>& knot_times() const { return times_; }
    const std::vector<double>& knot_rates() const { return rates_; }
    // Integral of the base rate over [0, t].
    double base_cumulative(double t) const;

    DemandProfile scaled(double factor) const;

    NoiseModel noise;
    std::uint64_t seed = 0;

private:
    std::vector<double> times_;
    std::vector<double> rates_;
    double cutoff_;
};

// Piecewise-linear rate with jumps allowed between pieces; supports exact
// cumulative counts and their inverse.
class RateCurve {
public:
    struct Piece {
        double start;
        double rate0;  // rate at `start`
        double slope;
    };

    RateCurve() = default;
    // Pieces must have increasing starts and non-negative rates throughout;
    // the last piece extends to infinity and must have zero slope.
    RateCurve(std::vector<Piece> pieces, double cumulative_at_first = 0.0);

    double rate(double t) const;
    double slope(double t) const;
    double cumulative(double t) const;
    // Earliest t with cumulative(t) >= n; flat stretches map to their start.
    double inverse(double n) const;
    // First piece boundary strictly after t (infinity if none).
    double next_break(double t) const;
    double begin() const { return pieces_.front().start; }
    double total() const;
    const std::vector<Piece>& pieces() const { return pieces_; }

    // Pieces of `history` on [from, split) followed by `future` from split on.
    static RateCurve splice(const RateCurve& history, double from, double split, const RateCurve& future);

private:
    std::size_t locate(double t) const;

    std::vector<Piece> pieces_;
    std::vector<double> cum_;
};

RateCurve base_curve(const DemandProfile& profile);
// Base plus one noise draw per cell up to the cutoff; deterministic in profile.seed.
RateCurve realize_arrivals(const DemandProfile& profile);
// Per-cell noise values (veh/h) for the profile's noise model and seed.
std::vector<double> realize_noise(const DemandProfile& profile);

// Base rate plus realized noise, truncated at zero.
double arrival_rate(const DemandProfile& profile, double t);

}  // namespace bavsl
