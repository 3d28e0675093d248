#include "bavsl/demand.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <random>
#include <string>

#include "bavsl/errors.hpp"

namespace bavsl {

const char* noise_name(NoiseKind kind) {
    switch (kind) {
        case NoiseKind::None:
            return "none";
        case NoiseKind::White:
            return "white";
        case NoiseKind::Ar1:
            return "ar1";
    }
    return "?";
}

NoiseKind parse_noise(const char* text) {
    if (std::strcmp(text, "none") == 0) return NoiseKind::None;
    if (std::strcmp(text, "white") == 0) return NoiseKind::White;
    if (std::strcmp(text, "ar1") == 0) return NoiseKind::Ar1;
    throw ConfigError(std::string("unknown noise kind '") + text + "' (expected none|white|ar1)");
}

DemandProfile::DemandProfile(std::vector<double> times, std::vector<double> rates, double cutoff)
    : times_(std::move(times)), rates_(std::move(rates)), cutoff_(cutoff) {
    if (times_.size() < 2 || times_.size() != rates_.size()) {
        throw ConfigError("demand profile needs at least two (time, rate) knots");
    }
    if (times_.front() != 0.0) throw ConfigError("demand profile must start at t = 0");
    for (std::size_t i = 0; i < times_.size(); ++i) {
        if (!(rates_[i] >= 0.0) || !std::isfinite(rates_[i])) throw ConfigError("demand rates must be finite and >= 0");
        if (i > 0 && !(times_[i] > times_[i - 1])) throw ConfigError("demand knot times must increase");
    }
    if (!(cutoff_ > 0.0)) throw ConfigError("demand cutoff must be positive");
}

DemandProfile DemandProfile::i880_reference() {
    // Segment formulas 1714.08 t + 5571.84 on [0, 2] and -1892.335 t + 12784.67
    // on (2, 4] written as knots; both give 9000 at t = 2.
    const double left = 1714.08 * 2.0 + 5571.84;
    const double right = -1892.335 * 2.0 + 12784.67;
    if (std::abs(left - right) > 1e-6) throw ConfigError("reference demand segments disagree at t = 2");
    return DemandProfile({0.0, 2.0, 4.0}, {5571.84, left, -1892.335 * 4.0 + 12784.67}, 4.0);
}

double DemandProfile::base_rate(double t) const {
    if (t < 0.0 || t >= cutoff_) return 0.0;
    if (t >= times_.back()) return rates_.back();
    const auto it = std::upper_bound(times_.begin(), times_.end(), t);
    const std::size_t i = static_cast<std::size_t>(it - times_.begin()) - 1;
    const double s = (t - times_[i]) / (times_[i + 1] - times_[i]);
    return rates_[i] + s * (rates_[i + 1] - rates_[i]);
}

double DemandProfile::base_slope(double t) const {
    if (t < 0.0 || t >= cutoff_ || t >= times_.back()) return 0.0;
    const auto it = std::upper_bound(times_.begin(), times_.end(), t);
    const std::size_t i = static_cast<std::size_t>(it - times_.begin()) - 1;
    return (rates_[i + 1] - rates_[i]) / (times_[i + 1] - times_[i]);
}

double DemandProfile::base_cumulative(double t) const { return base_curve(*this).cumulative(t); }

DemandProfile DemandProfile::scaled(double factor) const {
    if (!(factor >= 0.0)) throw ConfigError("demand scale must be >= 0");
    DemandProfile out = *this;
    for (double& r : out.rates_) r *= factor;
    return out;
}

RateCurve::RateCurve(std::vector<Piece> pieces, double cumulative_at_first) : pieces_(std::move(pieces)) {
    if (pieces_.empty()) throw DomainError("rate curve needs at least one piece");
    cum_.resize(pieces_.size());
    cum_[0] = cumulative_at_first;
    for (std::size_t i = 0; i < pieces_.size(); ++i) {
        const Piece& p = pieces_[i];
        if (i + 1 < pieces_.size()) {
            const double len = pieces_[i + 1].start - p.start;
            if (!(len > 0.0)) throw DomainError("rate curve pieces must have increasing starts");
            const double end_rate = p.rate0 + p.slope * len;
            if (p.rate0 < 0.0 || end_rate < -1e-9 * std::max(1.0, p.rate0)) {
                throw DomainError("rate curve must stay non-negative");
            }
            cum_[i + 1] = cum_[i] + len * (p.rate0 + 0.5 * p.slope * len);
        } else if (p.slope != 0.0 || p.rate0 < 0.0) {
            throw DomainError("final rate-curve piece must be constant and non-negative");
        }
    }
}

std::size_t RateCurve::locate(double t) const {
    if (t <= pieces_.front().start) return 0;
    std::size_t lo = 0;
    std::size_t hi = pieces_.size();
    while (hi - lo > 1) {
        const std::size_t mid = (lo + hi) / 2;
        if (pieces_[mid].start <= t) lo = mid;
        else hi = mid;
    }
    return lo;
}

double RateCurve::rate(double t) const {
    const Piece& p = pieces_[locate(t)];
    return std::max(0.0, p.rate0 + p.slope * std::max(0.0, t - p.start));
}

double RateCurve::slope(double t) const { return pieces_[locate(t)].slope; }

double RateCurve::cumulative(double t) const {
    const std::size_t i = locate(t);
    const Piece& p = pieces_[i];
    const double x = std::max(0.0, t - p.start);
    return cum_[i] + x * (p.rate0 + 0.5 * p.slope * x);
}

double RateCurve::total() const {
    const Piece& last = pieces_.back();
    if (last.rate0 > 0.0) return std::numeric_limits<double>::infinity();
    return cum_.back();
}

double RateCurve::inverse(double n) const {
    if (n <= cum_.front()) return pieces_.front().start;
    // First piece whose end count reaches n.
    std::size_t lo = 0;
    std::size_t hi = cum_.size();
    while (hi - lo > 1) {
        const std::size_t mid = (lo + hi) / 2;
        if (cum_[mid] < n) lo = mid;
        else hi = mid;
    }
    const Piece& p = pieces_[lo];
    const double gap = n - cum_[lo];
    if (lo + 1 == pieces_.size() && p.rate0 == 0.0) return p.start;
    double x;
    if (p.slope == 0.0) {
        if (p.rate0 == 0.0) return p.start;
        x = gap / p.rate0;
    } else {
        const double disc = std::max(0.0, p.rate0 * p.rate0 + 2.0 * p.slope * gap);
        x = 2.0 * gap / (p.rate0 + std::sqrt(disc));
    }
    if (lo + 1 < pieces_.size()) x = std::min(x, pieces_[lo + 1].start - p.start);
    return p.start + std::max(0.0, x);
}

double RateCurve::next_break(double t) const {
    const auto it = std::upper_bound(pieces_.begin(), pieces_.end(), t,
                                     [](double value, const Piece& p) { return value < p.start; });
    return it == pieces_.end() ? std::numeric_limits<double>::infinity() : it->start;
}

RateCurve RateCurve::splice(const RateCurve& history, double from, double split, const RateCurve& future) {
    if (!(split >= from)) throw DomainError("splice window must be ordered");
    std::vector<Piece> out;
    const double cum_from = history.cumulative(from);
    if (split > from) {
        for (std::size_t i = history.locate(from); i < history.pieces_.size(); ++i) {
            const Piece& p = history.pieces_[i];
            if (p.start >= split) break;
            const double s = std::max(p.start, from);
            out.push_back({s, p.rate0 + p.slope * (s - p.start), p.slope});
        }
    }
    // Future counts continue from the history's count at the split.
    for (std::size_t i = future.locate(split); i < future.pieces_.size(); ++i) {
        const Piece& p = future.pieces_[i];
        const double s = std::max(p.start, split);
        if (!out.empty() && s <= out.back().start) continue;
        out.push_back({s, p.rate0 + p.slope * (s - p.start), p.slope});
    }
    return RateCurve(std::move(out), cum_from);
}

RateCurve base_curve(const DemandProfile& profile) {
    std::vector<RateCurve::Piece> pieces;
    const auto& t = profile.knot_times();
    const auto& r = profile.knot_rates();
    for (std::size_t i = 0; i + 1 < t.size() && t[i] < profile.cutoff(); ++i) {
        pieces.push_back({t[i], r[i], (r[i + 1] - r[i]) / (t[i + 1] - t[i])});
    }
    if (t.back() < profile.cutoff()) pieces.push_back({t.back(), r.back(), 0.0});
    pieces.push_back({profile.cutoff(), 0.0, 0.0});
    return RateCurve(std::move(pieces));
}

std::vector<double> realize_noise(const DemandProfile& profile) {
    const NoiseModel& m = profile.noise;
    if (m.kind == NoiseKind::None || m.sigma_rel == 0.0) return {};
    if (!(m.cell > 0.0)) throw ConfigError("noise cell must be positive");
    if (!(m.sigma_rel >= 0.0)) throw ConfigError("noise sigma must be >= 0");
    if (m.kind == NoiseKind::Ar1 && !(std::abs(m.rho) < 1.0)) throw ConfigError("AR(1) coefficient must satisfy |rho| < 1");
    const auto cells = static_cast<std::size_t>(std::ceil(profile.cutoff() / m.cell - 1e-9));
    std::vector<double> eps(cells);
    std::mt19937_64 rng(profile.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const double innovation = std::sqrt(1.0 - m.rho * m.rho);
    double state = 0.0;
    for (std::size_t i = 0; i < cells; ++i) {
        const double z = gauss(rng);
        double e = z;
        if (m.kind == NoiseKind::Ar1) {
            state = i == 0 ? z : m.rho * state + innovation * z;
            e = state;
        }
        const double a = static_cast<double>(i) * m.cell;
        const double b = std::min(a + m.cell, profile.cutoff());
        const double level = profile.base_rate(0.5 * (a + b));
        const double floor = std::min(profile.base_rate(a), profile.base_rate(std::nextafter(b, a)));
        eps[i] = std::max(m.sigma_rel * level * e, -floor);
    }
    return eps;
}

RateCurve realize_arrivals(const DemandProfile& profile) {
    const std::vector<double> eps = realize_noise(profile);
    if (eps.empty()) return base_curve(profile);
    const double cell = profile.noise.cell;
    std::vector<double> cuts;
    cuts.reserve(eps.size() + profile.knot_times().size() + 1);
    for (std::size_t i = 0; i < eps.size(); ++i) cuts.push_back(static_cast<double>(i) * cell);
    for (double k : profile.knot_times()) {
        if (k < profile.cutoff()) cuts.push_back(k);
    }
    std::sort(cuts.begin(), cuts.end());
    cuts.erase(std::unique(cuts.begin(), cuts.end(),
                           [](double a, double b) { return std::abs(a - b) < 1e-12; }),
               cuts.end());
    std::vector<RateCurve::Piece> pieces;
    pieces.reserve(cuts.size() + 1);
    for (double s : cuts) {
        const auto idx = std::min(eps.size() - 1, static_cast<std::size_t>(std::floor(s / cell + 1e-9)));
        pieces.push_back({s, std::max(0.0, profile.base_rate(s) + eps[idx]), profile.base_slope(s)});
    }
    pieces.push_back({profile.cutoff(), 0.0, 0.0});
    return RateCurve(std::move(pieces));
}

double arrival_rate(const DemandProfile& profile, double t) {
    const double base = profile.base_rate(t);
    if (profile.noise.kind == NoiseKind::None || t < 0.0 || t >= profile.cutoff()) return base;
    const std::vector<double> eps = realize_noise(profile);
    const auto idx = std::min(eps.size() - 1, static_cast<std::size_t>(std::floor(t / profile.noise.cell)));
    return std::max(0.0, base + eps[idx]);
}

}  // namespace bavsl
