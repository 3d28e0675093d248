#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "bavsl/errors.hpp"
#include "bavsl/kinematics.hpp"

using namespace bavsl;

namespace {
const TriangularFD kRef = TriangularFD::from_capacity(120.0, 24.0, 8400.0);
const AccelerationLaw kLaw = AccelerationLaw::constant(9000.0);
}  // namespace

TEST_CASE("release speed") {
    CHECK(release_speed(kRef, kRef.k_crit()) == doctest::Approx(0.0).scale(1.0));
    CHECK(release_speed(kRef, 300.0) == doctest::Approx(8400.0 / 300.0 - 2880.0 / 300.0));
    CHECK(release_speed(kRef, 300.0) == doctest::Approx(18.4));
    CHECK(release_speed(kRef, 420.0) == doctest::Approx(20.0));
    CHECK_THROWS_AS(release_speed(kRef, 0.0), DomainError);
}

TEST_CASE("speed at distance") {
    CHECK(speed_at_distance(50.0, kLaw, 0.0) == 50.0);
    CHECK(speed_at_distance(0.0, kLaw, 0.3) == doctest::Approx(std::sqrt(2 * 9000.0 * 0.3)));
    CHECK(speed_at_distance(50.0, kLaw, 0.4) == doctest::Approx(std::sqrt(2500.0 + 7200.0)));
    CHECK(speed_at_distance(50.0, kLaw, 0.4) == doctest::Approx(98.49).epsilon(1e-4));
    CHECK_THROWS_AS(speed_at_distance(50.0, kLaw, -0.1), DomainError);
}

TEST_CASE("speed at distance under a varying law integrates v dv = A dx") {
    const AccelerationLaw affine = AccelerationLaw::affine(12000.0, 40.0, 130.0);
    // Reference: solve v dv/dx = a - b v by bisection on the implicit solution
    // x(v) = [-(v - v_c)/b - (a/b^2) ln((a - b v)/(a - b v_c))].
    const double a = 12000.0, b = 40.0, vc = 30.0, d = 0.35;
    auto x_of = [&](double v) { return -(v - vc) / b - (a / (b * b)) * std::log((a - b * v) / (a - b * vc)); };
    double lo = vc, hi = 130.0;
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        (x_of(mid) < d ? lo : hi) = mid;
    }
    CHECK(speed_at_distance(vc, affine, d) == doctest::Approx(lo).epsilon(1e-6));
}

TEST_CASE("acceleration distance") {
    CHECK(accel_distance(70.0, 70.0, kLaw) == 0.0);
    CHECK(accel_distance(50.0, 85.0, kLaw) == doctest::Approx((7225.0 - 2500.0) / 18000.0));
    CHECK(accel_distance(50.0, 85.0, kLaw) == doctest::Approx(0.2625));
    CHECK(accel_distance(85.0, 120.0, kLaw) == doctest::Approx(0.3986).epsilon(1e-4));
    CHECK_THROWS_AS(accel_distance(90.0, 80.0, kLaw), DomainError);
}

TEST_CASE("detector flow") {
    ReleaseBoundary b{1.0, 0.0, 18.4, 50.0, 8400.0, 120.0};
    CHECK(detector_flow(b, kLaw, 1.0) == doctest::Approx(8400.0 / (1.0 + 18.4 / 50.0)));
    const double t_plus = acceleration_end_time(b, kLaw);
    CHECK(t_plus == doctest::Approx(1.0 + accel_distance(50.0, 120.0, kLaw) / 18.4));
    CHECK(detector_flow(b, kLaw, t_plus + 0.1) == doctest::Approx(8400.0 / (1.0 + 18.4 / 120.0)));
    // Continuity at the end of the episode and monotone rise before it.
    CHECK(detector_flow(b, kLaw, t_plus - 1e-12) == doctest::Approx(detector_flow(b, kLaw, t_plus)).epsilon(1e-9));
    double prev = 0.0;
    for (double t = 1.0; t < t_plus; t += (t_plus - 1.0) / 200.0) {
        const double q = detector_flow(b, kLaw, t);
        CHECK(q >= prev);
        prev = q;
    }
    CHECK_THROWS_AS(detector_flow(b, kLaw, 0.5), DomainError);
    ReleaseBoundary flat = b;
    flat.r = 0.0;
    CHECK(detector_flow(flat, kLaw, 1.0) == 8400.0);
    CHECK(detector_flow(flat, kLaw, 3.0) == 8400.0);
}

TEST_CASE("detector samples lie on the chord") {
    ReleaseBoundary b{0.0, 0.0, 18.4, 50.0, 8400.0, 120.0};
    const Chord c = qk_chord(b.q_up, b.r);
    const double t_plus = acceleration_end_time(b, kLaw);
    for (int i = 0; i <= 50; ++i) {
        const double t = t_plus * i / 50.0;
        const double u = std::min(120.0, std::sqrt(50.0 * 50.0 + 2 * 9000.0 * 18.4 * t));
        const double q = detector_flow(b, kLaw, t);
        const double k = q / u;
        CHECK(std::abs(c.at(k) - q) <= 1e-9 * q);
    }
}

TEST_CASE("detector flow integrates to the released count") {
    // Vehicles crossing the moving boundary (rate q_up in its frame) either passed
    // the detector or are stored between the two: an equilibrium stretch at the
    // target speed plus the acceleration zone, where k = q_up / (u + r).
    ReleaseBoundary b{0.0, 0.0, 18.4, 50.0, 8400.0, 120.0};
    const double T = 2.0;
    const int n = 200000;
    double passed = 0.0;
    for (int i = 0; i < n; ++i) {
        const double t0 = T * i / n, t1 = T * (i + 1) / n;
        passed += 0.5 * (detector_flow(b, kLaw, t0) + detector_flow(b, kLaw, t1)) * (t1 - t0);
    }
    const double d_e = accel_distance(b.v_c, b.V_e, kLaw);
    const double k_end = b.q_up / (b.V_e + b.r);
    double zone = 0.0;
    for (int i = 0; i < n; ++i) {
        const double s0 = d_e * i / n, s1 = d_e * (i + 1) / n;
        const auto k = [&](double s) { return b.q_up / (std::sqrt(b.v_c * b.v_c + 2 * 9000.0 * s) + b.r); };
        zone += 0.5 * (k(s0) + k(s1)) * (s1 - s0);
    }
    const double stored = k_end * (b.r * T - d_e) + zone;
    CHECK(passed == doctest::Approx(b.q_up * T - stored).epsilon(1e-3));
}

TEST_CASE("chord") {
    const Chord flat = qk_chord(5000.0, 0.0);
    CHECK(flat.at(10.0) == 5000.0);
    CHECK(flat.at(200.0) == 5000.0);
    const double r = 18.4, q_up = 8400.0, V = 120.0;
    const double q0 = q_up / (1.0 + r / V);
    CHECK(qk_chord(q_up, r).at(q0 / V) == doctest::Approx(q0).epsilon(1e-12));
    CHECK(qk_chord(q_up, r).at(300.0) == doctest::Approx(2880.0));
    CHECK(2880.0 + 18.4 * 300.0 == doctest::Approx(8400.0));
}

TEST_CASE("leader follower oracle") {
    std::vector<double> times;
    for (int i = 0; i <= 40; ++i) times.push_back(0.01 + 0.0025 * i);
    const auto flat = leader_follower_oracle([](double) { return 80.0; }, 15.0, 1e-3, times);
    for (const auto& s : flat) {
        CHECK(s.k == doctest::Approx(flat.front().k).epsilon(1e-12));
        CHECK(s.q == doctest::Approx(flat.front().q).epsilon(1e-12));
    }
    CHECK_THROWS_AS(leader_follower_oracle([](double) { return 80.0; }, 15.0, 0.0, times), DomainError);
    const double c = 15.0;
    auto accel = [](double t) { return 40.0 + 9000.0 * t; };
    double prev_err = 1e9;
    for (double tau : {1e-3, 1e-4, 1e-5}) {
        const double err = std::abs(chord_slope(leader_follower_oracle(accel, c, tau, times)) + c);
        CHECK(err < prev_err);
        prev_err = err;
    }
    CHECK(prev_err < 1e-2 * c);
}

TEST_CASE("travel time with finite acceleration") {
    CHECK(travel_time_with_accel(120.0, 120.0, kLaw, 10.0) == doctest::Approx(1.0 / 12.0));
    const double expect = 70.0 / 9000.0 + (10.0 - 11900.0 / 18000.0) / 120.0;
    CHECK(travel_time_with_accel(50.0, 120.0, kLaw, 10.0) == doctest::Approx(expect));
    CHECK(travel_time_with_accel(50.0, 120.0, kLaw, 10.0) == doctest::Approx(0.0857).epsilon(1e-3));
    // From near rest the formula tends to v/A + L/v - v/(2A).
    CHECK(travel_time_with_accel(1e-9, 100.0, kLaw, 10.0) ==
          doctest::Approx(100.0 / 9000.0 + 10.0 / 100.0 - 100.0 / 18000.0).epsilon(1e-9));
    CHECK_THROWS_AS(travel_time_with_accel(50.0, 120.0, kLaw, 0.0), DomainError);
    CHECK_THROWS_AS(travel_time_with_accel(0.0, 0.0, kLaw, 10.0), DomainError);
    // Continuity in v at v = u0.
    CHECK(travel_time_with_accel(80.0, 80.0 + 1e-9, kLaw, 10.0) ==
          doctest::Approx(travel_time_with_accel(80.0, 80.0, kLaw, 10.0)).epsilon(1e-9));
    // Unreachable target: full acceleration over the whole length.
    const double top = std::sqrt(10.0 * 10.0 + 2 * 9000.0 * 0.2);
    CHECK(travel_time_with_accel(10.0, 120.0, kLaw, 0.2) == doctest::Approx((top - 10.0) / 9000.0));
}

TEST_CASE("travel time agrees with integrated kinematics") {
    // March the vehicle in time: accelerate at A_0 until the limit, then cruise.
    const double u0 = 50.0, v = 120.0, L = 10.0, dt = 1e-7;
    double x = 0.0, s = u0, t = 0.0;
    while (x < L) {
        const double a = s < v ? 9000.0 : 0.0;
        const double s_next = std::min(v, s + a * dt);
        x += 0.5 * (s + s_next) * dt;
        s = s_next;
        t += dt;
    }
    CHECK(travel_time_with_accel(u0, v, kLaw, L) == doctest::Approx(t).epsilon(1e-5));
}

TEST_CASE("travel time partials match central differences") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> vd(40.0, 120.0);
    for (int i = 0; i < 100; ++i) {
        const double v = vd(rng), u = std::uniform_real_distribution<double>(20.0, v)(rng);
        const auto p = travel_time_partials(u, v, 9000.0, 10.0);
        const double h = 1e-5;
        const double dv = (travel_time_partials(u, v + h, 9000.0, 10.0).tau - travel_time_partials(u, v - h, 9000.0, 10.0).tau) / (2 * h);
        const double du = (travel_time_partials(u + h, v, 9000.0, 10.0).tau - travel_time_partials(u - h, v, 9000.0, 10.0).tau) / (2 * h);
        CHECK(p.d_v == doctest::Approx(dv).epsilon(1e-5).scale(1e-6));
        CHECK(p.d_u == doctest::Approx(du).epsilon(1e-5).scale(1e-6));
    }
}

TEST_CASE("gradient cap") {
    CHECK(bln_gradient_cap(90.0, 90.0, kLaw, 10.0) == doctest::Approx(90.0 * 90.0 / 10.0));
    const double expect = 2 * 9000.0 * 14400.0 / (180000.0 - 11900.0);
    CHECK(bln_gradient_cap(120.0, 50.0, kLaw, 10.0) == doctest::Approx(expect));
    CHECK(bln_gradient_cap(120.0, 50.0, kLaw, 10.0) == doctest::Approx(1542.0).epsilon(1e-3));
    CHECK_THROWS_AS(bln_gradient_cap(120.0, 0.0, AccelerationLaw::constant(500.0), 10.0), ConstraintError);
    const auto p = bln_gradient_cap_partials(110.0, 70.0, 9000.0, 10.0);
    const double h = 1e-5;
    CHECK(p.d_v == doctest::Approx((bln_gradient_cap(110.0 + h, 70.0, kLaw, 10.0) -
                                    bln_gradient_cap(110.0 - h, 70.0, kLaw, 10.0)) / (2 * h)).epsilon(1e-6));
    CHECK(p.d_u == doctest::Approx((bln_gradient_cap(110.0, 70.0 + h, kLaw, 10.0) -
                                    bln_gradient_cap(110.0, 70.0 - h, kLaw, 10.0)) / (2 * h)).epsilon(1e-6));
}

TEST_CASE("cap dominates the exact bound with the traffic speed held") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> vd(40.0, 120.0);
    for (int i = 0; i < 1000; ++i) {
        const double v = vd(rng), u = std::uniform_real_distribution<double>(10.0, v)(rng);
        CHECK(bln_gradient_cap(v, u, kLaw, 10.0) >= bln_exact_bound(v, u, 0.0, kLaw, 10.0) - 1e-9);
    }
}
