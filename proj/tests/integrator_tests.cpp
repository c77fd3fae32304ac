#include <catch2/catch.hpp>
#include <cmath>
#include <random>

#include "oracles.hpp"
#include "pwsavg/integrator.hpp"
#include "test_support.hpp"

using namespace pwsavg;
using testsup::thrown_code;
using testsup::vec;

namespace {

RhsFn cosine_rhs() {
    return [](double t, const Vec&) {
        Vec d(1);
        d[0] = std::cos(t);
        return d;
    };
}

PiecewiseSystem dry(double a = 0.3, double b = 0.1) {
    return make_builtin("dry_friction", {{"a", a}, {"b", b}});
}

}  // namespace

TEST_CASE("smooth integration matches the closed form") {
    auto seg = integrate_smooth(cosine_rhs(), 0.0, vec({0.0}), oracle::kPi / 2.0);
    CHECK(seg.eval(oracle::kPi / 2.0)[0] == Approx(1.0).margin(1e-9));

    auto zero_span = integrate_smooth(cosine_rhs(), 1.0, vec({0.25}), 1.0);
    CHECK(zero_span.t_begin() == zero_span.t_end());
    CHECK(zero_span.eval(1.0)[0] == 0.25);
}

TEST_CASE("dense output is accurate along the whole span") {
    auto seg = integrate_smooth(cosine_rhs(), 0.0, vec({0.5}), oracle::kTwoPi);
    CHECK(seg.eval(7.0 * oracle::kPi / 6.0)[0] == Approx(0.0).margin(1e-9));
    double worst = 0.0;
    for (int k = 0; k <= 2000; ++k) {
        double t = oracle::kTwoPi * k / 2000.0;
        worst = std::max(worst, std::abs(seg.eval(t)[0] - oracle::unperturbed_flow(0.5, t)));
    }
    CHECK(worst <= 2e-12);
    // the interpolant derivative tracks the rhs
    double worst_d = 0.0;
    for (int k = 1; k < 500; ++k) {
        double t = oracle::kTwoPi * k / 500.0;
        worst_d = std::max(worst_d, std::abs(seg.derivative(t)[0] - std::cos(t)));
    }
    CHECK(worst_d <= 1e-9);
}

TEST_CASE("event location finds the crossing times") {
    auto seg = integrate_smooth(cosine_rhs(), 0.0, vec({0.5}), oracle::kTwoPi);
    auto first = locate_event(seg, 0, 1e-12);
    REQUIRE(first.has_value());
    CHECK(*first == Approx(oracle::first_crossing(0.5)).margin(1e-10));
    auto second = locate_event(seg, 0, 1e-12, 1e-6, *first + 0.1);
    REQUIRE(second.has_value());
    CHECK(*second == Approx(oracle::second_crossing(0.5)).margin(1e-10));
    // refinement leaves a residual below the tolerance
    CHECK(std::abs(seg.eval(*first)[0]) <= 1e-12);

    auto flat = integrate_smooth(cosine_rhs(), 0.0, vec({1.5}), oracle::kTwoPi);
    CHECK_FALSE(locate_event(flat, 0, 1e-12).has_value());
}

TEST_CASE("piecewise run at eps = 0 reproduces the unperturbed flow") {
    auto sys = dry();
    Trajectory traj = integrate_piecewise(sys, vec({0.5}), 0.0, oracle::kTwoPi);
    REQUIRE(traj.events.size() == 2);
    CHECK(traj.events[0].time == Approx(oracle::first_crossing(0.5)).margin(1e-10));
    CHECK(traj.events[1].time == Approx(oracle::second_crossing(0.5)).margin(1e-10));
    CHECK(traj.events[0].sign_before == 1);
    CHECK(traj.events[0].sign_after == -1);
    CHECK(traj.events[1].sign_after == 1);
    for (const auto& ev : traj.events)
        CHECK(ev.margin == Approx(oracle::crossing_margin(0.5)).margin(1e-8));
    CHECK(traj.eval(oracle::kTwoPi)[0] == Approx(0.5).margin(1e-9));

    // the run agrees with the smooth unperturbed solve at 50 sample times
    for (int k = 0; k <= 50; ++k) {
        double t = oracle::kTwoPi * k / 50.0;
        CHECK(traj.eval(t)[0] == Approx(oracle::unperturbed_flow(0.5, t)).margin(1e-9));
    }
}

TEST_CASE("junction gluing is continuous") {
    auto sys = dry();
    Trajectory traj = integrate_piecewise(sys, vec({0.5}), 0.01, oracle::kTwoPi);
    REQUIRE(traj.events.size() == 2);
    double worst = 0.0;
    for (size_t k = 0; k + 1 < traj.segments.size(); ++k) {
        double tj = traj.segments[k].t_end();
        worst = std::max(worst,
                         (traj.segments[k].eval(tj) - traj.segments[k + 1].eval(tj)).norm());
    }
    CHECK(worst <= 1e-10);
    // every reported event is a refined root of the incoming interpolant
    for (size_t k = 0; k < traj.events.size(); ++k)
        CHECK(std::abs(traj.segments[k].eval(traj.events[k].time)[traj.events[k].component]) <=
              1e-12);
    // on each open segment the switching component keeps its signature's sign
    for (const auto& seg : traj.segments) {
        int s = seg.signature.signs[0];
        for (int k = 1; k < 40; ++k) {
            double t = seg.t_begin() + (seg.t_end() - seg.t_begin()) * k / 40.0;
            CHECK(s * seg.eval(t)[0] >= 0.0);
        }
    }
}

TEST_CASE("degenerate horizons and boundary starts") {
    auto sys = dry();
    Trajectory point = integrate_piecewise(sys, vec({0.5}), 0.01, 0.0);
    CHECK(point.events.empty());
    CHECK(point.eval(0.0)[0] == 0.5);

    CHECK(thrown_code([&] { integrate_piecewise(sys, vec({0.0}), 0.01, oracle::kTwoPi); }) ==
          Errc::boundary_crossing);
}

TEST_CASE("sticking is detected and rejected") {
    auto sys = dry(1.0, 1.0);
    CHECK(thrown_code([&] { integrate_piecewise(sys, vec({0.5}), 1.5, oracle::kTwoPi); }) ==
          Errc::sticking_detected);
}

TEST_CASE("grazing contact is rejected as tangential") {
    auto sys = dry();
    CHECK(thrown_code([&] {
              integrate_piecewise(sys, vec({1.0 - 1e-14}), 0.0, oracle::kTwoPi);
          }) == Errc::tangential_contact);
}

TEST_CASE("event cap aborts runaway crossing sequences") {
    auto sys = dry();
    IntegratorOptions opts;
    opts.max_events = 3;
    CHECK(thrown_code([&] {
              integrate_piecewise(sys, vec({0.5}), 0.0, 4.0 * oracle::kTwoPi, opts);
          }) == Errc::max_events_exceeded);
}

TEST_CASE("simultaneous crossings of two components are one junction") {
    auto sys = make_builtin("dual_dry_friction",
                            {{"a1", 0.2}, {"b1", 0.2}, {"a2", 0.2}, {"b2", 0.2}, {"phi", 0.0}});
    Trajectory traj = integrate_piecewise(sys, vec({0.5, 0.5}), 0.0, oracle::kTwoPi);
    REQUIRE(traj.events.size() == 4);  // both components cross twice, together
    CHECK(std::abs(traj.events[0].time - traj.events[1].time) <= 1e-11);
    CHECK(traj.events[0].component != traj.events[1].component);
    CHECK(traj.segments.size() == 3);
}

TEST_CASE("unperturbed flow helpers match the closed forms") {
    auto sys = dry();
    CHECK(generating_flow(sys, vec({0.2}), oracle::kPi / 2.0)[0] == Approx(1.2).margin(1e-9));
    CHECK(generating_flow(sys, vec({0.2}), 0.0)[0] == 0.2);
    CHECK(generating_flow(sys, vec({0.2}), oracle::kTwoPi)[0] == Approx(0.2).margin(1e-9));

    CHECK(inverse_generating_flow(sys, vec({1.2}), oracle::kPi / 2.0)[0] ==
          Approx(0.2).margin(1e-9));
    CHECK(inverse_generating_flow(sys, vec({1.2}), 0.0)[0] == 1.2);

    std::mt19937 rng(11);
    std::uniform_real_distribution<double> xd(-2.0, 2.0), td(0.0, oracle::kTwoPi);
    for (int i = 0; i < 100; ++i) {
        Vec xi = vec({xd(rng)});
        double t = td(rng);
        Vec rt = inverse_generating_flow(sys, generating_flow(sys, xi, t), t);
        CHECK((rt - xi).norm() <= 1e-9);
    }
}

TEST_CASE("fundamental matrix solves the variational equation") {
    auto sys = dry();
    CHECK(fundamental_matrix(sys, vec({0.3}), 1.7)(0, 0) == Approx(1.0).margin(1e-12));
    CHECK(fundamental_matrix(sys, vec({0.3}), 0.0)(0, 0) == 1.0);

    auto decay = testsup::make_periodic_decay_system();
    double t = 2.1;
    double expected = std::exp(0.3 * (std::cos(t) - 1.0));
    Mat M = fundamental_matrix(decay, vec({0.7}), t);
    CHECK(M(0, 0) == Approx(expected).margin(1e-9));

    // cross-check against finite differences of the flow itself
    double delta = 1e-5;
    double fd = (generating_flow(decay, vec({0.7 + delta}), t)[0] -
                 generating_flow(decay, vec({0.7 - delta}), t)[0]) /
                (2.0 * delta);
    CHECK(std::abs(M(0, 0) - fd) <= 1e-6);
}

TEST_CASE("two step-size seeds land on the same state") {
    auto sys = dry();
    IntegratorOptions a, b;
    a.initial_step = 1e-3;
    b.initial_step = 1e-2;
    Vec xa = integrate_piecewise(sys, vec({0.5}), 0.01, oracle::kTwoPi, a).eval(oracle::kTwoPi);
    Vec xb = integrate_piecewise(sys, vec({0.5}), 0.01, oracle::kTwoPi, b).eval(oracle::kTwoPi);
    CHECK((xa - xb).norm() <= 10.0 * a.abs_tol);
}

TEST_CASE("fixed-step convergence order matches the scheme") {
    // span deliberately not a whole period: over a full period the leading
    // error term of a periodic integrand telescopes away
    const double span = 3.0;
    std::vector<double> hs = {0.3, 0.21, 0.15, 0.105, 0.075};
    std::vector<double> errs;
    for (double h : hs) {
        IntegratorOptions opts;
        opts.fixed_step = h;
        auto seg = integrate_smooth(cosine_rhs(), 0.0, vec({0.5}), span, opts);
        errs.push_back(std::abs(seg.eval(span)[0] - oracle::unperturbed_flow(0.5, span)) + 1e-18);
    }
    double slope = oracle::loglog_slope(hs, errs);
    CHECK(slope == Approx(5.0).margin(0.5));
}

TEST_CASE("step size underflow surfaces as an error") {
    // a finite-time blow-up forces the controller below the floor
    RhsFn blowup = [](double, const Vec& x) {
        Vec d(1);
        d[0] = x[0] * x[0];
        return d;
    };
    CHECK(thrown_code([&] { integrate_smooth(blowup, 0.0, vec({1.0}), 2.0); }) ==
          Errc::step_size_underflow);
}

TEST_CASE("tightening tolerances tightens the end state") {
    auto sys = dry();
    std::vector<double> errs;
    for (double tol : {1e-6, 1e-8, 1e-10}) {
        IntegratorOptions opts;
        opts.rel_tol = tol;
        opts.abs_tol = tol * 1e-2;
        opts.max_step = 0.5;  // let the controller choose
        double got = generating_flow(sys, vec({0.3}), 2.5, opts)[0];
        errs.push_back(std::abs(got - oracle::unperturbed_flow(0.3, 2.5)));
    }
    CHECK(errs[0] > errs[2]);
    CHECK(errs[2] <= 1e-9);
}
