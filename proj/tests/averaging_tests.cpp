#include <catch2/catch.hpp>
#include <cmath>

#include "oracles.hpp"
#include "pwsavg/averaging.hpp"
#include "test_support.hpp"

using namespace pwsavg;
using testsup::thrown_code;
using testsup::vec;

namespace {

PiecewiseSystem dry(double a = 0.3, double b = 0.1) {
    return make_builtin("dry_friction", {{"a", a}, {"b", b}});
}

PiecewiseSystem dual_symmetric(double phi) {
    return make_builtin("dual_dry_friction",
                        {{"a1", 0.2}, {"b1", 0.2}, {"a2", 0.2}, {"b2", 0.2}, {"phi", phi}});
}

}  // namespace

TEST_CASE("averaged function matches the occupation-measure closed form") {
    auto sys = dry();
    for (int k = -9; k <= 9; ++k) {
        double xi = 0.1 * k;
        double expected = oracle::averaged_friction(xi, 0.3, 0.1);
        CHECK(averaged_function(sys, vec({xi}))[0] == Approx(expected).margin(1e-8));
    }
    // the frozen spot value: pi*(b-a) at xi = 0
    CHECK(averaged_function(sys, vec({0.0}))[0] == Approx(-0.6283185307).margin(1e-8));
    // symmetric friction averages to zero at xi = 0
    CHECK(averaged_function(dry(0.25, 0.25), vec({0.0}))[0] == Approx(0.0).margin(1e-10));
    // no crossings outside |xi| < 1: constant branch all period
    CHECK(averaged_function(sys, vec({1.5}))[0] ==
          Approx(-0.3 * oracle::kTwoPi).margin(1e-9));
}

TEST_CASE("splitting at the crossing times is consistent with a blunt pass") {
    auto sys = dry();
    Vec xi = vec({0.4});
    double split = averaged_function(sys, xi)[0];
    double unsplit = averaged_function(sys, xi, {}, /*split_at_events=*/false)[0];
    CHECK(std::abs(split - unsplit) <= 1e-6);

    IntegratorOptions tight;
    tight.rel_tol /= 2.0;
    tight.abs_tol /= 2.0;
    double split_tight = averaged_function(sys, xi, tight)[0];
    CHECK(std::abs(split - split_tight) <= 1e-10);
}

TEST_CASE("averaged Jacobian matches the closed-form slope") {
    auto sys = dry();
    CHECK(averaged_jacobian(sys, vec({0.0}))(0, 0) == Approx(-0.8).margin(1e-7));
    double xi0 = oracle::averaged_friction_zero(0.3, 0.1);
    CHECK(averaged_jacobian(sys, vec({xi0}))(0, 0) ==
          Approx(oracle::averaged_friction_slope(xi0, 0.3, 0.1)).margin(1e-6));

    // FD step robustness
    double j5 = averaged_jacobian(sys, vec({-0.3}), 1e-5)(0, 0);
    double j6 = averaged_jacobian(sys, vec({-0.3}), 1e-6)(0, 0);
    CHECK(std::abs(j5 - j6) / std::abs(j5) <= 1e-4);

    // decoupled components: vanishing off-diagonal entries
    auto dual = dual_symmetric(oracle::kPi / 3.0);
    Mat J = averaged_jacobian(dual, vec({0.3, 0.9}));
    CHECK(std::abs(J(0, 1)) <= 1e-7);
    CHECK(std::abs(J(1, 0)) <= 1e-7);
}

TEST_CASE("newton finds the averaged zero") {
    auto sys = dry();
    NewtonResult nr = find_zero(sys, vec({-0.5}));
    CHECK(nr.zero[0] == Approx(oracle::averaged_friction_zero(0.3, 0.1)).margin(1e-9));
    CHECK(nr.residual <= 1e-10);

    NewtonResult sym = find_zero(dry(0.2, 0.2), vec({0.1}));
    CHECK(sym.zero[0] == Approx(0.0).margin(1e-9));

    auto dual = dual_symmetric(oracle::kPi / 3.0);
    NewtonResult dz = find_zero(dual, vec({0.1, 0.8}));
    CHECK(dz.zero[0] == Approx(0.0).margin(1e-8));
    CHECK(dz.zero[1] == Approx(std::sin(oracle::kPi / 3.0)).margin(1e-8));
}

TEST_CASE("newton residuals contract quadratically") {
    auto sys = dry();
    NewtonResult nr = find_zero(sys, vec({-0.5}));
    REQUIRE(nr.residual_history.size() >= 3);
    for (size_t k = 0; k + 1 < nr.residual_history.size(); ++k) {
        double rk = nr.residual_history[k];
        double rk1 = nr.residual_history[k + 1];
        if (rk < 1e-5 || rk1 < 1e-12) continue;  // noise floor
        CHECK(rk1 <= 5.0 * rk * rk);
    }
}

TEST_CASE("zero placement follows the friction asymmetry") {
    for (auto [a, b] : {std::pair{0.3, 0.1}, {0.1, 0.3}, {0.35, 0.15}, {0.2, 0.2}}) {
        NewtonResult nr = find_zero(dry(a, b), vec({b >= a ? 0.3 : -0.3}));
        double xi0 = nr.zero[0];
        if (a == b)
            CHECK(std::abs(xi0) <= 1e-9);
        else
            CHECK(xi0 * (b - a) > 0.0);
        CHECK(xi0 == Approx(oracle::averaged_friction_zero(a, b)).margin(1e-9));
    }
}

TEST_CASE("classification follows the spectrum sign") {
    Mat stable(1, 1), unstable(1, 1);
    stable(0, 0) = -1.1314;
    unstable(0, 0) = 1.1314;
    CHECK(classify(stable) == StabilityVerdict::AsymptoticallyStable);
    CHECK(classify(unstable) == StabilityVerdict::Unstable);
    Mat mixed = Mat::Zero(2, 2);
    mixed(0, 0) = -0.5;
    CHECK(classify(mixed, 1e-6) == StabilityVerdict::Inconclusive);
}

TEST_CASE("reported eigenvalues satisfy the characteristic equation") {
    auto dual = make_builtin("dual_dry_friction", {{"a1", 0.3},
                                                   {"b1", 0.1},
                                                   {"a2", 0.2},
                                                   {"b2", 0.2},
                                                   {"phi", 0.7}});
    Mat J = averaged_jacobian(dual, vec({-0.4, 0.2}));
    for (const auto& lambda : eigenvalues(J)) {
        Eigen::MatrixXcd shifted = J.cast<std::complex<double>>();
        shifted -= lambda * Eigen::MatrixXcd::Identity(2, 2);
        CHECK(std::abs(shifted.determinant()) <= 1e-8);
    }
}

TEST_CASE("averaged report combines zero, spectrum and verdict") {
    AveragedReport rep = averaged_report(dry(), vec({-0.5}));
    CHECK(rep.verdict == StabilityVerdict::AsymptoticallyStable);
    CHECK(rep.eigs.size() == 1);
    CHECK(rep.eigs[0].real() < -1.0);

    AveragedReport anti =
        averaged_report(make_builtin("anti_dry_friction", {{"a", 0.3}, {"b", 0.1}}), vec({-0.5}));
    CHECK(anti.xi0[0] == Approx(rep.xi0[0]).margin(1e-8));  // same zero, flipped slope
    CHECK(anti.verdict == StabilityVerdict::Unstable);
}
