#pragma once

#include <cmath>
#include <initializer_list>
#include <optional>

#include "pwsavg/integrator.hpp"
#include "pwsavg/model.hpp"

namespace testsup {

inline pwsavg::Vec vec(std::initializer_list<double> values) {
    pwsavg::Vec v(static_cast<Eigen::Index>(values.size()));
    Eigen::Index i = 0;
    for (double x : values) v[i++] = x;
    return v;
}

template <typename F>
std::optional<pwsavg::Errc> thrown_code(F&& f) {
    try {
        f();
    } catch (const pwsavg::Error& e) {
        return e.code();
    }
    return std::nullopt;
}

// xdot = -0.3 sin(t) x: every solution is 2*pi-periodic,
// x(t) = xi * exp(0.3 (cos t - 1)), so the flow derivative in xi is
// exp(0.3 (cos t - 1)). No analytic drift Jacobian on purpose (exercises the
// finite-difference fallback). No switching.
inline pwsavg::PiecewiseSystem make_periodic_decay_system() {
    pwsavg::PiecewiseSystem sys;
    sys.dimension = 1;
    sys.period = pwsavg::kTwoPi;
    sys.name = "periodic_decay";
    sys.drift = [](double t, const pwsavg::Vec& x) {
        pwsavg::Vec h(1);
        h[0] = 0.3 * std::sin(t) * x[0];
        return h;
    };
    sys.perturbation = [](double, const pwsavg::Vec&, double, const pwsavg::OrthantSignature&) {
        return pwsavg::Vec::Zero(1);
    };
    return sys;
}

inline double periodic_decay_flow(double xi, double t) {
    return xi * std::exp(0.3 * (std::cos(t) - 1.0));
}

// xdot = x: the unperturbed flow e^t xi is not periodic (checker must fail).
inline pwsavg::PiecewiseSystem make_nonperiodic_system() {
    pwsavg::PiecewiseSystem sys;
    sys.dimension = 1;
    sys.period = pwsavg::kTwoPi;
    sys.name = "nonperiodic";
    sys.drift = [](double, const pwsavg::Vec& x) { return pwsavg::Vec(-x); };
    sys.perturbation = [](double, const pwsavg::Vec&, double, const pwsavg::OrthantSignature&) {
        return pwsavg::Vec::Zero(1);
    };
    return sys;
}

}  // namespace testsup
