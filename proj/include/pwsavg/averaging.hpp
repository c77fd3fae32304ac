#pragma once

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <complex>
#include <vector>

#include "pwsavg/integrator.hpp"
#include "pwsavg/model.hpp"

namespace pwsavg {

enum class StabilityVerdict { AsymptoticallyStable, Unstable, Inconclusive };

inline const char* verdict_name(StabilityVerdict v) {
    switch (v) {
        case StabilityVerdict::AsymptoticallyStable: return "asymptotically_stable";
        case StabilityVerdict::Unstable:             return "unstable";
        case StabilityVerdict::Inconclusive:         return "inconclusive";
    }
    return "inconclusive";
}

/// Eigenvalues of a real matrix, sorted by (re, im) for reproducible output.
inline std::vector<std::complex<double>> eigenvalues(const Mat& m) {
    Eigen::EigenSolver<Mat> solver(m, /*computeEigenvectors=*/false);
    std::vector<std::complex<double>> out;
    out.reserve(static_cast<size_t>(m.rows()));
    for (Eigen::Index i = 0; i < m.rows(); ++i) out.push_back(solver.eigenvalues()[i]);
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
        return a.real() < b.real() || (a.real() == b.real() && a.imag() < b.imag());
    });
    return out;
}

struct AveragedReport {
    Vec xi0;
    double residual = 0.0;
    Mat jacobian;
    std::vector<std::complex<double>> eigs;
    StabilityVerdict verdict = StabilityVerdict::Inconclusive;
    int newton_iterations = 0;
};

namespace detail {

struct QuadraturePiece {
    double t_begin, t_end;
    OrthantSignature signature;
};

/// Split [0, T] at the crossing times of the unperturbed sweep from xi; each
/// piece carries the orthant the sweep occupies there.
inline std::vector<QuadraturePiece> quadrature_pieces(const PiecewiseSystem& sys, const Vec& xi,
                                                      const IntegratorOptions& opts) {
    IntegratorOptions o = opts;
    o.resolve_boundary_start = true;
    Trajectory traj = integrate_piecewise(sys, xi, 0.0, sys.period, o);
    std::vector<QuadraturePiece> pieces;
    pieces.reserve(traj.segments.size());
    for (const auto& seg : traj.segments) {
        if (seg.t_end() <= seg.t_begin()) continue;
        pieces.push_back({seg.t_begin(), seg.t_end(), seg.signature});
    }
    return pieces;
}

/// State layout for the averaging quadrature: [x (n); W (n*n); I (n)] with
/// xdot = -h, Wdot = -dh/dx * W, Idot = W^{-1} f_s(t, x, 0).
inline Vec averaging_rhs(const PiecewiseSystem& sys, double t, const Vec& z,
                         const OrthantSignature& sig, const IntegratorOptions& opts) {
    const int n = sys.dimension;
    Vec x = z.head(n);
    Eigen::Map<const Mat> W(z.data() + n, n, n);
    Mat J = drift_jacobian_or_fd(sys, t, x, opts.fd_step);
    Vec f = sys.perturbation(t, x, 0.0, sig);
    Vec dz(n + n * n + n);
    dz.head(n) = -sys.drift(t, x);
    Eigen::Map<Mat>(dz.data() + n, n, n) = -(J * Mat(W));
    dz.tail(n) = Mat(W).partialPivLu().solve(f);
    return dz;
}

}  // namespace detail

/// Classical averaged function: the period integral of the perturbation
/// pulled back along the unperturbed flow,
///   fbar(xi) = int_0^T M(tau)^{-1} f(tau, x(tau,xi,0), 0) dtau,
/// computed as an augmented ODE. With split_at_events the integral is taken
/// piece by piece between the unperturbed crossing times (the integrand has
/// jumps there); the unsplit variant drives the adaptive solver across the
/// jumps and is kept for cross-checks.
inline Vec averaged_function(const PiecewiseSystem& sys, const Vec& xi,
                             const IntegratorOptions& opts = {}, bool split_at_events = true) {
    const int n = sys.dimension;
    IntegratorOptions o = opts.endpoint_only();
    Vec z(n + n * n + n);
    z.head(n) = xi;
    Eigen::Map<Mat>(z.data() + n, n, n) = Mat::Identity(n, n);
    z.tail(n).setZero();

    if (split_at_events) {
        auto pieces = detail::quadrature_pieces(sys, xi, opts);
        for (const auto& piece : pieces) {
            RhsFn rhs = [&sys, &piece, &o](double t, const Vec& zz) {
                return detail::averaging_rhs(sys, t, zz, piece.signature, o);
            };
            detail::Dopri5Stepper stepper(rhs, piece.t_begin, z, piece.t_end, o);
            while (!stepper.done()) stepper.advance();
            z = stepper.x();
        }
    } else {
        RhsFn rhs = [&sys, &o](double t, const Vec& zz) {
            OrthantSignature sig = orthant_signature(zz.head(sys.dimension), o.dead_tol);
            for (int j : sys.switching_components) {
                auto& s = sig.signs[static_cast<size_t>(j)];
                if (s == 0) s = 1;  // measure-zero tie break inside the dead band
            }
            return detail::averaging_rhs(sys, t, zz, sig, o);
        };
        detail::Dopri5Stepper stepper(rhs, 0.0, z, sys.period, o);
        while (!stepper.done()) stepper.advance();
        z = stepper.x();
    }
    return z.tail(n);
}

/// The same period integral taken along a perturbed trajectory: the integrand
/// at tau uses the trajectory state x(tau), the pulled-back base point
/// u(tau) = flow^{-1}(x(tau), tau), and the fundamental matrix at u(tau).
/// Satisfies map(T, xi, eps) = xi + eps * (this integral).
inline Vec averaged_function_along(const PiecewiseSystem& sys, const Trajectory& traj,
                                   const IntegratorOptions& opts = {}) {
    const int n = sys.dimension;
    IntegratorOptions inner = opts.endpoint_only();
    IntegratorOptions quad = inner;
    // The integrand carries ~1e-11 evaluation noise from the inner solves;
    // looser quadrature control avoids stalling on it.
    quad.rel_tol = std::max(opts.rel_tol, 1e-9);
    quad.abs_tol = std::max(opts.abs_tol, 1e-11);
    double eps = traj.epsilon;

    Vec integral = Vec::Zero(n);
    for (const auto& seg : traj.segments) {
        if (seg.t_end() <= seg.t_begin()) continue;
        RhsFn rhs = [&](double t, const Vec&) {
            Vec x_eps = seg.eval(t);
            Vec u = inverse_generating_flow(sys, x_eps, t, inner);
            Mat W = fundamental_matrix(sys, u, t, inner);
            Vec f = sys.perturbation(t, x_eps, eps, seg.signature);
            return Vec(W.partialPivLu().solve(f));
        };
        detail::Dopri5Stepper stepper(rhs, seg.t_begin(), integral, seg.t_end(), quad);
        while (!stepper.done()) stepper.advance();
        integral = stepper.x();
    }
    return integral;
}

/// Central finite-difference Jacobian of the averaged function.
inline Mat averaged_jacobian(const PiecewiseSystem& sys, const Vec& xi, double fd_step = 1e-5,
                             const IntegratorOptions& opts = {}) {
    const int n = sys.dimension;
    Mat J(n, n);
    for (int j = 0; j < n; ++j) {
        Vec xp = xi, xm = xi;
        xp[j] += fd_step;
        xm[j] -= fd_step;
        J.col(j) = (averaged_function(sys, xp, opts) - averaged_function(sys, xm, opts)) /
                   (2.0 * fd_step);
    }
    return J;
}

struct NewtonResult {
    Vec zero;
    double residual = 0.0;
    int iterations = 0;
    std::vector<double> residual_history;
};

namespace detail {

/// Damped Newton iteration on fn with a finite-difference Jacobian supplied
/// by jac. Step halving (up to 20 times) on residual increase.
inline NewtonResult damped_newton(const std::function<Vec(const Vec&)>& fn,
                                  const std::function<Mat(const Vec&)>& jac, const Vec& guess,
                                  double tol, int max_iter) {
    Vec x = guess;
    Vec r = fn(x);
    double rn = r.norm();
    NewtonResult result;
    result.residual_history.push_back(rn);
    for (int it = 0; it < max_iter; ++it) {
        if (rn <= tol) {
            result.zero = x;
            result.residual = rn;
            result.iterations = it;
            return result;
        }
        Mat J = jac(x);
        double scale = std::max(1.0, std::pow(J.norm(), J.rows()));
        Eigen::PartialPivLU<Mat> lu(J);
        double det = std::abs(lu.determinant());
        if (det < 1e-12 * scale)
            throw Error(Errc::singular_jacobian,
                        "Jacobian determinant " + std::to_string(det) + " is numerically zero");
        Vec delta = lu.solve(-r);
        if (delta.norm() > 1e6 * (1.0 + x.norm()))
            throw Error(Errc::singular_jacobian, "unbounded Newton step");
        double alpha = 1.0;
        bool improved = false;
        for (int halving = 0; halving < 20; ++halving) {
            Vec x_trial = x + alpha * delta;
            double rn_trial;
            Vec r_trial;
            try {
                r_trial = fn(x_trial);
                rn_trial = r_trial.norm();
            } catch (const Error&) {
                alpha *= 0.5;  // trial left the admissible region
                continue;
            }
            if (rn_trial < rn) {
                x = std::move(x_trial);
                r = std::move(r_trial);
                rn = rn_trial;
                improved = true;
                break;
            }
            alpha *= 0.5;
        }
        result.residual_history.push_back(rn);
        if (!improved)
            throw Error(Errc::no_convergence,
                        "damped step cannot reduce the residual below " + std::to_string(rn));
    }
    if (rn <= tol) {
        result.zero = x;
        result.residual = rn;
        result.iterations = max_iter;
        return result;
    }
    throw Error(Errc::no_convergence,
                "residual " + std::to_string(rn) + " after " + std::to_string(max_iter) +
                    " iterations");
}

}  // namespace detail

/// Newton zero of the averaged function from a user-supplied guess.
inline NewtonResult find_zero(const PiecewiseSystem& sys, const Vec& xi_guess,
                              double newton_tol = 1e-10, int max_iter = 50,
                              double fd_step = 1e-5, const IntegratorOptions& opts = {}) {
    auto fn = [&](const Vec& x) { return averaged_function(sys, x, opts); };
    auto jac = [&](const Vec& x) { return averaged_jacobian(sys, x, fd_step, opts); };
    return detail::damped_newton(fn, jac, xi_guess, newton_tol, max_iter);
}

/// Sign placement of the Jacobian spectrum. margin_tol <= 0 selects the
/// default 1e-8 * max(1, spectral radius).
inline StabilityVerdict classify(const Mat& jacobian, double margin_tol = -1.0) {
    auto eigs = eigenvalues(jacobian);
    double rho = 0.0;
    for (const auto& l : eigs) rho = std::max(rho, std::abs(l));
    if (margin_tol <= 0.0) margin_tol = 1e-8 * std::max(1.0, rho);
    bool all_negative = true;
    bool any_positive = false;
    for (const auto& l : eigs) {
        if (!(l.real() <= -margin_tol)) all_negative = false;
        if (l.real() >= margin_tol) any_positive = true;
    }
    if (all_negative) return StabilityVerdict::AsymptoticallyStable;
    if (any_positive) return StabilityVerdict::Unstable;
    return StabilityVerdict::Inconclusive;
}

/// Zero, Jacobian, spectrum and verdict in one record.
inline AveragedReport averaged_report(const PiecewiseSystem& sys, const Vec& xi_guess,
                                      double newton_tol = 1e-10, int max_iter = 50,
                                      double fd_step = 1e-5, const IntegratorOptions& opts = {}) {
    NewtonResult nr = find_zero(sys, xi_guess, newton_tol, max_iter, fd_step, opts);
    AveragedReport report;
    report.xi0 = nr.zero;
    report.residual = nr.residual;
    report.newton_iterations = nr.iterations;
    report.jacobian = averaged_jacobian(sys, nr.zero, fd_step, opts);
    report.eigs = eigenvalues(report.jacobian);
    report.verdict = classify(report.jacobian);
    return report;
}

}  // namespace pwsavg
