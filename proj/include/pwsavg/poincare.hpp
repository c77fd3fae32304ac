#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <vector>

#include "pwsavg/averaging.hpp"
#include "pwsavg/integrator.hpp"
#include "pwsavg/model.hpp"

namespace pwsavg {

struct PoincareOptions {
    double fixed_point_tol = 1e-10;
    int max_iter = 50;
    /// FD step for map derivatives; kept >= sqrt(integrator tolerance) so
    /// truncation dominates integration noise.
    double fd_step = 1e-6;
    /// Above this the first-order identities are not expected to hold and
    /// reports carry a warning flag instead of an error.
    double eps_max = 0.1;
};

/// State after one period: x(T, xi, eps).
inline Vec full_period_map(const PiecewiseSystem& sys, const Vec& xi, double eps,
                           const IntegratorOptions& opts = {}) {
    Trajectory traj = integrate_piecewise(sys, xi, eps, sys.period, opts);
    return traj.eval(sys.period);
}

/// Period map in averaged coordinates: u(T, xi, eps) is the full-period state
/// pulled back through the inverse unperturbed flow. When every unperturbed
/// solution is T-periodic the pullback at t = T is the identity, but it is
/// always computed.
inline Vec standard_form_map(const PiecewiseSystem& sys, const Vec& xi, double eps,
                             const IntegratorOptions& opts = {}) {
    Vec xT = full_period_map(sys, xi, eps, opts);
    return inverse_generating_flow(sys, xT, sys.period, opts);
}

struct FixedPointResult {
    Vec xi_eps;
    double residual = 0.0;
    int iterations = 0;
    std::vector<double> residual_history;
};

/// Newton fixed point of the period map for eps > 0 (at eps = 0 every point
/// is fixed; that degenerate call is rejected).
inline FixedPointResult find_fixed_point(const PiecewiseSystem& sys, double eps,
                                         const Vec& xi_guess, double fixed_point_tol = 1e-10,
                                         int max_iter = 50, double fd_step = 1e-6,
                                         const IntegratorOptions& opts = {}) {
    if (!(eps > 0.0))
        throw Error(Errc::invalid_params,
                    "fixed-point search requires eps > 0 (every point is fixed at eps = 0)");
    auto residual_fn = [&](const Vec& x) {
        return Vec(standard_form_map(sys, x, eps, opts) - x);
    };
    auto jac = [&](const Vec& x) {
        const int n = sys.dimension;
        Mat J(n, n);
        for (int j = 0; j < n; ++j) {
            Vec xp = x, xm = x;
            xp[j] += fd_step;
            xm[j] -= fd_step;
            J.col(j) = (residual_fn(xp) - residual_fn(xm)) / (2.0 * fd_step);
        }
        return J;
    };
    NewtonResult nr = detail::damped_newton(residual_fn, jac, xi_guess, fixed_point_tol, max_iter);
    FixedPointResult out;
    out.xi_eps = nr.zero;
    out.residual = nr.residual;
    out.iterations = nr.iterations;
    out.residual_history = std::move(nr.residual_history);
    return out;
}

struct MonodromyResult {
    Mat matrix;
    std::vector<std::complex<double>> multipliers;
};

/// Derivative of the period map at a fixed point by central differences
/// (differentiating through the crossings inherits the switching-time
/// sensitivities automatically), with its eigenvalues.
inline MonodromyResult monodromy(const PiecewiseSystem& sys, const Vec& xi_eps, double eps,
                                 double fd_step = 1e-6, const IntegratorOptions& opts = {}) {
    const int n = sys.dimension;
    Mat M(n, n);
    for (int j = 0; j < n; ++j) {
        Vec xp = xi_eps, xm = xi_eps;
        xp[j] += fd_step;
        xm[j] -= fd_step;
        M.col(j) = (standard_form_map(sys, xp, eps, opts) - standard_form_map(sys, xm, eps, opts)) /
                   (2.0 * fd_step);
    }
    return {M, eigenvalues(M)};
}

/// First-order multiplier prediction 1 + eps*lambda_i from the averaged
/// Jacobian spectrum.
inline std::vector<std::complex<double>> predicted_multipliers(const Mat& averaged_jacobian_at_zero,
                                                               double eps) {
    auto lams = eigenvalues(averaged_jacobian_at_zero);
    for (auto& l : lams) l = 1.0 + eps * l;
    return lams;
}

/// Max deviation between two spectra after (re, im)-sorted pairing.
inline double spectrum_deviation(std::vector<std::complex<double>> a,
                                 std::vector<std::complex<double>> b) {
    auto lt = [](const std::complex<double>& x, const std::complex<double>& y) {
        return x.real() < y.real() || (x.real() == y.real() && x.imag() < y.imag());
    };
    std::sort(a.begin(), a.end(), lt);
    std::sort(b.begin(), b.end(), lt);
    double dev = 0.0;
    for (size_t i = 0; i < a.size(); ++i) dev = std::max(dev, std::abs(a[i] - b[i]));
    return dev;
}

struct EpsilonDerivativeRow {
    double eps = 0.0;
    Vec derivative;      ///< (u(T,xi,eps) - xi) / eps
    double residual = 0.0;  ///< distance to the averaged function at xi
};

struct EpsilonDerivativeTable {
    std::vector<EpsilonDerivativeRow> rows;
    double slope = 0.0;  ///< log-log slope of residual vs eps
};

namespace detail {

inline double loglog_slope(const std::vector<double>& xs, const std::vector<double>& ys) {
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    int n = 0;
    for (size_t i = 0; i < xs.size(); ++i) {
        if (!(xs[i] > 0.0) || !(ys[i] > 0.0)) continue;
        double lx = std::log(xs[i]), ly = std::log(ys[i]);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
        ++n;
    }
    if (n < 2) return 0.0;
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace detail

/// Difference quotients of the period map in eps against the averaged
/// function, with the empirical convergence order of the remainder.
inline EpsilonDerivativeTable epsilon_derivative_check(const PiecewiseSystem& sys, const Vec& xi,
                                                       const std::vector<double>& eps_list,
                                                       const IntegratorOptions& opts = {}) {
    for (size_t i = 0; i < eps_list.size(); ++i) {
        if (!(eps_list[i] > 0.0) || (i > 0 && !(eps_list[i] < eps_list[i - 1])))
            throw Error(Errc::invalid_params, "eps_list must be decreasing and positive");
    }
    Vec fbar = averaged_function(sys, xi, opts);
    EpsilonDerivativeTable table;
    std::vector<double> xs, ys;
    for (double eps : eps_list) {
        EpsilonDerivativeRow row;
        row.eps = eps;
        row.derivative = (standard_form_map(sys, xi, eps, opts) - xi) / eps;
        row.residual = (row.derivative - fbar).norm();
        xs.push_back(eps);
        ys.push_back(row.residual);
        table.rows.push_back(std::move(row));
    }
    table.slope = detail::loglog_slope(xs, ys);
    return table;
}

enum class ContractionVerdict { Converged, Diverged, Undecided };

inline const char* verdict_name(ContractionVerdict v) {
    switch (v) {
        case ContractionVerdict::Converged: return "converged";
        case ContractionVerdict::Diverged:  return "diverged";
        case ContractionVerdict::Undecided: return "undecided";
    }
    return "undecided";
}

struct RayHistory {
    int component = 0;  ///< 0-based perturbation direction
    int direction = 0;  ///< +1 or -1
    std::vector<double> distances;  ///< distance to the fixed point per step
    double late_ratio = 0.0;        ///< geometric step ratio near the end
    ContractionVerdict verdict = ContractionVerdict::Undecided;
};

struct ContractionRecord {
    ContractionVerdict verdict = ContractionVerdict::Undecided;
    std::vector<RayHistory> rays;
    double final_distance = 0.0;  ///< worst ray
    int iterations_budget = 0;
};

inline constexpr double kContractionConvergedDistance = 1e-6;

/// Iterates the period map from +-radius perturbations of the fixed point
/// along each coordinate direction. Converged when the distance falls below
/// 1e-6 inside the budget, Diverged when it exceeds 2*radius.
inline ContractionRecord empirical_stability(const PiecewiseSystem& sys, const Vec& xi_eps,
                                             double eps, double radius = 0.05,
                                             int iterations = 200,
                                             const IntegratorOptions& opts = {}) {
    ContractionRecord record;
    record.iterations_budget = iterations;
    const int n = sys.dimension;
    for (int j = 0; j < n; ++j) {
        for (int dir : {+1, -1}) {
            RayHistory ray;
            ray.component = j;
            ray.direction = dir;
            Vec x = xi_eps;
            x[j] += dir * radius;
            double d = radius;
            ray.distances.push_back(d);
            for (int k = 0; k < iterations; ++k) {
                if (d <= kContractionConvergedDistance || d > 2.0 * radius) break;
                x = standard_form_map(sys, x, eps, opts);
                d = (x - xi_eps).norm();
                ray.distances.push_back(d);
            }
            if (d <= kContractionConvergedDistance)
                ray.verdict = ContractionVerdict::Converged;
            else if (d > 2.0 * radius)
                ray.verdict = ContractionVerdict::Diverged;
            // geometric mean of the trailing step ratios
            const auto& ds = ray.distances;
            double acc = 0.0;
            int cnt = 0;
            for (size_t k = ds.size() >= 11 ? ds.size() - 10 : 1; k < ds.size(); ++k) {
                if (ds[k - 1] > 0.0 && ds[k] > 0.0) {
                    acc += std::log(ds[k] / ds[k - 1]);
                    ++cnt;
                }
            }
            ray.late_ratio = cnt > 0 ? std::exp(acc / cnt) : 0.0;
            record.rays.push_back(std::move(ray));
        }
    }
    bool all_converged = true, any_diverged = false;
    for (const auto& ray : record.rays) {
        record.final_distance = std::max(record.final_distance, ray.distances.back());
        if (ray.verdict != ContractionVerdict::Converged) all_converged = false;
        if (ray.verdict == ContractionVerdict::Diverged) any_diverged = true;
    }
    if (record.rays.empty() || all_converged)
        record.verdict = ContractionVerdict::Converged;
    else if (any_diverged)
        record.verdict = ContractionVerdict::Diverged;
    else
        record.verdict = ContractionVerdict::Undecided;
    return record;
}

/// Guess nudged off switching hyperplanes (the averaged zero may sit exactly
/// on one, where the period map is not evaluable).
inline Vec nudge_off_hyperplanes(const PiecewiseSystem& sys, const Vec& xi, double dead_tol) {
    double nudge = std::max(1e-3, 100.0 * dead_tol);
    Vec out = xi;
    for (int j : sys.switching_components)
        if (std::abs(out[j]) < nudge) out[j] = out[j] >= 0.0 ? nudge : -nudge;
    return out;
}

/// Empirically largest eps (bisection on (0, eps_hi]) at which the
/// fixed-point Newton still converges near the averaged zero and every
/// multiplier stays on the side of 1 that the averaged spectrum predicts.
/// A probe of the usable range, not an estimate of any theoretical bound.
inline double largest_valid_epsilon(const PiecewiseSystem& sys, const Vec& xi0,
                                    const Mat& averaged_jacobian_at_zero, double eps_hi = 1.0,
                                    int bisection_steps = 12,
                                    const PoincareOptions& popts = {},
                                    const IntegratorOptions& opts = {}) {
    auto eps_works = [&](double eps) {
        try {
            Vec guess = nudge_off_hyperplanes(sys, xi0, opts.dead_tol);
            FixedPointResult fp = find_fixed_point(sys, eps, guess, popts.fixed_point_tol,
                                                   popts.max_iter, popts.fd_step, opts);
            MonodromyResult mono = monodromy(sys, fp.xi_eps, eps, popts.fd_step, opts);
            auto predicted = predicted_multipliers(averaged_jacobian_at_zero, eps);
            for (size_t i = 0; i < mono.multipliers.size(); ++i) {
                double side = std::abs(predicted[i]) < 1.0 ? -1.0 : 1.0;
                if (side * (std::abs(mono.multipliers[i]) - 1.0) < 0.0) return false;
            }
            return true;
        } catch (const Error&) {
            return false;
        }
    };
    double lo = 0.0, hi = eps_hi;
    if (eps_works(hi)) return hi;
    for (int i = 0; i < bisection_steps; ++i) {
        double mid = 0.5 * (lo + hi);
        if (eps_works(mid))
            lo = mid;
        else
            hi = mid;
    }
    return lo;
}

struct PoincareReport {
    double eps = 0.0;
    AveragedReport averaged;       ///< zero and spectrum of the averaged function
    Vec xi_eps;                    ///< fixed point, averaged coordinates
    Vec x_eps0;                    ///< same point in original coordinates (t = 0)
    double fixed_point_residual = 0.0;
    int newton_iterations = 0;
    Mat monodromy_matrix;
    std::vector<std::complex<double>> multipliers;
    std::vector<std::complex<double>> predicted;  ///< 1 + eps * eig(fbar'(xi0))
    double multiplier_deviation = 0.0;
    double te_residual = 0.0;            ///< map vs xi + eps * (integral along the orbit)
    double x_periodicity_residual = 0.0; ///< ||x(T) - x(0)|| in original coordinates
    ContractionRecord contraction;
    bool eps_above_recommended = false;
};

/// Full verification record at one eps: averaged prediction, fixed point,
/// monodromy against the first-order law, periodicity in both coordinate
/// frames, and the empirical contraction evidence.
inline PoincareReport poincare_report(const PiecewiseSystem& sys, double eps, const Vec& xi_guess,
                                      const PoincareOptions& popts = {},
                                      const IntegratorOptions& opts = {},
                                      double stability_radius = 0.05, int stability_iterations = 200,
                                      double newton_tol = 1e-10, double avg_fd_step = 1e-5) {
    PoincareReport report;
    report.eps = eps;
    report.eps_above_recommended = eps > popts.eps_max;

    report.averaged = averaged_report(sys, xi_guess, newton_tol, popts.max_iter, avg_fd_step, opts);
    Vec fp_guess = nudge_off_hyperplanes(sys, report.averaged.xi0, opts.dead_tol);
    FixedPointResult fp = find_fixed_point(sys, eps, fp_guess, popts.fixed_point_tol,
                                           popts.max_iter, popts.fd_step, opts);
    report.xi_eps = fp.xi_eps;
    report.x_eps0 = fp.xi_eps;  // the frames coincide at t = 0
    report.fixed_point_residual = fp.residual;
    report.newton_iterations = fp.iterations;

    MonodromyResult mono = monodromy(sys, fp.xi_eps, eps, popts.fd_step, opts);
    report.monodromy_matrix = mono.matrix;
    report.multipliers = mono.multipliers;
    report.predicted = predicted_multipliers(report.averaged.jacobian, eps);
    report.multiplier_deviation = spectrum_deviation(report.multipliers, report.predicted);

    Trajectory orbit = integrate_piecewise(sys, fp.xi_eps, eps, sys.period, opts);
    Vec xT = orbit.eval(sys.period);
    report.x_periodicity_residual = (xT - fp.xi_eps).norm();
    Vec integral = averaged_function_along(sys, orbit, opts);
    Vec uT = inverse_generating_flow(sys, xT, sys.period, opts);
    report.te_residual = (uT - (fp.xi_eps + eps * integral)).norm();

    report.contraction = empirical_stability(sys, fp.xi_eps, eps, stability_radius,
                                             stability_iterations, opts);
    return report;
}

}  // namespace pwsavg
