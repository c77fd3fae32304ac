#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "pwsavg/integrator.hpp"
#include "pwsavg/model.hpp"

namespace pwsavg {

struct CheckWitness {
    double time = 0.0;
    int component = -1;  ///< 0-based, -1 when not tied to a component
    double value = 0.0;
    std::string note;
};

struct CheckEntry {
    std::string name;
    bool pass = false;
    double margin = 0.0;  ///< worst measured margin for this check
    std::vector<CheckWitness> witnesses;
};

struct HypothesisReport {
    std::vector<CheckEntry> checks;
    bool all_pass() const {
        for (const auto& c : checks)
            if (!c.pass) return false;
        return true;
    }
};

struct CheckOptions {
    int sample_count = 50;
    double box_lo = -2.0;
    double box_hi = 2.0;
    double periodicity_tol = 1e-8;
    /// Guard for "first crossing strictly inside (0, T)", as a fraction of T.
    double structural_tol_factor = 1e-6;
    double probe_step = 1e-4;  ///< FD step for the crossing-time sensitivities
    double sensitivity_rel_tol = 1e-3;
    double sigma = 0.1;
    std::vector<double> eps_list = {1e-1, 1e-2, 1e-3};
    int grid_size = 10000;
};

namespace detail {

/// Deterministic low-discrepancy points in [lo, hi]^n (Kronecker sequence on
/// powers of the generalized golden ratio).
inline std::vector<Vec> low_discrepancy_box(int n, int count, double lo, double hi) {
    double g = 1.5;
    for (int it = 0; it < 64; ++it) g = std::pow(1.0 + g, 1.0 / (n + 1));
    std::vector<double> alpha(static_cast<size_t>(n));
    for (int d = 0; d < n; ++d) alpha[static_cast<size_t>(d)] = std::pow(1.0 / g, d + 1);
    std::vector<Vec> points;
    points.reserve(static_cast<size_t>(count));
    for (int i = 1; i <= count; ++i) {
        Vec p(n);
        for (int d = 0; d < n; ++d) {
            double frac = std::fmod(0.5 + alpha[static_cast<size_t>(d)] * i, 1.0);
            p[d] = lo + (hi - lo) * frac;
        }
        points.push_back(std::move(p));
    }
    return points;
}

}  // namespace detail

/// Every unperturbed solution must return to its start after one period;
/// verified on a deterministic sample of initial points.
inline CheckEntry check_generating_periodicity(const PiecewiseSystem& sys, int sample_count = 50,
                                               double tol = 1e-8, double box_lo = -2.0,
                                               double box_hi = 2.0,
                                               const IntegratorOptions& opts = {}) {
    CheckEntry entry;
    entry.name = "generating_periodicity";
    double worst = 0.0;
    Vec worst_xi;
    for (const Vec& xi : detail::low_discrepancy_box(sys.dimension, sample_count, box_lo, box_hi)) {
        double dev = (generating_flow(sys, xi, sys.period, opts) - xi).norm();
        if (dev > worst) {
            worst = dev;
            worst_xi = xi;
        }
    }
    entry.margin = worst;
    entry.pass = worst <= tol;
    if (!entry.pass)
        entry.witnesses.push_back(
            {sys.period, -1, worst, "flow deviates from the start by " + std::to_string(worst)});
    return entry;
}

namespace detail {

/// Unperturbed sweep with the transversality error disabled so the structure
/// can be reported instead of thrown.
inline Trajectory relaxed_generating_sweep(const PiecewiseSystem& sys, const Vec& xi0,
                                           const IntegratorOptions& opts) {
    IntegratorOptions o = opts;
    o.transversality_tol = 1e-300;
    o.resolve_boundary_start = true;
    return integrate_piecewise(sys, xi0, 0.0, sys.period, o);
}

}  // namespace detail

/// Crossing structure of the unperturbed sweep from xi0: finitely many
/// crossings, the first strictly after 0, none against T, and one hyperplane
/// per component at a time.
inline CheckEntry check_crossing_structure(const PiecewiseSystem& sys, const Vec& xi0,
                                           const IntegratorOptions& opts = {},
                                           double structural_tol_factor = 1e-6) {
    CheckEntry entry;
    entry.name = "crossing_structure";
    const double structural_tol = structural_tol_factor * sys.period;

    OrthantSignature sig = orthant_signature(xi0, opts.dead_tol);
    for (int j : sys.switching_components) {
        if (sig.signs[static_cast<size_t>(j)] == 0) {
            entry.pass = false;
            entry.witnesses.push_back({0.0, j, xi0[j],
                                       "initial state lies on the hyperplane of component " +
                                           std::to_string(j + 1) +
                                           "; the first crossing time must be positive"});
            return entry;
        }
    }

    Trajectory traj;
    try {
        traj = detail::relaxed_generating_sweep(sys, xi0, opts);
    } catch (const Error& e) {
        if (e.code() != Errc::tangential_contact) throw;
        entry.pass = false;
        entry.witnesses.push_back({0.0, -1, 0.0, e.what()});
        return entry;
    }
    entry.pass = true;
    entry.margin = sys.period;
    if (traj.events.empty()) return entry;  // vacuous: smooth sweep

    double t1 = traj.events.front().time;
    double t_last = traj.events.back().time;
    entry.margin = std::min(t1, sys.period - t_last);
    if (t1 <= structural_tol) {
        entry.pass = false;
        entry.witnesses.push_back(
            {t1, traj.events.front().component, t1, "first crossing not strictly after 0"});
    }
    if (sys.period - t_last <= structural_tol) {
        entry.pass = false;
        entry.witnesses.push_back(
            {t_last, traj.events.back().component, sys.period - t_last,
             "crossing against the period end"});
    }
    double cluster_tol = opts.event_cluster_tol();
    for (size_t i = 1; i < traj.events.size(); ++i) {
        const auto& prev = traj.events[i - 1];
        const auto& cur = traj.events[i];
        if (cur.component == prev.component && cur.time - prev.time <= cluster_tol) {
            entry.pass = false;
            entry.witnesses.push_back({cur.time, cur.component, cur.time - prev.time,
                                       "component re-crosses within the cluster tolerance"});
        }
    }
    return entry;
}

/// Transversality margins |xdot_j| at the unperturbed crossings against a
/// tolerance; vacuous pass when the sweep never crosses.
inline CheckEntry check_transversality(const PiecewiseSystem& sys, const Vec& xi0,
                                       double transversality_tol = 1e-6,
                                       const IntegratorOptions& opts = {}) {
    CheckEntry entry;
    entry.name = "transversality";
    Trajectory traj;
    try {
        traj = detail::relaxed_generating_sweep(sys, xi0, opts);
    } catch (const Error& e) {
        if (e.code() != Errc::tangential_contact) throw;
        entry.pass = false;
        entry.witnesses.push_back({0.0, -1, 0.0, e.what()});
        return entry;
    }
    entry.pass = true;
    entry.margin = std::numeric_limits<double>::infinity();
    for (const auto& ev : traj.events) {
        entry.margin = std::min(entry.margin, ev.margin);
        if (ev.margin < transversality_tol) {
            entry.pass = false;
            entry.witnesses.push_back(
                {ev.time, ev.component, ev.margin, "crossing margin below tolerance"});
        }
    }
    if (!std::isfinite(entry.margin)) entry.margin = 0.0;  // vacuous case
    return entry;
}

struct SensitivityRow {
    int event_index = 0;
    int component = 0;        ///< crossing component (0-based)
    int parameter = 0;        ///< 0..n-1 = state components, n = eps
    double slope = 0.0;       ///< FD slope at step h
    double slope_refined = 0.0;  ///< FD slope at step h/2
    double rel_disagreement = 0.0;
};

namespace detail {

inline std::vector<double> event_times(const PiecewiseSystem& sys, const Vec& xi, double eps,
                                       const IntegratorOptions& opts) {
    Trajectory traj = integrate_piecewise(sys, xi, eps, sys.period, opts);
    std::vector<double> times;
    times.reserve(traj.events.size());
    for (const auto& ev : traj.events) times.push_back(ev.time);
    return times;
}

}  // namespace detail

/// Finite-difference slopes of the crossing times in the initial state and in
/// eps, each computed at steps h and h/2; agreement of the two estimates is
/// the smoothness evidence.
inline std::vector<SensitivityRow> switching_time_sensitivity(const PiecewiseSystem& sys,
                                                              const Vec& xi0, double eps,
                                                              double probe_step = 1e-4,
                                                              const IntegratorOptions& opts = {}) {
    auto base = detail::event_times(sys, xi0, eps, opts);
    if (base.empty()) return {};
    Trajectory base_traj = integrate_piecewise(sys, xi0, eps, sys.period, opts);

    auto probe = [&](const Vec& xi, double e) {
        auto times = detail::event_times(sys, xi, e, opts);
        if (times.size() != base.size())
            throw Error(Errc::no_convergence,
                        "crossing count changed under an FD probe; smoothness probe undefined");
        return times;
    };

    std::vector<SensitivityRow> rows;
    const int n = sys.dimension;
    for (int p = 0; p <= n; ++p) {
        for (double h : {probe_step, probe_step / 2.0}) {
            std::vector<double> slope(base.size());
            if (p < n) {
                Vec xp = xi0, xm = xi0;
                xp[p] += h;
                xm[p] -= h;
                auto tp = probe(xp, eps);
                auto tm = probe(xm, eps);
                for (size_t i = 0; i < base.size(); ++i)
                    slope[i] = (tp[i] - tm[i]) / (2.0 * h);
            } else {
                // one-sided in eps: eps cannot go negative
                auto tp = probe(xi0, eps + h);
                for (size_t i = 0; i < base.size(); ++i) slope[i] = (tp[i] - base[i]) / h;
            }
            if (h == probe_step) {
                for (size_t i = 0; i < base.size(); ++i) {
                    SensitivityRow row;
                    row.event_index = static_cast<int>(i);
                    row.component = base_traj.events[i].component;
                    row.parameter = p;
                    row.slope = slope[i];
                    rows.push_back(row);
                }
            } else {
                for (size_t i = 0; i < base.size(); ++i) {
                    auto& row = rows[rows.size() - base.size() + i];
                    row.slope_refined = slope[i];
                    double scale = std::max({std::abs(row.slope), std::abs(row.slope_refined),
                                             1e-12});
                    row.rel_disagreement = std::abs(row.slope - row.slope_refined) / scale;
                }
            }
        }
    }
    return rows;
}

inline CheckEntry sensitivity_entry(const std::vector<SensitivityRow>& rows,
                                    double rel_tol = 1e-3) {
    CheckEntry entry;
    entry.name = "switching_time_sensitivity";
    entry.pass = true;
    entry.margin = 0.0;
    for (const auto& row : rows) {
        entry.margin = std::max(entry.margin, row.rel_disagreement);
        if (row.rel_disagreement > rel_tol) {
            entry.pass = false;
            entry.witnesses.push_back({0.0, row.component, row.rel_disagreement,
                                       "slope estimates at h and h/2 disagree (event " +
                                           std::to_string(row.event_index + 1) + ")"});
        }
    }
    return entry;
}

struct MeasureRow {
    double eps = 0.0;
    double measure = 0.0;
};

struct MeasureTable {
    std::vector<MeasureRow> rows;
    bool strictly_decreasing = false;
    double ratio_spread = 0.0;  ///< max/min of measure/eps over eps > 0 rows
};

/// Occupation measure of {t : the perturbation along the perturbed orbit
/// deviates from its value along the unperturbed one by at least sigma},
/// estimated by uniform grid counting, for each eps in the list.
inline MeasureTable measure_convergence_check(const PiecewiseSystem& sys, const Vec& xi,
                                              double sigma, const std::vector<double>& eps_list,
                                              int grid_size = 10000,
                                              const IntegratorOptions& opts = {}) {
    if (grid_size < 1000) throw Error(Errc::invalid_params, "grid_size must be >= 1000");
    const double T = sys.period;
    Trajectory traj0 = integrate_piecewise(sys, xi, 0.0, T, opts);

    MeasureTable table;
    for (double eps : eps_list) {
        Trajectory traj_eps = integrate_piecewise(sys, xi, eps, T, opts);
        int count = 0;
        for (int k = 0; k < grid_size; ++k) {
            double t = T * (k + 0.5) / grid_size;
            Vec f_eps = sys.perturbation(t, traj_eps.eval(t), eps, traj_eps.signature_at(t));
            Vec f_0 = sys.perturbation(t, traj0.eval(t), 0.0, traj0.signature_at(t));
            if ((f_eps - f_0).norm() >= sigma) ++count;
        }
        table.rows.push_back({eps, T * count / grid_size});
    }

    table.strictly_decreasing = true;
    for (size_t i = 1; i < table.rows.size(); ++i)
        if (!(table.rows[i].measure < table.rows[i - 1].measure))
            table.strictly_decreasing = false;
    double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
    for (const auto& row : table.rows) {
        if (row.eps <= 0.0) continue;
        double r = row.measure / row.eps;
        lo = std::min(lo, r);
        hi = std::max(hi, r);
    }
    table.ratio_spread = (std::isfinite(lo) && lo > 0.0) ? hi / lo : 0.0;
    return table;
}

/// All standing-hypothesis checks in one report. Checks whose preconditions
/// fail upstream are omitted (the failing prerequisite carries the witness).
/// The measure table behind the last entry is exposed through measure_out.
inline HypothesisReport run_all_checks(const PiecewiseSystem& sys, const Vec& xi0, double eps,
                                       const CheckOptions& copts = {},
                                       const IntegratorOptions& opts = {},
                                       MeasureTable* measure_out = nullptr) {
    HypothesisReport report;
    report.checks.push_back(check_generating_periodicity(
        sys, copts.sample_count, copts.periodicity_tol, copts.box_lo, copts.box_hi, opts));
    CheckEntry structure = check_crossing_structure(sys, xi0, opts, copts.structural_tol_factor);
    bool structure_ok = structure.pass;
    report.checks.push_back(std::move(structure));
    if (!structure_ok) return report;

    report.checks.push_back(check_transversality(sys, xi0, opts.transversality_tol, opts));
    if (!report.checks.back().pass) return report;

    auto rows = switching_time_sensitivity(sys, xi0, eps, copts.probe_step, opts);
    report.checks.push_back(sensitivity_entry(rows, copts.sensitivity_rel_tol));

    MeasureTable table =
        measure_convergence_check(sys, xi0, copts.sigma, copts.eps_list, copts.grid_size, opts);
    CheckEntry measure_entry;
    measure_entry.name = "measure_convergence";
    measure_entry.pass = table.strictly_decreasing;
    measure_entry.margin = table.ratio_spread;
    if (!table.strictly_decreasing)
        measure_entry.witnesses.push_back({0.0, -1, 0.0, "measures do not decrease with eps"});
    report.checks.push_back(std::move(measure_entry));
    if (measure_out) *measure_out = std::move(table);
    return report;
}

}  // namespace pwsavg
