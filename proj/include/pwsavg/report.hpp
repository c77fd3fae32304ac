#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "pwsavg/averaging.hpp"
#include "pwsavg/checker.hpp"
#include "pwsavg/integrator.hpp"
#include "pwsavg/poincare.hpp"
#include "pwsavg/scenario.hpp"

namespace pwsavg {

/// Full-precision scientific notation (17 significant digits) used in every
/// CSV column, so values round-trip bit-exactly.
inline std::string csv_number(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.16e", v);
    return buf;
}

namespace detail {

inline json complex_list_to_json(const std::vector<std::complex<double>>& zs) {
    json arr = json::array();
    for (const auto& z : zs) arr.push_back({{"re", z.real()}, {"im", z.imag()}});
    return arr;
}

inline json vec_to_json(const Vec& v) {
    return std::vector<double>(v.data(), v.data() + v.size());
}

inline json mat_to_json(const Mat& m) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(row);
    }
    return rows;
}

}  // namespace detail

inline json to_json(const AveragedReport& r) {
    json j;
    j["xi0"] = detail::vec_to_json(r.xi0);
    j["residual"] = r.residual;
    j["jacobian"] = detail::mat_to_json(r.jacobian);
    j["eigenvalues"] = detail::complex_list_to_json(r.eigs);
    j["verdict"] = verdict_name(r.verdict);
    j["newton_iterations"] = r.newton_iterations;
    return j;
}

inline json to_json(const ContractionRecord& r) {
    json j;
    j["verdict"] = verdict_name(r.verdict);
    j["final_distance"] = r.final_distance;
    j["iterations_budget"] = r.iterations_budget;
    json rays = json::array();
    for (const auto& ray : r.rays) {
        rays.push_back({{"component", ray.component + 1},
                        {"direction", ray.direction},
                        {"steps", static_cast<int>(ray.distances.size()) - 1},
                        {"final_distance", ray.distances.back()},
                        {"late_ratio", ray.late_ratio},
                        {"verdict", verdict_name(ray.verdict)}});
    }
    j["rays"] = rays;
    return j;
}

inline json to_json(const PoincareReport& r) {
    json j;
    j["epsilon"] = r.eps;
    j["averaged"] = to_json(r.averaged);
    j["xi_eps"] = detail::vec_to_json(r.xi_eps);
    j["x_eps0"] = detail::vec_to_json(r.x_eps0);
    j["fixed_point_residual"] = r.fixed_point_residual;
    j["newton_iterations"] = r.newton_iterations;
    j["monodromy"] = detail::mat_to_json(r.monodromy_matrix);
    j["multipliers"] = detail::complex_list_to_json(r.multipliers);
    j["predicted_multipliers"] = detail::complex_list_to_json(r.predicted);
    j["multiplier_deviation"] = r.multiplier_deviation;
    j["te_residual"] = r.te_residual;
    j["x_periodicity_residual"] = r.x_periodicity_residual;
    j["contraction"] = to_json(r.contraction);
    j["epsilon_above_recommended"] = r.eps_above_recommended;
    return j;
}

inline json to_json(const HypothesisReport& r) {
    json j;
    json checks = json::array();
    for (const auto& c : r.checks) {
        json witnesses = json::array();
        for (const auto& w : c.witnesses)
            witnesses.push_back({{"time", w.time},
                                 {"component", w.component + 1},
                                 {"value", w.value},
                                 {"note", w.note}});
        checks.push_back({{"name", c.name},
                          {"pass", c.pass},
                          {"margin", c.margin},
                          {"witnesses", witnesses}});
    }
    j["checks"] = checks;
    j["all_pass"] = r.all_pass();
    return j;
}

inline json to_json(const MeasureTable& t) {
    json rows = json::array();
    for (const auto& row : t.rows) rows.push_back({{"epsilon", row.eps}, {"measure", row.measure}});
    return {{"rows", rows},
            {"strictly_decreasing", t.strictly_decreasing},
            {"ratio_spread", t.ratio_spread}};
}

inline json to_json(const EpsilonDerivativeTable& t) {
    json rows = json::array();
    for (const auto& row : t.rows)
        rows.push_back({{"epsilon", row.eps},
                        {"derivative", detail::vec_to_json(row.derivative)},
                        {"residual", row.residual}});
    return {{"rows", rows}, {"slope", t.slope}};
}

// --- CSV writers ------------------------------------------------------------

/// Columns: t, x1..xn, signature (one character per component). The dense
/// solution is sampled uniformly; crossing times get their own rows.
inline void write_trajectory_csv(std::ostream& out, const Trajectory& traj, int samples) {
    const int n = static_cast<int>(traj.initial_state.size());
    out << "t";
    for (int j = 1; j <= n; ++j) out << ",x" << j;
    out << ",signature\n";
    std::vector<double> ts;
    double T = traj.horizon();
    for (int k = 0; k < samples; ++k) ts.push_back(T * k / (samples - 1));
    for (const auto& ev : traj.events) ts.push_back(ev.time);
    std::sort(ts.begin(), ts.end());
    for (double t : ts) {
        Vec x = traj.eval(t);
        out << csv_number(t);
        for (int j = 0; j < n; ++j) out << "," << csv_number(x[j]);
        out << "," << traj.signature_at(t).to_string() << "\n";
    }
}

/// Columns: time, component (1-based), sign_before, sign_after, margin.
inline void write_events_csv(std::ostream& out, const Trajectory& traj) {
    out << "time,component,sign_before,sign_after,margin\n";
    for (const auto& ev : traj.events)
        out << csv_number(ev.time) << "," << ev.component + 1 << "," << ev.sign_before << ","
            << ev.sign_after << "," << csv_number(ev.margin) << "\n";
}

/// Columns: axis (1-based), xi_axis, fbar_1..fbar_n. One sweep per coordinate
/// axis through the guess; rows where the integrand is not evaluable hold nan.
inline void write_averaged_tabulation_csv(std::ostream& out, const PiecewiseSystem& sys,
                                          const Vec& center, const AverageSettings& settings,
                                          const IntegratorOptions& opts) {
    const int n = sys.dimension;
    out << "axis,xi";
    for (int j = 1; j <= n; ++j) out << ",fbar" << j;
    out << "\n";
    for (int axis = 0; axis < n; ++axis) {
        for (int k = 0; k < settings.grid_points; ++k) {
            double offset = -settings.half_width +
                            2.0 * settings.half_width * k / (settings.grid_points - 1);
            Vec xi = center;
            xi[axis] += offset;
            out << axis + 1 << "," << csv_number(xi[axis]);
            try {
                Vec fbar = averaged_function(sys, xi, opts);
                for (int j = 0; j < n; ++j) out << "," << csv_number(fbar[j]);
            } catch (const Error&) {
                for (int j = 0; j < n; ++j) out << ",nan";
            }
            out << "\n";
        }
    }
}

/// Columns: epsilon, measure.
inline void write_measure_csv(std::ostream& out, const MeasureTable& table) {
    out << "epsilon,measure\n";
    for (const auto& row : table.rows)
        out << csv_number(row.eps) << "," << csv_number(row.measure) << "\n";
}

/// Columns: step, then one distance column per perturbation ray.
inline void write_iterates_csv(std::ostream& out, const ContractionRecord& record) {
    out << "step";
    for (const auto& ray : record.rays)
        out << ",d_" << (ray.direction > 0 ? "plus" : "minus") << "_x" << ray.component + 1;
    out << "\n";
    size_t longest = 0;
    for (const auto& ray : record.rays) longest = std::max(longest, ray.distances.size());
    for (size_t k = 0; k < longest; ++k) {
        out << k;
        for (const auto& ray : record.rays) {
            out << ",";
            if (k < ray.distances.size()) out << csv_number(ray.distances[k]);
        }
        out << "\n";
    }
}

inline void write_file(const std::filesystem::path& path, const std::string& contents) {
    std::ofstream out(path);
    if (!out) throw Error(Errc::io_error, "cannot write '" + path.string() + "'");
    out << contents;
}

}  // namespace pwsavg
