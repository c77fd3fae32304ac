#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "pwsavg/report.hpp"
#include "pwsavg/scenario.hpp"

namespace pwsavg {

struct RunOutcome {
    int exit_code = 0;  ///< 0 success, 3 failed hypothesis (errors are thrown)
    json run_report;
    std::vector<std::string> artifacts;
};

namespace detail {

struct SweepCell {
    double eps = 0.0;
    double param_value = 0.0;
    bool has_param = false;
    Vec xi0;
    Vec xi_eps;
    std::vector<std::complex<double>> multipliers;
    double deviation = 0.0;
    std::string error;
};

/// Grid runs distributed over a bounded worker pool; results land in grid
/// order regardless of scheduling.
inline std::vector<SweepCell> run_sweep_grid(const Scenario& sc) {
    std::vector<SweepCell> cells;
    std::vector<double> param_values = sc.sweep.parameter_values;
    bool has_param = !sc.sweep.parameter_name.empty();
    if (!has_param) param_values = {0.0};
    for (double pv : param_values)
        for (double eps : sc.sweep.epsilons) {
            SweepCell cell;
            cell.eps = eps;
            cell.param_value = pv;
            cell.has_param = has_param;
            cells.push_back(std::move(cell));
        }

    auto run_cell = [&](SweepCell& cell) {
        try {
            auto params = sc.model_params;
            if (cell.has_param) params[sc.sweep.parameter_name] = cell.param_value;
            PiecewiseSystem sys = make_builtin(sc.model_name, params);
            NewtonResult zero = find_zero(sys, sc.xi_guess, sc.newton_tol, sc.newton_max_iter,
                                          sc.integ.fd_step, sc.integ);
            cell.xi0 = zero.zero;
            Mat J = averaged_jacobian(sys, zero.zero, sc.integ.fd_step, sc.integ);
            Vec guess = nudge_off_hyperplanes(sys, zero.zero, sc.integ.dead_tol);
            FixedPointResult fp = find_fixed_point(sys, cell.eps, guess, sc.fixed_point_tol,
                                                   sc.newton_max_iter, sc.map_fd_step, sc.integ);
            cell.xi_eps = fp.xi_eps;
            MonodromyResult mono = monodromy(sys, fp.xi_eps, cell.eps, sc.map_fd_step, sc.integ);
            cell.multipliers = mono.multipliers;
            cell.deviation = spectrum_deviation(mono.multipliers,
                                                predicted_multipliers(J, cell.eps));
        } catch (const Error& e) {
            cell.error = e.what();
        }
    };

    unsigned workers = std::min<unsigned>(
        {std::max(1u, std::thread::hardware_concurrency()), 4u,
         static_cast<unsigned>(cells.size())});
    if (workers <= 1) {
        for (auto& cell : cells) run_cell(cell);
    } else {
        std::atomic<size_t> next{0};
        std::vector<std::thread> pool;
        for (unsigned w = 0; w < workers; ++w)
            pool.emplace_back([&]() {
                for (;;) {
                    size_t i = next.fetch_add(1);
                    if (i >= cells.size()) return;
                    run_cell(cells[i]);
                }
            });
        for (auto& th : pool) th.join();
    }
    return cells;
}

inline void write_sweep_csv(std::ostream& out, const std::vector<SweepCell>& cells,
                            const std::string& param_name, int dimension) {
    out << "epsilon";
    if (!param_name.empty()) out << "," << param_name;
    for (int j = 1; j <= dimension; ++j) out << ",xi0_" << j;
    for (int j = 1; j <= dimension; ++j) out << ",xi_eps_" << j;
    for (int j = 1; j <= dimension; ++j) out << ",mu" << j << "_re,mu" << j << "_im";
    out << ",multiplier_deviation,error\n";
    for (const auto& cell : cells) {
        out << csv_number(cell.eps);
        if (!param_name.empty()) out << "," << csv_number(cell.param_value);
        auto emit_vec = [&](const Vec& v) {
            for (int j = 0; j < dimension; ++j)
                out << "," << (v.size() == dimension ? csv_number(v[j]) : "nan");
        };
        emit_vec(cell.xi0);
        emit_vec(cell.xi_eps);
        for (int j = 0; j < dimension; ++j) {
            if (j < static_cast<int>(cell.multipliers.size()))
                out << "," << csv_number(cell.multipliers[j].real()) << ","
                    << csv_number(cell.multipliers[j].imag());
            else
                out << ",nan,nan";
        }
        out << "," << csv_number(cell.deviation) << "," << cell.error << "\n";
    }
}

}  // namespace detail

inline const std::vector<std::string>& command_names() {
    static const std::vector<std::string> names = {"simulate", "average",  "find-periodic",
                                                   "classify", "poincare", "check",
                                                   "sweep"};
    return names;
}

/// Execute one command against a scenario; artifacts land in out_dir. All
/// errors are thrown as pwsavg::Error; a failed hypothesis sets exit_code 3.
inline RunOutcome run(const std::string& command, const Scenario& sc,
                      const std::filesystem::path& out_dir) {
    bool known = false;
    for (const auto& c : command_names())
        if (c == command) known = true;
    if (!known) throw Error(Errc::schema_error, "unknown command '" + command + "'");

    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec && !std::filesystem::is_directory(out_dir))
        throw Error(Errc::io_error, "cannot create output directory '" + out_dir.string() + "'");

    PiecewiseSystem sys = sc.make_system();
    auto t_start = std::chrono::steady_clock::now();

    RunOutcome outcome;
    json report;

    auto emit = [&](const std::string& name, const std::string& contents) {
        auto path = out_dir / name;
        write_file(path, contents);
        outcome.artifacts.push_back(path.string());
    };

    if (command == "simulate") {
        double horizon = sc.horizon >= 0.0 ? sc.horizon : sys.period;
        Trajectory traj = integrate_piecewise(sys, sc.xi_guess, sc.epsilon, horizon, sc.integ);
        std::ostringstream tcsv, ecsv;
        write_trajectory_csv(tcsv, traj, sc.trajectory_samples);
        write_events_csv(ecsv, traj);
        emit("trajectory.csv", tcsv.str());
        emit("events.csv", ecsv.str());
        json events = json::array();
        for (const auto& ev : traj.events)
            events.push_back({{"time", ev.time},
                              {"component", ev.component + 1},
                              {"sign_before", ev.sign_before},
                              {"sign_after", ev.sign_after},
                              {"margin", ev.margin}});
        report["horizon"] = horizon;
        report["events"] = events;
        report["final_state"] = detail::vec_to_json(traj.eval(horizon));
    } else if (command == "average" || command == "classify") {
        AveragedReport avg = averaged_report(sys, sc.xi_guess, sc.newton_tol, sc.newton_max_iter,
                                             sc.integ.fd_step, sc.integ);
        report = to_json(avg);
        if (command == "average") {
            std::ostringstream csv;
            write_averaged_tabulation_csv(csv, sys, avg.xi0, sc.average, sc.integ);
            emit("fbar_tabulation.csv", csv.str());
        }
    } else if (command == "find-periodic") {
        NewtonResult zero = find_zero(sys, sc.xi_guess, sc.newton_tol, sc.newton_max_iter,
                                      sc.integ.fd_step, sc.integ);
        report["xi0"] = detail::vec_to_json(zero.zero);
        report["averaged_residual"] = zero.residual;
        Vec guess = nudge_off_hyperplanes(sys, zero.zero, sc.integ.dead_tol);
        FixedPointResult fp = find_fixed_point(sys, sc.epsilon, guess, sc.fixed_point_tol,
                                               sc.newton_max_iter, sc.map_fd_step, sc.integ);
        report["xi_eps"] = detail::vec_to_json(fp.xi_eps);
        report["fixed_point_residual"] = fp.residual;
        report["newton_iterations"] = fp.iterations;
    } else if (command == "poincare") {
        PoincareOptions popts;
        popts.fixed_point_tol = sc.fixed_point_tol;
        popts.max_iter = sc.newton_max_iter;
        popts.fd_step = sc.map_fd_step;
        popts.eps_max = sc.eps_max;
        PoincareReport pr = poincare_report(sys, sc.epsilon, sc.xi_guess, popts, sc.integ,
                                            sc.stability.radius, sc.stability.iterations,
                                            sc.newton_tol, sc.integ.fd_step);
        report = to_json(pr);
        std::ostringstream csv;
        write_iterates_csv(csv, pr.contraction);
        emit("iterates.csv", csv.str());
    } else if (command == "check") {
        MeasureTable table;
        HypothesisReport hr =
            run_all_checks(sys, sc.xi_guess, sc.epsilon, sc.check, sc.integ, &table);
        report = to_json(hr);
        if (!table.rows.empty()) {
            report["measure_table"] = to_json(table);
            std::ostringstream csv;
            write_measure_csv(csv, table);
            emit("measure.csv", csv.str());
        }
        if (!hr.all_pass()) outcome.exit_code = 3;
    } else if (command == "sweep") {
        if (sc.sweep.epsilons.empty())
            throw Error(Errc::schema_error, "sweep command requires sweep.epsilons");
        auto cells = detail::run_sweep_grid(sc);
        std::ostringstream csv;
        detail::write_sweep_csv(csv, cells, sc.sweep.parameter_name, sys.dimension);
        emit("sweep_summary.csv", csv.str());
        json rows = json::array();
        for (const auto& cell : cells) {
            json row;
            row["epsilon"] = cell.eps;
            if (cell.has_param) row[sc.sweep.parameter_name] = cell.param_value;
            if (cell.error.empty()) {
                row["xi0"] = detail::vec_to_json(cell.xi0);
                row["xi_eps"] = detail::vec_to_json(cell.xi_eps);
                row["multipliers"] = detail::complex_list_to_json(cell.multipliers);
                row["multiplier_deviation"] = cell.deviation;
            } else {
                row["error"] = cell.error;
            }
            rows.push_back(std::move(row));
        }
        report["cells"] = rows;
    }

    auto t_end = std::chrono::steady_clock::now();
    json run_report;
    run_report["schema_version"] = kSchemaVersion;
    run_report["command"] = command;
    run_report["scenario"] = scenario_to_json(sc);
    run_report["report"] = report;
    run_report["artifacts"] = outcome.artifacts;
    run_report["timing_ms"] =
        std::chrono::duration_cast<std::chrono::milliseconds>(t_end - t_start).count();

    auto report_path = out_dir / "run_report.json";
    write_file(report_path, run_report.dump(2) + "\n");
    outcome.artifacts.push_back(report_path.string());
    outcome.run_report = std::move(run_report);
    return outcome;
}

/// CLI exit code for a thrown error: 2 for scenario/input problems, 1 for
/// numerical failures.
inline int exit_code_for(const Error& e) { return is_scenario_error(e.code()) ? 2 : 1; }

}  // namespace pwsavg
