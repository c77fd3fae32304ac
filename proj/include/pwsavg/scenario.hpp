#pragma once

#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pwsavg/checker.hpp"
#include "pwsavg/errors.hpp"
#include "pwsavg/integrator.hpp"
#include "pwsavg/model.hpp"

namespace pwsavg {

using json = nlohmann::ordered_json;

inline constexpr int kSchemaVersion = 1;

struct AverageSettings {
    int grid_points = 41;
    double half_width = 0.9;  ///< tabulation reach around the guess, per axis
};

struct StabilitySettings {
    double radius = 0.05;
    int iterations = 200;
};

struct SweepSettings {
    std::vector<double> epsilons;
    std::string parameter_name;  ///< optional model-parameter axis
    std::vector<double> parameter_values;
};

/// One validated run request: model, perturbation size, guess and options.
struct Scenario {
    int schema_version = kSchemaVersion;
    std::string model_name;
    std::map<std::string, double> model_params;
    double epsilon = 0.0;
    Vec xi_guess;

    double horizon = -1.0;  ///< simulate span; <0 means one period
    int trajectory_samples = 1000;

    IntegratorOptions integ;
    double newton_tol = 1e-10;
    int newton_max_iter = 50;
    double fixed_point_tol = 1e-10;
    double map_fd_step = 1e-6;
    double eps_max = 0.1;

    AverageSettings average;
    StabilitySettings stability;
    CheckOptions check;
    SweepSettings sweep;

    PiecewiseSystem make_system() const { return make_builtin(model_name, model_params); }
};

namespace detail {

inline void reject_unknown_keys(const json& obj, const std::string& ctx,
                                const std::vector<std::string>& allowed) {
    for (const auto& item : obj.items()) {
        bool known = false;
        for (const auto& a : allowed)
            if (a == item.key()) known = true;
        if (!known)
            throw Error(Errc::schema_error, "unknown key '" + item.key() + "' in " + ctx);
    }
}

inline const json& require_key(const json& obj, const std::string& key, const std::string& ctx) {
    auto it = obj.find(key);
    if (it == obj.end())
        throw Error(Errc::schema_error, "missing key '" + key + "' in " + ctx);
    return *it;
}

inline double as_number(const json& v, const std::string& name) {
    if (!v.is_number())
        throw Error(Errc::schema_error, "'" + name + "' must be a number");
    return v.get<double>();
}

inline int as_int(const json& v, const std::string& name) {
    if (!v.is_number_integer())
        throw Error(Errc::schema_error, "'" + name + "' must be an integer");
    return v.get<int>();
}

inline std::vector<double> as_number_array(const json& v, const std::string& name) {
    if (!v.is_array() || v.empty())
        throw Error(Errc::schema_error, "'" + name + "' must be a non-empty array of numbers");
    std::vector<double> out;
    out.reserve(v.size());
    for (const auto& e : v) out.push_back(as_number(e, name));
    return out;
}

inline void read_if_present(const json& obj, const std::string& key, double& target) {
    if (auto it = obj.find(key); it != obj.end()) target = as_number(*it, key);
}

inline void read_if_present(const json& obj, const std::string& key, int& target) {
    if (auto it = obj.find(key); it != obj.end()) target = as_int(*it, key);
}

}  // namespace detail

/// Parse and validate a scenario document. Unknown keys are rejected,
/// defaults are filled, and the model/parameters/guess are checked against
/// the registry.
inline Scenario parse_scenario_json(const json& doc) {
    if (!doc.is_object()) throw Error(Errc::schema_error, "scenario root must be an object");
    detail::reject_unknown_keys(doc, "scenario",
                                {"schema_version", "model", "epsilon", "xi_guess", "horizon",
                                 "trajectory_samples", "tolerances", "average", "stability",
                                 "check", "sweep"});
    Scenario sc;

    sc.schema_version = detail::as_int(detail::require_key(doc, "schema_version", "scenario"),
                                       "schema_version");
    if (sc.schema_version != kSchemaVersion)
        throw Error(Errc::schema_error,
                    "unsupported schema_version " + std::to_string(sc.schema_version));

    const json& model = detail::require_key(doc, "model", "scenario");
    if (!model.is_object()) throw Error(Errc::schema_error, "'model' must be an object");
    detail::reject_unknown_keys(model, "model", {"name", "params"});
    const json& name = detail::require_key(model, "name", "model");
    if (!name.is_string()) throw Error(Errc::schema_error, "'model.name' must be a string");
    sc.model_name = name.get<std::string>();
    const json& params = detail::require_key(model, "params", "model");
    if (!params.is_object()) throw Error(Errc::schema_error, "'model.params' must be an object");
    for (const auto& item : params.items())
        sc.model_params[item.key()] = detail::as_number(item.value(), "model.params." + item.key());

    // Validates the name and the parameter set against the registry.
    PiecewiseSystem sys = make_builtin(sc.model_name, sc.model_params);

    sc.epsilon = detail::as_number(detail::require_key(doc, "epsilon", "scenario"), "epsilon");
    if (sc.epsilon < 0.0) throw Error(Errc::schema_error, "epsilon must be >= 0");
    if (sc.epsilon > 1.0) throw Error(Errc::schema_error, "epsilon must be <= 1");

    auto guess = detail::as_number_array(detail::require_key(doc, "xi_guess", "scenario"),
                                         "xi_guess");
    if (static_cast<int>(guess.size()) != sys.dimension)
        throw Error(Errc::schema_error,
                    "xi_guess has length " + std::to_string(guess.size()) + " but model '" +
                        sc.model_name + "' has dimension " + std::to_string(sys.dimension));
    sc.xi_guess = Eigen::Map<const Vec>(guess.data(), static_cast<Eigen::Index>(guess.size()));

    detail::read_if_present(doc, "horizon", sc.horizon);
    if (doc.contains("horizon") && !(sc.horizon >= 0.0))
        throw Error(Errc::schema_error, "horizon must be >= 0");
    detail::read_if_present(doc, "trajectory_samples", sc.trajectory_samples);
    if (sc.trajectory_samples < 2)
        throw Error(Errc::schema_error, "trajectory_samples must be >= 2");

    if (auto it = doc.find("tolerances"); it != doc.end()) {
        const json& tol = *it;
        if (!tol.is_object()) throw Error(Errc::schema_error, "'tolerances' must be an object");
        detail::reject_unknown_keys(tol, "tolerances",
                                    {"rel_tol", "abs_tol", "event_tol", "transversality_tol",
                                     "dead_tol", "fd_step", "max_step", "max_events",
                                     "newton_tol", "newton_max_iter", "fixed_point_tol",
                                     "map_fd_step", "eps_max"});
        detail::read_if_present(tol, "rel_tol", sc.integ.rel_tol);
        detail::read_if_present(tol, "abs_tol", sc.integ.abs_tol);
        detail::read_if_present(tol, "event_tol", sc.integ.event_tol);
        detail::read_if_present(tol, "transversality_tol", sc.integ.transversality_tol);
        detail::read_if_present(tol, "dead_tol", sc.integ.dead_tol);
        detail::read_if_present(tol, "fd_step", sc.integ.fd_step);
        detail::read_if_present(tol, "max_step", sc.integ.max_step);
        detail::read_if_present(tol, "max_events", sc.integ.max_events);
        detail::read_if_present(tol, "newton_tol", sc.newton_tol);
        detail::read_if_present(tol, "newton_max_iter", sc.newton_max_iter);
        detail::read_if_present(tol, "fixed_point_tol", sc.fixed_point_tol);
        detail::read_if_present(tol, "map_fd_step", sc.map_fd_step);
        detail::read_if_present(tol, "eps_max", sc.eps_max);
    }

    if (auto it = doc.find("average"); it != doc.end()) {
        detail::reject_unknown_keys(*it, "average", {"grid_points", "half_width"});
        detail::read_if_present(*it, "grid_points", sc.average.grid_points);
        detail::read_if_present(*it, "half_width", sc.average.half_width);
        if (sc.average.grid_points < 2)
            throw Error(Errc::schema_error, "average.grid_points must be >= 2");
    }

    if (auto it = doc.find("stability"); it != doc.end()) {
        detail::reject_unknown_keys(*it, "stability", {"radius", "iterations"});
        detail::read_if_present(*it, "radius", sc.stability.radius);
        detail::read_if_present(*it, "iterations", sc.stability.iterations);
        if (sc.stability.radius < 0.0)
            throw Error(Errc::schema_error, "stability.radius must be >= 0");
        if (sc.stability.iterations < 0)
            throw Error(Errc::schema_error, "stability.iterations must be >= 0");
    }

    if (auto it = doc.find("check"); it != doc.end()) {
        detail::reject_unknown_keys(*it, "check",
                                    {"samples", "box_lo", "box_hi", "periodicity_tol", "sigma",
                                     "epsilons", "grid_size", "probe_step",
                                     "structural_tol_factor", "sensitivity_rel_tol"});
        detail::read_if_present(*it, "samples", sc.check.sample_count);
        detail::read_if_present(*it, "box_lo", sc.check.box_lo);
        detail::read_if_present(*it, "box_hi", sc.check.box_hi);
        detail::read_if_present(*it, "periodicity_tol", sc.check.periodicity_tol);
        detail::read_if_present(*it, "sigma", sc.check.sigma);
        detail::read_if_present(*it, "grid_size", sc.check.grid_size);
        detail::read_if_present(*it, "probe_step", sc.check.probe_step);
        detail::read_if_present(*it, "structural_tol_factor", sc.check.structural_tol_factor);
        detail::read_if_present(*it, "sensitivity_rel_tol", sc.check.sensitivity_rel_tol);
        if (auto eit = it->find("epsilons"); eit != it->end())
            sc.check.eps_list = detail::as_number_array(*eit, "check.epsilons");
        if (sc.check.sample_count < 1)
            throw Error(Errc::schema_error, "check.samples must be >= 1");
        if (sc.check.grid_size < 1000)
            throw Error(Errc::schema_error, "check.grid_size must be >= 1000");
    }

    if (auto it = doc.find("sweep"); it != doc.end()) {
        detail::reject_unknown_keys(*it, "sweep", {"epsilons", "parameter"});
        if (auto eit = it->find("epsilons"); eit != it->end())
            sc.sweep.epsilons = detail::as_number_array(*eit, "sweep.epsilons");
        if (auto pit = it->find("parameter"); pit != it->end()) {
            detail::reject_unknown_keys(*pit, "sweep.parameter", {"name", "values"});
            const json& pname = detail::require_key(*pit, "name", "sweep.parameter");
            if (!pname.is_string())
                throw Error(Errc::schema_error, "'sweep.parameter.name' must be a string");
            sc.sweep.parameter_name = pname.get<std::string>();
            sc.sweep.parameter_values = detail::as_number_array(
                detail::require_key(*pit, "values", "sweep.parameter"), "sweep.parameter.values");
            bool known = false;
            for (const auto& p : builtin_param_names(sc.model_name))
                if (p == sc.sweep.parameter_name) known = true;
            if (!known)
                throw Error(Errc::schema_error, "sweep parameter '" + sc.sweep.parameter_name +
                                                    "' is not a parameter of model '" +
                                                    sc.model_name + "'");
        }
        for (double e : sc.sweep.epsilons)
            if (e < 0.0 || e > 1.0)
                throw Error(Errc::schema_error, "sweep.epsilons entries must lie in [0, 1]");
    }

    return sc;
}

inline Scenario parse_scenario(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(Errc::io_error, "cannot open scenario file '" + path.string() + "'");
    json doc;
    try {
        doc = json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(Errc::parse_error, e.what());
    }
    return parse_scenario_json(doc);
}

/// Normalized echo of a scenario (defaults filled); deterministic.
inline json scenario_to_json(const Scenario& sc) {
    json j;
    j["schema_version"] = sc.schema_version;
    j["model"] = {{"name", sc.model_name}, {"params", sc.model_params}};
    j["epsilon"] = sc.epsilon;
    j["xi_guess"] = std::vector<double>(sc.xi_guess.data(), sc.xi_guess.data() + sc.xi_guess.size());
    if (sc.horizon >= 0.0) j["horizon"] = sc.horizon;  // absent means one period
    j["trajectory_samples"] = sc.trajectory_samples;
    j["tolerances"] = {{"rel_tol", sc.integ.rel_tol},
                       {"abs_tol", sc.integ.abs_tol},
                       {"event_tol", sc.integ.event_tol},
                       {"transversality_tol", sc.integ.transversality_tol},
                       {"dead_tol", sc.integ.dead_tol},
                       {"fd_step", sc.integ.fd_step},
                       {"max_step", sc.integ.max_step},
                       {"max_events", sc.integ.max_events},
                       {"newton_tol", sc.newton_tol},
                       {"newton_max_iter", sc.newton_max_iter},
                       {"fixed_point_tol", sc.fixed_point_tol},
                       {"map_fd_step", sc.map_fd_step},
                       {"eps_max", sc.eps_max}};
    j["average"] = {{"grid_points", sc.average.grid_points},
                    {"half_width", sc.average.half_width}};
    j["stability"] = {{"radius", sc.stability.radius},
                      {"iterations", sc.stability.iterations}};
    j["check"] = {{"samples", sc.check.sample_count},
                  {"box_lo", sc.check.box_lo},
                  {"box_hi", sc.check.box_hi},
                  {"periodicity_tol", sc.check.periodicity_tol},
                  {"sigma", sc.check.sigma},
                  {"epsilons", sc.check.eps_list},
                  {"grid_size", sc.check.grid_size},
                  {"probe_step", sc.check.probe_step},
                  {"structural_tol_factor", sc.check.structural_tol_factor},
                  {"sensitivity_rel_tol", sc.check.sensitivity_rel_tol}};
    json sweep;
    sweep["epsilons"] = sc.sweep.epsilons;
    if (!sc.sweep.parameter_name.empty())
        sweep["parameter"] = {{"name", sc.sweep.parameter_name},
                              {"values", sc.sweep.parameter_values}};
    j["sweep"] = sweep;
    return j;
}

}  // namespace pwsavg
