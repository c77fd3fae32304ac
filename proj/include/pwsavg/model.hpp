#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include "pwsavg/errors.hpp"

namespace pwsavg {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

/// Per-component sign pattern selecting the active orthant. Entries are -1,
/// +1, or 0 for components sitting inside the dead band around a hyperplane.
struct OrthantSignature {
    std::vector<int> signs;

    OrthantSignature() = default;
    explicit OrthantSignature(std::vector<int> s) : signs(std::move(s)) {}

    int size() const { return static_cast<int>(signs.size()); }
    bool empty() const { return signs.empty(); }

    bool resolved_on(const std::vector<int>& components) const {
        for (int j : components)
            if (signs[static_cast<size_t>(j)] == 0) return false;
        return true;
    }

    std::string to_string() const {
        std::string out;
        out.reserve(signs.size());
        for (int s : signs) out.push_back(s > 0 ? '+' : (s < 0 ? '-' : '0'));
        return out;
    }

    bool operator==(const OrthantSignature&) const = default;
};

/// Sign pattern of a state, with |x_j| <= dead_tol mapped to 0.
inline OrthantSignature orthant_signature(const Vec& x, double dead_tol) {
    if (!(dead_tol > 0.0)) throw Error(Errc::invalid_params, "dead_tol must be > 0");
    OrthantSignature sig;
    sig.signs.resize(static_cast<size_t>(x.size()));
    for (Eigen::Index j = 0; j < x.size(); ++j) {
        double v = x[j];
        sig.signs[static_cast<size_t>(j)] = std::abs(v) <= dead_tol ? 0 : (v > 0.0 ? 1 : -1);
    }
    return sig;
}

/// A T-periodic system  xdot + h(t,x) = eps * f(t,x,eps)  whose perturbation f
/// is selected branch-wise by the orthant of x. Values are immutable after
/// construction and safe to share across threads.
struct PiecewiseSystem {
    int dimension = 0;
    double period = 0.0;

    /// Smooth drift h(t,x); independent of eps.
    std::function<Vec(double, const Vec&)> drift;

    /// Perturbation branch f_s(t,x,eps) for the orthant described by sig.
    std::function<Vec(double, const Vec&, double, const OrthantSignature&)> perturbation;

    /// Analytic d h/d x, optional; central differences are used when absent.
    std::function<Mat(double, const Vec&)> drift_jacobian;

    /// 0-based components whose hyperplanes {x_j = 0} carry discontinuities.
    std::vector<int> switching_components;

    std::string name;
    std::map<std::string, double> parameters;

    bool is_switching(int j) const {
        for (int c : switching_components)
            if (c == j) return true;
        return false;
    }
};

/// Full right-hand side xdot = -h(t,x) + eps * f_sig(t,x,eps) in the orthant
/// selected by sig. The caller resolves the active orthant; a 0 entry on a
/// switching component is an error.
inline Vec rhs_full(const PiecewiseSystem& sys, double t, const Vec& x, double eps,
                    const OrthantSignature& sig) {
    if (sig.size() != sys.dimension)
        throw Error(Errc::invalid_params, "signature length does not match system dimension");
    for (int j : sys.switching_components) {
        if (sig.signs[static_cast<size_t>(j)] == 0)
            throw Error(Errc::unresolved_orthant,
                        "signature entry 0 on switching component " + std::to_string(j + 1));
    }
    Vec out = -sys.drift(t, x);
    if (eps != 0.0) out += eps * sys.perturbation(t, x, eps, sig);
    return out;
}

namespace detail {

inline double require_param(const std::map<std::string, double>& params, const std::string& key,
                            bool positive) {
    auto it = params.find(key);
    if (it == params.end())
        throw Error(Errc::invalid_params, "missing parameter '" + key + "'");
    if (positive && !(it->second > 0.0))
        throw Error(Errc::invalid_params, "parameter '" + key + "' must be > 0");
    return it->second;
}

inline void reject_extra_params(const std::map<std::string, double>& params,
                                const std::vector<std::string>& allowed) {
    for (const auto& [key, value] : params) {
        (void)value;
        bool known = false;
        for (const auto& a : allowed)
            if (a == key) known = true;
        if (!known) throw Error(Errc::invalid_params, "unknown parameter '" + key + "'");
    }
}

// Friction branch value for one component: -a on the positive side, +b on the
// negative side; `flip` negates the branch (used by the anti model).
inline double friction_branch(int sign, double a, double b, bool flip) {
    double v = sign > 0 ? -a : b;
    return flip ? -v : v;
}

inline PiecewiseSystem make_friction_1d(const std::string& name,
                                        const std::map<std::string, double>& params, bool flip) {
    reject_extra_params(params, {"a", "b"});
    double a = require_param(params, "a", true);
    double b = require_param(params, "b", true);
    PiecewiseSystem sys;
    sys.dimension = 1;
    sys.period = kTwoPi;
    sys.name = name;
    sys.parameters = params;
    sys.switching_components = {0};
    sys.drift = [](double t, const Vec&) {
        Vec h(1);
        h[0] = -std::cos(t);
        return h;
    };
    sys.drift_jacobian = [](double, const Vec&) { return Mat::Zero(1, 1); };
    sys.perturbation = [a, b, flip](double, const Vec&, double, const OrthantSignature& sig) {
        Vec f(1);
        f[0] = friction_branch(sig.signs[0], a, b, flip);
        return f;
    };
    return sys;
}

inline PiecewiseSystem make_dual_friction(const std::map<std::string, double>& params) {
    reject_extra_params(params, {"a1", "b1", "a2", "b2", "phi"});
    double a1 = require_param(params, "a1", true);
    double b1 = require_param(params, "b1", true);
    double a2 = require_param(params, "a2", true);
    double b2 = require_param(params, "b2", true);
    double phi = require_param(params, "phi", false);
    PiecewiseSystem sys;
    sys.dimension = 2;
    sys.period = kTwoPi;
    sys.name = "dual_dry_friction";
    sys.parameters = params;
    sys.switching_components = {0, 1};
    sys.drift = [phi](double t, const Vec&) {
        Vec h(2);
        h[0] = -std::cos(t);
        h[1] = -std::cos(t + phi);
        return h;
    };
    sys.drift_jacobian = [](double, const Vec&) { return Mat::Zero(2, 2); };
    sys.perturbation = [a1, b1, a2, b2](double, const Vec&, double,
                                        const OrthantSignature& sig) {
        Vec f(2);
        f[0] = friction_branch(sig.signs[0], a1, b1, false);
        f[1] = friction_branch(sig.signs[1], a2, b2, false);
        return f;
    };
    return sys;
}

}  // namespace detail

inline std::vector<std::string> builtin_names() {
    return {"dry_friction", "anti_dry_friction", "dual_dry_friction"};
}

/// Parameter names each builtin accepts (all required).
inline std::vector<std::string> builtin_param_names(const std::string& name) {
    if (name == "dry_friction" || name == "anti_dry_friction") return {"a", "b"};
    if (name == "dual_dry_friction") return {"a1", "b1", "a2", "b2", "phi"};
    throw Error(Errc::unknown_model, "no builtin model named '" + name + "'");
}

/// Builtin model registry.
///  - dry_friction(a,b):       xdot = cos t - a*eps on {x>0}, cos t + b*eps on {x<0}
///  - anti_dry_friction(a,b):  same with the perturbation sign negated
///  - dual_dry_friction(a1,b1,a2,b2,phi): two decoupled components, the second
///    driven by cos(t+phi)
inline PiecewiseSystem make_builtin(const std::string& name,
                                    const std::map<std::string, double>& params) {
    if (name == "dry_friction") return detail::make_friction_1d(name, params, false);
    if (name == "anti_dry_friction") return detail::make_friction_1d(name, params, true);
    if (name == "dual_dry_friction") return detail::make_dual_friction(params);
    throw Error(Errc::unknown_model, "no builtin model named '" + name + "'");
}

}  // namespace pwsavg
