#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <vector>

#include "pwsavg/errors.hpp"
#include "pwsavg/model.hpp"

namespace pwsavg {

struct IntegratorOptions {
    double rel_tol = 1e-10;
    double abs_tol = 1e-12;
    double event_tol = 1e-12;
    double transversality_tol = 1e-6;
    double dead_tol = 1e-9;
    double fd_step = 1e-5;
    /// Step cap on dense-output paths; keeps the interpolant error near
    /// abs_tol (the continuous extension is one order below the step error).
    double max_step = 1e-2;
    double initial_step = 0.0;  ///< 0 = automatic
    double fixed_step = 0.0;    ///< >0 = constant steps, no error control
    int max_events = 1000;
    /// Honored at eps = 0 only: a switching component starting inside the
    /// dead band takes its orthant from the drift direction instead of
    /// raising BoundaryCrossing, and sign-noise crossings against the horizon
    /// are dropped. Used by the averaging sweeps.
    bool resolve_boundary_start = false;

    double event_cluster_tol() const { return 10.0 * event_tol; }

    /// Variant for endpoint-only solves (no dense queries): uncapped steps.
    IntegratorOptions endpoint_only() const {
        IntegratorOptions o = *this;
        o.max_step = std::numeric_limits<double>::infinity();
        return o;
    }
};

using RhsFn = std::function<Vec(double, const Vec&)>;

namespace detail {

/// One accepted Dormand-Prince step with its continuous extension
/// u(theta) = c1 + theta*(c2 + (1-theta)*(c3 + theta*(c4 + (1-theta)*c5))).
struct DenseStep {
    double t0 = 0.0;
    double h = 0.0;  // signed
    Vec c1, c2, c3, c4, c5;

    double t1() const { return t0 + h; }

    Vec eval(double t) const {
        double th = (t - t0) / h;
        double th1 = 1.0 - th;
        return c1 + th * (c2 + th1 * (c3 + th * (c4 + th1 * c5)));
    }

    Vec derivative(double t) const {
        double th = (t - t0) / h;
        Vec d = c2 + (1.0 - 2.0 * th) * c3 + th * (2.0 - 3.0 * th) * c4 +
                th * (2.0 - 6.0 * th + 4.0 * th * th) * c5;
        return d / h;
    }
};

/// Adaptive Dormand-Prince 5(4) with FSAL and dense output.
class Dopri5Stepper {
public:
    Dopri5Stepper(RhsFn rhs, double t0, Vec x0, double t_end, const IntegratorOptions& opts)
        : rhs_(std::move(rhs)), opts_(opts), t_(t0), t_end_(t_end), x_(std::move(x0)) {
        dir_ = t_end_ >= t_ ? 1.0 : -1.0;
        span_ = std::abs(t_end_ - t_);
        if (span_ == 0.0) {
            finished_ = true;
            return;
        }
        k1_ = rhs_(t_, x_);
        h_ = initial_step();
    }

    bool done() const { return finished_; }
    double t() const { return t_; }
    const Vec& x() const { return x_; }

    /// Take one accepted step toward t_end; returns its dense representation.
    const DenseStep& advance() {
        const double uround = std::numeric_limits<double>::epsilon();
        bool had_rejection = false;
        for (int attempt = 0; attempt < 500; ++attempt) {
            double h = h_;
            bool last = false;
            if (dir_ * (t_ + 1.01 * h - t_end_) >= 0.0) {
                h = t_end_ - t_;
                last = true;
            }
            if (std::abs(h) < 4.0 * uround * std::max(1.0, std::abs(t_)))
                throw Error(Errc::step_size_underflow,
                            "step size underflow at t = " + std::to_string(t_));

            // Stage evaluations.
            Vec k2 = rhs_(t_ + h * (1.0 / 5.0), x_ + h * ((1.0 / 5.0) * k1_));
            Vec k3 = rhs_(t_ + h * (3.0 / 10.0),
                          x_ + h * ((3.0 / 40.0) * k1_ + (9.0 / 40.0) * k2));
            Vec k4 = rhs_(t_ + h * (4.0 / 5.0),
                          x_ + h * ((44.0 / 45.0) * k1_ - (56.0 / 15.0) * k2 + (32.0 / 9.0) * k3));
            Vec k5 = rhs_(t_ + h * (8.0 / 9.0),
                          x_ + h * ((19372.0 / 6561.0) * k1_ - (25360.0 / 2187.0) * k2 +
                                    (64448.0 / 6561.0) * k3 - (212.0 / 729.0) * k4));
            Vec k6 = rhs_(t_ + h, x_ + h * ((9017.0 / 3168.0) * k1_ - (355.0 / 33.0) * k2 +
                                            (46732.0 / 5247.0) * k3 + (49.0 / 176.0) * k4 -
                                            (5103.0 / 18656.0) * k5));
            Vec x1 = x_ + h * ((35.0 / 384.0) * k1_ + (500.0 / 1113.0) * k3 +
                               (125.0 / 192.0) * k4 - (2187.0 / 6784.0) * k5 + (11.0 / 84.0) * k6);
            Vec k7 = rhs_(t_ + h, x1);

            double err = 0.0;
            if (opts_.fixed_step <= 0.0) {
                Vec e = h * ((71.0 / 57600.0) * k1_ - (71.0 / 16695.0) * k3 +
                             (71.0 / 1920.0) * k4 - (17253.0 / 339200.0) * k5 +
                             (22.0 / 525.0) * k6 - (1.0 / 40.0) * k7);
                err = scaled_norm(e, x_, x1);
            }

            if (opts_.fixed_step > 0.0 || err <= 1.0) {
                fill_dense(h, x1, k3, k4, k5, k6, k7);
                if (opts_.fixed_step <= 0.0) {
                    double fac = 0.9 * std::pow(std::max(err, 1e-30), -0.2);
                    fac = std::clamp(fac, 0.2, had_rejection ? 1.0 : 5.0);
                    h_ = cap_step(h * fac);
                }
                k1_ = std::move(k7);
                x_ = std::move(x1);
                t_ = last ? t_end_ : t_ + h;
                if (last || std::abs(t_end_ - t_) <=
                                4.0 * uround * std::max(1.0, std::abs(t_end_)))
                    finished_ = true;
                return step_;
            }

            had_rejection = true;
            double fac = std::max(0.2, 0.9 * std::pow(err, -0.2));
            h_ = h * std::min(fac, 1.0);
        }
        throw Error(Errc::step_size_underflow, "too many rejected steps");
    }

private:
    double scaled_norm(const Vec& e, const Vec& x0, const Vec& x1) const {
        double s = 0.0;
        for (Eigen::Index i = 0; i < e.size(); ++i) {
            double sk = opts_.abs_tol +
                        opts_.rel_tol * std::max(std::abs(x0[i]), std::abs(x1[i]));
            double q = e[i] / sk;
            s += q * q;
        }
        return std::sqrt(s / static_cast<double>(e.size()));
    }

    double cap_step(double h) const {
        double m = std::min(opts_.max_step, span_);
        return dir_ * std::min(std::abs(h), m);
    }

    double initial_step() const {
        if (opts_.fixed_step > 0.0) return dir_ * std::min(opts_.fixed_step, span_);
        if (opts_.initial_step > 0.0) return cap_step(dir_ * opts_.initial_step);
        // Hairer-style heuristic from the first derivative values.
        double d0 = 0.0, d1 = 0.0;
        for (Eigen::Index i = 0; i < x_.size(); ++i) {
            double sk = opts_.abs_tol + opts_.rel_tol * std::abs(x_[i]);
            d0 += (x_[i] / sk) * (x_[i] / sk);
            d1 += (k1_[i] / sk) * (k1_[i] / sk);
        }
        d0 = std::sqrt(d0 / static_cast<double>(x_.size()));
        d1 = std::sqrt(d1 / static_cast<double>(x_.size()));
        double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
        h0 = std::min(h0, span_);
        Vec x1 = x_ + dir_ * h0 * k1_;
        Vec f1 = rhs_(t_ + dir_ * h0, x1);
        double d2 = 0.0;
        for (Eigen::Index i = 0; i < x_.size(); ++i) {
            double sk = opts_.abs_tol + opts_.rel_tol * std::abs(x_[i]);
            double q = (f1[i] - k1_[i]) / sk;
            d2 += q * q;
        }
        d2 = std::sqrt(d2 / static_cast<double>(x_.size())) / h0;
        double dm = std::max(d1, d2);
        double h1 = dm <= 1e-15 ? std::max(1e-6, h0 * 1e-3) : std::pow(0.01 / dm, 0.2);
        double h = std::min(100.0 * h0, h1);
        // near-zero states can drive h0 under the underflow floor; a too-small
        // first try only costs growth steps, so keep it clear of the floor
        h = std::max(h, 1e-8 * span_);
        return cap_step(dir_ * h);
    }

    void fill_dense(double h, const Vec& x1, const Vec& k3, const Vec& k4, const Vec& k5,
                    const Vec& k6, const Vec& k7) {
        Vec ydiff = x1 - x_;
        Vec bspl = h * k1_ - ydiff;
        step_.t0 = t_;
        step_.h = h;
        step_.c1 = x_;
        step_.c2 = ydiff;
        step_.c3 = bspl;
        step_.c4 = ydiff - h * k7 - bspl;
        step_.c5 = h * ((-12715105075.0 / 11282082432.0) * k1_ +
                        (87487479700.0 / 32700410799.0) * k3 +
                        (-10690763975.0 / 1880347072.0) * k4 +
                        (701980252875.0 / 199316789632.0) * k5 +
                        (-1453857185.0 / 822651844.0) * k6 + (69997945.0 / 29380423.0) * k7);
    }

    RhsFn rhs_;
    IntegratorOptions opts_;
    double t_;
    double t_end_;
    double dir_ = 1.0;
    double span_ = 0.0;
    double h_ = 0.0;
    Vec x_;
    Vec k1_;
    DenseStep step_;
    bool finished_ = false;
};

}  // namespace detail

/// Dense piecewise-polynomial solution on one smooth span. Evaluable at any
/// t inside [t_begin, t_end] to the integrator's accuracy.
class DenseSegment {
public:
    OrthantSignature signature;  ///< active orthant; empty for plain smooth solves
    std::vector<detail::DenseStep> steps;

    double t_begin() const { return tb_; }
    double t_end() const { return te_; }

    Vec eval(double t) const {
        if (steps.empty()) return x_begin_;
        const auto& s = step_at(t);
        return s.eval(clamp(t));
    }

    Vec derivative(double t) const {
        if (steps.empty())
            throw Error(Errc::invalid_params, "derivative of a zero-length segment");
        return step_at(t).derivative(clamp(t));
    }

    void init(double t0, const Vec& x0) {
        tb_ = te_ = t0;
        x_begin_ = x0;
    }
    void push_step(const detail::DenseStep& step) {
        steps.push_back(step);
        te_ = step.t1();
    }
    void set_end(double te) { te_ = te; }

private:
    double clamp(double t) const { return std::clamp(t, std::min(tb_, te_), std::max(tb_, te_)); }

    const detail::DenseStep& step_at(double t) const {
        double tc = clamp(t);
        double dir = steps.front().h >= 0.0 ? 1.0 : -1.0;
        size_t lo = 0, hi = steps.size();
        while (hi - lo > 1) {
            size_t mid = (lo + hi) / 2;
            if (dir * steps[mid].t0 <= dir * tc)
                lo = mid;
            else
                hi = mid;
        }
        return steps[lo];
    }

    double tb_ = 0.0, te_ = 0.0;
    Vec x_begin_;
};

/// A transversal crossing of one switching hyperplane.
struct SwitchEvent {
    double time = 0.0;
    int component = 0;  ///< 0-based
    int sign_before = 0;
    int sign_after = 0;
    double margin = 0.0;  ///< |xdot_j| of the incoming field at the crossing
};

/// Glued piecewise-smooth solution on [0, horizon].
struct Trajectory {
    std::vector<DenseSegment> segments;
    std::vector<SwitchEvent> events;
    Vec initial_state;
    double epsilon = 0.0;

    double horizon() const { return segments.empty() ? 0.0 : segments.back().t_end(); }

    const DenseSegment& segment_at(double t) const {
        if (segments.empty()) throw Error(Errc::invalid_params, "empty trajectory");
        size_t lo = 0, hi = segments.size();
        while (hi - lo > 1) {
            size_t mid = (lo + hi) / 2;
            if (segments[mid].t_begin() <= t)
                lo = mid;
            else
                hi = mid;
        }
        return segments[lo];
    }

    Vec eval(double t) const { return segment_at(t).eval(t); }
    const OrthantSignature& signature_at(double t) const { return segment_at(t).signature; }
};

/// Adaptive solve of a smooth IVP with dense output. Local error is
/// controlled by (rel_tol, abs_tol); t1 may be below t0 (backward solve).
inline DenseSegment integrate_smooth(const RhsFn& rhs, double t0, const Vec& x0, double t1,
                                     const IntegratorOptions& opts = {}) {
    DenseSegment seg;
    seg.init(t0, x0);
    if (t1 == t0) return seg;
    detail::Dopri5Stepper stepper(rhs, t0, x0, t1, opts);
    while (!stepper.done()) seg.push_step(stepper.advance());
    seg.set_end(t1);
    return seg;
}

namespace detail {

/// Hybrid secant/bisection root refinement on a bracketing interval of g,
/// with g(a) > 0 >= g(b). Shrinks the bracket below xtol and keeps the
/// endpoint with the smaller residual.
inline double refine_bracket(const std::function<double(double)>& g, double a, double b,
                             double ga, double gb, double xtol) {
    const double uround = std::numeric_limits<double>::epsilon();
    for (int it = 0; it < 200; ++it) {
        double width = b - a;
        if (width <= xtol || width <= 4.0 * uround * std::max(std::abs(a), std::abs(b))) break;
        double c = b - gb * width / (gb - ga);  // secant
        double guard = 0.05 * width;
        if (!(c > a + guard && c < b - guard)) c = 0.5 * (a + b);
        double gc = g(c);
        if (gc <= 0.0) {
            b = c;
            gb = gc;
        } else {
            a = c;
            ga = gc;
        }
    }
    return std::abs(gb) <= std::abs(ga) ? b : a;
}

struct CrossingHit {
    double time = 0.0;
    int component = 0;
};

/// Interior minimum of g between two sample times, located by bisection on
/// the interpolant derivative (which changes sign from - to + there).
inline double locate_minimum(const std::function<double(double)>& gp, double a, double b) {
    for (int it = 0; it < 80 && b - a > 1e-15 * std::max(1.0, std::abs(b)); ++it) {
        double m = 0.5 * (a + b);
        if (gp(m) < 0.0)
            a = m;
        else
            b = m;
    }
    return 0.5 * (a + b);
}

/// Earliest incident of sig_j * x_j against zero over one dense step,
/// scanning at <= h/8 spacing. Sign changes at the samples are crossings;
/// between samples, interior minima dipping to (or within dead_tol of) the
/// hyperplane are caught as well - those are grazing approaches narrower than
/// the sampling, and raise TangentialContact when they are the earliest
/// incident. Returns all components crossing within cluster_tol of the
/// earliest one.
inline std::vector<CrossingHit> scan_step_for_crossings(const DenseStep& step,
                                                        const std::vector<int>& components,
                                                        const OrthantSignature& sig,
                                                        const IntegratorOptions& opts) {
    struct Incident {
        double time;
        int component;
        bool graze;
        double approach;
    };
    std::vector<Incident> incidents;
    for (int j : components) {
        double ref = static_cast<double>(sig.signs[static_cast<size_t>(j)]);
        auto g = [&](double t) { return ref * step.eval(t)[j]; };
        auto gp = [&](double t) { return ref * step.derivative(t)[j]; };
        const int kSamples = 8;
        double prev_t = step.t0;
        double prev_g = g(prev_t);
        double prev_gp = gp(prev_t);
        for (int k = 1; k <= kSamples; ++k) {
            double cur_t = step.t0 + step.h * static_cast<double>(k) / kSamples;
            double cur_g = g(cur_t);
            double cur_gp = gp(cur_t);
            if (prev_g > 0.0 && cur_g <= 0.0) {
                double root = refine_bracket(g, prev_t, cur_t, prev_g, cur_g, opts.event_tol);
                incidents.push_back({root, j, false, 0.0});
                break;
            }
            bool found = false;
            if (prev_g > 0.0 && cur_g > 0.0 && prev_gp < 0.0 && cur_gp >= 0.0) {
                double t_min = locate_minimum(gp, prev_t, cur_t);
                double g_min = g(t_min);
                if (g_min <= 0.0) {
                    double root = refine_bracket(g, prev_t, t_min, prev_g, g_min, opts.event_tol);
                    incidents.push_back({root, j, false, 0.0});
                    found = true;
                } else if (g_min <= opts.dead_tol) {
                    incidents.push_back({t_min, j, true, g_min});
                    found = true;
                }
            }
            if (found) break;
            prev_t = cur_t;
            prev_g = cur_g;
            prev_gp = cur_gp;
        }
    }
    if (incidents.empty()) return {};
    std::sort(incidents.begin(), incidents.end(), [](const Incident& x, const Incident& y) {
        return x.time < y.time || (x.time == y.time && x.component < y.component);
    });
    if (incidents.front().graze)
        throw Error(Errc::tangential_contact,
                    "component " + std::to_string(incidents.front().component + 1) +
                        " grazes its hyperplane at t = " + std::to_string(incidents.front().time) +
                        " (closest approach " + std::to_string(incidents.front().approach) + ")");
    double earliest = incidents.front().time;
    std::vector<CrossingHit> cluster;
    for (const auto& inc : incidents)
        if (!inc.graze && inc.time - earliest <= opts.event_cluster_tol())
            cluster.push_back({inc.time, inc.component});
    return cluster;
}

}  // namespace detail

/// Earliest root of x_j(t) = 0 on the segment (searching from t_from),
/// refined by bracketing to |residual| <= event_tol and bracket width
/// <= event_tol. Throws TangentialContact when the crossing derivative is
/// below transversality_tol. Returns nothing when the component keeps its
/// sign.
inline std::optional<double> locate_event(const DenseSegment& seg, int component,
                                          double event_tol, double transversality_tol = 1e-6,
                                          double t_from = std::numeric_limits<double>::quiet_NaN()) {
    if (seg.steps.empty()) return std::nullopt;
    if (std::isnan(t_from)) t_from = seg.t_begin();
    auto value = [&](double t) { return seg.eval(t)[component]; };
    for (const auto& step : seg.steps) {
        if (step.t1() <= t_from) continue;
        const int kSamples = 8;
        double a = std::max(step.t0, t_from);
        double ga = value(a);
        for (int k = 1; k <= kSamples; ++k) {
            double b = step.t0 + step.h * static_cast<double>(k) / kSamples;
            if (b <= a) continue;
            double gb = value(b);
            if (ga != 0.0 && ga * gb <= 0.0) {
                auto g = ga > 0.0 ? std::function<double(double)>(value)
                                  : std::function<double(double)>(
                                        [&](double t) { return -value(t); });
                double root = detail::refine_bracket(g, a, b, std::abs(ga), ga > 0.0 ? gb : -gb,
                                                     event_tol);
                double slope = seg.derivative(root)[component];
                if (std::abs(slope) < transversality_tol)
                    throw Error(Errc::tangential_contact,
                                "grazing contact of component " + std::to_string(component + 1) +
                                    " at t = " + std::to_string(root));
                return root;
            }
            a = b;
            ga = gb;
        }
    }
    return std::nullopt;
}

/// Piecewise-smooth solve on [0, horizon]: smooth integration inside each
/// orthant, transversal crossings located on the dense output, and the
/// solution restarted on the other side with the neighboring branch.
inline Trajectory integrate_piecewise(const PiecewiseSystem& sys, const Vec& xi, double eps,
                                      double horizon, const IntegratorOptions& opts = {}) {
    if (xi.size() != sys.dimension)
        throw Error(Errc::invalid_params, "initial state dimension mismatch");
    if (eps < 0.0) throw Error(Errc::invalid_params, "eps must be >= 0");
    if (horizon < 0.0) throw Error(Errc::invalid_params, "horizon must be >= 0");

    OrthantSignature sig = orthant_signature(xi, opts.dead_tol);
    bool relaxed = opts.resolve_boundary_start && eps == 0.0;
    for (int j : sys.switching_components) {
        if (sig.signs[static_cast<size_t>(j)] != 0) continue;
        if (relaxed) {
            double v = -sys.drift(0.0, xi)[j];
            if (std::abs(v) < opts.transversality_tol)
                throw Error(Errc::tangential_contact,
                            "drift tangent to hyperplane of component " + std::to_string(j + 1) +
                                " at the initial point");
            sig.signs[static_cast<size_t>(j)] = v > 0.0 ? 1 : -1;
        } else {
            throw Error(Errc::boundary_crossing,
                        "initial state lies on the switching hyperplane of component " +
                            std::to_string(j + 1) + "; the first crossing time must be positive");
        }
    }

    Trajectory traj;
    traj.initial_state = xi;
    traj.epsilon = eps;

    if (horizon == 0.0) {
        DenseSegment seg;
        seg.init(0.0, xi);
        seg.signature = sig;
        traj.segments.push_back(std::move(seg));
        return traj;
    }

    const double boundary_guard = std::max(opts.event_cluster_tol(), relaxed ? 1e-10 : 0.0);
    double t = 0.0;
    Vec x = xi;
    while (t < horizon) {
        DenseSegment seg;
        seg.init(t, x);
        seg.signature = sig;
        OrthantSignature active = sig;  // frozen for this segment's rhs
        RhsFn rhs = [&sys, eps, active](double tt, const Vec& xx) {
            return rhs_full(sys, tt, xx, eps, active);
        };
        detail::Dopri5Stepper stepper(rhs, t, x, horizon, opts);
        std::vector<detail::CrossingHit> cluster;
        while (!stepper.done()) {
            const auto& step = stepper.advance();
            seg.push_step(step);
            cluster = detail::scan_step_for_crossings(step, sys.switching_components, sig, opts);
            if (cluster.empty()) continue;
            double t_star = cluster.front().time;
            if (t_star >= horizon - boundary_guard) {
                if (relaxed) {
                    cluster.clear();  // sign noise against the horizon; ignore
                    continue;
                }
                throw Error(Errc::boundary_crossing,
                            "crossing at t = " + std::to_string(t_star) +
                                " coincides with the horizon");
            }
            if (t_star <= boundary_guard)
                throw Error(Errc::boundary_crossing,
                            "crossing at t = " + std::to_string(t_star) +
                                " coincides with the start of the run");
            break;
        }

        if (cluster.empty()) {
            seg.set_end(horizon);
            traj.segments.push_back(std::move(seg));
            break;
        }

        double t_star = cluster.front().time;
        Vec x_star = seg.eval(t_star);
        Vec field_before = rhs_full(sys, t_star, x_star, eps, sig);

        OrthantSignature nsig = sig;
        Vec x_new = x_star;
        for (const auto& hit : cluster) {
            size_t j = static_cast<size_t>(hit.component);
            nsig.signs[j] = -sig.signs[j];
            x_new[hit.component] = 0.0;
        }
        Vec field_after = rhs_full(sys, t_star, x_new, eps, nsig);

        if (static_cast<int>(traj.events.size() + cluster.size()) > opts.max_events)
            throw Error(Errc::max_events_exceeded,
                        "more than " + std::to_string(opts.max_events) + " crossings before t = " +
                            std::to_string(t_star));

        for (const auto& hit : cluster) {
            int j = hit.component;
            double margin = std::abs(field_before[j]);
            if (margin < opts.transversality_tol)
                throw Error(Errc::tangential_contact,
                            "grazing contact of component " + std::to_string(j + 1) +
                                " at t = " + std::to_string(hit.time));
            int after = nsig.signs[static_cast<size_t>(j)];
            double out_speed = field_after[j];
            if (std::abs(out_speed) < opts.transversality_tol)
                throw Error(Errc::tangential_contact,
                            "outgoing field tangent on component " + std::to_string(j + 1) +
                                " at t = " + std::to_string(hit.time));
            if ((out_speed > 0.0 ? 1 : -1) != after)
                throw Error(Errc::sticking_detected,
                            "both one-sided fields push component " + std::to_string(j + 1) +
                                " toward its hyperplane at t = " + std::to_string(hit.time));
            SwitchEvent ev;
            ev.time = hit.time;
            ev.component = j;
            ev.sign_before = sig.signs[static_cast<size_t>(j)];
            ev.sign_after = after;
            ev.margin = margin;
            traj.events.push_back(ev);
        }

        seg.set_end(t_star);
        traj.segments.push_back(std::move(seg));
        t = t_star;
        x = std::move(x_new);
        sig = nsig;
    }
    return traj;
}

/// Solution of the unperturbed system xdot + h(t,x) = 0 from xi, evaluated at
/// t. The unperturbed dynamics is smooth, so no event handling is involved.
inline Vec generating_flow(const PiecewiseSystem& sys, const Vec& xi, double t,
                           const IntegratorOptions& opts = {}) {
    if (t == 0.0) return xi;
    RhsFn rhs = [&sys](double tt, const Vec& xx) { return Vec(-sys.drift(tt, xx)); };
    detail::Dopri5Stepper stepper(rhs, 0.0, xi, t, opts.endpoint_only());
    while (!stepper.done()) stepper.advance();
    return stepper.x();
}

/// Inverse of the time-t unperturbed flow: the xi with flow(xi, t) = y,
/// computed by integrating backward from (t, y) to time 0.
inline Vec inverse_generating_flow(const PiecewiseSystem& sys, const Vec& y, double t,
                                   const IntegratorOptions& opts = {}) {
    if (t == 0.0) return y;
    RhsFn rhs = [&sys](double tt, const Vec& xx) { return Vec(-sys.drift(tt, xx)); };
    detail::Dopri5Stepper stepper(rhs, t, y, 0.0, opts.endpoint_only());
    while (!stepper.done()) stepper.advance();
    return stepper.x();
}

namespace detail {

inline Mat drift_jacobian_or_fd(const PiecewiseSystem& sys, double t, const Vec& x,
                                double fd_step) {
    if (sys.drift_jacobian) return sys.drift_jacobian(t, x);
    Mat J(sys.dimension, sys.dimension);
    for (int j = 0; j < sys.dimension; ++j) {
        Vec xp = x, xm = x;
        xp[j] += fd_step;
        xm[j] -= fd_step;
        J.col(j) = (sys.drift(t, xp) - sys.drift(t, xm)) / (2.0 * fd_step);
    }
    return J;
}

}  // namespace detail

/// Fundamental matrix M(t) of the unperturbed flow: solution of
/// Mdot = -dh/dx(t, x(t,xi,0)) * M, M(0) = I, along the flow from xi.
inline Mat fundamental_matrix(const PiecewiseSystem& sys, const Vec& xi, double t,
                              const IntegratorOptions& opts = {}) {
    const int n = sys.dimension;
    if (t == 0.0) return Mat::Identity(n, n);
    Vec z0(n + n * n);
    z0.head(n) = xi;
    Eigen::Map<Mat>(z0.data() + n, n, n) = Mat::Identity(n, n);
    RhsFn rhs = [&sys, n, &opts](double tt, const Vec& z) {
        Vec x = z.head(n);
        Eigen::Map<const Mat> M(z.data() + n, n, n);
        Mat J = detail::drift_jacobian_or_fd(sys, tt, x, opts.fd_step);
        Vec dz(n + n * n);
        dz.head(n) = -sys.drift(tt, x);
        Eigen::Map<Mat>(dz.data() + n, n, n) = -(J * M);
        return dz;
    };
    detail::Dopri5Stepper stepper(rhs, 0.0, z0, t, opts.endpoint_only());
    while (!stepper.done()) stepper.advance();
    return Eigen::Map<const Mat>(stepper.x().data() + n, n, n);
}

}  // namespace pwsavg
