#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <vector>

#include "btmpc/battery.hpp"

namespace btmpc {

enum class StageCostKind { Economic, Tracking, EconomicWithSlack };

/// Soft (penalty-enforced) per-step state bounds.
struct StateBounds {
    double t_lower = 20.0;
    double t_upper = 40.0;
    double soc_lower = 0.30;
    double soc_upper = 0.90;
};

inline StateBounds state_bounds_from(const BatteryParams& p) {
    return {p.t_lower, p.t_upper, p.soc_lower, p.soc_upper};
}

/// Slack specification for the variable temperature upper bound. One slack per
/// step; step i tightens the bound on the state reached at i+1 and the cost
/// carries gamma * (delta_now - eps_i)^2.
struct SlackSpec {
    double gamma = 10.0;
    double delta_now = 0.0;  // measured violation of the plant, K
    double eps_max = 5.0;    // K
};

/// References for the tracking cost; sized horizon_steps + 1 (index 0 is the
/// initial state, kept in the cost verbatim).
struct TrackingRefs {
    std::vector<double> t_ref;
    std::vector<double> soc_ref;
    double soc_weight = 1.0e4;  // w1
};

/// Finite-horizon optimal control problem over the cooling-rate sequence.
struct OcpProblem {
    std::size_t horizon_steps = 0;
    double step = 1.0;  // s
    BatteryState initial_state;
    std::vector<double> p_trac_preview;  // length >= horizon_steps
    BatteryParams params;
    ModelPair models = exact_plant_models();
    StageCostKind cost = StageCostKind::Economic;
    double qdot_lower = -3000.0;
    double qdot_upper = 0.0;
    std::optional<StateBounds> state_bounds;
    std::optional<SlackSpec> slack;
    TrackingRefs refs;

    void validate() const {
        if (!(step > 0.0)) throw std::invalid_argument("ocp step must be > 0");
        if (p_trac_preview.size() < horizon_steps)
            throw std::invalid_argument("p_trac preview shorter than horizon");
        if (!(qdot_lower < qdot_upper + 1e-12) || qdot_upper > 0.0)
            throw std::invalid_argument("input bounds must satisfy lower < upper <= 0");
        if (cost == StageCostKind::Tracking &&
            (refs.t_ref.size() < horizon_steps + 1 || refs.soc_ref.size() < horizon_steps + 1))
            throw std::invalid_argument("tracking references shorter than horizon + 1");
        if (cost == StageCostKind::EconomicWithSlack && !slack)
            throw std::invalid_argument("slack cost requires a slack spec");
    }
};

enum class SolveStatus { Converged, IterLimit, InfeasibleRelaxed };

struct OcpSolution {
    std::vector<double> qdot_seq;
    std::vector<double> slack_seq;          // empty unless slack enabled
    std::vector<BatteryState> state_traj;   // horizon_steps + 1 states
    double cost = 0.0;                      // declared stage cost, unpenalized
    double penalized_cost = 0.0;            // cost + penalty at penalty_weight
    double penalty_weight = 0.0;            // final soft-constraint weight
    SolveStatus status = SolveStatus::Converged;
    double kkt_residual = 0.0;
    double bound_residual = 0.0;            // max state-bound excess of the plan
    double solve_time = 0.0;                // s
};

struct SolverConfig {
    int max_iterations = 400;
    double kkt_tolerance = 1e-4;
    double finite_difference_step = 1e-5;  // relative to each variable's box width
    double state_constraint_penalty = 1e3; // initial mu
    int penalty_escalations = 3;
    double penalty_factor = 10.0;
    double violation_tolerance = 1e-3;
    double armijo_c = 1e-4;
    double backtrack_factor = 0.5;
    int max_backtracks = 40;
};

struct RolloutResult {
    std::vector<BatteryState> states;   // horizon_steps + 1
    double cost = 0.0;                  // declared stage cost
    std::vector<double> violations;     // per step j=1..n: max(0, bound excess)
    bool dynamics_failed = false;
    std::size_t failed_step = 0;
};

namespace detail {

struct EvalAux {
    double penalty = 0.0;        // mu-weighted soft-constraint penalty
    double max_violation = 0.0;  // largest raw bound excess
};

/// Forward pass: trajectory, declared cost, penalty. Optionally records step
/// Jacobians for the adjoint pass.
inline bool forward_pass(const OcpProblem& pb, const std::vector<double>& q,
                         const std::vector<double>& eps, double mu,
                         RolloutResult& rr, EvalAux& aux,
                         std::vector<StepJacobian>* jacs) {
    const std::size_t n = pb.horizon_steps;
    rr.states.assign(1, pb.initial_state);
    rr.states.reserve(n + 1);
    rr.violations.assign(n, 0.0);
    rr.cost = 0.0;
    rr.dynamics_failed = false;
    aux = {};
    if (jacs) jacs->resize(n);

    const bool slacked = pb.slack.has_value();
    const double ac = pb.params.cooling_coefficient;

    double tracking_cost = 0.0;
    if (pb.cost == StageCostKind::Tracking) {
        const double e_t = pb.initial_state.t_bat - pb.refs.t_ref[0];
        const double e_s = pb.initial_state.soc - pb.refs.soc_ref[0];
        tracking_cost += e_t * e_t + pb.refs.soc_weight * e_s * e_s;
    }

    for (std::size_t i = 0; i < n; ++i) {
        const BatteryState& x = rr.states.back();
        const double ptr = pb.p_trac_preview[i];
        StepResult next;
        try {
            next = step(x, ptr, q[i], pb.step, pb.params, pb.models);
            if (jacs) (*jacs)[i] = step_jacobian(x, ptr, q[i], pb.step, pb.params, pb.models);
        } catch (const PowerLimitError&) {
            rr.dynamics_failed = true;
            rr.failed_step = i;
            rr.cost = std::numeric_limits<double>::infinity();
            return false;
        }
        rr.states.push_back(next.state);

        // input stage terms
        if (pb.cost == StageCostKind::Economic || pb.cost == StageCostKind::EconomicWithSlack)
            rr.cost += ac * q[i];
        if (pb.cost == StageCostKind::EconomicWithSlack) {
            const double d = pb.slack->delta_now - eps[i];
            rr.cost += pb.slack->gamma * d * d;
        }
        if (pb.cost == StageCostKind::Tracking) {
            const double e_t = next.state.t_bat - pb.refs.t_ref[i + 1];
            const double e_s = next.state.soc - pb.refs.soc_ref[i + 1];
            tracking_cost += e_t * e_t + pb.refs.soc_weight * e_s * e_s;
        }

        // soft state bounds on the reached state
        if (pb.state_bounds) {
            const auto& b = *pb.state_bounds;
            const double t_hi = b.t_upper - (slacked ? eps[i] : 0.0);
            const double vt_hi = std::max(0.0, next.state.t_bat - t_hi);
            const double vt_lo = std::max(0.0, b.t_lower - next.state.t_bat);
            const double vs_hi = std::max(0.0, next.state.soc - b.soc_upper);
            const double vs_lo = std::max(0.0, b.soc_lower - next.state.soc);
            aux.penalty += mu * (vt_hi * vt_hi + vt_lo * vt_lo + vs_hi * vs_hi + vs_lo * vs_lo);
            const double v = std::max(std::max(vt_hi, vt_lo), std::max(vs_hi, vs_lo));
            rr.violations[i] = v;
            aux.max_violation = std::max(aux.max_violation, v);
        }
    }
    if (pb.cost == StageCostKind::Tracking) rr.cost = tracking_cost;
    return true;
}

/// Penalized objective and, optionally, its gradient wrt [q; eps] by a
/// reverse (adjoint) sweep over the stored step Jacobians.
inline double eval_objective(const OcpProblem& pb, const std::vector<double>& q,
                             const std::vector<double>& eps, double mu,
                             std::vector<double>* grad, RolloutResult* rr_out,
                             EvalAux* aux_out) {
    const std::size_t n = pb.horizon_steps;
    RolloutResult rr;
    EvalAux aux;
    std::vector<StepJacobian> jacs;
    if (!forward_pass(pb, q, eps, mu, rr, aux, grad ? &jacs : nullptr)) {
        if (grad) grad->assign(pb.slack ? 2 * n : n, 0.0);
        if (rr_out) *rr_out = std::move(rr);
        if (aux_out) *aux_out = aux;
        return std::numeric_limits<double>::infinity();
    }
    const bool slacked = pb.slack.has_value();
    const double total = rr.cost + aux.penalty;

    if (grad) {
        grad->assign(slacked ? 2 * n : n, 0.0);
        // cost partials wrt each state j (tracking + penalty), computed on demand
        auto stage_dx = [&](std::size_t j, double& d_t, double& d_s) {
            d_t = 0.0;
            d_s = 0.0;
            if (pb.cost == StageCostKind::Tracking) {
                d_t += 2.0 * (rr.states[j].t_bat - pb.refs.t_ref[j]);
                d_s += 2.0 * pb.refs.soc_weight * (rr.states[j].soc - pb.refs.soc_ref[j]);
            }
            if (pb.state_bounds && j >= 1) {
                const auto& b = *pb.state_bounds;
                const double t_hi = b.t_upper - (slacked ? eps[j - 1] : 0.0);
                const double vt_hi = std::max(0.0, rr.states[j].t_bat - t_hi);
                const double vt_lo = std::max(0.0, b.t_lower - rr.states[j].t_bat);
                const double vs_hi = std::max(0.0, rr.states[j].soc - b.soc_upper);
                const double vs_lo = std::max(0.0, b.soc_lower - rr.states[j].soc);
                d_t += 2.0 * mu * (vt_hi - vt_lo);
                d_s += 2.0 * mu * (vs_hi - vs_lo);
                if (slacked) (*grad)[n + j - 1] += 2.0 * mu * vt_hi;  // bound tightening
            }
        };

        double lam_t, lam_s;
        stage_dx(n, lam_t, lam_s);
        for (std::size_t jj = n; jj-- > 0;) {
            const StepJacobian& J = jacs[jj];
            double dq = lam_t * J.dT_dq + lam_s * J.dS_dq;
            if (pb.cost == StageCostKind::Economic || pb.cost == StageCostKind::EconomicWithSlack)
                dq += pb.params.cooling_coefficient;
            (*grad)[jj] += dq;
            if (pb.cost == StageCostKind::EconomicWithSlack)
                (*grad)[n + jj] += -2.0 * pb.slack->gamma * (pb.slack->delta_now - eps[jj]);
            if (jj > 0) {
                double st, ss;
                stage_dx(jj, st, ss);
                const double nt = st + lam_t * J.dT_dT + lam_s * J.dS_dT;
                const double ns = ss + lam_t * J.dT_dS + lam_s * J.dS_dS;
                lam_t = nt;
                lam_s = ns;
            }
        }
    }
    if (rr_out) *rr_out = std::move(rr);
    if (aux_out) *aux_out = aux;
    return total;
}

}  // namespace detail

/// Single-shooting forward simulation of an input sequence: planned states,
/// declared stage cost, per-step bound excesses.
inline RolloutResult rollout(const OcpProblem& problem, const std::vector<double>& qdot_seq,
                             const std::vector<double>& slack_seq = {}) {
    problem.validate();
    if (qdot_seq.size() != problem.horizon_steps)
        throw std::invalid_argument("qdot_seq length must equal horizon_steps");
    std::vector<double> eps = slack_seq;
    if (problem.slack && eps.size() != problem.horizon_steps)
        eps.assign(problem.horizon_steps, 0.0);
    RolloutResult rr;
    detail::EvalAux aux;
    detail::forward_pass(problem, qdot_seq, eps, 0.0, rr, aux, nullptr);
    return rr;
}

/// Compare the adjoint gradient of the penalized objective against central
/// finite differences; returns the worst per-component relative error.
inline double verify_gradient(const OcpProblem& problem, const std::vector<double>& qdot_seq,
                              const std::vector<double>& slack_seq = {},
                              const SolverConfig& config = {}) {
    problem.validate();
    const std::size_t n = problem.horizon_steps;
    const bool slacked = problem.slack.has_value();
    std::vector<double> z = qdot_seq;
    if (slacked) {
        z.resize(2 * n, 0.0);
        for (std::size_t i = 0; i < slack_seq.size() && i < n; ++i) z[n + i] = slack_seq[i];
    }
    const double mu = config.state_constraint_penalty;
    auto split_eval = [&](const std::vector<double>& zz, std::vector<double>* g) {
        std::vector<double> q(zz.begin(), zz.begin() + long(n));
        std::vector<double> e(slacked ? std::vector<double>(zz.begin() + long(n), zz.end())
                                      : std::vector<double>{});
        return detail::eval_objective(problem, q, e, mu, g, nullptr, nullptr);
    };
    std::vector<double> g;
    split_eval(z, &g);
    double worst = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        const double width = i < n ? (problem.qdot_upper - problem.qdot_lower)
                                   : problem.slack->eps_max;
        const double h = config.finite_difference_step * width;
        std::vector<double> zp = z, zm = z;
        zp[i] += h;
        zm[i] -= h;
        const double fd = (split_eval(zp, nullptr) - split_eval(zm, nullptr)) / (2.0 * h);
        const double denom = std::max({1.0, std::abs(g[i]), std::abs(fd)});
        worst = std::max(worst, std::abs(g[i] - fd) / denom);
    }
    return worst;
}

namespace detail {

struct SpgOutcome {
    std::vector<double> z;
    double f = 0.0;
    double kkt = 0.0;
    bool converged = false;
    bool all_failed = false;
};

/// Projected spectral-gradient descent with monotone Armijo backtracking.
/// Decision variables are scaled onto the unit box internally so that the
/// stopping test is meaningful across cost forms (watt-scale inputs against
/// kelvin-scale tracking errors) and mixed variable kinds (qdot, slack).
inline SpgOutcome spg_minimize(const OcpProblem& pb, std::vector<double> z0,
                               const std::vector<double>& lo, const std::vector<double>& hi,
                               double mu, const SolverConfig& cfg) {
    const std::size_t n = pb.horizon_steps;
    const std::size_t m = z0.size();
    std::vector<double> width(m);
    for (std::size_t i = 0; i < m; ++i) width[i] = std::max(hi[i] - lo[i], 1e-12);

    std::vector<double> q(n), e(m > n ? m - n : 0);
    auto unscale_into = [&](const std::vector<double>& zs) {
        for (std::size_t i = 0; i < n; ++i) q[i] = lo[i] + zs[i] * width[i];
        for (std::size_t i = n; i < m; ++i) e[i - n] = lo[i] + zs[i] * width[i];
    };
    // objective and gradient in scaled coordinates
    std::vector<double> graw;
    auto eval = [&](const std::vector<double>& zs, std::vector<double>* gs) {
        unscale_into(zs);
        const double f = eval_objective(pb, q, e, mu, gs ? &graw : nullptr, nullptr, nullptr);
        if (gs) {
            gs->assign(m, 0.0);
            if (std::isfinite(f))
                for (std::size_t i = 0; i < m; ++i) (*gs)[i] = graw[i] * width[i];
        }
        return f;
    };

    std::vector<double> z(m);
    for (std::size_t i = 0; i < m; ++i)
        z[i] = std::clamp((z0[i] - lo[i]) / width[i], 0.0, 1.0);

    std::vector<double> g, gnew;
    double f = eval(z, &g);
    SpgOutcome out;
    if (!std::isfinite(f)) {
        out.all_failed = true;
        out.z = z0;
        out.f = f;
        return out;
    }
    double bb = 1.0;
    std::vector<double> trial(m), d(m);
    for (int iter = 0; iter < cfg.max_iterations; ++iter) {
        // KKT residual: projected-gradient step length on the unit box
        double res = 0.0;
        for (std::size_t i = 0; i < m; ++i)
            res = std::max(res, std::abs(std::clamp(z[i] - g[i], 0.0, 1.0) - z[i]));
        out.kkt = res;
        if (res <= cfg.kkt_tolerance) {
            out.converged = true;
            break;
        }
        double gd = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            d[i] = std::clamp(z[i] - bb * g[i], 0.0, 1.0) - z[i];
            gd += g[i] * d[i];
        }
        if (!(gd < 0.0)) {  // spectral step gave no descent direction; fall back
            bb = 1.0;
            gd = 0.0;
            for (std::size_t i = 0; i < m; ++i) {
                d[i] = std::clamp(z[i] - g[i], 0.0, 1.0) - z[i];
                gd += g[i] * d[i];
            }
            if (!(gd < 0.0)) {
                out.converged = true;
                break;
            }
        }
        double alpha = 1.0;
        double fnew = std::numeric_limits<double>::infinity();
        int bt = 0;
        for (; bt <= cfg.max_backtracks; ++bt) {
            for (std::size_t i = 0; i < m; ++i) trial[i] = z[i] + alpha * d[i];
            fnew = eval(trial, nullptr);
            if (fnew <= f + cfg.armijo_c * alpha * gd) break;
            alpha *= cfg.backtrack_factor;
        }
        if (bt > cfg.max_backtracks) break;  // no further progress
        fnew = eval(trial, &gnew);
        // Barzilai-Borwein step from the accepted move
        double sy = 0.0, ss = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            const double s = trial[i] - z[i];
            sy += s * (gnew[i] - g[i]);
            ss += s * s;
        }
        bb = (sy > 1e-18) ? std::clamp(ss / sy, 1e-10, 1e10) : 1e2;
        z = trial;
        g = gnew;
        f = fnew;
    }
    out.z.resize(m);
    for (std::size_t i = 0; i < m; ++i) out.z[i] = lo[i] + z[i] * width[i];
    out.f = f;
    return out;
}

}  // namespace detail

/// Solve the OCP. Input bounds are enforced exactly by projection; state
/// bounds through an escalating quadratic penalty. Deterministic: fixed
/// starting points, fixed iteration order, no randomization.
inline OcpSolution solve(const OcpProblem& problem,
                         const SolverConfig& config = {},
                         const std::vector<double>* warm_start = nullptr) {
    problem.validate();
    const auto t_begin = std::chrono::steady_clock::now();
    const std::size_t n = problem.horizon_steps;
    const bool slacked = problem.slack.has_value();
    const std::size_t m = slacked ? 2 * n : n;

    OcpSolution sol;
    if (n == 0) {
        sol.state_traj = {problem.initial_state};
        sol.penalty_weight = config.state_constraint_penalty;
        return sol;
    }

    std::vector<double> lo(m), hi(m);
    for (std::size_t i = 0; i < n; ++i) {
        lo[i] = problem.qdot_lower;
        hi[i] = problem.qdot_upper;
    }
    if (slacked)
        for (std::size_t i = 0; i < n; ++i) {
            lo[n + i] = 0.0;
            hi[n + i] = problem.slack->eps_max;
        }

    const double eps0 = slacked ? std::clamp(problem.slack->delta_now, 0.0, problem.slack->eps_max) : 0.0;
    std::vector<std::vector<double>> starts;
    if (warm_start) {
        std::vector<double> z(m, eps0);
        for (std::size_t i = 0; i < n; ++i)
            z[i] = i < warm_start->size() ? (*warm_start)[i] : 0.0;
        starts.push_back(std::move(z));
    } else {
        for (double frac : {0.0, 0.5, 1.0}) {
            std::vector<double> z(m, eps0);
            for (std::size_t i = 0; i < n; ++i)
                z[i] = problem.qdot_upper + frac * (problem.qdot_lower - problem.qdot_upper);
            starts.push_back(std::move(z));
        }
    }

    double mu = config.state_constraint_penalty;
    detail::SpgOutcome best;
    bool have_best = false;
    bool any_ok = false;
    for (auto& s : starts) {
        auto r = detail::spg_minimize(problem, s, lo, hi, mu, config);
        if (r.all_failed) continue;
        any_ok = true;
        if (!have_best || r.f < best.f) {
            best = std::move(r);
            have_best = true;
        }
    }
    if (!any_ok)
        throw std::runtime_error("ocp solve: dynamics failed at every starting point");

    // escalate the penalty until the planned trajectory respects the bounds
    auto violation_of = [&](const std::vector<double>& z) {
        std::vector<double> q(z.begin(), z.begin() + long(n));
        std::vector<double> e(slacked ? std::vector<double>(z.begin() + long(n), z.end())
                                      : std::vector<double>{});
        detail::EvalAux aux;
        RolloutResult rr;
        detail::forward_pass(problem, q, e, mu, rr, aux, nullptr);
        return aux.max_violation;
    };
    double viol = problem.state_bounds ? violation_of(best.z) : 0.0;
    int escalations = 0;
    while (problem.state_bounds && viol > config.violation_tolerance &&
           escalations < config.penalty_escalations) {
        mu *= config.penalty_factor;
        ++escalations;
        auto r = detail::spg_minimize(problem, best.z, lo, hi, mu, config);
        if (!r.all_failed) best = std::move(r);
        viol = violation_of(best.z);
    }

    // a warm-started solve must never end worse than its starting point
    if (warm_start) {
        auto eval_at = [&](const std::vector<double>& z) {
            std::vector<double> q(z.begin(), z.begin() + long(n));
            std::vector<double> e(slacked ? std::vector<double>(z.begin() + long(n), z.end())
                                          : std::vector<double>{});
            return detail::eval_objective(problem, q, e, mu, nullptr, nullptr, nullptr);
        };
        if (eval_at(starts.front()) < eval_at(best.z)) best.z = starts.front();
    }

    sol.qdot_seq.assign(best.z.begin(), best.z.begin() + long(n));
    if (slacked) sol.slack_seq.assign(best.z.begin() + long(n), best.z.end());
    RolloutResult rr;
    detail::EvalAux aux;
    detail::forward_pass(problem, sol.qdot_seq, sol.slack_seq, mu, rr, aux, nullptr);
    sol.state_traj = std::move(rr.states);
    sol.cost = rr.cost;
    sol.penalized_cost = rr.cost + aux.penalty;
    sol.penalty_weight = mu;
    sol.kkt_residual = best.kkt;
    sol.bound_residual = aux.max_violation;
    if (problem.state_bounds && aux.max_violation > config.violation_tolerance)
        sol.status = SolveStatus::InfeasibleRelaxed;
    else
        sol.status = best.converged ? SolveStatus::Converged : SolveStatus::IterLimit;
    sol.solve_time =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_begin).count();
    return sol;
}

}  // namespace btmpc
