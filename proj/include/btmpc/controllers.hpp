#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <vector>

#include "btmpc/battery.hpp"
#include "btmpc/drive_cycle.hpp"
#include "btmpc/ocp.hpp"
#include "btmpc/traction.hpp"

namespace btmpc {

// ---------------------------------------------------------------------------
// Rule-based on/off baseline
// ---------------------------------------------------------------------------

struct RuleBasedConfig {
    double setpoint = 35.0;             // degC
    double hysteresis_halfwidth = 0.5;  // K
    double on_qdot = -3000.0;           // W

    void validate() const {
        if (!(hysteresis_halfwidth > 0.0))
            throw std::invalid_argument("hysteresis halfwidth must be > 0");
        if (!(on_qdot < 0.0))
            throw std::invalid_argument("on_qdot must be negative");
    }
};

struct RuleDecision {
    double qdot;
    bool on;
};

/// Hysteretic on/off cooling: on above setpoint + h, off below setpoint - h,
/// hold the previous mode inside the band.
inline RuleDecision rule_based_step(const BatteryState& state, const RuleBasedConfig& cfg,
                                    bool prev_on) {
    bool on = prev_on;
    if (state.t_bat > cfg.setpoint + cfg.hysteresis_halfwidth) on = true;
    else if (state.t_bat < cfg.setpoint - cfg.hysteresis_halfwidth) on = false;
    return {on ? cfg.on_qdot : 0.0, on};
}

// ---------------------------------------------------------------------------
// Shared MPC configuration
// ---------------------------------------------------------------------------

struct SingleLayerConfig {
    std::size_t horizon_steps = 180;  // N
    double step = 1.0;                // T_s
};

struct SchedulingConfig {
    double horizon = 180.0;  // H_l, s
    double step = 5.0;       // T_l, s
    std::size_t steps() const { return static_cast<std::size_t>(std::llround(horizon / step)); }
};

struct PilotingConfig {
    double horizon = 15.0;  // H_s, s
    double step = 1.0;      // T_s, s
    std::size_t steps() const { return static_cast<std::size_t>(std::llround(horizon / step)); }
};

struct IochConfig {
    bool enabled = true;
    double gamma = 10.0;
    double eps_max = 5.0;  // K
};

struct MpcConfig {
    SingleLayerConfig single_layer;
    SchedulingConfig scheduling;
    PilotingConfig piloting;
    IochConfig ioch;
    double soc_weight = 100.0;  // w1 in the piloting tracker
    SolverConfig solver;

    /// tau = T_l / T_s, required to be a positive integer.
    int rate_ratio() const {
        const double ratio = scheduling.step / piloting.step;
        const int tau = static_cast<int>(std::llround(ratio));
        if (tau < 1 || std::abs(ratio - double(tau)) > 1e-9)
            throw std::invalid_argument("T_l must be an integer multiple of T_s");
        return tau;
    }

    void validate() const {
        if (!(scheduling.horizon > 0.0 && piloting.horizon > 0.0 && single_layer.horizon_steps > 0))
            throw std::invalid_argument("horizons must be positive");
        if (piloting.horizon > scheduling.horizon)
            throw std::invalid_argument("H_s must not exceed H_l");
        (void)rate_ratio();
    }
};

// ---------------------------------------------------------------------------
// Schedule hand-off and IOCH
// ---------------------------------------------------------------------------

/// Piecewise-constant reference trajectories from the scheduling layer.
/// Element i is the state the schedule plans to reach at
/// origin_time + (i+1)*step and is held over the preceding slot.
struct Schedule {
    double origin_time = 0.0;
    double step = 5.0;
    std::vector<double> t_ref;
    std::vector<double> soc_ref;

    std::size_t slot(double t) const {
        if (t_ref.empty()) throw std::logic_error("empty schedule");
        const double s = (t - origin_time) / step;
        if (s < 0.0) return 0;
        const auto i = static_cast<std::size_t>(s);
        return std::min(i, t_ref.size() - 1);
    }
    double t_ref_at(double t) const { return t_ref[slot(t)]; }
    double soc_ref_at(double t) const { return soc_ref[slot(t)]; }
    /// Last instant the schedule can serve.
    double end_time() const { return origin_time + step * double(t_ref.size()); }
};

/// Measured upper-limit violation fed back to the scheduling layer.
inline double ioch_delta(double t_bat, double t_upper) {
    return t_bat <= t_upper ? 0.0 : t_bat - t_upper;
}

struct IochState {
    double delta_now = 0.0;            // K
    std::vector<double> epsilon_traj;  // per scheduling step, K
};

// ---------------------------------------------------------------------------
// Controller step operations
// ---------------------------------------------------------------------------

struct ControllerDiagnostics {
    double solve_time_long = std::numeric_limits<double>::quiet_NaN();
    double solve_time_short = std::numeric_limits<double>::quiet_NaN();
    int status_long = -1;   // -1 none, else SolveStatus; 3 = controller fault
    int status_short = -1;
    double t_ref = std::numeric_limits<double>::quiet_NaN();
    double soc_ref = std::numeric_limits<double>::quiet_NaN();
    double epsilon = std::numeric_limits<double>::quiet_NaN();
    double delta_now = std::numeric_limits<double>::quiet_NaN();
    double sched_bound_residual = std::numeric_limits<double>::quiet_NaN();
};

struct ControlDecision {
    double qdot = 0.0;
    ControllerDiagnostics diag;
};

constexpr int kStatusFault = 3;

struct SingleLayerResult {
    ControlDecision decision;
    OcpSolution solution;
};

/// One receding-horizon step of the economic single-layer NMPC: build the
/// N-step problem from the speed preview, solve, command the first input.
inline SingleLayerResult single_layer_mpc_step(const BatteryState& state,
                                               const SpeedPreview& preview,
                                               const BatteryParams& battery,
                                               const VehicleParams& vehicle,
                                               const SingleLayerConfig& cfg,
                                               const SolverConfig& solver_cfg,
                                               const std::vector<double>* warm = nullptr) {
    if (preview.horizon_steps < cfg.horizon_steps)
        throw std::invalid_argument("preview shorter than the MPC horizon");
    OcpProblem pb;
    pb.horizon_steps = cfg.horizon_steps;
    pb.step = cfg.step;
    pb.initial_state = state;
    pb.p_trac_preview = power_preview(preview, vehicle);
    pb.params = battery;
    pb.models = exact_plant_models();
    pb.cost = StageCostKind::Economic;
    pb.qdot_lower = battery.qdot_min;
    pb.qdot_upper = battery.qdot_max;
    pb.state_bounds = state_bounds_from(battery);

    SingleLayerResult out;
    try {
        out.solution = solve(pb, solver_cfg, warm);
    } catch (const std::runtime_error&) {
        // hard infeasibility: full cooling if hot, otherwise idle
        out.decision.qdot = state.t_bat > battery.t_upper ? battery.qdot_min : 0.0;
        out.decision.diag.status_long = kStatusFault;
        return out;
    }
    out.decision.qdot = out.solution.qdot_seq.front();
    out.decision.diag.solve_time_long = out.solution.solve_time;
    out.decision.diag.status_long = static_cast<int>(out.solution.status);
    return out;
}

struct SchedulingResult {
    Schedule schedule;
    OcpSolution solution;
    IochState ioch;
};

/// Long-horizon scheduling solve on the reduced (Taylor-current) model at the
/// slow rate; returns the planned (T*, SOC*) trajectory as a piecewise
/// constant schedule. With IOCH enabled the temperature upper bound is
/// tightened by a per-step slack driven toward the measured violation.
inline SchedulingResult scheduling_step(const BatteryState& state,
                                        const SpeedPreview& flow_preview,
                                        const BatteryParams& battery,
                                        const VehicleParams& vehicle,
                                        const SchedulingConfig& cfg,
                                        const IochConfig& ioch_cfg,
                                        double delta_now, double now,
                                        const SolverConfig& solver_cfg,
                                        const std::vector<double>* warm = nullptr) {
    const std::size_t n = cfg.steps();
    // The preview may be finer than the scheduling grid. Power must then be
    // averaged per slot: differencing speeds at T_l underestimates the convex
    // I^2 R heating of transients and the schedule would miss them.
    const double ratio_d = cfg.step / flow_preview.step;
    const auto ratio = static_cast<std::size_t>(std::llround(ratio_d));
    if (ratio < 1 || std::abs(ratio_d - double(ratio)) > 1e-9)
        throw std::invalid_argument("scheduling step must be a multiple of the preview step");
    if (flow_preview.horizon_steps < n * ratio)
        throw std::invalid_argument("flow preview shorter than the scheduling horizon");
    std::vector<double> p_trac(n, 0.0);
    {
        const auto fine = power_preview(flow_preview, vehicle);
        for (std::size_t i = 0; i < n; ++i) {
            double acc = 0.0;
            for (std::size_t j = 0; j < ratio; ++j) acc += fine[i * ratio + j];
            p_trac[i] = acc / double(ratio);
        }
    }
    OcpProblem pb;
    pb.horizon_steps = n;
    pb.step = cfg.step;
    pb.initial_state = state;
    pb.p_trac_preview = std::move(p_trac);
    pb.params = battery;
    pb.models = reduced_schedule_models();
    pb.qdot_lower = battery.qdot_min;
    pb.qdot_upper = battery.qdot_max;
    pb.state_bounds = state_bounds_from(battery);
    if (ioch_cfg.enabled) {
        pb.cost = StageCostKind::EconomicWithSlack;
        pb.slack = SlackSpec{ioch_cfg.gamma, delta_now, ioch_cfg.eps_max};
    } else {
        pb.cost = StageCostKind::Economic;
    }

    SchedulingResult out;
    out.solution = solve(pb, solver_cfg, warm);
    out.schedule.origin_time = now;
    out.schedule.step = cfg.step;
    out.schedule.t_ref.reserve(n);
    out.schedule.soc_ref.reserve(n);
    for (std::size_t i = 1; i <= n; ++i) {
        out.schedule.t_ref.push_back(out.solution.state_traj[i].t_bat);
        out.schedule.soc_ref.push_back(out.solution.state_traj[i].soc);
    }
    out.ioch.delta_now = delta_now;
    out.ioch.epsilon_traj = out.solution.slack_seq;
    return out;
}

struct PilotResult {
    ControlDecision decision;
    OcpSolution solution;
};

/// Short-horizon tracking solve against the held schedule: exact dynamics,
/// input box only (state bounds are the scheduling layer's job).
inline PilotResult pilot_step(const BatteryState& state, const SpeedPreview& exact_preview,
                              const Schedule& schedule, const BatteryParams& battery,
                              const VehicleParams& vehicle, const PilotingConfig& cfg,
                              double soc_weight, double now,
                              const SolverConfig& solver_cfg,
                              const std::vector<double>* warm = nullptr) {
    const std::size_t n = cfg.steps();
    if (exact_preview.horizon_steps < n)
        throw std::invalid_argument("exact preview shorter than the piloting horizon");
    if (schedule.end_time() + 1e-9 < now + cfg.horizon)
        throw std::invalid_argument("schedule does not cover the piloting horizon");
    OcpProblem pb;
    pb.horizon_steps = n;
    pb.step = cfg.step;
    pb.initial_state = state;
    pb.p_trac_preview = power_preview(exact_preview, vehicle);
    pb.params = battery;
    pb.models = exact_plant_models();
    pb.cost = StageCostKind::Tracking;
    pb.qdot_lower = battery.qdot_min;
    pb.qdot_upper = battery.qdot_max;
    pb.refs.soc_weight = soc_weight;
    pb.refs.t_ref.resize(n + 1);
    pb.refs.soc_ref.resize(n + 1);
    for (std::size_t j = 0; j <= n; ++j) {
        const double t = now + double(j) * cfg.step;
        pb.refs.t_ref[j] = schedule.t_ref_at(t);
        pb.refs.soc_ref[j] = schedule.soc_ref_at(t);
    }

    PilotResult out;
    out.solution = solve(pb, solver_cfg, warm);
    out.decision.qdot = out.solution.qdot_seq.front();
    out.decision.diag.solve_time_short = out.solution.solve_time;
    out.decision.diag.status_short = static_cast<int>(out.solution.status);
    out.decision.diag.t_ref = pb.refs.t_ref[0];
    out.decision.diag.soc_ref = pb.refs.soc_ref[0];
    return out;
}

/// Persistent state of the two-layer controller between calls.
struct TwoLayerState {
    std::optional<Schedule> schedule;
    int countdown = 0;  // scheduling runs when it reaches 0
    IochState ioch;
    std::vector<double> warm_sched;
    std::vector<double> warm_pilot;
    bool has_warm_sched = false;
    bool has_warm_pilot = false;
};

namespace detail {
inline std::vector<double> shifted_warm(const std::vector<double>& seq) {
    std::vector<double> w(seq.begin() + 1, seq.end());
    w.push_back(seq.back());
    return w;
}
}  // namespace detail

/// One combined step: refresh the schedule every tau calls (slack driven by
/// the measured plant violation), then track it with the piloting layer.
inline ControlDecision two_layer_step(const BatteryState& state,
                                      const SpeedPreview& flow_preview,
                                      const SpeedPreview& exact_preview,
                                      const BatteryParams& battery,
                                      const VehicleParams& vehicle,
                                      const MpcConfig& cfg, double now,
                                      TwoLayerState& persistent) {
    ControllerDiagnostics diag;
    if (persistent.countdown <= 0 || !persistent.schedule) {
        const double delta =
            cfg.ioch.enabled ? ioch_delta(state.t_bat, battery.t_upper) : 0.0;
        auto sched = scheduling_step(state, flow_preview, battery, vehicle, cfg.scheduling,
                                     cfg.ioch, delta, now, cfg.solver,
                                     persistent.has_warm_sched ? &persistent.warm_sched : nullptr);
        persistent.schedule = std::move(sched.schedule);
        persistent.ioch = std::move(sched.ioch);
        persistent.warm_sched = detail::shifted_warm(sched.solution.qdot_seq);
        persistent.has_warm_sched = true;
        persistent.countdown = cfg.rate_ratio();
        diag.solve_time_long = sched.solution.solve_time;
        diag.status_long = static_cast<int>(sched.solution.status);
        diag.sched_bound_residual = sched.solution.bound_residual;
        diag.delta_now = delta;
        if (!persistent.ioch.epsilon_traj.empty())
            diag.epsilon = persistent.ioch.epsilon_traj.front();
    }

    auto pilot = pilot_step(state, exact_preview, *persistent.schedule, battery, vehicle,
                            cfg.piloting, cfg.soc_weight, now, cfg.solver,
                            persistent.has_warm_pilot ? &persistent.warm_pilot : nullptr);
    persistent.warm_pilot = detail::shifted_warm(pilot.solution.qdot_seq);
    persistent.has_warm_pilot = true;
    persistent.countdown -= 1;

    ControlDecision out = pilot.decision;
    out.diag.solve_time_long = diag.solve_time_long;
    out.diag.status_long = diag.status_long;
    out.diag.sched_bound_residual = diag.sched_bound_residual;
    out.diag.delta_now = diag.delta_now;
    out.diag.epsilon = diag.epsilon;
    return out;
}

}  // namespace btmpc
