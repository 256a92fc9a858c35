#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>

#include "btmpc/battery.hpp"
#include "btmpc/controllers.hpp"
#include "btmpc/simulation.hpp"
#include "btmpc/traction.hpp"

namespace btmpc {

using ParamMap = std::map<std::string, double>;

/// Parse a flat "key = value" file. '#' starts a comment; blank lines ignored.
inline ParamMap load_param_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open parameter file: " + path);
    ParamMap out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        std::string key, eq;
        double value;
        std::istringstream ls(line);
        if (!(ls >> key)) continue;  // blank
        if (!(ls >> eq >> value) || eq != "=")
            throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                     ": expected 'key = value'");
        out[key] = value;
    }
    return out;
}

/// Everything the harness can configure, with the file keys for each field.
struct RunParams {
    BatteryParams battery;
    VehicleParams vehicle;
    RuleBasedConfig rule;
    MpcConfig mpc;
    PreviewConfig preview;
};

namespace detail {
struct KeyBinding {
    const char* key;
    double* target;
};

inline void apply_bindings(const ParamMap& map, const KeyBinding* bindings, std::size_t n,
                           std::map<std::string, bool>& seen) {
    for (const auto& [key, value] : map) {
        for (std::size_t i = 0; i < n; ++i) {
            if (key == bindings[i].key) {
                *bindings[i].target = value;
                seen[key] = true;
                break;
            }
        }
    }
}
}  // namespace detail

/// Apply file overrides onto defaults. Unknown keys are an error.
inline void apply_params(const ParamMap& map, RunParams& p) {
    double ioch_enabled = p.mpc.ioch.enabled ? 1.0 : 0.0;
    double max_iters = double(p.mpc.solver.max_iterations);
    double escalations = double(p.mpc.solver.penalty_escalations);
    double backtracks = double(p.mpc.solver.max_backtracks);
    double single_n = double(p.mpc.single_layer.horizon_steps);
    const detail::KeyBinding bindings[] = {
        {"battery.lumped_heat_capacity", &p.battery.lumped_heat_capacity},
        {"battery.nominal_capacity", &p.battery.nominal_capacity},
        {"battery.cooling_coefficient", &p.battery.cooling_coefficient},
        {"battery.qdot_min", &p.battery.qdot_min},
        {"battery.qdot_max", &p.battery.qdot_max},
        {"battery.t_lower", &p.battery.t_lower},
        {"battery.t_upper", &p.battery.t_upper},
        {"battery.soc_lower", &p.battery.soc_lower},
        {"battery.soc_upper", &p.battery.soc_upper},
        {"battery.ocv_v0", &p.battery.ocv_map.volts_at_zero_soc},
        {"battery.ocv_v_per_soc", &p.battery.ocv_map.volts_per_soc},
        {"battery.r_base", &p.battery.resistance_map.base_ohm},
        {"battery.r_soc_gain", &p.battery.resistance_map.soc_gain},
        {"battery.r_temp_gain", &p.battery.resistance_map.temp_gain_per_k},
        {"battery.r_ref_temp", &p.battery.resistance_map.ref_temp_c},
        {"battery.r_floor", &p.battery.resistance_map.floor_ohm},
        {"vehicle.mass", &p.vehicle.mass},
        {"vehicle.drag_area", &p.vehicle.drag_area},
        {"vehicle.rolling_coeff", &p.vehicle.rolling_coeff},
        {"vehicle.air_density", &p.vehicle.air_density},
        {"vehicle.gravity", &p.vehicle.gravity},
        {"vehicle.driveline_efficiency", &p.vehicle.driveline_efficiency},
        {"vehicle.regen_efficiency", &p.vehicle.regen_efficiency},
        {"vehicle.regen_power_floor", &p.vehicle.regen_power_floor},
        {"rule.setpoint", &p.rule.setpoint},
        {"rule.hysteresis_halfwidth", &p.rule.hysteresis_halfwidth},
        {"rule.on_qdot", &p.rule.on_qdot},
        {"mpc.single_horizon_steps", &single_n},
        {"mpc.single_step", &p.mpc.single_layer.step},
        {"mpc.scheduling_horizon", &p.mpc.scheduling.horizon},
        {"mpc.scheduling_step", &p.mpc.scheduling.step},
        {"mpc.piloting_horizon", &p.mpc.piloting.horizon},
        {"mpc.piloting_step", &p.mpc.piloting.step},
        {"mpc.soc_weight", &p.mpc.soc_weight},
        {"mpc.ioch_enabled", &ioch_enabled},
        {"mpc.ioch_gamma", &p.mpc.ioch.gamma},
        {"mpc.ioch_eps_max", &p.mpc.ioch.eps_max},
        {"solver.max_iterations", &max_iters},
        {"solver.kkt_tolerance", &p.mpc.solver.kkt_tolerance},
        {"solver.fd_step_rel", &p.mpc.solver.finite_difference_step},
        {"solver.penalty_initial", &p.mpc.solver.state_constraint_penalty},
        {"solver.penalty_escalations", &escalations},
        {"solver.penalty_factor", &p.mpc.solver.penalty_factor},
        {"solver.violation_tolerance", &p.mpc.solver.violation_tolerance},
        {"solver.armijo_c", &p.mpc.solver.armijo_c},
        {"solver.backtrack_factor", &p.mpc.solver.backtrack_factor},
        {"solver.max_backtracks", &backtracks},
        {"preview.flow_window", &p.preview.flow_window},
        {"preview.exact_span", &p.preview.exact_span},
        {"preview.blend_span", &p.preview.blend_span},
        {"preview.sched_exact_span", &p.preview.sched_exact_span},
        {"preview.sched_blend_span", &p.preview.sched_blend_span},
    };
    std::map<std::string, bool> seen;
    detail::apply_bindings(map, bindings, sizeof(bindings) / sizeof(bindings[0]), seen);
    for (const auto& [key, value] : map) {
        (void)value;
        if (!seen.count(key)) throw std::runtime_error("unknown parameter key: " + key);
    }
    p.mpc.ioch.enabled = ioch_enabled != 0.0;
    p.mpc.solver.max_iterations = int(max_iters);
    p.mpc.solver.penalty_escalations = int(escalations);
    p.mpc.solver.max_backtracks = int(backtracks);
    p.mpc.single_layer.horizon_steps = std::size_t(single_n);
    p.battery.validate();
    p.vehicle.validate();
    p.rule.validate();
}

inline RunParams load_run_params(const std::string& path) {
    RunParams p;
    apply_params(load_param_file(path), p);
    return p;
}

}  // namespace btmpc
