#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

namespace btmpc {

/// Open-circuit voltage as an affine function of state of charge.
struct OcvMap {
    double volts_at_zero_soc = 320.0;
    double volts_per_soc = 60.0;

    double operator()(double soc) const noexcept {
        return volts_at_zero_soc + volts_per_soc * soc;
    }
    double d_soc() const noexcept { return volts_per_soc; }
};

/// Internal resistance as a function of SOC and temperature, floored below.
/// R grows as the pack discharges and as it cools relative to ref_temp_c.
struct ResistanceMap {
    double base_ohm = 0.37;
    double soc_gain = 0.3;
    double temp_gain_per_k = 0.005;
    double ref_temp_c = 25.0;
    double floor_ohm = 0.05;

    struct Eval {
        double ohms;
        double d_soc;   // zero when the floor is active
        double d_temp;  // zero when the floor is active
    };

    Eval eval(double soc, double t_c) const noexcept {
        const double soc_factor = 1.0 + soc_gain * (1.0 - soc);
        const double temp_factor = 1.0 + temp_gain_per_k * (ref_temp_c - t_c);
        const double raw = base_ohm * soc_factor * temp_factor;
        if (raw <= floor_ohm) return {floor_ohm, 0.0, 0.0};
        return {raw, -base_ohm * soc_gain * temp_factor,
                -base_ohm * soc_factor * temp_gain_per_k};
    }

    double operator()(double soc, double t_c) const noexcept {
        return eval(soc, t_c).ohms;
    }
};

struct BatteryParams {
    double lumped_heat_capacity = 6.0e4;  // J/K, m_bat * C_th
    double nominal_capacity = 270000.0;   // A*s (75 Ah)
    double cooling_coefficient = -0.5;    // a_c, electric W per cooling W, < 0
    OcvMap ocv_map{};
    ResistanceMap resistance_map{};
    double qdot_min = -3000.0;  // W
    double qdot_max = 0.0;      // W
    double t_lower = 20.0;      // degC
    double t_upper = 40.0;      // degC
    double soc_lower = 0.30;
    double soc_upper = 0.90;

    void validate() const {
        if (!(cooling_coefficient < 0.0))
            throw std::invalid_argument("cooling_coefficient must be < 0");
        if (!(lumped_heat_capacity > 0.0))
            throw std::invalid_argument("lumped_heat_capacity must be > 0");
        if (!(nominal_capacity > 0.0))
            throw std::invalid_argument("nominal_capacity must be > 0");
        if (!(qdot_min < qdot_max) || qdot_max > 0.0)
            throw std::invalid_argument("require qdot_min < qdot_max <= 0");
        if (!(t_lower < t_upper))
            throw std::invalid_argument("require t_lower < t_upper");
        if (!(soc_lower < soc_upper))
            throw std::invalid_argument("require soc_lower < soc_upper");
        if (!(ocv_map(0.0) > 0.0) || !(ocv_map(1.0) > 0.0))
            throw std::invalid_argument("ocv_map must be positive on [0,1]");
    }
};

/// Plant state: pack temperature (degC) and state of charge (fraction).
struct BatteryState {
    double t_bat = 25.0;
    double soc = 0.9;
};

/// One sample of load on the pack. qdot <= 0 by convention (cooling only).
struct PowerRequest {
    double p_trac = 0.0;  // W, negative under regeneration
    double qdot = 0.0;    // W, cooling heat-flow rate
};

/// Requested power exceeds what the pack can deliver (U_oc^2 / 4R).
class PowerLimitError : public std::runtime_error {
public:
    PowerLimitError(double requested_w, double limit_w)
        : std::runtime_error("battery power limit exceeded: requested " +
                             std::to_string(requested_w) + " W, deliverable " +
                             std::to_string(limit_w) + " W"),
          requested(requested_w), limit(limit_w) {}
    double requested;
    double limit;
};

enum class CurrentModel { Exact, ThermalApprox, SocApprox };

/// Current models used for the temperature and SOC dynamics respectively.
struct ModelPair {
    CurrentModel thermal = CurrentModel::Exact;
    CurrentModel soc = CurrentModel::Exact;
};

inline constexpr ModelPair exact_plant_models() {
    return {CurrentModel::Exact, CurrentModel::Exact};
}
/// Reduced models for the slow-rate layer: first-order current in the
/// temperature equation, second-order in the SOC equation.
inline constexpr ModelPair reduced_schedule_models() {
    return {CurrentModel::ThermalApprox, CurrentModel::SocApprox};
}

/// Electric power drawn to provide cooling heat-flow qdot (<= 0).
inline double cooling_power(double qdot, const BatteryParams& params) {
    if (qdot > 0.0)
        throw std::domain_error("qdot must be <= 0 (heating is not modeled)");
    return params.cooling_coefficient * qdot;
}

/// Smaller root of I*(U_oc - I*R) = p_total.
inline double battery_current_exact(double p_total, const BatteryState& state,
                                    const BatteryParams& params) {
    const double u = params.ocv_map(state.soc);
    const double r = params.resistance_map(state.soc, state.t_bat);
    const double disc = u * u - 4.0 * r * p_total;
    if (disc < 0.0) throw PowerLimitError(p_total, u * u / (4.0 * r));
    return (u - std::sqrt(disc)) / (2.0 * r);
}

/// Second-order expansion of the exact current, used for SOC scheduling.
inline double battery_current_soc_approx(double p_total, const BatteryState& state,
                                         const BatteryParams& params) {
    const double u = params.ocv_map(state.soc);
    const double r = params.resistance_map(state.soc, state.t_bat);
    return p_total / u + r * p_total * p_total / (u * u * u);
}

/// First-order expansion, used for the scheduled temperature dynamics.
inline double battery_current_thermal_approx(double p_total, const BatteryState& state,
                                             const BatteryParams& params) {
    return p_total / params.ocv_map(state.soc);
}

inline double battery_current(CurrentModel model, double p_total,
                              const BatteryState& state, const BatteryParams& params) {
    switch (model) {
        case CurrentModel::Exact: return battery_current_exact(p_total, state, params);
        case CurrentModel::ThermalApprox:
            return battery_current_thermal_approx(p_total, state, params);
        case CurrentModel::SocApprox:
            return battery_current_soc_approx(p_total, state, params);
    }
    throw std::logic_error("unknown current model");
}

/// dT/dt = (I^2 R + qdot) / (m C), with I from the selected model at
/// p_total = p_trac + cooling_power(qdot).
inline double thermal_rate(const BatteryState& state, double p_trac, double qdot,
                           const BatteryParams& params, CurrentModel model) {
    const double p_total = p_trac + cooling_power(qdot, params);
    const double i = battery_current(model, p_total, state, params);
    const double r = params.resistance_map(state.soc, state.t_bat);
    return (i * i * r + qdot) / params.lumped_heat_capacity;
}

/// dSOC/dt = -I / C_nom.
inline double soc_rate(const BatteryState& state, double p_trac, double qdot,
                       const BatteryParams& params, CurrentModel model) {
    const double p_total = p_trac + cooling_power(qdot, params);
    const double i = battery_current(model, p_total, state, params);
    return -i / params.nominal_capacity;
}

struct StepResult {
    BatteryState state;
    bool soc_clamped = false;
};

/// One Euler-forward step of the selected model pair.
inline StepResult step(const BatteryState& state, double p_trac, double qdot,
                       double dt, const BatteryParams& params, const ModelPair& models) {
    if (!(dt > 0.0)) throw std::invalid_argument("dt must be > 0");
    StepResult out;
    out.state.t_bat = state.t_bat + dt * thermal_rate(state, p_trac, qdot, params, models.thermal);
    const double soc = state.soc + dt * soc_rate(state, p_trac, qdot, params, models.soc);
    out.state.soc = soc;
    if (soc < 0.0) { out.state.soc = 0.0; out.soc_clamped = true; }
    if (soc > 1.0) { out.state.soc = 1.0; out.soc_clamped = true; }
    return out;
}

// ---------------------------------------------------------------------------
// Sensitivities of the step map, used by the OCP solver's adjoint pass.
// ---------------------------------------------------------------------------

/// Current value plus partial derivatives wrt total power, SOC and temperature.
struct CurrentSensitivity {
    double current;
    double d_p_total;
    double d_soc;
    double d_t;
};

inline CurrentSensitivity battery_current_sensitivity(CurrentModel model, double p_total,
                                                      const BatteryState& state,
                                                      const BatteryParams& params) {
    const double u = params.ocv_map(state.soc);
    const double du = params.ocv_map.d_soc();
    const auto r = params.resistance_map.eval(state.soc, state.t_bat);
    double i, d_p, d_u, d_r;
    switch (model) {
        case CurrentModel::Exact: {
            const double disc = u * u - 4.0 * r.ohms * p_total;
            if (disc < 0.0) throw PowerLimitError(p_total, u * u / (4.0 * r.ohms));
            const double d = std::sqrt(disc);
            i = (u - d) / (2.0 * r.ohms);
            d_p = 1.0 / d;
            d_u = (1.0 - u / d) / (2.0 * r.ohms);
            d_r = p_total / (r.ohms * d) - i / r.ohms;
            break;
        }
        case CurrentModel::ThermalApprox: {
            i = p_total / u;
            d_p = 1.0 / u;
            d_u = -p_total / (u * u);
            d_r = 0.0;
            break;
        }
        case CurrentModel::SocApprox: {
            const double u3 = u * u * u;
            i = p_total / u + r.ohms * p_total * p_total / u3;
            d_p = 1.0 / u + 2.0 * r.ohms * p_total / u3;
            d_u = -p_total / (u * u) - 3.0 * r.ohms * p_total * p_total / (u3 * u);
            d_r = p_total * p_total / u3;
            break;
        }
        default: throw std::logic_error("unknown current model");
    }
    return {i, d_p, d_u * du + d_r * r.d_soc, d_r * r.d_temp};
}

/// Jacobian of the Euler step wrt (T, SOC, qdot).
struct StepJacobian {
    double dT_dT, dT_dS, dT_dq;
    double dS_dT, dS_dS, dS_dq;
};

inline StepJacobian step_jacobian(const BatteryState& state, double p_trac, double qdot,
                                  double dt, const BatteryParams& params,
                                  const ModelPair& models) {
    const double ac = params.cooling_coefficient;
    const double p_total = p_trac + cooling_power(qdot, params);
    const auto r = params.resistance_map.eval(state.soc, state.t_bat);
    const auto it = battery_current_sensitivity(models.thermal, p_total, state, params);
    const auto is = battery_current_sensitivity(models.soc, p_total, state, params);
    const double c = params.lumped_heat_capacity;

    // f_T = (I_T^2 R + q) / C
    const double ft_T = (2.0 * it.current * r.ohms * it.d_t + it.current * it.current * r.d_temp) / c;
    const double ft_S = (2.0 * it.current * r.ohms * it.d_soc + it.current * it.current * r.d_soc) / c;
    const double ft_q = (2.0 * it.current * r.ohms * it.d_p_total * ac + 1.0) / c;
    // f_S = -I_S / C_nom
    const double fs_T = -is.d_t / params.nominal_capacity;
    const double fs_S = -is.d_soc / params.nominal_capacity;
    const double fs_q = -is.d_p_total * ac / params.nominal_capacity;

    return {1.0 + dt * ft_T, dt * ft_S,       dt * ft_q,
            dt * fs_T,       1.0 + dt * fs_S, dt * fs_q};
}

}  // namespace btmpc
