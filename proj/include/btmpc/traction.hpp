#pragma once

#include <stdexcept>
#include <vector>

#include "btmpc/drive_cycle.hpp"

namespace btmpc {

struct VehicleParams {
    double mass = 1500.0;                 // kg
    double drag_area = 0.66;              // m^2, Cd*A
    double rolling_coeff = 0.012;
    double air_density = 1.2;             // kg/m^3
    double gravity = 9.81;                // m/s^2
    double driveline_efficiency = 0.9;    // propulsion
    double regen_efficiency = 0.55;
    double regen_power_floor = -30000.0;  // W, most negative admissible P_trac

    void validate() const {
        if (!(mass > 0.0 && drag_area > 0.0 && air_density > 0.0 && gravity > 0.0))
            throw std::invalid_argument("vehicle parameters must be positive");
        if (!(rolling_coeff > 0.0))
            throw std::invalid_argument("rolling_coeff must be positive");
        if (!(driveline_efficiency > 0.0 && driveline_efficiency <= 1.0) ||
            !(regen_efficiency > 0.0 && regen_efficiency <= 1.0))
            throw std::invalid_argument("efficiencies must lie in (0, 1]");
        if (!(regen_power_floor < 0.0))
            throw std::invalid_argument("regen_power_floor must be negative");
    }
};

/// Battery-side traction power for speed v (m/s) and acceleration a (m/s^2).
inline double traction_power(double v, double a, const VehicleParams& p) {
    if (v < 0.0) throw std::domain_error("speed must be nonnegative");
    const double force = p.mass * a + 0.5 * p.air_density * p.drag_area * v * v +
                         p.mass * p.gravity * p.rolling_coeff;
    const double p_wheel = v * force;
    if (p_wheel >= 0.0) return p_wheel / p.driveline_efficiency;
    return std::max(p.regen_power_floor, p_wheel * p.regen_efficiency);
}

/// Per-sample traction power for a uniformly sampled cycle. Acceleration by
/// forward difference; the last sample uses a = 0.
inline std::vector<double> demand_profile(const DriveCycle& cycle, const VehicleParams& p) {
    if (cycle.speeds.empty()) throw std::invalid_argument("empty drive cycle");
    const std::size_t n = cycle.speeds.size();
    std::vector<double> out(n);
    for (std::size_t k = 0; k < n; ++k) {
        const double a =
            (k + 1 < n) ? (cycle.speeds[k + 1] - cycle.speeds[k]) / cycle.dt : 0.0;
        out[k] = traction_power(cycle.speeds[k], a, p);
    }
    return out;
}

/// Traction power along a speed preview (forward difference on the preview
/// grid); one value per horizon step.
inline std::vector<double> power_preview(const SpeedPreview& preview, const VehicleParams& p) {
    std::vector<double> out(preview.horizon_steps);
    for (std::size_t i = 0; i < preview.horizon_steps; ++i) {
        const double a = (preview.speeds[i + 1] - preview.speeds[i]) / preview.step;
        out[i] = traction_power(preview.speeds[i], a, p);
    }
    return out;
}

}  // namespace btmpc
