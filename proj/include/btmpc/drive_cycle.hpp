#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace btmpc {

/// Uniformly sampled vehicle speed trace.
struct DriveCycle {
    double dt = 1.0;              // s
    std::vector<double> speeds;   // m/s
    std::string name;

    std::size_t size() const { return speeds.size(); }
    double duration() const { return speeds.empty() ? 0.0 : dt * double(speeds.size() - 1); }

    /// Linear interpolation; clamped to the end values outside the trace.
    double speed_at_time(double t) const {
        if (speeds.empty()) return 0.0;
        if (t <= 0.0) return speeds.front();
        const double s = t / dt;
        const auto i = static_cast<std::size_t>(s);
        if (i + 1 >= speeds.size()) return speeds.back();
        const double w = s - double(i);
        return speeds[i] * (1.0 - w) + speeds[i + 1] * w;
    }

    void validate() const {
        if (!(dt > 0.0)) throw std::invalid_argument("cycle dt must be > 0");
        if (speeds.size() < 2) throw std::invalid_argument("cycle needs at least 2 samples");
        for (double v : speeds)
            if (!(v >= 0.0)) throw std::invalid_argument("cycle speeds must be nonnegative");
    }
};

enum class SpeedUnit { MetersPerSecond, MilesPerHour, KilometersPerHour };

namespace detail {
inline double unit_to_mps(SpeedUnit u) {
    switch (u) {
        case SpeedUnit::MetersPerSecond: return 1.0;
        case SpeedUnit::MilesPerHour: return 0.44704;
        case SpeedUnit::KilometersPerHour: return 1.0 / 3.6;
    }
    throw std::logic_error("unknown speed unit");
}
}  // namespace detail

/// Load a two-column (time_s, speed) text file. Comma or whitespace separated;
/// an optional non-numeric header line is skipped.
inline DriveCycle load_cycle(const std::string& path, SpeedUnit unit) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open cycle file: " + path);
    const double scale = detail::unit_to_mps(unit);
    std::vector<double> times, speeds;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        for (char& c : line)
            if (c == ',' || c == ';' || c == '\t') c = ' ';
        std::istringstream ls(line);
        double t, v;
        if (!(ls >> t)) {
            // blank line, comment, or a single header line at the top
            std::istringstream probe(line);
            std::string tok;
            if (!(probe >> tok) || tok[0] == '#' || line_no == 1) continue;
            throw std::runtime_error(path + ":" + std::to_string(line_no) + ": unparsable line");
        }
        if (!(ls >> v))
            throw std::runtime_error(path + ":" + std::to_string(line_no) + ": missing speed column");
        if (!times.empty() && !(t > times.back()))
            throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                     ": time must be strictly increasing");
        if (v * scale < 0.0)
            throw std::runtime_error(path + ":" + std::to_string(line_no) + ": negative speed");
        times.push_back(t);
        speeds.push_back(v * scale);
    }
    if (times.size() < 2) throw std::runtime_error(path + ": cycle needs at least 2 samples");
    const double dt = times[1] - times[0];
    for (std::size_t i = 1; i + 1 < times.size(); ++i) {
        if (std::abs((times[i + 1] - times[i]) - dt) > 1e-9 * std::max(1.0, dt))
            throw std::runtime_error(path + ": non-uniform sampling; resample first");
    }
    DriveCycle c{dt, std::move(speeds), path};
    const auto slash = c.name.find_last_of('/');
    if (slash != std::string::npos) c.name = c.name.substr(slash + 1);
    const auto dot = c.name.find_last_of('.');
    if (dot != std::string::npos) c.name = c.name.substr(0, dot);
    c.validate();
    return c;
}

/// Linear interpolation onto a uniform grid with spacing dt_out. Endpoints are
/// preserved when the duration is a multiple of dt_out.
inline DriveCycle resample(const DriveCycle& cycle, double dt_out) {
    if (!(dt_out > 0.0)) throw std::invalid_argument("dt_out must be > 0");
    const double dur = cycle.duration();
    const auto n = static_cast<std::size_t>(std::floor(dur / dt_out + 1e-9)) + 1;
    DriveCycle out{dt_out, {}, cycle.name};
    out.speeds.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.speeds.push_back(cycle.speed_at_time(double(i) * dt_out));
    out.validate();
    return out;
}

/// Average traffic-flow speed: centered moving average of the cycle over a
/// fixed window, truncated at the cycle boundaries.
struct FlowProfile {
    double window = 250.0;            // s
    std::vector<double> flow_speeds;  // same sampling as the source cycle
};

inline FlowProfile build_flow_profile(const DriveCycle& cycle, double window = 250.0) {
    if (!(window >= cycle.dt)) throw std::invalid_argument("window must be >= cycle dt");
    const std::size_t n = cycle.speeds.size();
    const auto half = static_cast<std::size_t>(std::round(0.5 * window / cycle.dt));
    FlowProfile flow{window, std::vector<double>(n, 0.0)};
    // prefix sums keep this O(n)
    std::vector<double> prefix(n + 1, 0.0);
    for (std::size_t i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + cycle.speeds[i];
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t lo = i > half ? i - half : 0;
        const std::size_t hi = std::min(n - 1, i + half);
        flow.flow_speeds[i] = (prefix[hi + 1] - prefix[lo]) / double(hi - lo + 1);
    }
    return flow;
}

enum class PreviewMode { ExactFullCycle, ExactShortThenFlow };

/// Speed preview over a horizon: horizon_steps + 1 samples spaced `step`
/// seconds apart, starting at the cycle sample start_index.
struct SpeedPreview {
    std::size_t start_index = 0;
    std::size_t horizon_steps = 0;
    double step = 1.0;                // s
    std::vector<double> speeds;       // length horizon_steps + 1
    PreviewMode mode = PreviewMode::ExactFullCycle;
};

namespace detail {
inline double flow_at_time(const FlowProfile& flow, const DriveCycle& cycle, double t) {
    if (flow.flow_speeds.empty()) return 0.0;
    if (t <= 0.0) return flow.flow_speeds.front();
    const double s = t / cycle.dt;
    const auto i = static_cast<std::size_t>(s);
    if (i + 1 >= flow.flow_speeds.size()) return flow.flow_speeds.back();
    const double w = s - double(i);
    return flow.flow_speeds[i] * (1.0 - w) + flow.flow_speeds[i + 1] * w;
}
}  // namespace detail

/// Build the horizon speed preview seen from cycle sample k. Exact speeds for
/// exact_span seconds, a linear blend into the flow speed over blend_span,
/// then pure flow speed. Past the cycle end the preview holds the terminal
/// flow value.
inline SpeedPreview preview(const DriveCycle& cycle, const FlowProfile& flow,
                            std::size_t k, std::size_t steps, double step,
                            double exact_span, double blend_span, PreviewMode mode) {
    if (k >= cycle.speeds.size()) throw std::out_of_range("preview start beyond cycle end");
    SpeedPreview out{k, steps, step, {}, mode};
    out.speeds.reserve(steps + 1);
    const double t0 = double(k) * cycle.dt;
    const double t_end = cycle.duration();
    for (std::size_t i = 0; i <= steps; ++i) {
        const double dt_ahead = double(i) * step;
        const double t = t0 + dt_ahead;
        double v;
        if (t > t_end) {
            v = flow.flow_speeds.empty() ? cycle.speeds.back() : flow.flow_speeds.back();
        } else if (mode == PreviewMode::ExactFullCycle) {
            v = cycle.speed_at_time(t);
        } else {
            const double v_exact = cycle.speed_at_time(t);
            const double v_flow = detail::flow_at_time(flow, cycle, t);
            if (dt_ahead <= exact_span) {
                v = v_exact;
            } else if (dt_ahead >= exact_span + blend_span || blend_span <= 0.0) {
                v = v_flow;
            } else {
                const double w = (dt_ahead - exact_span) / blend_span;
                v = (1.0 - w) * v_exact + w * v_flow;
            }
        }
        out.speeds.push_back(std::max(0.0, v));
    }
    return out;
}

}  // namespace btmpc
