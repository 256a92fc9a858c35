#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "btmpc/battery.hpp"
#include "btmpc/controllers.hpp"
#include "btmpc/drive_cycle.hpp"
#include "btmpc/traction.hpp"

namespace btmpc {

struct PreviewConfig {
    double flow_window = 250.0;  // s
    double exact_span = 15.0;    // s of exact speed before blending into flow
    double blend_span = 15.0;    // s
    // Spans for the scheduling layer's flow-blended preview.
    double sched_exact_span = 15.0;
    double sched_blend_span = 15.0;
};

// ---------------------------------------------------------------------------
// Closed-loop results and metrics
// ---------------------------------------------------------------------------

struct SimStep {
    double time = 0.0;
    double speed = 0.0;
    double p_trac = 0.0;
    double qdot = 0.0;
    double p_temp = 0.0;
    double t_bat = 0.0;
    double soc = 0.0;
    double t_ref = std::numeric_limits<double>::quiet_NaN();
    double soc_ref = std::numeric_limits<double>::quiet_NaN();
    double epsilon = std::numeric_limits<double>::quiet_NaN();
    double solve_time_long = std::numeric_limits<double>::quiet_NaN();
    double solve_time_short = std::numeric_limits<double>::quiet_NaN();
    int solver_status = -1;
};

struct SimResult {
    std::string cycle_name;
    std::string controller;
    double dt = 1.0;
    double initial_t = 0.0;
    double initial_soc = 0.0;
    std::vector<SimStep> log;          // one entry per cycle sample
    BatteryState final_state;          // state after the last step
    double sched_residual_max = 0.0;   // worst scheduling soft-bound excess

    std::string scenario() const {
        std::ostringstream os;
        os << cycle_name << "_" << controller << "_t" << int(std::lround(initial_t));
        return os.str();
    }
};

struct Metrics {
    double terminal_soc = 0.0;
    double soc_drop = 0.0;
    double cooling_energy = 0.0;             // J
    double violation_seconds = 0.0;          // s with T above the upper limit
    double violation_degree_seconds = 0.0;   // K*s above the upper limit
    double peak_t = 0.0;                     // degC
    double avg_solve_long = 0.0, max_solve_long = 0.0;    // s
    double avg_solve_short = 0.0, max_solve_short = 0.0;  // s
};

// ---------------------------------------------------------------------------
// Controller wrappers driven by the harness
// ---------------------------------------------------------------------------

class Controller {
public:
    virtual ~Controller() = default;
    virtual ControlDecision decide(std::size_t k, const BatteryState& state) = 0;
    virtual std::string label() const = 0;
};

class RuleBasedController final : public Controller {
public:
    explicit RuleBasedController(const RuleBasedConfig& cfg) : cfg_(cfg) { cfg_.validate(); }
    ControlDecision decide(std::size_t, const BatteryState& state) override {
        const auto d = rule_based_step(state, cfg_, on_);
        on_ = d.on;
        return {d.qdot, {}};
    }
    std::string label() const override { return "rule"; }

private:
    RuleBasedConfig cfg_;
    bool on_ = false;
};

/// Economic NMPC over the full horizon at the plant rate. The preview is
/// either the true future speed or the short-exact/flow-blend estimate.
class SingleLayerMpc final : public Controller {
public:
    SingleLayerMpc(const DriveCycle& cycle, const FlowProfile& flow, const MpcConfig& mpc,
                   const PreviewConfig& prev, const BatteryParams& bat,
                   const VehicleParams& veh, PreviewMode mode)
        : cycle_(cycle), flow_(flow), mpc_(mpc), prev_(prev), bat_(bat), veh_(veh), mode_(mode) {}

    ControlDecision decide(std::size_t k, const BatteryState& state) override {
        const auto pv = preview(cycle_, flow_, k, mpc_.single_layer.horizon_steps,
                                mpc_.single_layer.step, prev_.exact_span, prev_.blend_span, mode_);
        auto r = single_layer_mpc_step(state, pv, bat_, veh_, mpc_.single_layer, mpc_.solver,
                                       has_warm_ ? &warm_ : nullptr);
        if (!r.solution.qdot_seq.empty()) {
            warm_ = detail::shifted_warm(r.solution.qdot_seq);
            has_warm_ = true;
        }
        return r.decision;
    }
    std::string label() const override {
        return "single_n" + std::to_string(mpc_.single_layer.horizon_steps) +
               (mode_ == PreviewMode::ExactFullCycle ? "_exact" : "_flow");
    }

private:
    const DriveCycle& cycle_;
    const FlowProfile& flow_;
    MpcConfig mpc_;
    PreviewConfig prev_;
    BatteryParams bat_;
    VehicleParams veh_;
    PreviewMode mode_;
    std::vector<double> warm_;
    bool has_warm_ = false;
};

/// Scheduling + piloting hierarchy. The scheduling layer consumes the
/// flow-blended preview on the slow grid; the piloting layer consumes the
/// exact short-horizon preview.
class TwoLayerMpc final : public Controller {
public:
    TwoLayerMpc(const DriveCycle& cycle, const FlowProfile& flow, const MpcConfig& mpc,
                const PreviewConfig& prev, const BatteryParams& bat, const VehicleParams& veh)
        : cycle_(cycle), flow_(flow), mpc_(mpc), prev_(prev), bat_(bat), veh_(veh) {
        mpc_.validate();
    }

    ControlDecision decide(std::size_t k, const BatteryState& state) override {
        const double now = double(k) * cycle_.dt;
        // flow preview on the fine grid; the scheduler averages power per slot
        const auto tau = static_cast<std::size_t>(mpc_.rate_ratio());
        const auto flow_pv =
            preview(cycle_, flow_, k, mpc_.scheduling.steps() * tau, mpc_.piloting.step,
                    prev_.sched_exact_span, prev_.sched_blend_span,
                    PreviewMode::ExactShortThenFlow);
        const auto exact_pv = preview(cycle_, flow_, k, mpc_.piloting.steps(),
                                      mpc_.piloting.step, prev_.exact_span, prev_.blend_span,
                                      PreviewMode::ExactFullCycle);
        return two_layer_step(state, flow_pv, exact_pv, bat_, veh_, mpc_, now, persistent_);
    }
    std::string label() const override {
        return mpc_.ioch.enabled ? "two_layer" : "two_layer_no_ioch";
    }

private:
    const DriveCycle& cycle_;
    const FlowProfile& flow_;
    MpcConfig mpc_;
    PreviewConfig prev_;
    BatteryParams bat_;
    VehicleParams veh_;
    TwoLayerState persistent_;
};

// ---------------------------------------------------------------------------
// Closed loop
// ---------------------------------------------------------------------------

/// Simulate the controller against the exact plant over the whole cycle.
/// Deterministic; aborts with context if the plant power limit is exceeded.
inline SimResult run_closed_loop(const DriveCycle& cycle, Controller& controller,
                                 const BatteryState& initial, const BatteryParams& battery,
                                 const VehicleParams& vehicle) {
    cycle.validate();
    battery.validate();
    vehicle.validate();
    const auto demand = demand_profile(cycle, vehicle);
    SimResult res;
    res.cycle_name = cycle.name;
    res.controller = controller.label();
    res.dt = cycle.dt;
    res.initial_t = initial.t_bat;
    res.initial_soc = initial.soc;
    res.log.reserve(cycle.size());

    BatteryState state = initial;
    for (std::size_t k = 0; k < cycle.size(); ++k) {
        const auto dec = controller.decide(k, state);
        SimStep row;
        row.time = double(k) * cycle.dt;
        row.speed = cycle.speeds[k];
        row.p_trac = demand[k];
        row.qdot = dec.qdot;
        row.p_temp = cooling_power(dec.qdot, battery);
        row.t_bat = state.t_bat;
        row.soc = state.soc;
        row.t_ref = dec.diag.t_ref;
        row.soc_ref = dec.diag.soc_ref;
        row.epsilon = dec.diag.epsilon;
        row.solve_time_long = dec.diag.solve_time_long;
        row.solve_time_short = dec.diag.solve_time_short;
        row.solver_status = std::max(dec.diag.status_long, dec.diag.status_short);
        res.log.push_back(row);
        if (!std::isnan(dec.diag.sched_bound_residual))
            res.sched_residual_max =
                std::max(res.sched_residual_max, dec.diag.sched_bound_residual);
        try {
            state = step(state, demand[k], dec.qdot, cycle.dt, battery, exact_plant_models()).state;
        } catch (const PowerLimitError& err) {
            throw std::runtime_error("plant power limit exceeded at t=" +
                                     std::to_string(row.time) + " s: " + err.what());
        }
    }
    res.final_state = state;
    return res;
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

namespace detail {

/// Time above the limit and integral of the excess for a piecewise-linear
/// temperature trace.
inline void violation_integrals(const std::vector<double>& temps, double dt, double limit,
                                double& seconds, double& degree_seconds) {
    seconds = 0.0;
    degree_seconds = 0.0;
    for (std::size_t i = 0; i + 1 < temps.size(); ++i) {
        const double a = temps[i] - limit, b = temps[i + 1] - limit;
        if (a <= 0.0 && b <= 0.0) continue;
        if (a >= 0.0 && b >= 0.0) {
            seconds += dt;
            degree_seconds += 0.5 * (a + b) * dt;
            continue;
        }
        // single crossing inside the segment
        const double frac = a / (a - b);  // where the trace meets the limit
        if (a > 0.0) {
            seconds += frac * dt;
            degree_seconds += 0.5 * a * frac * dt;
        } else {
            seconds += (1.0 - frac) * dt;
            degree_seconds += 0.5 * b * (1.0 - frac) * dt;
        }
    }
}

inline void solve_stats(const std::vector<SimStep>& log, double SimStep::*field,
                        double& avg, double& mx) {
    double sum = 0.0;
    std::size_t cnt = 0;
    mx = 0.0;
    for (const auto& row : log) {
        const double v = row.*field;
        if (std::isnan(v)) continue;
        sum += v;
        mx = std::max(mx, v);
        ++cnt;
    }
    avg = cnt ? sum / double(cnt) : 0.0;
}

}  // namespace detail

inline Metrics compute_metrics(const SimResult& res, const BatteryParams& params) {
    if (res.log.empty()) throw std::invalid_argument("empty simulation result");
    Metrics m;
    m.terminal_soc = res.final_state.soc;
    m.soc_drop = res.initial_soc - res.final_state.soc;

    // zero-order-hold inputs: extend the last sample to the terminal instant,
    // then integrate with the trapezoidal rule
    std::vector<double> p_temp;
    p_temp.reserve(res.log.size() + 1);
    for (const auto& r : res.log) p_temp.push_back(r.p_temp);
    p_temp.push_back(res.log.back().p_temp);
    for (std::size_t i = 0; i + 1 < p_temp.size(); ++i)
        m.cooling_energy += 0.5 * (p_temp[i] + p_temp[i + 1]) * res.dt;

    std::vector<double> temps;
    temps.reserve(res.log.size() + 1);
    for (const auto& r : res.log) temps.push_back(r.t_bat);
    temps.push_back(res.final_state.t_bat);
    detail::violation_integrals(temps, res.dt, params.t_upper, m.violation_seconds,
                                m.violation_degree_seconds);
    m.peak_t = *std::max_element(temps.begin(), temps.end());

    detail::solve_stats(res.log, &SimStep::solve_time_long, m.avg_solve_long, m.max_solve_long);
    detail::solve_stats(res.log, &SimStep::solve_time_short, m.avg_solve_short, m.max_solve_short);
    return m;
}

// ---------------------------------------------------------------------------
// CSV result files (9 significant digits, fixed column order)
// ---------------------------------------------------------------------------

inline void write_csv(const SimResult& res, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "time_s,speed_mps,p_trac_w,qdot_w,p_temp_w,t_bat_c,soc,t_ref_c,soc_ref,"
           "epsilon_k,solve_time_long_s,solve_time_short_s,solver_status\n";
    char buf[64];
    auto num = [&](double v) {
        std::snprintf(buf, sizeof buf, "%.9g", v);
        out << buf;
    };
    for (const auto& r : res.log) {
        num(r.time); out << ',';
        num(r.speed); out << ',';
        num(r.p_trac); out << ',';
        num(r.qdot); out << ',';
        num(r.p_temp); out << ',';
        num(r.t_bat); out << ',';
        num(r.soc); out << ',';
        num(r.t_ref); out << ',';
        num(r.soc_ref); out << ',';
        num(r.epsilon); out << ',';
        num(r.solve_time_long); out << ',';
        num(r.solve_time_short); out << ',';
        out << r.solver_status << '\n';
    }
    out << "# meta,cycle=" << res.cycle_name << ",controller=" << res.controller
        << ",dt=" << res.dt << '\n';
    std::snprintf(buf, sizeof buf, "%.9g,%.9g", res.final_state.t_bat, res.final_state.soc);
    out << "# final_state," << buf << '\n';
    std::snprintf(buf, sizeof buf, "%.9g,%.9g,%.9g", res.initial_t, res.initial_soc,
                  res.sched_residual_max);
    out << "# initial," << buf << '\n';
}

inline SimResult read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path);
    SimResult res;
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (line[0] == '#') {
            std::istringstream meta(line);
            std::string tag;
            std::getline(meta, tag, ',');
            if (line.rfind("# meta,", 0) == 0) {
                std::string field;
                while (std::getline(meta, field, ',')) {
                    const auto eq = field.find('=');
                    if (eq == std::string::npos) continue;
                    const std::string key = field.substr(0, eq), val = field.substr(eq + 1);
                    if (key == "cycle") res.cycle_name = val;
                    else if (key == "controller") res.controller = val;
                    else if (key == "dt") res.dt = std::stod(val);
                }
            } else if (line.rfind("# final_state,", 0) == 0) {
                std::string a, b;
                std::getline(meta, a, ',');
                std::getline(meta, b, ',');
                res.final_state = {std::stod(a), std::stod(b)};
            } else if (line.rfind("# initial,", 0) == 0) {
                std::string a, b, c;
                std::getline(meta, a, ',');
                std::getline(meta, b, ',');
                std::getline(meta, c, ',');
                res.initial_t = std::stod(a);
                res.initial_soc = std::stod(b);
                res.sched_residual_max = std::stod(c);
            }
            continue;
        }
        std::istringstream ls(line);
        std::string tok;
        SimStep r;
        double* fields[] = {&r.time, &r.speed, &r.p_trac, &r.qdot, &r.p_temp, &r.t_bat,
                            &r.soc,  &r.t_ref, &r.soc_ref, &r.epsilon, &r.solve_time_long,
                            &r.solve_time_short};
        for (double* f : fields) {
            if (!std::getline(ls, tok, ',')) throw std::runtime_error(path + ": short row");
            *f = std::strtod(tok.c_str(), nullptr);
        }
        if (!std::getline(ls, tok, ',')) throw std::runtime_error(path + ": short row");
        r.solver_status = std::atoi(tok.c_str());
        res.log.push_back(r);
    }
    if (res.log.empty()) throw std::runtime_error(path + ": no data rows");
    return res;
}

// ---------------------------------------------------------------------------
// Controller comparison report
// ---------------------------------------------------------------------------

struct ComparisonRow {
    std::string controller;
    Metrics metrics;
    double soc_drop_reduction_pct = 0.0;      // vs baseline
    double cooling_energy_reduction_pct = 0.0;
};

struct ComparisonReport {
    std::string cycle_name;
    double initial_t = 0.0;
    std::string baseline;
    std::vector<ComparisonRow> rows;

    std::string to_text() const {
        std::ostringstream os;
        os << "cycle=" << cycle_name << "  T0=" << initial_t << " C  baseline=" << baseline
           << "\n";
        os << std::left << std::setw(22) << "controller" << std::right << std::setw(12)
           << "soc_drop" << std::setw(12) << "saving_%" << std::setw(14) << "cool_kJ"
           << std::setw(12) << "viol_s" << std::setw(12) << "viol_Ks" << std::setw(10)
           << "peak_C" << std::setw(12) << "avg_long" << std::setw(12) << "avg_short"
           << "\n";
        for (const auto& r : rows) {
            os << std::left << std::setw(22) << r.controller << std::right << std::fixed
               << std::setprecision(5) << std::setw(12) << r.metrics.soc_drop
               << std::setprecision(2) << std::setw(12) << r.soc_drop_reduction_pct
               << std::setw(14) << r.metrics.cooling_energy / 1000.0 << std::setw(12)
               << r.metrics.violation_seconds << std::setw(12)
               << r.metrics.violation_degree_seconds << std::setw(10) << r.metrics.peak_t
               << std::setprecision(4) << std::setw(12) << r.metrics.avg_solve_long
               << std::setw(12) << r.metrics.avg_solve_short << "\n";
        }
        return os.str();
    }

    std::string to_csv() const {
        std::ostringstream os;
        os << "controller,soc_drop,soc_drop_reduction_pct,cooling_energy_j,"
              "cooling_energy_reduction_pct,violation_seconds,violation_degree_seconds,"
              "peak_t_c,avg_solve_long_s,max_solve_long_s,avg_solve_short_s,max_solve_short_s\n";
        char buf[256];
        for (const auto& r : rows) {
            std::snprintf(buf, sizeof buf, "%s,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n",
                          r.controller.c_str(), r.metrics.soc_drop, r.soc_drop_reduction_pct,
                          r.metrics.cooling_energy, r.cooling_energy_reduction_pct,
                          r.metrics.violation_seconds, r.metrics.violation_degree_seconds,
                          r.metrics.peak_t, r.metrics.avg_solve_long, r.metrics.max_solve_long,
                          r.metrics.avg_solve_short, r.metrics.max_solve_short);
            os << buf;
        }
        return os.str();
    }
};

/// Relative savings table against a named baseline. All results must come
/// from the same cycle and initial conditions.
inline ComparisonReport compare(const std::vector<SimResult>& results,
                                const BatteryParams& params, const std::string& baseline) {
    if (results.empty()) throw std::invalid_argument("no results to compare");
    const SimResult* base = nullptr;
    for (const auto& r : results)
        if (r.controller == baseline) base = &r;
    if (!base) throw std::invalid_argument("baseline '" + baseline + "' not among results");
    for (const auto& r : results) {
        if (r.cycle_name != base->cycle_name || std::abs(r.initial_t - base->initial_t) > 1e-9 ||
            std::abs(r.initial_soc - base->initial_soc) > 1e-12)
            throw std::invalid_argument("mismatched scenarios in comparison");
    }
    const Metrics base_m = compute_metrics(*base, params);
    ComparisonReport rep;
    rep.cycle_name = base->cycle_name;
    rep.initial_t = base->initial_t;
    rep.baseline = baseline;
    for (const auto& r : results) {
        ComparisonRow row;
        row.controller = r.controller;
        row.metrics = compute_metrics(r, params);
        row.soc_drop_reduction_pct =
            base_m.soc_drop != 0.0
                ? 100.0 * (base_m.soc_drop - row.metrics.soc_drop) / base_m.soc_drop
                : 0.0;
        row.cooling_energy_reduction_pct =
            base_m.cooling_energy != 0.0
                ? 100.0 * (base_m.cooling_energy - row.metrics.cooling_energy) /
                      base_m.cooling_energy
                : 0.0;
        rep.rows.push_back(std::move(row));
    }
    return rep;
}

}  // namespace btmpc
