// Command-line driver: closed-loop runs, horizon sweeps, controller
// comparisons, and a numeric self-check suite.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include "btmpc/param_file.hpp"
#include "btmpc/simulation.hpp"

namespace fs = std::filesystem;
using namespace btmpc;

namespace {

struct CommonOpts {
    std::string cycle = "udds";
    std::string data_dir = "data";
    std::string params_path;
    std::string out_dir = "out";
    std::string units = "mps";
    double t0 = 35.0;
    double soc0 = 0.90;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
    cmd->add_option("--cycle", o.cycle, "cycle name (udds, nycc) or a CSV path");
    cmd->add_option("--data-dir", o.data_dir, "directory holding bundled cycles");
    cmd->add_option("--params", o.params_path, "flat key = value parameter file");
    cmd->add_option("--out-dir", o.out_dir, "output directory");
    cmd->add_option("--units", o.units, "cycle file speed units: mps, mph, kph");
    cmd->add_option("--t0", o.t0, "initial battery temperature, degC");
    cmd->add_option("--soc0", o.soc0, "initial state of charge");
}

SpeedUnit parse_units(const std::string& u) {
    if (u == "mps") return SpeedUnit::MetersPerSecond;
    if (u == "mph") return SpeedUnit::MilesPerHour;
    if (u == "kph") return SpeedUnit::KilometersPerHour;
    throw CLI::ValidationError("--units must be mps, mph or kph");
}

DriveCycle resolve_cycle(const CommonOpts& o) {
    if (fs::exists(o.cycle)) return load_cycle(o.cycle, parse_units(o.units));
    const fs::path bundled = fs::path(o.data_dir) / (o.cycle + ".csv");
    if (fs::exists(bundled)) return load_cycle(bundled.string(), parse_units(o.units));
    throw CLI::ValidationError("cannot find cycle '" + o.cycle + "' (tried " +
                               bundled.string() + ")");
}

RunParams resolve_params(const CommonOpts& o) {
    RunParams p;
    if (!o.params_path.empty()) apply_params(load_param_file(o.params_path), p);
    return p;
}

std::unique_ptr<Controller> make_controller(const std::string& name, const DriveCycle& cycle,
                                            const FlowProfile& flow, RunParams& rp,
                                            std::size_t horizon) {
    if (name == "rule") return std::make_unique<RuleBasedController>(rp.rule);
    if (name == "single" || name == "single_flow") {
        auto mpc = rp.mpc;
        if (horizon) mpc.single_layer.horizon_steps = horizon;
        const auto mode = name == "single" ? PreviewMode::ExactFullCycle
                                           : PreviewMode::ExactShortThenFlow;
        return std::make_unique<SingleLayerMpc>(cycle, flow, mpc, rp.preview, rp.battery,
                                                rp.vehicle, mode);
    }
    if (name == "two_layer" || name == "two_layer_no_ioch") {
        auto mpc = rp.mpc;
        mpc.ioch.enabled = name == "two_layer";
        return std::make_unique<TwoLayerMpc>(cycle, flow, mpc, rp.preview, rp.battery,
                                             rp.vehicle);
    }
    throw CLI::ValidationError("unknown controller '" + name +
                               "' (rule, single, single_flow, two_layer, two_layer_no_ioch)");
}

void write_metrics_csv(const fs::path& path,
                       const std::vector<std::pair<std::string, Metrics>>& rows) {
    std::ofstream out(path);
    out << "scenario,terminal_soc,soc_drop,cooling_energy_j,violation_seconds,"
           "violation_degree_seconds,peak_t_c,avg_solve_long_s,max_solve_long_s,"
           "avg_solve_short_s,max_solve_short_s\n";
    char buf[320];
    for (const auto& [name, m] : rows) {
        std::snprintf(buf, sizeof buf, "%s,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n",
                      name.c_str(), m.terminal_soc, m.soc_drop, m.cooling_energy,
                      m.violation_seconds, m.violation_degree_seconds, m.peak_t,
                      m.avg_solve_long, m.max_solve_long, m.avg_solve_short, m.max_solve_short);
        out << buf;
    }
}

void emit_plot_script(const fs::path& out_dir, const std::vector<std::string>& csvs) {
    std::ofstream gp(out_dir / "plot.gp");
    gp << "# gnuplot script over the result CSVs\n"
       << "set datafile separator ','\n"
       << "set key outside\n"
       << "set terminal pngcairo size 1100,800\n"
       << "set output 'results.png'\n"
       << "set multiplot layout 3,1\n"
       << "set ylabel 'speed m/s'\n"
       << "plot '" << csvs.front() << "' using 1:2 with lines title 'speed'\n"
       << "set ylabel 'T_bat degC'\n"
       << "plot ";
    for (std::size_t i = 0; i < csvs.size(); ++i)
        gp << (i ? ", " : "") << "'" << csvs[i] << "' using 1:6 with lines title '" << csvs[i]
           << "'";
    gp << ", 40 with lines dashtype 2 title 'limit'\n"
       << "set ylabel 'SOC'\n"
       << "plot ";
    for (std::size_t i = 0; i < csvs.size(); ++i)
        gp << (i ? ", " : "") << "'" << csvs[i] << "' using 1:7 with lines title '" << csvs[i]
           << "'";
    gp << "\nunset multiplot\n";
}

int cmd_run(const CommonOpts& o, const std::string& controller, std::size_t horizon,
            bool plot) {
    auto rp = resolve_params(o);
    const auto cycle = resolve_cycle(o);
    const auto flow = build_flow_profile(cycle, rp.preview.flow_window);
    auto ctl = make_controller(controller, cycle, flow, rp, horizon);
    const auto res = run_closed_loop(cycle, *ctl, {o.t0, o.soc0}, rp.battery, rp.vehicle);
    const auto m = compute_metrics(res, rp.battery);

    fs::create_directories(o.out_dir);
    const auto csv = fs::path(o.out_dir) / (res.scenario() + ".csv");
    write_csv(res, csv.string());
    write_metrics_csv(fs::path(o.out_dir) / "metrics.csv", {{res.scenario(), m}});
    if (plot) emit_plot_script(o.out_dir, {csv.filename().string()});

    std::cout << res.scenario() << ": soc_drop=" << m.soc_drop
              << " cooling_kJ=" << m.cooling_energy / 1000.0
              << " viol_s=" << m.violation_seconds
              << " viol_Ks=" << m.violation_degree_seconds << " peak_T=" << m.peak_t
              << "\n  avg_solve_long=" << m.avg_solve_long
              << "s avg_solve_short=" << m.avg_solve_short << "s\n"
              << "wrote " << csv.string() << "\n";
    return 0;
}

int cmd_sweep(const CommonOpts& o, const std::string& controller,
              const std::string& horizons_csv, const std::string& preview_kind) {
    auto rp = resolve_params(o);
    const auto cycle = resolve_cycle(o);
    const auto flow = build_flow_profile(cycle, rp.preview.flow_window);

    std::vector<std::size_t> horizons;
    std::stringstream hs(horizons_csv);
    std::string tok;
    while (std::getline(hs, tok, ',')) horizons.push_back(std::stoul(tok));
    if (horizons.empty()) throw CLI::ValidationError("--horizons list is empty");

    fs::create_directories(o.out_dir);
    std::vector<std::pair<std::string, Metrics>> rows;
    std::ostringstream report;
    report << "horizon sweep: cycle=" << cycle.name << " T0=" << o.t0
           << " controller=" << controller << " preview=" << preview_kind << "\n";
    const std::string name = preview_kind == "flow" ? "single_flow" : "single";
    for (const auto n : horizons) {
        auto ctl = make_controller(controller == "single" ? name : controller, cycle, flow,
                                   rp, n);
        const auto res = run_closed_loop(cycle, *ctl, {o.t0, o.soc0}, rp.battery, rp.vehicle);
        const auto m = compute_metrics(res, rp.battery);
        write_csv(res, (fs::path(o.out_dir) / (res.scenario() + ".csv")).string());
        rows.emplace_back(res.scenario(), m);
        report << "  N=" << n << ": soc_drop=" << m.soc_drop
               << " viol_s=" << m.violation_seconds << " viol_Ks=" << m.violation_degree_seconds
               << " avg_solve=" << m.avg_solve_long << "s\n";
    }
    write_metrics_csv(fs::path(o.out_dir) / "metrics.csv", rows);
    std::ofstream(fs::path(o.out_dir) / "report.txt") << report.str();
    std::cout << report.str();
    return 0;
}

int cmd_compare(const CommonOpts& o, const std::string& controllers_csv,
                const std::string& baseline, std::size_t horizon, bool plot) {
    auto rp = resolve_params(o);
    const auto cycle = resolve_cycle(o);
    const auto flow = build_flow_profile(cycle, rp.preview.flow_window);

    std::vector<std::string> names;
    std::stringstream cs(controllers_csv);
    std::string tok;
    while (std::getline(cs, tok, ',')) names.push_back(tok);
    if (names.empty()) throw CLI::ValidationError("--controllers list is empty");

    fs::create_directories(o.out_dir);
    std::vector<SimResult> results;
    std::vector<std::string> csvs;
    for (const auto& name : names) {
        auto ctl = make_controller(name, cycle, flow, rp, horizon);
        results.push_back(run_closed_loop(cycle, *ctl, {o.t0, o.soc0}, rp.battery, rp.vehicle));
        const auto csv = fs::path(o.out_dir) / (results.back().scenario() + ".csv");
        write_csv(results.back(), csv.string());
        csvs.push_back(csv.filename().string());
    }
    std::string base_label = results.front().controller;
    for (std::size_t i = 0; i < names.size(); ++i)
        if (names[i] == baseline) base_label = results[i].controller;
    const auto rep = compare(results, rp.battery, base_label);

    std::vector<std::pair<std::string, Metrics>> rows;
    for (const auto& r : rep.rows) rows.emplace_back(r.controller, r.metrics);
    write_metrics_csv(fs::path(o.out_dir) / "metrics.csv", rows);
    std::ofstream(fs::path(o.out_dir) / "report.txt") << rep.to_text();
    {
        std::ofstream out(fs::path(o.out_dir) / "comparison.csv");
        out << rep.to_csv();
    }
    if (plot) emit_plot_script(o.out_dir, csvs);
    std::cout << rep.to_text();
    return 0;
}

void check(bool ok, const std::string& label, std::ostringstream& detail, int& failures) {
    if (ok) {
        std::cout << "PASS " << label << "\n";
    } else {
        std::cout << "FAIL " << label << "  " << detail.str() << "\n";
        ++failures;
    }
    detail.str("");
}

int cmd_verify() {
    int failures = 0;
    std::ostringstream d;
    const BatteryParams bat;
    const VehicleParams veh;

    {  // quadratic-root identity
        double worst = 0.0;
        for (double soc : {0.35, 0.6, 0.9})
            for (double t : {22.0, 31.0, 39.0})
                for (double pw = -30000.0; pw <= 60000.0; pw += 2500.0) {
                    BatteryState x{t, soc};
                    const double u = bat.ocv_map(soc), r = bat.resistance_map(soc, t);
                    const double i = battery_current_exact(pw, x, bat);
                    worst = std::max(worst,
                                     std::abs(i * (u - i * r) - pw) / std::max(1.0, std::abs(pw)));
                }
        d << "max residual " << worst;
        check(worst <= 1e-9, "quadratic-root identity", d, failures);
    }
    {  // Taylor hierarchy
        bool ok = true;
        BatteryState x{35.0, 0.9};
        for (double pw = 0.0; pw <= 50000.0; pw += 500.0) {
            const double ie = battery_current_exact(pw, x, bat);
            if (std::abs(ie - battery_current_soc_approx(pw, x, bat)) >
                std::abs(ie - battery_current_thermal_approx(pw, x, bat)) + 1e-12)
                ok = false;
        }
        check(ok, "Taylor error hierarchy", d, failures);
    }
    {  // Euler order of accuracy
        auto integrate = [&](double dt) {
            BatteryState x{37.0, 0.8};
            for (int i = 0; i < int(8.0 / dt + 0.5); ++i)
                x = step(x, 20000.0, -1500.0, dt, bat, exact_plant_models()).state;
            return x.t_bat;
        };
        const double ref = integrate(8.0 / 512.0);
        const double ratio = std::abs(integrate(2.0) - ref) / std::abs(integrate(1.0) - ref);
        d << "ratio " << ratio;
        check(ratio > 1.8 && ratio < 2.2, "Euler order of accuracy", d, failures);
    }
    {  // gradient checks on the three cost forms
        std::mt19937 rng(5);
        std::uniform_real_distribution<double> uq(-2800.0, -200.0);
        double worst = 0.0;
        for (int trial = 0; trial < 10; ++trial) {
            OcpProblem pb;
            pb.horizon_steps = 6;
            pb.initial_state = {39.0, 0.85};
            pb.p_trac_preview.assign(6, 20000.0);
            pb.state_bounds = state_bounds_from(pb.params);
            std::vector<double> q(6);
            for (auto& v : q) v = uq(rng);
            worst = std::max(worst, verify_gradient(pb, q));
            pb.cost = StageCostKind::Tracking;
            pb.state_bounds.reset();
            pb.refs.t_ref.assign(7, 38.5);
            pb.refs.soc_ref.assign(7, 0.85);
            worst = std::max(worst, verify_gradient(pb, q));
            pb.cost = StageCostKind::EconomicWithSlack;
            pb.state_bounds = state_bounds_from(pb.params);
            pb.slack = SlackSpec{10.0, 0.5, 5.0};
            worst = std::max(worst, verify_gradient(pb, q, std::vector<double>(6, 0.3)));
        }
        d << "max rel err " << worst;
        check(worst <= 1e-4, "adjoint gradient vs finite differences", d, failures);
    }
    {  // solver dominates a coarse grid on small instances
        std::mt19937 rng(9);
        std::uniform_real_distribution<double> ut(34.0, 41.0), up(0.0, 35000.0);
        bool ok = true;
        for (int trial = 0; trial < 20 && ok; ++trial) {
            OcpProblem pb;
            pb.horizon_steps = 3;
            pb.initial_state = {ut(rng), 0.85};
            pb.p_trac_preview = {up(rng), up(rng), up(rng)};
            pb.state_bounds = state_bounds_from(pb.params);
            const auto sol = solve(pb);
            double best = 1e300;
            for (int a = 0; a < 5; ++a)
                for (int b = 0; b < 5; ++b)
                    for (int c = 0; c < 5; ++c) {
                        const std::vector<double> q = {-750.0 * a, -750.0 * b, -750.0 * c};
                        const auto rr = rollout(pb, q);
                        double pen = 0.0;
                        for (double v : rr.violations) pen += sol.penalty_weight * v * v;
                        best = std::min(best, rr.cost + pen);
                    }
            if (!(sol.penalized_cost <= best + 1e-6)) ok = false;
        }
        check(ok, "solve dominates 5-level grid search", d, failures);
    }
    {  // closed-loop replay
        DriveCycle c{1.0, {}, "verify"};
        for (int r = 0; r < 3; ++r) {
            for (int i = 0; i <= 8; ++i) c.speeds.push_back(1.5 * i);
            for (int i = 8; i-- > 0;) c.speeds.push_back(1.5 * i);
            for (int i = 0; i < 4; ++i) c.speeds.push_back(0.0);
        }
        const auto flow = build_flow_profile(c, 60.0);
        MpcConfig mpc;
        mpc.single_layer = {10, 1.0};
        SingleLayerMpc ctl(c, flow, mpc, {}, bat, veh, PreviewMode::ExactFullCycle);
        const auto res = run_closed_loop(c, ctl, {39.0, 0.9}, bat, veh);
        BatteryState x{res.initial_t, res.initial_soc};
        double worst = 0.0;
        for (const auto& row : res.log) {
            worst = std::max({worst, std::abs(x.t_bat - row.t_bat), std::abs(x.soc - row.soc)});
            x = step(x, row.p_trac, row.qdot, res.dt, bat, exact_plant_models()).state;
        }
        d << "max replay error " << worst;
        check(worst <= 1e-10, "open-loop replay of a closed-loop log", d, failures);
    }

    std::cout << (failures ? "verify: FAILED\n" : "verify: all checks passed\n");
    return failures ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"battery thermal and energy management simulator"};
    app.require_subcommand(1);

    CommonOpts run_o, sweep_o, cmp_o;
    std::string run_controller = "rule";
    std::size_t run_horizon = 0;
    bool run_plot = false;
    auto* run = app.add_subcommand("run", "simulate one controller on one cycle");
    add_common(run, run_o);
    run->add_option("--controller", run_controller,
                    "rule | single | single_flow | two_layer | two_layer_no_ioch");
    run->add_option("--horizon", run_horizon, "single-layer horizon steps (overrides params)");
    run->add_flag("--plot-script", run_plot, "emit a gnuplot script next to the CSVs");

    std::string sweep_controller = "single", sweep_horizons = "10,60,120,180",
                sweep_preview = "exact";
    auto* sweep = app.add_subcommand("sweep", "sweep single-layer horizons");
    add_common(sweep, sweep_o);
    sweep->add_option("--controller", sweep_controller, "controller to sweep (single)");
    sweep->add_option("--horizons", sweep_horizons, "comma-separated horizon steps");
    sweep->add_option("--preview", sweep_preview, "exact | flow");

    std::string cmp_controllers = "rule,two_layer", cmp_baseline = "rule";
    std::size_t cmp_horizon = 0;
    bool cmp_plot = false;
    auto* cmp = app.add_subcommand("compare", "run several controllers on one scenario");
    add_common(cmp, cmp_o);
    cmp->add_option("--controllers", cmp_controllers, "comma-separated controller list");
    cmp->add_option("--baseline", cmp_baseline, "baseline controller for savings");
    cmp->add_option("--horizon", cmp_horizon, "single-layer horizon steps");
    cmp->add_flag("--plot-script", cmp_plot, "emit a gnuplot script next to the CSVs");

    auto* verify = app.add_subcommand("verify", "run the numeric invariant suite");

    CLI11_PARSE(app, argc, argv);
    try {
        if (run->parsed()) return cmd_run(run_o, run_controller, run_horizon, run_plot);
        if (sweep->parsed())
            return cmd_sweep(sweep_o, sweep_controller, sweep_horizons, sweep_preview);
        if (cmp->parsed())
            return cmd_compare(cmp_o, cmp_controllers, cmp_baseline, cmp_horizon, cmp_plot);
        if (verify->parsed()) return cmd_verify();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
