#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>

#include "btmpc/param_file.hpp"
#include "btmpc/simulation.hpp"

using namespace btmpc;

namespace {

DriveCycle constant_cycle(double v, std::size_t n, const char* name) {
    return DriveCycle{1.0, std::vector<double>(n, v), name};
}

DriveCycle hilly_cycle(std::size_t reps, const char* name) {
    DriveCycle c{1.0, {}, name};
    for (std::size_t r = 0; r < reps; ++r) {
        for (int i = 0; i <= 8; ++i) c.speeds.push_back(1.6 * i);
        for (int i = 0; i < 6; ++i) c.speeds.push_back(12.8);
        for (int i = 8; i-- > 0;) c.speeds.push_back(1.6 * i);
        for (int i = 0; i < 5; ++i) c.speeds.push_back(0.0);
    }
    return c;
}

}  // namespace

TEST_CASE("closed loop with the rule-based controller") {
    const BatteryParams bat;
    const VehicleParams veh;

    SECTION("zero-speed cycle, cool start: nothing happens") {
        const auto cycle = constant_cycle(0.0, 60, "idle");
        RuleBasedController ctl({});
        const auto res = run_closed_loop(cycle, ctl, {30.0, 0.9}, bat, veh);
        for (const auto& r : res.log) {
            CHECK(r.qdot == 0.0);
            CHECK(r.t_bat == 30.0);
        }
        CHECK(res.final_state.soc == 0.9);
    }
    SECTION("hot start: cooling stays on until the band is reached") {
        const auto cycle = constant_cycle(0.0, 120, "idle");
        RuleBasedController ctl({});
        const auto res = run_closed_loop(cycle, ctl, {39.0, 0.9}, bat, veh);
        bool reached_band = false;
        for (const auto& r : res.log) {
            if (r.t_bat < 34.5) reached_band = true;
            if (reached_band) CHECK(r.qdot == 0.0);
            else if (r.t_bat > 35.5) CHECK(r.qdot == -3000.0);
        }
        CHECK(reached_band);
        CHECK(res.final_state.soc < 0.9);  // the pull-down cost energy
    }
}

TEST_CASE("metrics") {
    const BatteryParams bat;

    SECTION("no cooling means no cooling energy") {
        const auto cycle = constant_cycle(10.0, 50, "c10");
        RuleBasedController ctl({});
        const auto res = run_closed_loop(cycle, ctl, {30.0, 0.9}, bat, {});
        CHECK(compute_metrics(res, bat).cooling_energy == 0.0);
    }
    SECTION("constant full cooling for 100 s costs 150 kJ") {
        SimResult res;
        res.dt = 1.0;
        res.initial_t = 36.0;
        res.initial_soc = 0.9;
        for (int k = 0; k < 100; ++k) {
            SimStep r;
            r.time = k;
            r.qdot = -3000.0;
            r.p_temp = 1500.0;
            r.t_bat = 36.0;
            r.soc = 0.9;
            res.log.push_back(r);
        }
        res.final_state = {35.0, 0.89};
        CHECK(compute_metrics(res, bat).cooling_energy == Catch::Approx(150000.0));
    }
    SECTION("triangular limit crossing: 10 s, 5 K*s") {
        SimResult res;
        res.dt = 1.0;
        res.initial_t = 40.0;
        res.initial_soc = 0.9;
        for (int k = 0; k <= 9; ++k) {
            SimStep r;
            r.time = k;
            r.t_bat = k <= 5 ? 40.0 + 0.2 * k : 41.0 - 0.2 * (k - 5);
            r.soc = 0.9;
            res.log.push_back(r);
        }
        res.final_state = {40.0, 0.9};  // closes the triangle at t = 10
        const auto m = compute_metrics(res, bat);
        CHECK(m.violation_seconds == Catch::Approx(10.0));
        CHECK(m.violation_degree_seconds == Catch::Approx(5.0));
        CHECK(m.peak_t == Catch::Approx(41.0));
    }
}

TEST_CASE("csv round trip preserves the metrics") {
    const BatteryParams bat;
    const VehicleParams veh;
    const auto cycle = hilly_cycle(4, "hills");
    MpcConfig mpc;
    mpc.single_layer = {12, 1.0};
    const auto flow = build_flow_profile(cycle, 60.0);
    SingleLayerMpc ctl(cycle, flow, mpc, {}, bat, veh, PreviewMode::ExactFullCycle);
    const auto res = run_closed_loop(cycle, ctl, {39.2, 0.9}, bat, veh);

    const std::string path = "roundtrip_test.csv";
    write_csv(res, path);
    const auto back = read_csv(path);
    std::remove(path.c_str());

    const auto m0 = compute_metrics(res, bat);
    const auto m1 = compute_metrics(back, bat);
    CHECK(m1.terminal_soc == Catch::Approx(m0.terminal_soc).epsilon(1e-8));
    CHECK(m1.soc_drop == Catch::Approx(m0.soc_drop).margin(1e-9));
    CHECK(m1.cooling_energy == Catch::Approx(m0.cooling_energy).epsilon(1e-8).margin(1e-6));
    CHECK(m1.violation_seconds == Catch::Approx(m0.violation_seconds).margin(1e-6));
    CHECK(m1.violation_degree_seconds ==
          Catch::Approx(m0.violation_degree_seconds).margin(1e-6));
    CHECK(m1.peak_t == Catch::Approx(m0.peak_t).epsilon(1e-8));
    CHECK(back.cycle_name == res.cycle_name);
    CHECK(back.controller == res.controller);
}

TEST_CASE("open-loop replay reproduces the logged plant states") {
    const BatteryParams bat;
    const VehicleParams veh;
    const auto cycle = hilly_cycle(3, "hills");
    const auto flow = build_flow_profile(cycle, 60.0);
    MpcConfig mpc;
    mpc.single_layer = {10, 1.0};
    SingleLayerMpc ctl(cycle, flow, mpc, {}, bat, veh, PreviewMode::ExactShortThenFlow);
    const auto res = run_closed_loop(cycle, ctl, {38.8, 0.9}, bat, veh);

    BatteryState x{res.initial_t, res.initial_soc};
    for (std::size_t k = 0; k < res.log.size(); ++k) {
        CHECK(std::abs(x.t_bat - res.log[k].t_bat) <= 1e-10);
        CHECK(std::abs(x.soc - res.log[k].soc) <= 1e-10);
        // controller outputs always lie inside the input box
        CHECK(res.log[k].qdot >= bat.qdot_min);
        CHECK(res.log[k].qdot <= bat.qdot_max);
        x = step(x, res.log[k].p_trac, res.log[k].qdot, res.dt, bat, exact_plant_models()).state;
    }
    CHECK(std::abs(x.t_bat - res.final_state.t_bat) <= 1e-10);
    CHECK(std::abs(x.soc - res.final_state.soc) <= 1e-10);
}

TEST_CASE("soc bookkeeping is first-order consistent") {
    const BatteryParams bat;
    const VehicleParams veh;
    // steady cruise: no regeneration, cooling-dominated thermals
    const auto cycle = constant_cycle(17.0, 400, "cruise");
    RuleBasedController ctl({});
    const auto res = run_closed_loop(cycle, ctl, {37.0, 0.9}, bat, veh);
    const auto m = compute_metrics(res, bat);

    double p_in = 0.0;
    for (const auto& r : res.log) p_in += (r.p_trac + r.p_temp) * res.dt;
    const double mean_uoc =
        0.5 * (bat.ocv_map(res.initial_soc) + bat.ocv_map(res.final_state.soc));
    const double drop_energy = m.soc_drop * bat.nominal_capacity * mean_uoc;
    CHECK(drop_energy == Catch::Approx(p_in).epsilon(0.05));
}

TEST_CASE("comparison report") {
    const BatteryParams bat;
    const VehicleParams veh;
    const auto cycle = hilly_cycle(3, "hills");

    RuleBasedController rule({});
    const auto base = run_closed_loop(cycle, rule, {37.0, 0.9}, bat, veh);

    SECTION("baseline against itself shows zero savings") {
        const auto rep = compare({base, base}, bat, "rule");
        for (const auto& row : rep.rows) {
            CHECK(row.soc_drop_reduction_pct == Catch::Approx(0.0));
            CHECK(row.cooling_energy_reduction_pct == Catch::Approx(0.0));
        }
        CHECK_FALSE(rep.to_text().empty());
        CHECK(rep.to_csv().find("controller,") == 0);
    }
    SECTION("mismatched scenarios are rejected") {
        auto other = base;
        other.initial_t = 35.0;
        other.controller = "other";
        CHECK_THROWS_AS(compare({base, other}, bat, "rule"), std::invalid_argument);
        auto missing = base;
        CHECK_THROWS_AS(compare({missing}, bat, "nonexistent"), std::invalid_argument);
    }
}

TEST_CASE("parameter file") {
    SECTION("round trip of overrides") {
        const std::string path = "params_test.txt";
        {
            std::ofstream out(path);
            out << "# comment line\n";
            out << "battery.lumped_heat_capacity = 75000\n";
            out << "battery.r_base = 0.2\n";
            out << "vehicle.mass = 1700\n";
            out << "rule.setpoint = 33.5\n";
            out << "mpc.ioch_enabled = 0\n";
            out << "mpc.single_horizon_steps = 60\n";
            out << "solver.kkt_tolerance = 2e-4\n";
            out << "preview.flow_window = 200\n";
        }
        const auto rp = load_run_params(path);
        std::remove(path.c_str());
        CHECK(rp.battery.lumped_heat_capacity == 75000.0);
        CHECK(rp.battery.resistance_map.base_ohm == 0.2);
        CHECK(rp.vehicle.mass == 1700.0);
        CHECK(rp.rule.setpoint == 33.5);
        CHECK_FALSE(rp.mpc.ioch.enabled);
        CHECK(rp.mpc.single_layer.horizon_steps == 60);
        CHECK(rp.mpc.solver.kkt_tolerance == 2e-4);
        CHECK(rp.preview.flow_window == 200.0);
    }
    SECTION("unknown keys are rejected") {
        const std::string path = "params_bad.txt";
        {
            std::ofstream out(path);
            out << "battery.unknown_knob = 1\n";
        }
        CHECK_THROWS_WITH(load_run_params(path),
                          Catch::Matchers::ContainsSubstring("unknown parameter key"));
        std::remove(path.c_str());
    }
    SECTION("malformed lines are rejected") {
        const std::string path = "params_bad2.txt";
        {
            std::ofstream out(path);
            out << "battery.r_base 0.2\n";
        }
        CHECK_THROWS_WITH(load_run_params(path),
                          Catch::Matchers::ContainsSubstring("expected 'key = value'"));
        std::remove(path.c_str());
    }
}
