#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "btmpc/controllers.hpp"

using namespace btmpc;

namespace {

SpeedPreview make_preview(std::vector<double> speeds, double step) {
    SpeedPreview pv;
    pv.horizon_steps = speeds.size() - 1;
    pv.step = step;
    pv.speeds = std::move(speeds);
    return pv;
}

SpeedPreview constant_preview(double v, std::size_t steps, double step) {
    return make_preview(std::vector<double>(steps + 1, v), step);
}

}  // namespace

TEST_CASE("rule-based hysteresis") {
    RuleBasedConfig cfg;  // setpoint 35, halfwidth 0.5, on_qdot -3000

    SECTION("below the band stays off") {
        const auto d = rule_based_step({34.0, 0.8}, cfg, false);
        CHECK_FALSE(d.on);
        CHECK(d.qdot == 0.0);
    }
    SECTION("above the band switches on") {
        const auto d = rule_based_step({35.6, 0.8}, cfg, false);
        CHECK(d.on);
        CHECK(d.qdot == -3000.0);
    }
    SECTION("inside the band holds the previous mode") {
        CHECK(rule_based_step({35.2, 0.8}, cfg, true).on);
        CHECK_FALSE(rule_based_step({35.2, 0.8}, cfg, false).on);
    }
    SECTION("no chattering on a monotone temperature ramp") {
        int switches = 0;
        bool on = false;
        for (double t = 33.0; t <= 38.0; t += 0.01) {
            const auto d = rule_based_step({t, 0.8}, cfg, on);
            if (d.on != on) ++switches;
            on = d.on;
        }
        CHECK(switches == 1);
        for (double t = 38.0; t >= 33.0; t -= 0.01) {
            const auto d = rule_based_step({t, 0.8}, cfg, on);
            if (d.on != on) ++switches;
            on = d.on;
        }
        CHECK(switches == 2);
    }
}

TEST_CASE("ioch delta") {
    CHECK(ioch_delta(39.0, 40.0) == 0.0);
    CHECK(ioch_delta(41.0, 40.0) == 1.0);
    CHECK(ioch_delta(40.0, 40.0) == 0.0);  // boundary belongs to the first case

    // nonnegative, continuous, unit slope above the limit
    double prev = ioch_delta(39.0, 40.0);
    for (double t = 39.0; t <= 43.0; t += 0.05) {
        const double d = ioch_delta(t, 40.0);
        CHECK(d >= 0.0);
        CHECK(d - prev <= 0.05 + 1e-12);
        prev = d;
    }
    CHECK(ioch_delta(42.5, 40.0) - ioch_delta(41.5, 40.0) == Catch::Approx(1.0));
}

TEST_CASE("single-layer MPC step") {
    const BatteryParams bat;
    const VehicleParams veh;
    SolverConfig scfg;

    SECTION("cool battery and an empty road need no cooling") {
        SingleLayerConfig cfg{3, 1.0};
        const auto pv = constant_preview(0.0, 3, 1.0);
        const auto r = single_layer_mpc_step({25.0, 0.8}, pv, bat, veh, cfg, scfg);
        CHECK(r.decision.qdot == Catch::Approx(0.0).margin(1e-6));
        CHECK(r.decision.diag.status_long == int(SolveStatus::Converged));
    }
    SECTION("an imminent surge triggers pre-cooling near the limit") {
        SingleLayerConfig cfg{6, 1.0};
        const auto pv = make_preview({12.0, 12.0, 12.0, 15.0, 18.0, 18.0, 18.0}, 1.0);
        const auto r = single_layer_mpc_step({39.9, 0.85}, pv, bat, veh, cfg, scfg);
        CHECK(r.decision.qdot < -100.0);
    }
    SECTION("output respects the input box bit-exactly") {
        SingleLayerConfig cfg{6, 1.0};
        const auto pv = make_preview({10.0, 14.0, 18.0, 20.0, 20.0, 16.0, 12.0}, 1.0);
        const auto r = single_layer_mpc_step({39.0, 0.85}, pv, bat, veh, cfg, scfg);
        CHECK(r.decision.qdot >= bat.qdot_min);
        CHECK(r.decision.qdot <= bat.qdot_max);
    }
}

TEST_CASE("scheduling step") {
    const BatteryParams bat;
    const VehicleParams veh;
    const SchedulingConfig cfg{30.0, 5.0};  // 6 slow steps for unit-test speed
    SolverConfig scfg;

    SECTION("with IOCH disabled and delta 0, enabling IOCH changes nothing") {
        const auto pv = constant_preview(20.0, cfg.steps(), cfg.step);
        IochConfig off{false, 10.0, 5.0}, on{true, 10.0, 5.0};
        const auto a = scheduling_step({38.0, 0.85}, pv, bat, veh, cfg, off, 0.0, 0.0, scfg);
        const auto b = scheduling_step({38.0, 0.85}, pv, bat, veh, cfg, on, 0.0, 0.0, scfg);
        REQUIRE(a.schedule.t_ref.size() == b.schedule.t_ref.size());
        for (std::size_t i = 0; i < a.schedule.t_ref.size(); ++i)
            CHECK(a.schedule.t_ref[i] == Catch::Approx(b.schedule.t_ref[i]).margin(2e-3));
        for (double e : b.ioch.epsilon_traj) CHECK(e <= 1e-3);
    }
    SECTION("a measured violation tightens the scheduled bound") {
        // mild load so the tightened bound stays achievable
        const auto pv = constant_preview(10.0, cfg.steps(), cfg.step);
        IochConfig ioch{true, 1.0e4, 5.0};  // gamma large: eps driven to delta
        const auto r = scheduling_step({37.0, 0.85}, pv, bat, veh, cfg, ioch, 1.0, 0.0, scfg);
        for (double e : r.ioch.epsilon_traj) CHECK(e == Catch::Approx(1.0).margin(1e-2));
        for (double t : r.schedule.t_ref) CHECK(t <= 39.0 + 0.05);
    }
    SECTION("scheduled trajectory respects the upper limit under load") {
        const SchedulingConfig full{180.0, 5.0};
        const auto pv = constant_preview(25.0, full.steps(), full.step);
        IochConfig ioch{true, 10.0, 5.0};
        const auto r = scheduling_step({39.0, 0.85}, pv, bat, veh, full, ioch, 0.0, 0.0, scfg);
        for (std::size_t i = 0; i < r.schedule.t_ref.size(); ++i) {
            const double bound = bat.t_upper - (i < r.ioch.epsilon_traj.size()
                                                    ? r.ioch.epsilon_traj[i]
                                                    : 0.0);
            CHECK(r.schedule.t_ref[i] <= bound + 0.05);
        }
        CHECK(r.solution.bound_residual <= 0.05);
    }
}

TEST_CASE("pilot step") {
    const BatteryParams bat;
    const VehicleParams veh;
    const PilotingConfig cfg{5.0, 1.0};
    SolverConfig scfg;

    SECTION("an achievable schedule needs no input") {
        // schedule = free rollout of the same traction load
        const auto pv = constant_preview(15.0, cfg.steps(), cfg.step);
        OcpProblem free;
        free.horizon_steps = 10;
        free.step = 0.5;
        free.initial_state = {33.0, 0.85};
        free.p_trac_preview.assign(10, traction_power(15.0, 0.0, veh));
        const auto rr = rollout(free, std::vector<double>(10, 0.0));
        Schedule sched;
        sched.origin_time = 0.0;
        sched.step = 0.5;
        for (std::size_t i = 1; i <= 10; ++i) {
            sched.t_ref.push_back(rr.states[i].t_bat);
            sched.soc_ref.push_back(rr.states[i].soc);
        }
        const auto r = pilot_step({33.0, 0.85}, pv, sched, bat, veh, cfg, 1e4, 0.0, scfg);
        CHECK(std::abs(r.decision.qdot) < 20.0);
    }
    SECTION("a schedule well below the current temperature demands cooling") {
        const auto pv = constant_preview(0.0, cfg.steps(), cfg.step);
        Schedule sched;
        sched.origin_time = 0.0;
        sched.step = 5.0;
        sched.t_ref = {34.0, 34.0};
        sched.soc_ref = {0.85, 0.85};
        const auto r = pilot_step({36.0, 0.85}, pv, sched, bat, veh, cfg, 1e4, 0.0, scfg);
        CHECK(r.decision.qdot < -1500.0);
    }
    SECTION("zero SOC weight makes the tracker ignore the SOC reference") {
        const auto pv = constant_preview(10.0, cfg.steps(), cfg.step);
        Schedule a;
        a.origin_time = 0.0;
        a.step = 5.0;
        a.t_ref = {35.5, 35.2};
        a.soc_ref = {0.85, 0.84};
        Schedule b = a;
        b.soc_ref = {0.30, 0.95};  // wildly different SOC references
        const auto ra = pilot_step({36.0, 0.85}, pv, a, bat, veh, cfg, 0.0, 0.0, scfg);
        const auto rb = pilot_step({36.0, 0.85}, pv, b, bat, veh, cfg, 0.0, 0.0, scfg);
        CHECK(ra.decision.qdot == rb.decision.qdot);
    }
    SECTION("doubling the SOC weight cannot worsen realized SOC tracking") {
        const auto pv = constant_preview(12.0, cfg.steps(), cfg.step);
        Schedule sched;
        sched.origin_time = 0.0;
        sched.step = 5.0;
        sched.t_ref = {35.0, 34.8};
        sched.soc_ref = {0.8501, 0.8500};
        auto soc_cost = [&](double w1) {
            const auto r = pilot_step({35.6, 0.8503}, pv, sched, bat, veh, cfg, w1, 0.0, scfg);
            double c = 0.0;
            for (std::size_t j = 0; j < r.solution.state_traj.size(); ++j) {
                const double t = 0.0 + double(j) * cfg.step;
                const double e = r.solution.state_traj[j].soc - sched.soc_ref_at(t);
                c += e * e;
            }
            return c;
        };
        CHECK(soc_cost(2.0e4) <= soc_cost(1.0e4) + 1e-15);
    }
}

TEST_CASE("two-layer cadence and hand-off") {
    const BatteryParams bat;
    const VehicleParams veh;
    MpcConfig cfg;
    cfg.scheduling = {30.0, 5.0};
    cfg.piloting = {5.0, 1.0};
    cfg.ioch.enabled = true;

    const auto flow_pv = constant_preview(18.0, cfg.scheduling.steps(), cfg.scheduling.step);
    const auto exact_pv = constant_preview(18.0, cfg.piloting.steps(), cfg.piloting.step);

    TwoLayerState st;
    BatteryState x{38.5, 0.85};
    std::vector<bool> scheduled;
    std::vector<double> trefs;
    for (int k = 0; k < 11; ++k) {
        const auto d = two_layer_step(x, flow_pv, exact_pv, bat, veh, cfg, double(k), st);
        scheduled.push_back(!std::isnan(d.diag.solve_time_long));
        trefs.push_back(d.diag.t_ref);
        CHECK(d.qdot >= bat.qdot_min);
        CHECK(d.qdot <= bat.qdot_max);
        x = step(x, traction_power(18.0, 0.0, veh), d.qdot, 1.0, bat, exact_plant_models()).state;
    }
    // tau = 5: scheduling solves at k = 0, 5, 10 only
    for (int k = 0; k < 11; ++k) CHECK(scheduled[k] == (k % 5 == 0));
    // references held piecewise constant between scheduling updates
    CHECK(trefs[1] == trefs[0]);
    CHECK(trefs[2] == trefs[0]);
    CHECK(trefs[3] == trefs[0]);
    CHECK(trefs[4] == trefs[0]);
}

TEST_CASE("two-layer collapses to single-layer on a desk instance") {
    const BatteryParams bat;
    const VehicleParams veh;
    MpcConfig cfg;
    cfg.scheduling = {3.0, 1.0};  // H_l = H_s = 3 s, tau = 1
    cfg.piloting = {3.0, 1.0};
    cfg.ioch.enabled = false;
    REQUIRE(cfg.rate_ratio() == 1);

    const auto pv = constant_preview(0.0, 3, 1.0);
    BatteryState x{40.3, 0.85};  // over the limit: both must saturate cooling

    TwoLayerState st;
    const auto two = two_layer_step(x, pv, pv, bat, veh, cfg, 0.0, st);

    SingleLayerConfig scfg{3, 1.0};
    const auto one = single_layer_mpc_step(x, pv, bat, veh, scfg, cfg.solver);

    CHECK(two.qdot == Catch::Approx(one.decision.qdot).margin(50.0));
    CHECK(two.qdot < -2900.0);
}

TEST_CASE("ioch with zero violation reproduces the no-ioch closed loop") {
    const BatteryParams bat;
    const VehicleParams veh;
    MpcConfig with, without;
    with.scheduling = without.scheduling = {30.0, 5.0};
    with.piloting = without.piloting = {5.0, 1.0};
    with.ioch.enabled = true;
    without.ioch.enabled = false;

    auto run = [&](MpcConfig& cfg) {
        TwoLayerState st;
        BatteryState x{34.0, 0.85};  // stays far below the limit: delta == 0 throughout
        std::vector<double> temps;
        const auto flow_pv = constant_preview(15.0, cfg.scheduling.steps(), cfg.scheduling.step);
        const auto exact_pv = constant_preview(15.0, cfg.piloting.steps(), cfg.piloting.step);
        for (int k = 0; k < 25; ++k) {
            const auto d = two_layer_step(x, flow_pv, exact_pv, bat, veh, cfg, double(k), st);
            x = step(x, traction_power(15.0, 0.0, veh), d.qdot, 1.0, bat, exact_plant_models()).state;
            temps.push_back(x.t_bat);
        }
        return temps;
    };
    const auto a = run(with), b = run(without);
    for (std::size_t k = 0; k < a.size(); ++k)
        CHECK(a[k] == Catch::Approx(b[k]).margin(1e-4));
}

TEST_CASE("mpc config validation") {
    MpcConfig cfg;
    CHECK(cfg.rate_ratio() == 5);
    cfg.scheduling.step = 2.5;
    cfg.piloting.step = 1.0;
    CHECK_THROWS_AS(cfg.rate_ratio(), std::invalid_argument);
    cfg = {};
    cfg.piloting.horizon = 300.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}
