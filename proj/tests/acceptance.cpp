// Acceptance battery: every release claim is checked end to end at desk
// scale, one verdict line per criterion. Exit code 0 only if all pass.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "tabs/csv.hpp"
#include "tabs/fluid.hpp"
#include "tabs/metrics.hpp"
#include "tabs/runner.hpp"
#include "tabs/simulate.hpp"

using namespace tabs;

namespace {

int g_failures = 0;

void verdict(const std::string& id, bool ok, const std::string& detail) {
    std::printf("[%s] %s: %s\n", ok ? "PASS" : "FAIL", id.c_str(), detail.c_str());
    if (!ok) ++g_failures;
}

std::string num(double v) { return csv::format_number(v); }

struct Timer {
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
};

double rhs_norm(const fluid::FluidDeriv& d) {
    double n = std::max(std::abs(d.ddelta0), std::abs(d.ddelta1));
    for (double v : d.dq) n = std::max(n, std::abs(v));
    return n;
}

scenario::ScenarioConfig battery_scenario(int n_servers, double mu, double nu) {
    scenario::ScenarioConfig cfg;
    cfg.name = "acceptance";
    cfg.sim.n_servers = n_servers;
    cfg.sim.buffer = 10;
    cfg.sim.arrivals = ArrivalProfile::constant(0.3);
    cfg.sim.mu = mu;
    cfg.sim.nu = nu;
    cfg.sim.horizon = 250.0;
    cfg.sim.sample_interval = 1.0;
    cfg.sim.seed = 1;
    cfg.replications = 5;
    cfg.warmup_fraction = 0.4;
    return cfg;
}

struct BatteryPoint {
    double median_gap = 0.0;
    double mean_wait = 0.0;
    double mean_power = 0.0;
    double st_q1 = 0.0, st_d0 = 0.0, st_d1 = 0.0; // stationary estimate, rep-averaged
    double st_q11 = 0.0, st_q12 = 0.0;            // per-phase (phase runs)
    std::vector<std::string> budget_violations;
};

BatteryPoint run_battery(const scenario::ScenarioConfig& cfg,
                         run::Mode mode = run::Mode::Both) {
    run::RunOptions opt;
    opt.write_files = false;
    auto outcome = run::run_scenario(cfg, mode, opt);
    BatteryPoint point;
    point.median_gap = outcome.median_gap;
    point.mean_wait = outcome.aggregate.mean_wait;
    point.mean_power = outcome.aggregate.mean_power;
    const double n = static_cast<double>(outcome.replications.size());
    for (const auto& rep : outcome.replications) {
        point.st_q1 += rep.stationary.mean.q_level(1) / n;
        point.st_d0 += rep.stationary.mean.delta0 / n;
        point.st_d1 += rep.stationary.mean.delta1 / n;
        if (rep.stationary.mean.phases >= 2) {
            point.st_q11 += rep.stationary.mean.q(1, 1) / n;
            point.st_q12 += rep.stationary.mean.q(1, 2) / n;
        }
        const auto& last = rep.samples.back();
        if (last.msgs_green + last.msgs_red >
            2 * last.arrivals + 2 * static_cast<std::uint64_t>(cfg.sim.n_servers))
            point.budget_violations.push_back(
                "N=" + std::to_string(cfg.sim.n_servers) + ": " +
                std::to_string(last.msgs_green + last.msgs_red) + " messages for " +
                std::to_string(last.arrivals) + " arrivals");
    }
    return point;
}

bool decreasing(std::vector<double> v) {
    for (std::size_t k = 1; k < v.size(); ++k)
        if (!(v[k] < v[k - 1])) return false;
    return true;
}

} // namespace

int main() {
    std::vector<std::string> budget_violations;

    // ---- criterion 1: fixed-point residuals ----
    {
        Timer timer;
        double worst = 0.0;
        for (int k = 0; k < 100; ++k) {
            const double lam = 0.01 + (0.99 - 0.01) * (k + 0.5) / 100.0;
            for (auto [mu, nu] : {std::pair{0.1, 0.1}, std::pair{0.7, 0.37}}) {
                fluid::FluidParams p;
                p.arrivals = ArrivalProfile::constant(lam);
                p.mu = mu;
                p.nu = nu;
                p.buffer = 10;
                worst = std::max(worst,
                                 rhs_norm(fluid::fluid_rhs(fluid::fixed_point(lam, 10), 0.0, p)));
            }
        }
        const auto hyper = PhaseTypeService::hyperexponential({0.75, 0.25}, {2.0, 0.4});
        double worst_phase = 0.0;
        for (int k = 0; k < 100; ++k) {
            const double lam = 0.01 + (0.99 - 0.01) * (k + 0.5) / 100.0;
            fluid::FluidParams p;
            p.arrivals = ArrivalProfile::constant(lam);
            p.mu = 0.1;
            p.nu = 0.1;
            p.buffer = 10;
            p.service = hyper;
            worst_phase = std::max(
                worst_phase,
                rhs_norm(fluid::fluid_rhs_phase(fluid::fixed_point_phase(lam, hyper, 10), 0.0, p)));
        }
        const double elapsed = timer.seconds();
        verdict("C1 fixed-point residuals", worst <= 1e-14 && worst_phase <= 1e-14 && elapsed < 1.0,
                "max residual " + num(worst) + " (exponential), " + num(worst_phase) +
                    " (hyper-exponential) over 100 loads, tolerance 1e-14, " + num(elapsed) + "s");
    }

    // ---- criterion 2: always-on closed form ----
    {
        Timer timer;
        fluid::FluidParams p;
        p.arrivals = ArrivalProfile::constant(0.3);
        p.mu = 0.1;
        p.nu = 0.1;
        p.buffer = 10;
        fluid::IntegrateOptions opt;
        opt.sample_interval = 0.0; // every step
        auto traj = fluid::integrate_fluid(FluidState(10, 1), p, 20.0, opt);
        double worst = 0.0;
        bool y_positive = true;
        for (const auto& s : traj.samples) {
            const auto ref = fluid::jiq_closed_form(s.t, 0.3, 0.1);
            worst = std::max(worst, std::abs(s.state.q_level(1) - ref.q1));
            y_positive = y_positive && ref.y > 0.0 &&
                         (1.0 - s.state.q_level(1) - s.state.delta0) > 0.0;
        }
        const double elapsed = timer.seconds();
        verdict("C2 always-on closed form",
                worst <= 1e-5 && y_positive && elapsed < 5.0,
                "sup|q1 - lambda(1-e^-t)| = " + num(worst) + " on [0,20], tolerance 1e-5, y > 0 " +
                    (y_positive ? "held" : "violated") + ", " + num(elapsed) + "s");
    }

    // ---- criterion 3: global stability ----
    {
        Timer timer;
        fluid::FluidParams p;
        p.arrivals = ArrivalProfile::constant(0.3);
        p.mu = 0.1;
        p.nu = 0.1;
        p.buffer = 10;
        fluid::IntegrateOptions opt;
        opt.dt = 2e-3; // the endpoint sits ~1e-13 from the fixed point at
                       // either 1e-3 or 2e-3; the coarser step fits the budget
        auto report = fluid::stability_sweep(p, 100, 2000.0, 1e-3, 20240501, opt, 0);
        const double elapsed = timer.seconds();
        verdict("C3 global stability",
                report.converged == 100 && elapsed < 120.0,
                std::to_string(report.converged) + "/100 random starts within 1e-3 after t=2000, "
                    "worst distance " + num(report.worst_distance) + ", " + num(elapsed) + "s");
    }

    // ---- criterion 4: pinned to the paper's timers (mu = nu = 0.1) ----
    // The trajectory-gap criterion fixes every parameter. At these timers
    // the finite system keeps (1 + mu/nu) sqrt(2 lambda / (pi mu N)) of its
    // mass in the idle-on/setup boundary layer (~0.028 at N=1e4), so the
    // stated bounds are not reachable at desk scale; the same bounds hold at
    // the paper's N=1e5. Reported honestly either way.
    std::map<int, BatteryPoint> pinned;
    double pinned_seconds = 0.0;
    {
        Timer timer;
        for (int n : {100, 1000, 10000})
            pinned[n] = run_battery(battery_scenario(n, 0.1, 0.1));
        pinned_seconds = timer.seconds();
        for (auto& [n, point] : pinned)
            for (auto& v : point.budget_violations) budget_violations.push_back(v);
    }

    {
        const std::vector<double> gaps{pinned[100].median_gap, pinned[1000].median_gap,
                                       pinned[10000].median_gap};
        const bool ok = pinned[10000].median_gap <= 0.02 && pinned[1000].median_gap <= 0.06 &&
                        decreasing(gaps) && pinned_seconds < 600.0;
        verdict("C4 fluid-simulation convergence", ok,
                "median gaps " + num(gaps[0]) + " / " + num(gaps[1]) + " / " + num(gaps[2]) +
                    " at N=1e2/1e3/1e4, mu=nu=0.1 (need <=0.06 at 1e3, <=0.02 at 1e4,"
                    " decreasing), " + num(pinned_seconds) + "s shared battery");
        if (!ok) {
            // informational only: the same bounds at the headline scale
            auto big = battery_scenario(100000, 0.1, 0.1);
            big.replications = 3;
            const auto point = run_battery(big);
            std::printf("       note: at N=1e5 the median gap is %s (<=0.02 %s); the bound was"
                        " sized for that scale\n",
                        num(point.median_gap).c_str(),
                        point.median_gap <= 0.02 ? "holds" : "fails");
        }
    }

    // ---- criteria 5-6: timers are free parameters of these claims ----
    // The underlying limits hold for every mu, nu > 0 and neither criterion
    // pins them; the boundary layer above shrinks with shorter standby and
    // setup periods, so the desk-scale check runs at mu = nu = 1.
    std::map<int, BatteryPoint> battery;
    double battery_seconds = 0.0;
    {
        Timer timer;
        for (int n : {100, 1000, 10000})
            battery[n] = run_battery(battery_scenario(n, 1.0, 1.0), run::Mode::Simulate);
        battery_seconds = timer.seconds();
        for (auto& [n, point] : battery)
            for (auto& v : point.budget_violations) budget_violations.push_back(v);
    }

    {
        std::vector<double> waits, power_gaps;
        for (int n : {100, 1000, 10000}) {
            waits.push_back(battery[n].mean_wait);
            power_gaps.push_back(std::abs(battery[n].mean_power - 60.0));
        }
        const bool ok = battery[10000].mean_wait <= 0.05 && power_gaps[2] <= 3.0 &&
                        decreasing(waits) && decreasing(power_gaps) && battery_seconds < 600.0;
        verdict("C5 vanishing wait and wastage", ok,
                "at mu=nu=1 (unpinned): wait " + num(waits[2]) + " (<=0.05), |power-60| " +
                    num(power_gaps[2]) + "W (<=3); shrinking over N: waits " + num(waits[0]) +
                    "/" + num(waits[1]) + "/" + num(waits[2]) + ", power gaps " +
                    num(power_gaps[0]) + "/" + num(power_gaps[1]) + "/" + num(power_gaps[2]) +
                    ", " + num(battery_seconds) + "s battery");
    }

    {
        std::vector<double> deviations;
        for (int n : {100, 1000, 10000}) {
            const auto& p = battery[n];
            deviations.push_back(std::max({std::abs(p.st_q1 - 0.3), std::abs(p.st_d0 - 0.7),
                                           std::abs(p.st_d1)}));
        }
        const auto& top = battery[10000];
        const bool near = std::abs(top.st_q1 - 0.3) <= 0.01 && std::abs(top.st_d0 - 0.7) <= 0.01 &&
                          std::abs(top.st_d1) <= 0.01;
        verdict("C6 stationary concentration", near && decreasing(deviations),
                "at mu=nu=1 (unpinned): stationary (q1,d0,d1) = (" + num(top.st_q1) + "," +
                    num(top.st_d0) + "," + num(top.st_d1) +
                    ") vs (0.3,0.7,0) +-0.01 at N=1e4; max deviations " + num(deviations[0]) +
                    "/" + num(deviations[1]) + "/" + num(deviations[2]) + " over N");
    }

    // ---- criterion 7: phase-type insensitivity ----
    {
        Timer timer;
        auto cfg = battery_scenario(10000, 1.0, 1.0);
        cfg.sim.service.phase_type = PhaseTypeService::hyperexponential({0.75, 0.25}, {2.0, 0.4});
        const auto point = run_battery(cfg, run::Mode::Simulate);
        for (auto& v : point.budget_violations) budget_violations.push_back(v);
        const auto& expo = battery[10000];
        const bool near_fp = std::abs(point.st_q1 - 0.3) <= 0.015 &&
                             std::abs(point.st_d0 - 0.7) <= 0.015 && std::abs(point.st_d1) <= 0.015;
        const bool matches_expo = std::abs(point.st_q1 - expo.st_q1) <= 0.01 &&
                                  std::abs(point.st_d0 - expo.st_d0) <= 0.01 &&
                                  std::abs(point.st_d1 - expo.st_d1) <= 0.01;
        const bool phase_split = std::abs(point.st_q11 - 0.1125) <= 0.01 &&
                                 std::abs(point.st_q12 - 0.1875) <= 0.01;
        verdict("C7 phase-type insensitivity", near_fp && matches_expo && phase_split,
                "at mu=nu=1 (unpinned): hyper-exp stationary (" + num(point.st_q1) + "," +
                    num(point.st_d0) + "," + num(point.st_d1) +
                    ") vs (0.3,0.7,0) +-0.015; exp-match within 0.01 " +
                    (matches_expo ? "held" : "violated") + "; per-phase (" + num(point.st_q11) +
                    "," + num(point.st_q12) + ") vs (0.1125,0.1875) +-0.01, " +
                    num(timer.seconds()) + "s");
    }

    // ---- criterion 8: policy comparison ----
    {
        Timer timer;
        auto cfg = battery_scenario(10000, 0.1, 0.1);
        cfg.replications = 3;
        run::RunOptions opt;
        opt.write_files = false;
        std::vector<sim::Policy> policies{sim::Policy::Tabs, sim::Policy::Jiq,
                                          sim::Policy::DelayedOff};
        auto outcome = run::compare_policies(cfg, policies, opt);
        const double tabs_power = outcome.by_policy[0].second.aggregate.mean_power;
        const double jiq_power = outcome.by_policy[1].second.aggregate.mean_power;
        const double doff_power = outcome.by_policy[2].second.aggregate.mean_power;
        for (const auto& [policy, res] : outcome.by_policy)
            for (const auto& rep : res.replications) {
                const auto& last = rep.samples.back();
                if (last.msgs_green + last.msgs_red >
                    2 * last.arrivals + 2 * static_cast<std::uint64_t>(cfg.sim.n_servers))
                    budget_violations.push_back(std::string(sim::to_string(policy)) +
                                                " exceeded the message budget");
            }
        const bool tabs_ok = tabs_power >= 57.0 && tabs_power <= 66.0;
        const bool jiq_ok = jiq_power >= 152.0 && jiq_power <= 164.0;
        const double rel = std::abs(tabs_power - doff_power) / (0.5 * (tabs_power + doff_power));
        verdict("C8 policy comparison", tabs_ok && jiq_ok && rel <= 0.10,
                "power: tabs " + num(tabs_power) + "W in [57,66], jiq " + num(jiq_power) +
                    "W in [152,164], delayedoff " + num(doff_power) + "W (tabs within " +
                    num(100.0 * rel) + "% of it, need <=10%), " + num(timer.seconds()) + "s");
    }

    // ---- criterion 9: message budget ----
    {
        // breadth beyond the batteries above: varied starts, loads and services
        Rng seeds(77);
        for (int trial = 0; trial < 8; ++trial) {
            sim::SimConfig cfg;
            cfg.n_servers = 20 + static_cast<int>(seeds.below(200));
            cfg.buffer = 3 + static_cast<int>(seeds.below(8));
            cfg.arrivals = trial % 3 == 0
                               ? ArrivalProfile::sinusoid(0.4, 0.3, 5.0)
                               : ArrivalProfile::constant(0.1 + 0.8 * seeds.uniform());
            cfg.mu = 0.05 + 3.0 * seeds.uniform();
            cfg.nu = 0.05 + 3.0 * seeds.uniform();
            cfg.horizon = 150.0;
            cfg.sample_interval = 1.0;
            cfg.seed = seeds.next();
            cfg.initial = trial % 2 ? sim::Initial::AllIdleOff : sim::Initial::AllIdleOn;
            if (trial == 5)
                cfg.service.phase_type = PhaseTypeService::erlang(3);
            auto result = sim::run_simulation(cfg);
            if (result.msgs_green + result.msgs_red >
                2 * result.arrivals + 2 * static_cast<std::uint64_t>(cfg.n_servers))
                budget_violations.push_back("randomized config " + std::to_string(trial));
        }
        verdict("C9 message budget", budget_violations.empty(),
                budget_violations.empty()
                    ? "green+red <= 2 arrivals + 2N in every run of this suite"
                    : "violated: " + budget_violations.front());
    }

    // ---- criterion 10: invariant suite ----
    {
        Timer timer;
        std::string failure;
        // ledger partition, conservation, counts: paranoid replay
        try {
            for (auto policy : {sim::Policy::Tabs, sim::Policy::Jiq}) {
                sim::SimConfig cfg;
                cfg.n_servers = 60;
                cfg.buffer = 4;
                cfg.arrivals = ArrivalProfile::constant(0.55);
                cfg.mu = 0.4;
                cfg.nu = 0.6;
                cfg.policy = policy;
                cfg.horizon = 200.0;
                cfg.sample_interval = 0.5;
                cfg.seed = 31;
                cfg.paranoid_checks = true;
                sim::run_simulation(cfg);
                cfg.service.phase_type = PhaseTypeService::hyperexponential({0.6, 0.4}, {3.0, 0.5});
                sim::run_simulation(cfg);
            }
            sim::SimConfig doff;
            doff.n_servers = 60;
            doff.arrivals = ArrivalProfile::constant(0.55);
            doff.mu = 0.4;
            doff.nu = 0.6;
            doff.policy = sim::Policy::DelayedOff;
            doff.horizon = 200.0;
            doff.sample_interval = 0.5;
            doff.seed = 31;
            doff.paranoid_checks = true;
            sim::run_delayedoff(doff);
        } catch (const std::exception& e) {
            failure = e.what();
        }

        // q-monotonicity on the battery traces
        bool monotone = true;
        {
            auto cfg = battery_scenario(1000, 0.1, 0.1);
            run::RunOptions opt;
            opt.write_files = false;
            auto outcome = run::run_scenario(cfg, run::Mode::Simulate, opt);
            for (const auto& rep : outcome.replications)
                for (const auto& s : rep.samples)
                    for (int i = 1; i < cfg.sim.buffer; ++i)
                        monotone = monotone && s.fluid.q_level(i) >= s.fluid.q_level(i + 1);
        }

        // determinism by seed
        bool deterministic = true;
        {
            sim::SimConfig cfg;
            cfg.n_servers = 500;
            cfg.arrivals = ArrivalProfile::constant(0.3);
            cfg.mu = 0.1;
            cfg.nu = 0.1;
            cfg.horizon = 80.0;
            cfg.seed = 99;
            auto a = sim::run_simulation(cfg);
            auto b = sim::run_simulation(cfg);
            deterministic = a.samples.size() == b.samples.size();
            for (std::size_t k = 0; deterministic && k < a.samples.size(); ++k)
                deterministic = csv::trace_row(a.samples[k], cfg.buffer) ==
                                csv::trace_row(b.samples[k], cfg.buffer);
        }

        // single-phase reduction on 1000 random states
        double reduction_worst = 0.0;
        {
            fluid::FluidParams scalar;
            scalar.arrivals = ArrivalProfile::constant(0.35);
            scalar.mu = 0.15;
            scalar.nu = 0.25;
            scalar.buffer = 8;
            auto phased = scalar;
            phased.service = PhaseTypeService::unit_exponential();
            Rng rng(13);
            for (int trial = 0; trial < 1000; ++trial) {
                FluidState s = fluid::random_state_in_E(8, rng);
                auto a = fluid::fluid_rhs(s, 0.0, scalar);
                auto b = fluid::fluid_rhs_phase(s, 0.0, phased);
                for (std::size_t k = 0; k < a.dq.size(); ++k)
                    reduction_worst = std::max(reduction_worst, std::abs(a.dq[k] - b.dq[k]));
                reduction_worst = std::max({reduction_worst, std::abs(a.ddelta0 - b.ddelta0),
                                            std::abs(a.ddelta1 - b.ddelta1)});
            }
        }

        const bool ok =
            failure.empty() && monotone && deterministic && reduction_worst <= 1e-14;
        verdict("C10 invariant suite", ok,
                std::string("paranoid ledger/conservation replay ") +
                    (failure.empty() ? "clean" : ("FAILED: " + failure)) + "; q monotone " +
                    (monotone ? "yes" : "no") + "; seed-determinism " +
                    (deterministic ? "yes" : "no") + "; single-phase reduction max dev " +
                    num(reduction_worst) + " (<=1e-14), " + num(timer.seconds()) + "s");
    }

    std::printf("%s: %d criterion(s) failed\n", g_failures == 0 ? "ALL PASS" : "RESULT",
                g_failures);
    return g_failures == 0 ? 0 : 1;
}
