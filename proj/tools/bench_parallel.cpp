// Benchmarks the parallel experiment drivers against their serial execution
// (jobs = 1) on a fixed workload and verifies that both produce identical
// results, since every replication and initial state is an independent
// seeded unit and aggregation is ordered.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <iostream>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "tabs/runner.hpp"

using namespace tabs;

namespace {

scenario::ScenarioConfig bench_scenario() {
    scenario::ScenarioConfig cfg;
    cfg.name = "bench";
    cfg.sim.n_servers = 2000;
    cfg.sim.buffer = 10;
    cfg.sim.arrivals = ArrivalProfile::constant(0.3);
    cfg.sim.mu = 0.1;
    cfg.sim.nu = 0.1;
    cfg.sim.horizon = 150.0;
    cfg.sim.sample_interval = 1.0;
    cfg.sim.seed = 7;
    cfg.replications = 8;
    return cfg;
}

template <typename F>
double timed(F&& body) {
    const auto start = std::chrono::steady_clock::now();
    body();
    const auto stop = std::chrono::steady_clock::now();
    return std::chrono::duration<double>(stop - start).count();
}

bool same_reports(const metrics::MetricsReport& a, const metrics::MetricsReport& b) {
    return a.mean_wait == b.mean_wait && a.mean_power == b.mean_power &&
           a.wastage == b.wastage && a.msg_per_task == b.msg_per_task;
}

} // namespace

int main() {
#ifdef _OPENMP
    const int hw = omp_get_max_threads();
#else
    const int hw = 1;
#endif
    std::printf("threads available: %d\n", hw);

    const auto cfg = bench_scenario();
    run::RunOptions serial;
    serial.jobs = 1;
    serial.write_files = false;
    run::RunOptions parallel = serial;
    parallel.jobs = 0;

    run::ScenarioOutcome serial_out, parallel_out;
    const double t_serial =
        timed([&] { serial_out = run::run_scenario(cfg, run::Mode::Simulate, serial); });
    const double t_parallel =
        timed([&] { parallel_out = run::run_scenario(cfg, run::Mode::Simulate, parallel); });
    const bool sim_match = same_reports(serial_out.aggregate, parallel_out.aggregate);
    std::printf("replications (%d x N=%d): serial %.3fs, parallel %.3fs, speedup %.2fx, %s\n",
                cfg.replications, cfg.sim.n_servers, t_serial, t_parallel,
                t_serial / t_parallel, sim_match ? "results identical" : "RESULTS DIFFER");

    fluid::FluidParams params = run::fluid_params_of(cfg.sim);
    fluid::StabilityReport stab_serial, stab_parallel;
    const double t_stab_serial = timed(
        [&] { stab_serial = fluid::stability_sweep(params, 24, 500.0, 1e-3, 11, {}, 1); });
    const double t_stab_parallel = timed(
        [&] { stab_parallel = fluid::stability_sweep(params, 24, 500.0, 1e-3, 11, {}, 0); });
    const bool stab_match = stab_serial.distances == stab_parallel.distances;
    std::printf("stability sweep (24 initials): serial %.3fs, parallel %.3fs, speedup %.2fx, %s\n",
                t_stab_serial, t_stab_parallel, t_stab_serial / t_stab_parallel,
                stab_match ? "results identical" : "RESULTS DIFFER");

    return sim_match && stab_match ? 0 : 1;
}
