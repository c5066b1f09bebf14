#pragma once

#include <span>
#include <stdexcept>

#include "tabs/core.hpp"
#include "tabs/fluid.hpp"
#include "tabs/simulate.hpp"

namespace tabs::metrics {

struct empty_sample_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct alignment_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct MetricsReport {
    double mean_wait = 0.0;        // service times
    double mean_power = 0.0;       // watts per server
    double normalized_power = 0.0; // mean_power / (p_full + p_idle)
    double wastage = 0.0;          // mean_power - admitted load x p_full
    double loss_fraction = 0.0;
    double msg_per_task = 0.0;
    double admitted_load = 0.0; // per-server admitted arrival rate
    long long sample_count = 0;
    double warmup_used = 0.0;
};

// Little's-law stationary waiting time of a fluid state: sum of q_i for
// i >= 2, divided by lambda.
double fluid_mean_wait(const FluidState& s, double lam);

// Average waiting time of served tasks arriving after the warmup.
// Throws empty_sample_error when no task qualifies.
double empirical_mean_wait(std::span<const sim::TaskRecord> tasks, double warmup);

// Instantaneous power per server: busy and setup at p_full, idle-on at
// p_idle, off at zero.
double energy_per_server(const FluidState& s, const EnergyParams& e);

// Power beyond the stability minimum lambda x p_full. Negative values from a
// finite trace are reported as-is.
double energy_wastage(double mean_power, double lam_admitted, const EnergyParams& e);

// Stationary per-server power of the always-on JIQ policy:
// lambda p_full + (1 - lambda) p_idle.
double jiq_energy(double lam, const EnergyParams& e);

// Sup over sample times and components (q_1..q_B, delta0, delta1) of the
// absolute simulation-vs-fluid difference, with the fluid trajectory
// interpolated at the simulation sample times.
double trajectory_gap(std::span<const sim::TraceSample> samples,
                      const fluid::FluidTrajectory& traj);

struct StationaryEstimate {
    FluidState mean;
    FluidState std_error; // batch-means standard errors, same shape
    double u_mean = 0.0;
    double u_std_error = 0.0;
    int batches = 10;
};

// Time average of the fluid components over [warmup, horizon] with
// batch-means standard errors. Throws empty_sample_error when the window
// holds no samples.
StationaryEstimate stationary_estimate(std::span<const sim::TraceSample> samples, double warmup);

// Replication-level metrics of a simulation run: waits from the task log,
// power and admitted load from the post-warmup samples, the message rate
// over the whole run.
MetricsReport compute_metrics(const sim::SimResult& result, const sim::SimConfig& cfg,
                              const EnergyParams& energy, double warmup);

} // namespace tabs::metrics
