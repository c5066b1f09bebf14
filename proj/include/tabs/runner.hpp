#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tabs/fluid.hpp"
#include "tabs/metrics.hpp"
#include "tabs/scenario.hpp"
#include "tabs/simulate.hpp"

namespace tabs::run {

struct RunOptions {
    std::string out_dir = "out";
    int jobs = 0; // worker threads; 0 = hardware default, 1 = serial
    std::optional<std::uint64_t> seed;
    std::optional<int> replications;
    std::optional<double> dt;
    bool write_tasks = false; // per-task CSVs are large
    bool write_files = true;
};

enum class Mode { Simulate, Fluid, Both };

// Everything kept per replication; the task log is reduced to metrics
// inside the replication so memory stays flat in the horizon.
struct ReplicationSummary {
    metrics::MetricsReport report;
    metrics::StationaryEstimate stationary;
    std::vector<sim::TraceSample> samples;
    std::vector<sim::TaskRecord> tasks; // kept only on request
    double gap = 0.0;                   // vs the fluid trajectory (Both mode)
};

struct ScenarioOutcome {
    scenario::ScenarioConfig resolved;
    std::vector<ReplicationSummary> replications;
    metrics::MetricsReport aggregate; // mean over replications
    fluid::FluidTrajectory trajectory; // Fluid and Both modes
    double median_gap = 0.0;           // Both mode
    std::vector<std::string> files;
};

// Runs a scenario: simulate (replications in parallel, common layout of
// trace_rep<k>.csv + metrics.csv + config_echo under out_dir/<name>/),
// fluid (one trajectory, fluid.csv), or both (additionally the per-
// replication trajectory gap).
ScenarioOutcome run_scenario(const scenario::ScenarioConfig& cfg, Mode mode,
                             const RunOptions& opt);

struct SweepRow {
    double value = 0.0;
    sim::Policy policy = sim::Policy::Tabs;
    sim::SimConfig sim; // the resolved point
    metrics::MetricsReport report;
    std::string status; // "ok" or the failure reason
};

struct SweepOutcome {
    std::string parameter;
    std::vector<SweepRow> rows;
    std::vector<std::string> files;
};

// One metrics row per (sweep value, policy). Failures at individual points
// are recorded in the row's status and the sweep continues.
SweepOutcome run_sweep(const scenario::ScenarioConfig& cfg,
                       std::span<const sim::Policy> policies, const RunOptions& opt);

struct CompareOutcome {
    std::vector<std::pair<sim::Policy, ScenarioOutcome>> by_policy;
    std::vector<std::string> files;
};

// Side-by-side run of several policies on one scenario with common random
// numbers (replication k uses seed + k under every policy).
CompareOutcome compare_policies(const scenario::ScenarioConfig& cfg,
                                std::span<const sim::Policy> policies, const RunOptions& opt);

struct StabilityOutcome {
    fluid::StabilityReport report;
    std::vector<std::string> files;
};

StabilityOutcome run_stability(const scenario::ScenarioConfig& cfg, int n_initials,
                               double horizon, double tol, const RunOptions& opt);

// Per-replication simulation driver used by every command: builds the
// replication's config (seed + index) and reduces the run to a summary.
ReplicationSummary run_replication(const scenario::ScenarioConfig& cfg, int replication,
                                   const fluid::FluidTrajectory* reference,
                                   bool keep_tasks = false);

// Uniform-grid fluid trajectory for the scenario, sampled finely enough for
// gap interpolation.
fluid::FluidTrajectory run_fluid(const scenario::ScenarioConfig& cfg);

fluid::FluidParams fluid_params_of(const sim::SimConfig& cfg);
FluidState initial_fluid_state(const sim::SimConfig& cfg);

} // namespace tabs::run
