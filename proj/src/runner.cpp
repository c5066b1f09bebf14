#include "tabs/runner.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <stdexcept>

#include "tabs/csv.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace tabs::run {

namespace {

namespace fs = std::filesystem;

scenario::ScenarioConfig resolve(const scenario::ScenarioConfig& cfg, const RunOptions& opt) {
    scenario::ScenarioConfig out = cfg;
    if (opt.seed) out.sim.seed = *opt.seed;
    if (opt.replications) out.replications = *opt.replications;
    if (opt.dt) out.dt = *opt.dt;
    return out;
}

std::string scenario_dir(const scenario::ScenarioConfig& cfg, const RunOptions& opt) {
    const fs::path dir = fs::path(opt.out_dir) / cfg.name;
    fs::create_directories(dir);
    return dir.string();
}

metrics::MetricsReport aggregate_reports(std::span<const ReplicationSummary> reps) {
    metrics::MetricsReport total;
    if (reps.empty()) return total;
    for (const auto& rep : reps) {
        total.mean_wait += rep.report.mean_wait;
        total.mean_power += rep.report.mean_power;
        total.normalized_power += rep.report.normalized_power;
        total.wastage += rep.report.wastage;
        total.loss_fraction += rep.report.loss_fraction;
        total.msg_per_task += rep.report.msg_per_task;
        total.admitted_load += rep.report.admitted_load;
        total.sample_count += rep.report.sample_count;
    }
    const double n = static_cast<double>(reps.size());
    total.mean_wait /= n;
    total.mean_power /= n;
    total.normalized_power /= n;
    total.wastage /= n;
    total.loss_fraction /= n;
    total.msg_per_task /= n;
    total.admitted_load /= n;
    total.warmup_used = reps.front().report.warmup_used;
    return total;
}

double median(std::vector<double> values) {
    if (values.empty()) return 0.0;
    std::sort(values.begin(), values.end());
    const std::size_t mid = values.size() / 2;
    return values.size() % 2 ? values[mid] : 0.5 * (values[mid - 1] + values[mid]);
}

void parallel_for(int count, int jobs, const std::function<void(int)>& body) {
    std::vector<std::string> errors(count);
#ifdef _OPENMP
    const int threads = jobs > 0 ? jobs : omp_get_max_threads();
#pragma omp parallel for schedule(dynamic) num_threads(threads)
#endif
    for (int i = 0; i < count; ++i) {
        try {
            body(i);
        } catch (const std::exception& e) {
            errors[i] = e.what();
        }
    }
    (void)jobs;
    for (int i = 0; i < count; ++i)
        if (!errors[i].empty())
            throw std::runtime_error("task " + std::to_string(i) + " failed: " + errors[i]);
}

} // namespace

fluid::FluidParams fluid_params_of(const sim::SimConfig& cfg) {
    fluid::FluidParams p;
    p.arrivals = cfg.arrivals;
    p.mu = cfg.mu;
    p.nu = cfg.nu;
    p.buffer = cfg.buffer;
    p.service = cfg.service.phase_type;
    return p;
}

FluidState initial_fluid_state(const sim::SimConfig& cfg) {
    const int phases = cfg.service.phases();
    FluidState s(cfg.buffer, phases);
    switch (cfg.initial) {
    case sim::Initial::AllIdleOn:
        break;
    case sim::Initial::AllIdleOff:
        s.delta0 = 1.0;
        break;
    case sim::Initial::Fractions: {
        if (cfg.initial_fractions.phases == phases) {
            s = cfg.initial_fractions;
        } else {
            // spread scalar levels over phases by the initial distribution,
            // matching how the simulator draws phases for seeded servers
            for (int i = 1; i <= cfg.buffer; ++i)
                for (int j = 1; j <= phases; ++j)
                    s.q_ref(i, j) =
                        cfg.initial_fractions.q_level(i) * cfg.service.phase_type->initial[j - 1];
            s.delta0 = cfg.initial_fractions.delta0;
            s.delta1 = cfg.initial_fractions.delta1;
        }
        break;
    }
    }
    return s;
}

fluid::FluidTrajectory run_fluid(const scenario::ScenarioConfig& cfg) {
    fluid::IntegrateOptions opt;
    opt.dt = cfg.dt;
    // Sample finely enough that interpolating at simulator sample times adds
    // no visible error, keeping the fine grid an exact step-divisor of the
    // trace grid so every trace time is also a recorded fluid time.
    const long long per_sample =
        std::max(1LL, std::llround(cfg.sim.sample_interval / cfg.dt));
    long long stride = per_sample;
    for (long long d = 1; d <= per_sample; ++d)
        if (per_sample % d == 0 &&
            static_cast<double>(per_sample / d) * cfg.dt <= 0.1 + 1e-12) {
            stride = per_sample / d;
            break;
        }
    opt.sample_interval = static_cast<double>(stride) * cfg.dt;
    return fluid::integrate_fluid(initial_fluid_state(cfg.sim), fluid_params_of(cfg.sim),
                                  cfg.sim.horizon, opt);
}

ReplicationSummary run_replication(const scenario::ScenarioConfig& cfg, int replication,
                                   const fluid::FluidTrajectory* reference, bool keep_tasks) {
    sim::SimConfig rep_cfg = cfg.sim;
    rep_cfg.seed = cfg.sim.seed + static_cast<std::uint64_t>(replication);
    sim::SimResult result = sim::run_simulation(rep_cfg);

    ReplicationSummary summary;
    summary.report = metrics::compute_metrics(result, rep_cfg, cfg.energy, cfg.warmup());
    summary.stationary = metrics::stationary_estimate(result.samples, cfg.warmup());
    if (reference) summary.gap = metrics::trajectory_gap(result.samples, *reference);
    summary.samples = std::move(result.samples);
    if (keep_tasks) summary.tasks = std::move(result.tasks);
    return summary;
}

namespace {

void write_trace(const std::string& path, std::span<const sim::TraceSample> samples,
                 int buffer) {
    std::string text = csv::trace_header(buffer) + "\n";
    for (const auto& s : samples) text += csv::trace_row(s, buffer) + "\n";
    csv::write_file(path, text);
}

void write_fluid(const std::string& path, const fluid::FluidTrajectory& traj, int buffer,
                 double interval) {
    std::string text = csv::fluid_header(buffer) + "\n";
    // rows at the trace grid; the recorded grid divides it exactly
    std::size_t every = 1;
    if (traj.samples.size() > 1) {
        const double spacing = traj.samples[1].t - traj.samples[0].t;
        every = static_cast<std::size_t>(std::max(1LL, std::llround(interval / spacing)));
    }
    for (std::size_t k = 0; k < traj.samples.size(); ++k)
        if (k % every == 0 || k + 1 == traj.samples.size())
            text += csv::fluid_row(traj.samples[k], buffer) + "\n";
    csv::write_file(path, text);
}

} // namespace

ScenarioOutcome run_scenario(const scenario::ScenarioConfig& raw, Mode mode,
                             const RunOptions& opt) {
    ScenarioOutcome outcome;
    outcome.resolved = resolve(raw, opt);
    const scenario::ScenarioConfig& cfg = outcome.resolved;

    std::string dir;
    if (opt.write_files) {
        dir = scenario_dir(cfg, opt);
        csv::write_file(dir + "/config_echo", scenario::echo_config(cfg));
        outcome.files.push_back(dir + "/config_echo");
    }

    if (mode != Mode::Simulate) {
        outcome.trajectory = run_fluid(cfg);
        if (opt.write_files) {
            write_fluid(dir + "/fluid.csv", outcome.trajectory, cfg.sim.buffer,
                        cfg.sim.sample_interval);
            outcome.files.push_back(dir + "/fluid.csv");
        }
    }
    if (mode == Mode::Fluid) return outcome;

    const int reps = cfg.replications;
    outcome.replications.resize(reps);
    const fluid::FluidTrajectory* reference = mode == Mode::Both ? &outcome.trajectory : nullptr;
    parallel_for(reps, opt.jobs, [&](int k) {
        ReplicationSummary summary = run_replication(cfg, k, reference, opt.write_tasks);
        if (opt.write_files) {
            write_trace(dir + "/trace_rep" + std::to_string(k) + ".csv", summary.samples,
                        cfg.sim.buffer);
            if (opt.write_tasks) {
                std::string text = csv::task_header() + "\n";
                for (const auto& t : summary.tasks) text += csv::task_row(t) + "\n";
                csv::write_file(dir + "/tasks_rep" + std::to_string(k) + ".csv", text);
                summary.tasks.clear();
                summary.tasks.shrink_to_fit();
            }
        }
        outcome.replications[k] = std::move(summary);
    });
    if (opt.write_files)
        for (int k = 0; k < reps; ++k)
            outcome.files.push_back(dir + "/trace_rep" + std::to_string(k) + ".csv");

    outcome.aggregate = aggregate_reports(outcome.replications);
    if (mode == Mode::Both) {
        std::vector<double> gaps;
        for (const auto& rep : outcome.replications) gaps.push_back(rep.gap);
        outcome.median_gap = median(std::move(gaps));
    }
    if (opt.write_files) {
        std::string text = csv::metrics_header(false) + "\n";
        text += csv::metrics_row(cfg.name, cfg.sim.policy, cfg.sim, outcome.aggregate) + "\n";
        csv::write_file(dir + "/metrics.csv", text);
        outcome.files.push_back(dir + "/metrics.csv");
    }
    return outcome;
}

namespace {

void apply_sweep_value(sim::SimConfig& cfg, const std::string& parameter, double value) {
    if (parameter == "mu_inverse") {
        if (!(value > 0.0)) throw std::invalid_argument("mu_inverse must be positive");
        cfg.mu = 1.0 / value;
    } else if (parameter == "nu_inverse") {
        if (!(value > 0.0)) throw std::invalid_argument("nu_inverse must be positive");
        cfg.nu = 1.0 / value;
    } else if (parameter == "n_servers") {
        cfg.n_servers = static_cast<int>(value);
        if (cfg.n_servers < 1) throw std::invalid_argument("n_servers must be at least 1");
    } else if (parameter == "lambda") {
        cfg.arrivals = ArrivalProfile::constant(value);
    } else {
        throw std::invalid_argument("unknown sweep parameter '" + parameter + "'");
    }
}

} // namespace

SweepOutcome run_sweep(const scenario::ScenarioConfig& raw, std::span<const sim::Policy> policies,
                       const RunOptions& opt) {
    scenario::ScenarioConfig base = resolve(raw, opt);
    if (!base.sweep) throw std::invalid_argument("the scenario has no [sweep] section");
    if (base.sweep->values.empty()) throw std::invalid_argument("the sweep has no values");

    std::vector<sim::Policy> pols(policies.begin(), policies.end());
    if (pols.empty()) pols.push_back(base.sim.policy);

    SweepOutcome outcome;
    outcome.parameter = base.sweep->parameter;
    for (double value : base.sweep->values) {
        for (sim::Policy policy : pols) {
            SweepRow row;
            row.value = value;
            row.policy = policy;
            scenario::ScenarioConfig point = base;
            point.sweep.reset();
            point.sim.policy = policy;
            try {
                apply_sweep_value(point.sim, base.sweep->parameter, value);
                auto errors = point.sim.validate();
                if (!errors.empty()) throw std::invalid_argument(errors.front());
                row.sim = point.sim;

                RunOptions point_opt = opt;
                point_opt.write_files = false;
                ScenarioOutcome res = run_scenario(point, Mode::Simulate, point_opt);
                row.report = res.aggregate;
                row.status = "ok";
            } catch (const std::exception& e) {
                row.sim = point.sim;
                std::string reason = e.what();
                std::replace(reason.begin(), reason.end(), ',', ';');
                row.status = "error: " + reason;
            }
            outcome.rows.push_back(std::move(row));
        }
    }

    if (opt.write_files) {
        const std::string dir = scenario_dir(base, opt);
        std::string text = csv::metrics_header(true) + "\n";
        for (const auto& row : outcome.rows)
            text += csv::metrics_row(base.name, row.policy, row.sim, row.report, row.status) +
                    "\n";
        const std::string path = dir + "/sweep_metrics.csv";
        csv::write_file(path, text);
        csv::write_file(dir + "/config_echo", scenario::echo_config(base));
        outcome.files = {path, dir + "/config_echo"};
    }
    return outcome;
}

CompareOutcome compare_policies(const scenario::ScenarioConfig& raw,
                                std::span<const sim::Policy> policies, const RunOptions& opt) {
    scenario::ScenarioConfig base = resolve(raw, opt);
    if (policies.empty()) throw std::invalid_argument("no policies to compare");

    CompareOutcome outcome;
    for (sim::Policy policy : policies) {
        scenario::ScenarioConfig point = base;
        point.sim.policy = policy;
        // common random numbers: the same seed + k under every policy
        auto errors = point.sim.validate();
        if (!errors.empty())
            throw std::invalid_argument(std::string(sim::to_string(policy)) + ": " +
                                        errors.front());
        RunOptions point_opt = opt;
        point_opt.write_files = false;
        outcome.by_policy.emplace_back(policy, run_scenario(point, Mode::Simulate, point_opt));
    }

    if (opt.write_files) {
        const std::string dir = scenario_dir(base, opt);
        std::string text = csv::metrics_header(false) + "\n";
        for (const auto& [policy, res] : outcome.by_policy) {
            sim::SimConfig cfg = base.sim;
            cfg.policy = policy;
            text += csv::metrics_row(base.name, policy, cfg, res.aggregate) + "\n";
        }
        const std::string path = dir + "/compare_metrics.csv";
        csv::write_file(path, text);
        csv::write_file(dir + "/config_echo", scenario::echo_config(base));
        outcome.files = {path, dir + "/config_echo"};
    }
    return outcome;
}

StabilityOutcome run_stability(const scenario::ScenarioConfig& raw, int n_initials,
                               double horizon, double tol, const RunOptions& opt) {
    scenario::ScenarioConfig cfg = resolve(raw, opt);
    fluid::IntegrateOptions int_opt;
    int_opt.dt = cfg.dt;
    StabilityOutcome outcome;
    outcome.report = fluid::stability_sweep(fluid_params_of(cfg.sim), n_initials, horizon, tol,
                                            cfg.sim.seed, int_opt, opt.jobs);
    if (opt.write_files) {
        const std::string dir = scenario_dir(cfg, opt);
        std::string text = "initial,distance,converged\n";
        for (int k = 0; k < outcome.report.total; ++k) {
            text += std::to_string(k) + "," + csv::format_number(outcome.report.distances[k]) +
                    "," + (outcome.report.distances[k] <= tol ? "1" : "0") + "\n";
        }
        const std::string path = dir + "/stability.csv";
        csv::write_file(path, text);
        outcome.files = {path};
    }
    return outcome;
}

} // namespace tabs::run
