#include <cstdio>
#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tabs/csv.hpp"
#include "tabs/runner.hpp"
#include "tabs/scenario.hpp"

namespace {

using namespace tabs;

struct CommonArgs {
    std::string config_path;
    run::RunOptions options;
    double seed_raw = -1.0;
    int replications = -1;
    double dt = -1.0;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("config", args.config_path, "scenario file (see the key reference below)")
        ->required();
    cmd->add_option("--out", args.options.out_dir, "output directory (default: out)");
    cmd->add_option("--seed", args.seed_raw, "override the base seed");
    cmd->add_option("--replications", args.replications, "override the replication count");
    cmd->add_option("--dt", args.dt, "override the fluid integration step");
    cmd->add_option("--jobs", args.options.jobs,
                    "worker threads for replications/sweep points (0 = all cores, 1 = serial)");
}

scenario::ScenarioConfig load_or_exit(CommonArgs& args) {
    auto parsed = scenario::parse_config(args.config_path);
    if (!parsed.ok()) {
        std::cerr << "invalid scenario '" << args.config_path << "':\n" << parsed.describe();
        std::exit(1);
    }
    if (args.seed_raw >= 0.0) args.options.seed = static_cast<std::uint64_t>(args.seed_raw);
    if (args.replications > 0) args.options.replications = args.replications;
    if (args.dt > 0.0) args.options.dt = args.dt;
    return *parsed.config;
}

std::vector<sim::Policy> parse_policies(const std::string& text) {
    std::vector<sim::Policy> out;
    std::string token;
    for (char c : text + ",") {
        if (c == ',') {
            if (token == "tabs") out.push_back(sim::Policy::Tabs);
            else if (token == "jiq") out.push_back(sim::Policy::Jiq);
            else if (token == "delayedoff") out.push_back(sim::Policy::DelayedOff);
            else if (!token.empty())
                throw CLI::ValidationError("--policies", "unknown policy '" + token + "'");
            token.clear();
        } else if (!std::isspace(static_cast<unsigned char>(c))) {
            token += c;
        }
    }
    return out;
}

void print_report(const std::string& label, const metrics::MetricsReport& r) {
    std::cout << label << ": mean_wait=" << csv::format_number(r.mean_wait)
              << " mean_power=" << csv::format_number(r.mean_power) << "W"
              << " normalized=" << csv::format_number(r.normalized_power)
              << " wastage=" << csv::format_number(r.wastage) << "W"
              << " loss=" << csv::format_number(r.loss_fraction)
              << " msg/task=" << csv::format_number(r.msg_per_task) << "\n";
}

void print_files(const std::vector<std::string>& files) {
    for (const auto& f : files) std::cout << "wrote " << f << "\n";
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"TABS: token-based auto-scaling and load balancing at scale.\n"
                 "Simulates N parallel queues under the TABS, JIQ and the centralized\n"
                 "M/M/N/setup/delayedoff policies, integrates the matching deterministic\n"
                 "limit dynamics, and emits CSV traces and metrics."};
    app.require_subcommand(1);
    app.footer("scenario file keys (units):\n" + scenario::config_key_reference());

    CommonArgs args;
    bool write_tasks = false;
    std::string policies_text;
    int initials = 100;
    double stab_horizon = 2000.0;
    double stab_tol = 1e-3;

    auto* simulate = app.add_subcommand("simulate", "run seeded replications of the scenario");
    add_common(simulate, args);
    simulate->add_flag("--write-tasks", write_tasks, "also write per-task CSV logs");

    auto* fluid_cmd = app.add_subcommand("fluid", "integrate the deterministic limit dynamics");
    add_common(fluid_cmd, args);

    auto* both = app.add_subcommand("both", "simulate and integrate, reporting the gap");
    add_common(both, args);
    both->add_flag("--write-tasks", write_tasks, "also write per-task CSV logs");

    auto* sweep = app.add_subcommand("sweep", "run the scenario across the [sweep] values");
    add_common(sweep, args);
    sweep->add_option("--policies", policies_text, "comma-separated policies (default: the scenario's)");

    auto* compare = app.add_subcommand("compare", "run several policies with common random numbers");
    add_common(compare, args);
    compare->add_option("--policies", policies_text, "comma-separated policies, e.g. tabs,jiq")
        ->required();

    auto* stability = app.add_subcommand("stability", "drive random initial states to the fixed point");
    add_common(stability, args);
    stability->add_option("--initials", initials, "number of random initial states");
    stability->add_option("--horizon", stab_horizon, "integration horizon");
    stability->add_option("--tol", stab_tol, "convergence distance");

    CLI11_PARSE(app, argc, argv);
    args.options.write_tasks = write_tasks;

    try {
        if (simulate->parsed() || both->parsed()) {
            auto cfg = load_or_exit(args);
            const auto mode = both->parsed() ? run::Mode::Both : run::Mode::Simulate;
            auto outcome = run::run_scenario(cfg, mode, args.options);
            print_report(cfg.name, outcome.aggregate);
            if (both->parsed())
                std::cout << "median trajectory gap: " << csv::format_number(outcome.median_gap)
                          << "\n";
            print_files(outcome.files);
        } else if (fluid_cmd->parsed()) {
            auto cfg = load_or_exit(args);
            auto outcome = run::run_scenario(cfg, run::Mode::Fluid, args.options);
            const auto& last = outcome.trajectory.back();
            std::cout << cfg.name << ": endpoint q1=" << csv::format_number(last.state.q_level(1))
                      << " delta0=" << csv::format_number(last.state.delta0)
                      << " delta1=" << csv::format_number(last.state.delta1)
                      << " xi=" << csv::format_number(last.xi) << "\n";
            print_files(outcome.files);
        } else if (sweep->parsed()) {
            auto cfg = load_or_exit(args);
            auto policies = parse_policies(policies_text);
            auto outcome = run::run_sweep(cfg, policies, args.options);
            for (const auto& row : outcome.rows) {
                std::cout << outcome.parameter << "=" << csv::format_number(row.value) << " "
                          << sim::to_string(row.policy) << " " << row.status;
                if (row.status == "ok")
                    std::cout << " mean_wait=" << csv::format_number(row.report.mean_wait)
                              << " mean_power=" << csv::format_number(row.report.mean_power);
                std::cout << "\n";
            }
            print_files(outcome.files);
        } else if (compare->parsed()) {
            auto cfg = load_or_exit(args);
            auto policies = parse_policies(policies_text);
            auto outcome = run::compare_policies(cfg, policies, args.options);
            for (const auto& [policy, res] : outcome.by_policy)
                print_report(sim::to_string(policy), res.aggregate);
            print_files(outcome.files);
        } else if (stability->parsed()) {
            auto cfg = load_or_exit(args);
            auto outcome = run::run_stability(cfg, initials, stab_horizon, stab_tol, args.options);
            std::cout << outcome.report.converged << "/" << outcome.report.total
                      << " initial states within " << csv::format_number(stab_tol)
                      << " of the fixed point; worst distance "
                      << csv::format_number(outcome.report.worst_distance) << "\n";
            print_files(outcome.files);
        }
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
