#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tabs/core.hpp"
#include "tabs/simulate.hpp"

namespace tabs::scenario {

struct SweepSpec {
    std::string parameter; // mu_inverse | nu_inverse | n_servers | lambda
    std::vector<double> values;
};

struct ScenarioConfig {
    std::string name;
    sim::SimConfig sim;
    EnergyParams energy;
    int replications = 20;
    double warmup_fraction = 0.4; // 0 disables the warmup
    double dt = 1e-3;             // fluid integration step
    std::optional<SweepSpec> sweep;

    double warmup() const { return warmup_fraction * sim.horizon; }
};

struct ParseIssue {
    int line = 0; // 0 when no single line is at fault
    std::string message;
};

struct ParseResult {
    std::optional<ScenarioConfig> config;
    std::vector<ParseIssue> errors;

    bool ok() const { return config.has_value() && errors.empty(); }
    std::string describe() const;
};

// Parses and fully validates a scenario file, collecting every error rather
// than stopping at the first. Unknown sections and keys are errors.
ParseResult parse_config(const std::string& path);
ParseResult parse_config_text(std::string_view text, std::string_view name);

// The fully resolved configuration in the same file format, suitable for
// re-parsing (written as config_echo next to run outputs).
std::string echo_config(const ScenarioConfig& cfg);

// One line per recognized key: section, key, meaning, unit.
std::string config_key_reference();

} // namespace tabs::scenario
