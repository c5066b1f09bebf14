#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sstream>

#include "tabs/scenario.hpp"

using namespace tabs;
using namespace tabs::scenario;

namespace {

const char* kBaseline = R"(
[system]
n_servers = 100000
buffer = 10

[arrivals]
kind = constant
rate = 0.3

[timers]
mu = 0.1
nu = 0.1

[run]
horizon = 250
sample_interval = 1
seed = 12
replications = 4
warmup_fraction = 0.4
)";

bool has_error(const ParseResult& r, const std::string& needle, int line = -1) {
    for (const auto& issue : r.errors) {
        if (issue.message.find(needle) == std::string::npos) continue;
        if (line >= 0 && issue.line != line) continue;
        return true;
    }
    return false;
}

} // namespace

TEST_CASE("a plain baseline file parses with defaults") {
    auto result = parse_config_text(kBaseline, "baseline");
    REQUIRE(result.ok());
    const auto& cfg = *result.config;
    CHECK(cfg.sim.n_servers == 100000);
    CHECK(cfg.sim.arrivals.nominal() == 0.3);
    CHECK(cfg.sim.mu == 0.1);
    CHECK(cfg.sim.policy == sim::Policy::Tabs);   // default
    CHECK(cfg.energy.p_full == 200.0);            // default
    CHECK(cfg.energy.p_idle == 140.0);            // default
    CHECK(cfg.sim.service.is_exponential());      // default
    CHECK(cfg.replications == 4);
    CHECK(cfg.warmup() == doctest::Approx(100.0));
}

TEST_CASE("zero standby rate is rejected with its line") {
    std::string text = kBaseline;
    const auto at = text.find("mu = 0.1");
    text.replace(at, 8, "mu = 0.0");
    auto result = parse_config_text(text, "bad");
    CHECK(!result.ok());
    CHECK(has_error(result, "standby rate must be positive"));
    // the message points at the mu line
    int mu_line = 0, line_no = 0;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.rfind("mu =", 0) == 0) mu_line = line_no;
    }
    CHECK(has_error(result, "standby rate", mu_line));
}

TEST_CASE("phase-type validation propagates") {
    std::string text = std::string(kBaseline) + R"(
[service]
kind = phase_type
r = 0.6 0.3
gamma = 2 0.4
R = 0 0 ; 0 0
)";
    auto result = parse_config_text(text, "bad");
    CHECK(!result.ok());
    CHECK(has_error(result, "sums to 0.9"));
}

TEST_CASE("unknown keys and sections are errors, all collected") {
    std::string text = std::string(kBaseline) + R"(
[policy]
kind = tabs
flavor = crunchy

[exotic]
x = 1
)";
    const auto at = text.find("nu = 0.1");
    std::string broken = text;
    broken.replace(at, 8, "nu = -1");
    auto result = parse_config_text(broken, "bad");
    CHECK(!result.ok());
    CHECK(has_error(result, "unknown key 'flavor'"));
    CHECK(has_error(result, "unknown section [exotic]"));
    CHECK(has_error(result, "setup rate must be positive"));
    CHECK(result.errors.size() >= 3); // not just the first
}

TEST_CASE("missing required sections are reported") {
    auto result = parse_config_text("[system]\nn_servers = 10\n", "incomplete");
    CHECK(!result.ok());
    CHECK(has_error(result, "missing required section [arrivals]"));
    CHECK(has_error(result, "missing required section [timers]"));
    CHECK(has_error(result, "missing required section [run]"));
}

TEST_CASE("sweeps parse and reject nonsense") {
    std::string text = std::string(kBaseline) + "\n[sweep]\nparameter = nu_inverse\nvalues = 10 100\n";
    auto result = parse_config_text(text, "sweep");
    REQUIRE(result.ok());
    REQUIRE(result.config->sweep.has_value());
    CHECK(result.config->sweep->parameter == "nu_inverse");
    CHECK(result.config->sweep->values == std::vector<double>{10.0, 100.0});

    std::string empty = std::string(kBaseline) + "\n[sweep]\nparameter = lambda\nvalues =\n";
    CHECK(has_error(parse_config_text(empty, "sweep"), "needs values"));

    std::string odd = std::string(kBaseline) + "\n[sweep]\nparameter = bananas\nvalues = 1\n";
    CHECK(has_error(parse_config_text(odd, "sweep"), "is not mu_inverse"));
}

TEST_CASE("the resolved echo re-parses to the same configuration") {
    std::string text = std::string(kBaseline) + R"(
[service]
kind = phase_type
r = 0.75 0.25
gamma = 2 0.4
R = 0 0 ; 0 0

[policy]
kind = jiq
)";
    auto first = parse_config_text(text, "echo");
    REQUIRE(first.ok());
    auto second = parse_config_text(echo_config(*first.config), "echo");
    REQUIRE(second.ok());
    CHECK(second.config->sim.n_servers == first.config->sim.n_servers);
    CHECK(second.config->sim.policy == first.config->sim.policy);
    CHECK(second.config->sim.seed == first.config->sim.seed);
    CHECK(second.config->sim.service.phases() == 2);
    CHECK(second.config->sim.service.phase_type->rate == first.config->sim.service.phase_type->rate);
    CHECK(echo_config(*second.config) == echo_config(*first.config));
}

TEST_CASE("the key reference names every section") {
    const std::string ref = config_key_reference();
    for (const char* section : {"[system]", "[arrivals]", "[timers]", "[service]", "[policy]",
                                "[energy]", "[run]", "[sweep]"})
        CHECK(ref.find(section) != std::string::npos);
}
