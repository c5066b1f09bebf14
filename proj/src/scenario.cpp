#include "tabs/scenario.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace tabs::scenario {

namespace {

std::string fmt_g(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

std::string trim(std::string_view v) {
    std::size_t a = 0, b = v.size();
    while (a < b && std::isspace(static_cast<unsigned char>(v[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(v[b - 1]))) --b;
    return std::string(v.substr(a, b - a));
}

struct RawValue {
    std::string text;
    int line = 0;
    bool used = false;
};

using Section = std::map<std::string, RawValue>;

struct RawFile {
    std::map<std::string, Section> sections;
    std::map<std::string, int> section_lines;
};

class Reader {
public:
    Reader(RawFile file, std::vector<ParseIssue>& errors)
        : file_(std::move(file)), errors_(errors) {}

    bool has_section(const std::string& s) const { return file_.sections.count(s) > 0; }

    void require_section(const std::string& s) {
        if (!has_section(s)) errors_.push_back({0, "missing required section [" + s + "]"});
    }

    std::optional<std::string> get(const std::string& section, const std::string& key) {
        auto sit = file_.sections.find(section);
        if (sit == file_.sections.end()) return std::nullopt;
        auto kit = sit->second.find(key);
        if (kit == sit->second.end()) return std::nullopt;
        kit->second.used = true;
        return kit->second.text;
    }

    int line_of(const std::string& section, const std::string& key) const {
        auto sit = file_.sections.find(section);
        if (sit == file_.sections.end()) return 0;
        auto kit = sit->second.find(key);
        return kit == sit->second.end() ? 0 : kit->second.line;
    }

    double number(const std::string& section, const std::string& key, double fallback) {
        auto raw = get(section, key);
        if (!raw) return fallback;
        return parse_number(*raw, section, key);
    }

    std::optional<double> number_opt(const std::string& section, const std::string& key) {
        auto raw = get(section, key);
        if (!raw) return std::nullopt;
        return parse_number(*raw, section, key);
    }

    std::string word(const std::string& section, const std::string& key,
                     const std::string& fallback) {
        auto raw = get(section, key);
        return raw ? *raw : fallback;
    }

    std::vector<double> numbers(const std::string& section, const std::string& key) {
        auto raw = get(section, key);
        std::vector<double> out;
        if (!raw) return out;
        std::istringstream in(*raw);
        std::string token;
        while (in >> token) out.push_back(parse_number(token, section, key));
        return out;
    }

    // rows separated by ';', entries by whitespace
    std::vector<std::vector<double>> matrix(const std::string& section, const std::string& key) {
        auto raw = get(section, key);
        std::vector<std::vector<double>> out;
        if (!raw) return out;
        std::string row;
        std::istringstream rows(*raw);
        while (std::getline(rows, row, ';')) {
            std::vector<double> values;
            std::istringstream in(row);
            std::string token;
            while (in >> token) values.push_back(parse_number(token, section, key));
            out.push_back(std::move(values));
        }
        return out;
    }

    void error(const std::string& section, const std::string& key, const std::string& msg) {
        errors_.push_back({line_of(section, key), "[" + section + "] " + key + ": " + msg});
    }

    void flag_unknown() {
        for (auto& [name, section] : file_.sections) {
            if (!known_sections_.count(name)) {
                errors_.push_back({file_.section_lines[name], "unknown section [" + name + "]"});
                continue;
            }
            for (auto& [key, value] : section)
                if (!value.used)
                    errors_.push_back({value.line, "unknown key '" + key + "' in [" + name + "]"});
        }
    }

private:
    double parse_number(const std::string& text, const std::string& section,
                        const std::string& key) {
        try {
            std::size_t pos = 0;
            const double v = std::stod(text, &pos);
            if (pos != text.size()) throw std::invalid_argument("");
            return v;
        } catch (...) {
            error(section, key, "'" + text + "' is not a number");
            return 0.0;
        }
    }

    RawFile file_;
    std::vector<ParseIssue>& errors_;

public:
    static const std::set<std::string> known_sections_;
};

const std::set<std::string> Reader::known_sections_ = {
    "system", "arrivals", "timers", "service", "policy", "energy", "run", "sweep"};

std::optional<RawFile> tokenize(std::string_view text, std::vector<ParseIssue>& errors) {
    RawFile file;
    std::string current;
    int line_no = 0;
    std::istringstream in{std::string(text)};
    std::string line;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string stripped = trim(line.substr(0, line.find('#')));
        if (stripped.empty()) continue;
        if (stripped.front() == '[') {
            if (stripped.back() != ']') {
                errors.push_back({line_no, "malformed section header '" + stripped + "'"});
                continue;
            }
            current = trim(stripped.substr(1, stripped.size() - 2));
            file.sections[current];
            file.section_lines.emplace(current, line_no);
            continue;
        }
        const auto eq = stripped.find('=');
        if (eq == std::string::npos) {
            errors.push_back({line_no, "expected 'key = value', got '" + stripped + "'"});
            continue;
        }
        if (current.empty()) {
            errors.push_back({line_no, "key outside any section"});
            continue;
        }
        const std::string key = trim(stripped.substr(0, eq));
        const std::string value = trim(stripped.substr(eq + 1));
        auto [it, inserted] = file.sections[current].emplace(key, RawValue{value, line_no});
        if (!inserted)
            errors.push_back({line_no, "duplicate key '" + key + "' in [" + current + "]"});
    }
    return file;
}

} // namespace

std::string ParseResult::describe() const {
    std::string out;
    for (const auto& issue : errors) {
        if (issue.line > 0) out += "line " + std::to_string(issue.line) + ": ";
        out += issue.message + "\n";
    }
    return out;
}

ParseResult parse_config_text(std::string_view text, std::string_view name) {
    ParseResult result;
    auto raw = tokenize(text, result.errors);
    if (!raw) return result;
    Reader reader(std::move(*raw), result.errors);

    ScenarioConfig cfg;
    cfg.name = std::string(name);

    reader.require_section("system");
    reader.require_section("arrivals");
    reader.require_section("timers");
    reader.require_section("run");

    // [system]
    cfg.sim.n_servers = static_cast<int>(reader.number("system", "n_servers", 10000));
    cfg.sim.buffer = static_cast<int>(reader.number("system", "buffer", 10));

    // [arrivals]
    const std::string arrival_kind = reader.word("arrivals", "kind", "constant");
    try {
        if (arrival_kind == "constant") {
            cfg.sim.arrivals = ArrivalProfile::constant(reader.number("arrivals", "rate", 0.3));
        } else if (arrival_kind == "sinusoid") {
            cfg.sim.arrivals = ArrivalProfile::sinusoid(reader.number("arrivals", "base", 0.3),
                                                        reader.number("arrivals", "amplitude", 0.2),
                                                        reader.number("arrivals", "period", 10.0));
        } else if (arrival_kind == "table") {
            const auto times = reader.numbers("arrivals", "times");
            const auto rates = reader.numbers("arrivals", "rates");
            if (times.size() != rates.size() || times.empty()) {
                reader.error("arrivals", "times", "times and rates need equal nonzero lengths");
            } else {
                std::vector<std::pair<double, double>> steps;
                for (std::size_t i = 0; i < times.size(); ++i)
                    steps.emplace_back(times[i], rates[i]);
                cfg.sim.arrivals = ArrivalProfile::table(std::move(steps));
            }
        } else {
            reader.error("arrivals", "kind",
                         "'" + arrival_kind + "' is not constant, sinusoid or table");
        }
    } catch (const std::invalid_argument& e) {
        reader.error("arrivals", "kind", e.what());
    }

    // [timers]
    const double mu = reader.number("timers", "mu", 0.1);
    const double nu = reader.number("timers", "nu", 0.1);
    if (!(mu > 0.0)) reader.error("timers", "mu", "standby rate must be positive");
    if (!(nu > 0.0)) reader.error("timers", "nu", "setup rate must be positive");
    cfg.sim.mu = mu;
    cfg.sim.nu = nu;

    // [service]
    const std::string service_kind = reader.word("service", "kind", "exponential");
    if (service_kind == "exponential") {
        cfg.sim.service.phase_type.reset();
    } else if (service_kind == "phase_type") {
        const auto r = reader.numbers("service", "r");
        const auto gamma = reader.numbers("service", "gamma");
        auto rows = reader.matrix("service", "R");
        const int K = static_cast<int>(r.size());
        std::vector<double> R(static_cast<std::size_t>(K) * K, 0.0);
        bool shape_ok = K >= 1 && static_cast<int>(gamma.size()) == K;
        if (!rows.empty()) {
            shape_ok = shape_ok && static_cast<int>(rows.size()) == K;
            for (const auto& row : rows)
                shape_ok = shape_ok && static_cast<int>(row.size()) == K;
            if (shape_ok)
                for (int j = 0; j < K; ++j)
                    for (int k = 0; k < K; ++k) R[static_cast<std::size_t>(j) * K + k] = rows[j][k];
        }
        if (!shape_ok) {
            reader.error("service", "r", "r, gamma and the rows of R must share one phase count");
        } else {
            try {
                cfg.sim.service.phase_type = PhaseTypeService::make(r, R, gamma);
            } catch (const std::invalid_argument& e) {
                reader.error("service", "r", e.what());
            }
        }
    } else {
        reader.error("service", "kind", "'" + service_kind + "' is not exponential or phase_type");
    }

    // [policy]
    const std::string policy = reader.word("policy", "kind", "tabs");
    if (policy == "tabs") cfg.sim.policy = sim::Policy::Tabs;
    else if (policy == "jiq") cfg.sim.policy = sim::Policy::Jiq;
    else if (policy == "delayedoff") cfg.sim.policy = sim::Policy::DelayedOff;
    else reader.error("policy", "kind", "'" + policy + "' is not tabs, jiq or delayedoff");

    // [energy]
    cfg.energy.p_full = reader.number("energy", "p_full", 200.0);
    cfg.energy.p_idle = reader.number("energy", "p_idle", 140.0);
    if (!cfg.energy.valid())
        reader.error("energy", "p_idle", "need 0 <= p_idle <= p_full");

    // [run]
    cfg.sim.horizon = reader.number("run", "horizon", 250.0);
    cfg.sim.sample_interval = reader.number("run", "sample_interval", 1.0);
    cfg.sim.seed = static_cast<std::uint64_t>(reader.number("run", "seed", 1.0));
    cfg.replications = static_cast<int>(reader.number("run", "replications", 20));
    cfg.warmup_fraction = reader.number("run", "warmup_fraction", 0.4);
    cfg.dt = reader.number("run", "dt", 1e-3);
    if (cfg.replications < 1) reader.error("run", "replications", "need at least 1 replication");
    if (!(cfg.warmup_fraction >= 0.0) || !(cfg.warmup_fraction < 1.0))
        reader.error("run", "warmup_fraction", "must lie in [0, 1)");
    if (!(cfg.dt > 0.0)) reader.error("run", "dt", "integration step must be positive");
    const std::string initial = reader.word("run", "initial", "all_idle_on");
    if (initial == "all_idle_on") cfg.sim.initial = sim::Initial::AllIdleOn;
    else if (initial == "all_idle_off") cfg.sim.initial = sim::Initial::AllIdleOff;
    else if (initial == "fractions") {
        cfg.sim.initial = sim::Initial::Fractions;
        const auto q = reader.numbers("run", "initial_q");
        FluidState s(std::max<int>(cfg.sim.buffer, 1), 1);
        for (std::size_t i = 0; i < q.size() && i < static_cast<std::size_t>(cfg.sim.buffer); ++i)
            s.q_ref(static_cast<int>(i) + 1) = q[i];
        s.delta0 = reader.number("run", "initial_delta0", 0.0);
        s.delta1 = reader.number("run", "initial_delta1", 0.0);
        cfg.sim.initial_fractions = s;
    } else {
        reader.error("run", "initial",
                     "'" + initial + "' is not all_idle_on, all_idle_off or fractions");
    }
    // consume the fraction keys even when unused by the chosen initial
    if (initial != "fractions") {
        reader.get("run", "initial_q");
        reader.get("run", "initial_delta0");
        reader.get("run", "initial_delta1");
    }

    // [sweep]
    if (reader.has_section("sweep")) {
        SweepSpec sweep;
        sweep.parameter = reader.word("sweep", "parameter", "");
        sweep.values = reader.numbers("sweep", "values");
        static const char* allowed[] = {"mu_inverse", "nu_inverse", "n_servers", "lambda"};
        if (std::find(std::begin(allowed), std::end(allowed), sweep.parameter) ==
            std::end(allowed))
            reader.error("sweep", "parameter",
                         "'" + sweep.parameter +
                             "' is not mu_inverse, nu_inverse, n_servers or lambda");
        if (sweep.values.empty()) reader.error("sweep", "values", "the sweep needs values");
        cfg.sweep = std::move(sweep);
    }

    reader.flag_unknown();

    // final structural validation through SimConfig
    for (const auto& msg : cfg.sim.validate()) result.errors.push_back({0, msg});

    if (result.errors.empty()) result.config = std::move(cfg);
    return result;
}

ParseResult parse_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        ParseResult result;
        result.errors.push_back({0, "cannot open '" + path + "'"});
        return result;
    }
    std::ostringstream text;
    text << in.rdbuf();
    std::string name = path;
    if (const auto slash = name.find_last_of('/'); slash != std::string::npos)
        name = name.substr(slash + 1);
    if (const auto dot = name.find_last_of('.'); dot != std::string::npos)
        name = name.substr(0, dot);
    return parse_config_text(text.str(), name);
}

std::string echo_config(const ScenarioConfig& cfg) {
    std::ostringstream out;
    out << "# resolved configuration: " << cfg.name << "\n";
    out << "[system]\n";
    out << "n_servers = " << cfg.sim.n_servers << "\n";
    out << "buffer = " << cfg.sim.buffer << "\n\n";
    out << "[arrivals]\n";
    switch (cfg.sim.arrivals.kind()) {
    case ArrivalProfile::Kind::Constant:
        out << "kind = constant\nrate = " << fmt_g(cfg.sim.arrivals.nominal()) << "\n";
        break;
    case ArrivalProfile::Kind::Sinusoid:
        out << "kind = sinusoid\nbase = " << fmt_g(cfg.sim.arrivals.base())
            << "\namplitude = " << fmt_g(cfg.sim.arrivals.amplitude())
            << "\nperiod = " << fmt_g(cfg.sim.arrivals.period()) << "\n";
        break;
    case ArrivalProfile::Kind::Table: {
        out << "kind = table\ntimes =";
        for (const auto& [t, _] : cfg.sim.arrivals.steps()) out << " " << fmt_g(t);
        out << "\nrates =";
        for (const auto& [_, r] : cfg.sim.arrivals.steps()) out << " " << fmt_g(r);
        out << "\n";
        break;
    }
    }
    out << "\n[timers]\nmu = " << fmt_g(cfg.sim.mu) << "\nnu = " << fmt_g(cfg.sim.nu) << "\n";
    out << "\n[service]\n";
    if (cfg.sim.service.is_exponential()) {
        out << "kind = exponential\n";
    } else {
        const auto& d = *cfg.sim.service.phase_type;
        out << "kind = phase_type\nr =";
        for (double v : d.initial) out << " " << fmt_g(v);
        out << "\ngamma =";
        for (double v : d.rate) out << " " << fmt_g(v);
        out << "\nR = ";
        for (int j = 1; j <= d.phase_count; ++j) {
            if (j > 1) out << " ; ";
            for (int k = 1; k <= d.phase_count; ++k) {
                if (k > 1) out << " ";
                out << fmt_g(d.transition_prob(j, k));
            }
        }
        out << "\n";
    }
    out << "\n[policy]\nkind = " << sim::to_string(cfg.sim.policy) << "\n";
    out << "\n[energy]\np_full = " << fmt_g(cfg.energy.p_full)
        << "\np_idle = " << fmt_g(cfg.energy.p_idle) << "\n";
    out << "\n[run]\n";
    out << "horizon = " << fmt_g(cfg.sim.horizon) << "\n";
    out << "sample_interval = " << fmt_g(cfg.sim.sample_interval) << "\n";
    out << "seed = " << cfg.sim.seed << "\n";
    out << "replications = " << cfg.replications << "\n";
    out << "warmup_fraction = " << fmt_g(cfg.warmup_fraction) << "\n";
    out << "dt = " << fmt_g(cfg.dt) << "\n";
    switch (cfg.sim.initial) {
    case sim::Initial::AllIdleOn: out << "initial = all_idle_on\n"; break;
    case sim::Initial::AllIdleOff: out << "initial = all_idle_off\n"; break;
    case sim::Initial::Fractions: {
        out << "initial = fractions\ninitial_q =";
        for (int i = 1; i <= cfg.sim.initial_fractions.buffer; ++i)
            out << " " << fmt_g(cfg.sim.initial_fractions.q_level(i));
        out << "\ninitial_delta0 = " << fmt_g(cfg.sim.initial_fractions.delta0) << "\n";
        out << "initial_delta1 = " << fmt_g(cfg.sim.initial_fractions.delta1) << "\n";
        break;
    }
    }
    if (cfg.sweep) {
        out << "\n[sweep]\nparameter = " << cfg.sweep->parameter << "\nvalues =";
        for (double v : cfg.sweep->values) out << " " << fmt_g(v);
        out << "\n";
    }
    return out.str();
}

std::string config_key_reference() {
    return
        "[system]   n_servers        server count N (integer >= 1)\n"
        "[system]   buffer           per-server buffer B in tasks (integer >= 1)\n"
        "[arrivals] kind             constant | sinusoid | table\n"
        "[arrivals] rate             constant: tasks per mean service time per server, in (0,1)\n"
        "[arrivals] base/amplitude   sinusoid: lambda(t) = base + amplitude*sin(t/period)\n"
        "[arrivals] period           sinusoid: angular period in mean service times\n"
        "[arrivals] times/rates      table: piecewise-constant steps (times start at 0)\n"
        "[timers]   mu               standby rate, 1 / mean standby period (> 0)\n"
        "[timers]   nu               setup rate, 1 / mean setup period (> 0)\n"
        "[service]  kind             exponential | phase_type (normalized to unit mean)\n"
        "[service]  r                phase_type: initial phase probabilities (sum 1)\n"
        "[service]  gamma            phase_type: per-phase rates (per mean service time)\n"
        "[service]  R                phase_type: transition rows 'a b ; c d' (zero diagonal)\n"
        "[policy]   kind             tabs | jiq | delayedoff\n"
        "[energy]   p_full           busy/setup draw in watts\n"
        "[energy]   p_idle           idle-on draw in watts (0 <= p_idle <= p_full)\n"
        "[run]      horizon          simulated time in mean service times (> 0)\n"
        "[run]      sample_interval  trace sampling spacing in mean service times (> 0)\n"
        "[run]      seed             64-bit base seed; replication k uses seed + k\n"
        "[run]      replications     independent runs to aggregate (>= 1)\n"
        "[run]      warmup_fraction  leading fraction of the horizon dropped from averages [0,1)\n"
        "[run]      dt               fluid integration step in mean service times (> 0)\n"
        "[run]      initial          all_idle_on | all_idle_off | fractions\n"
        "[run]      initial_q        fractions: q_1..q_B occupancy levels\n"
        "[run]      initial_delta0/1 fractions: idle-off and setup fractions\n"
        "[sweep]    parameter        mu_inverse | nu_inverse | n_servers | lambda\n"
        "[sweep]    values           list of values for the swept parameter\n";
}

} // namespace tabs::scenario
