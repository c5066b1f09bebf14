#include "tabs/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace tabs::sim {

const char* to_string(Policy p) {
    switch (p) {
    case Policy::Tabs: return "tabs";
    case Policy::Jiq: return "jiq";
    case Policy::DelayedOff: return "delayedoff";
    }
    return "?";
}

std::vector<std::string> SimConfig::validate() const {
    std::vector<std::string> out;
    if (n_servers < 1) out.push_back("n_servers must be at least 1");
    if (buffer < 1) out.push_back("buffer must be at least 1");
    if (!(mu > 0.0)) out.push_back("standby rate must be positive");
    if (!(nu > 0.0)) out.push_back("setup rate must be positive");
    if (!(horizon > 0.0)) out.push_back("horizon must be positive");
    if (!(sample_interval > 0.0)) out.push_back("sample_interval must be positive");
    if (policy == Policy::DelayedOff && !service.is_exponential())
        out.push_back("the delayedoff baseline is defined for exponential service only");
    if (initial == Initial::Fractions) {
        auto violations = validate_fluid_state(initial_fractions);
        for (auto& v : violations) out.push_back("initial fractions: " + v);
        if (violations.empty() && n_servers >= 1) {
            const double n = n_servers;
            long long busy = std::llround(initial_fractions.q_level(1) * n);
            long long off = std::llround(initial_fractions.delta0 * n);
            long long setup = std::llround(initial_fractions.delta1 * n);
            if (busy + off + setup > n_servers)
                out.push_back("initial fractions round to more than n_servers servers");
        }
    }
    return out;
}

double sample_service_duration(const ServiceSpec& service, Rng& rng) {
    if (service.is_exponential()) return rng.exponential(1.0);
    const PhaseTypeService& d = *service.phase_type;
    double total = 0.0;
    std::vector<double> row(d.phase_count + 1);
    int j = 1 + rng.categorical(d.initial);
    for (;;) {
        total += rng.exponential(d.rate[j - 1]);
        row[0] = d.exit_prob(j);
        for (int k = 1; k <= d.phase_count; ++k) row[k] = d.transition_prob(j, k);
        const int next = rng.categorical(row);
        if (next == 0) return total;
        j = next;
    }
}

TabsSimulator::TabsSimulator(const SimConfig& cfg)
    : cfg_(cfg), rng_(cfg.seed), standby_enabled_(cfg.policy != Policy::Jiq) {
    auto errors = cfg_.validate();
    if (!errors.empty()) throw std::invalid_argument("invalid config: " + errors.front());
    if (cfg_.policy == Policy::DelayedOff)
        throw std::invalid_argument("use run_delayedoff for the centralized baseline");
    seed_initial_state();
}

void TabsSimulator::seed_initial_state() {
    const int n = cfg_.n_servers;
    const int phases = cfg_.service.phases();
    ledger_.reset(n);
    mode_.assign(n, Mode::IdleOn);
    queue_len_.assign(n, 0);
    phase_.assign(n, 0);
    standby_epoch_.assign(n, 0);
    fifo_.assign(n, {});
    level_counts_.assign(static_cast<std::size_t>(cfg_.buffer) * phases, 0);

    auto make_idle_on = [&](int s) {
        mode_[s] = Mode::IdleOn;
        ledger_.green.insert(s);
        ++result_.msgs_green;
        schedule_standby(s, 0.0);
    };
    auto make_idle_off = [&](int s) {
        mode_[s] = Mode::IdleOff;
        ledger_.red.insert(s);
        ++result_.msgs_red;
    };

    switch (cfg_.initial) {
    case Initial::AllIdleOn:
        for (int s = 0; s < n; ++s) make_idle_on(s);
        break;
    case Initial::AllIdleOff:
        for (int s = 0; s < n; ++s) make_idle_off(s);
        break;
    case Initial::Fractions: {
        std::vector<long long> at_least(cfg_.buffer + 1, 0);
        for (int i = 1; i <= cfg_.buffer; ++i) {
            at_least[i] = std::llround(cfg_.initial_fractions.q_level(i) * n);
            if (i > 1) at_least[i] = std::min(at_least[i], at_least[i - 1]);
        }
        const long long busy = at_least[1];
        const long long off = std::llround(cfg_.initial_fractions.delta0 * n);
        const long long setup = std::llround(cfg_.initial_fractions.delta1 * n);
        int s = 0;
        for (; s < busy; ++s) {
            int len = 1;
            while (len < cfg_.buffer && s < at_least[len + 1]) ++len;
            mode_[s] = Mode::Busy;
            ledger_.yellow.insert(s);
            queue_len_[s] = len;
            // pre-existing work is counted as arrivals at time 0 so the
            // departure/arrival coupling stays consistent
            for (int k = 0; k < len; ++k) {
                TaskRecord task;
                task.arrival = 0.0;
                ++result_.arrivals;
                if (k == 0) {
                    task.start = 0.0;
                    task.server = s;
                }
                fifo_[s].push_back(static_cast<int>(result_.tasks.size()));
                result_.tasks.push_back(task);
            }
            const int j = begin_service(s, 0.0);
            for (int i = 1; i <= len; ++i) inc_level(i, j);
        }
        for (long long k = 0; k < off; ++k, ++s) make_idle_off(s);
        for (long long k = 0; k < setup; ++k, ++s) {
            mode_[s] = Mode::Setup;
            ledger_.orange.insert(s);
            schedule_.push({rng_.exponential(cfg_.nu), EventKind::SetupComplete, s, 0});
        }
        for (; s < n; ++s) make_idle_on(s);
        break;
    }
    }
}

void TabsSimulator::inc_level(int level, int phase) {
    ++level_counts_[static_cast<std::size_t>(level - 1) * cfg_.service.phases() + (phase - 1)];
}

void TabsSimulator::dec_level(int level, int phase) {
    --level_counts_[static_cast<std::size_t>(level - 1) * cfg_.service.phases() + (phase - 1)];
}

int TabsSimulator::begin_service(int server, double t) {
    if (cfg_.service.is_exponential()) {
        phase_[server] = 1;
        schedule_.push({t + rng_.exponential(1.0), EventKind::Departure, server, 0});
        return 1;
    }
    const PhaseTypeService& d = *cfg_.service.phase_type;
    const int j = 1 + rng_.categorical(d.initial);
    phase_[server] = j;
    schedule_.push({t + rng_.exponential(d.rate[j - 1]), EventKind::PhaseJump, server, 0});
    return j;
}

void TabsSimulator::schedule_standby(int server, double t) {
    if (!standby_enabled_) return;
    const std::uint64_t tag = ++standby_epoch_[server];
    schedule_.push({t + rng_.exponential(cfg_.mu), EventKind::StandbyExpiry, server, tag});
}

void TabsSimulator::schedule_next_arrival(double t) {
    const double rate = static_cast<double>(cfg_.n_servers) * cfg_.arrivals.sup();
    schedule_.push({t + rng_.exponential(rate), EventKind::Arrival, -1, 0});
}

void TabsSimulator::assign_to_idle(int server, double t, int task) {
    mode_[server] = Mode::Busy;
    ledger_.move(server, Mode::IdleOn, Mode::Busy);
    ++standby_epoch_[server]; // cancels the pending standby timer
    queue_len_[server] = 1;
    fifo_[server].push_back(task);
    result_.tasks[task].start = t;
    result_.tasks[task].server = server;
    const int j = begin_service(server, t);
    inc_level(1, j);
}

void TabsSimulator::dispatch_arrival(double t) {
    ++result_.arrivals;
    const int task = static_cast<int>(result_.tasks.size());
    TaskRecord record;
    record.arrival = t;
    result_.tasks.push_back(record);

    if (!ledger_.green.empty()) {
        assign_to_idle(ledger_.green.pick(rng_), t, task);
        return;
    }
    if (!ledger_.yellow.empty()) {
        const int s = ledger_.yellow.pick(rng_);
        if (queue_len_[s] >= cfg_.buffer) {
            result_.tasks[task].dropped = true;
            ++result_.drops;
        } else {
            ++queue_len_[s];
            inc_level(queue_len_[s], phase_[s]);
            fifo_[s].push_back(task);
        }
    } else {
        // no busy and no idle-on server: the task is lost
        result_.tasks[task].dropped = true;
        ++result_.drops;
    }
    // the arrival could not be served by an idle server, so one off server
    // (if any) starts its setup, even when the task itself was dropped
    if (!ledger_.red.empty()) {
        const int s = ledger_.red.pick(rng_);
        mode_[s] = Mode::Setup;
        ledger_.move(s, Mode::IdleOff, Mode::Setup);
        ++result_.setups;
        schedule_.push({t + rng_.exponential(cfg_.nu), EventKind::SetupComplete, s, 0});
    }
}

void TabsSimulator::finish_task(int server, double t) {
    const int j = phase_[server];
    const int task = fifo_[server].front();
    fifo_[server].pop_front();
    result_.tasks[task].departure = t;
    ++result_.departures;
    dec_level(queue_len_[server], j);
    --queue_len_[server];
    if (queue_len_[server] == 0) {
        phase_[server] = 0;
        mode_[server] = Mode::IdleOn;
        ledger_.move(server, Mode::Busy, Mode::IdleOn);
        ++result_.msgs_green;
        schedule_standby(server, t);
        return;
    }
    const int next = fifo_[server].front();
    result_.tasks[next].start = t;
    result_.tasks[next].server = server;
    const int j2 = begin_service(server, t);
    if (j2 != j)
        for (int i = 1; i <= queue_len_[server]; ++i) {
            dec_level(i, j);
            inc_level(i, j2);
        }
}

void TabsSimulator::complete_service(int server, double t) {
    if (mode_[server] != Mode::Busy)
        throw std::logic_error("departure for a non-busy server");
    finish_task(server, t);
}

void TabsSimulator::phase_jump(int server, double t) {
    if (mode_[server] != Mode::Busy)
        throw std::logic_error("phase event for a non-busy server");
    const PhaseTypeService& d = *cfg_.service.phase_type;
    const int j = phase_[server];
    std::vector<double> row(d.phase_count + 1);
    row[0] = d.exit_prob(j);
    for (int k = 1; k <= d.phase_count; ++k) row[k] = d.transition_prob(j, k);
    const int next = rng_.categorical(row);
    if (next == 0) {
        finish_task(server, t);
        return;
    }
    phase_[server] = next;
    for (int i = 1; i <= queue_len_[server]; ++i) {
        dec_level(i, j);
        inc_level(i, next);
    }
    schedule_.push({t + rng_.exponential(d.rate[next - 1]), EventKind::PhaseJump, server, 0});
}

void TabsSimulator::standby_expiry(int server, std::uint64_t tag, double) {
    if (tag != standby_epoch_[server]) return; // cancelled timer
    if (mode_[server] != Mode::IdleOn)
        throw std::logic_error("live standby timer on a non-idle-on server");
    ++standby_epoch_[server];
    mode_[server] = Mode::IdleOff;
    ledger_.move(server, Mode::IdleOn, Mode::IdleOff);
    ++result_.msgs_red;
}

void TabsSimulator::setup_complete(int server, double t) {
    if (mode_[server] != Mode::Setup)
        throw std::logic_error("setup completion for a server not in setup");
    mode_[server] = Mode::IdleOn;
    ledger_.move(server, Mode::Setup, Mode::IdleOn);
    ++result_.msgs_green;
    schedule_standby(server, t);
}

void TabsSimulator::take_sample(double t) {
    const int n = cfg_.n_servers;
    const int phases = cfg_.service.phases();
    TraceSample sample;
    sample.t = t;
    sample.fluid = FluidState(cfg_.buffer, phases);
    for (std::size_t k = 0; k < level_counts_.size(); ++k)
        sample.fluid.occupancy[k] = static_cast<double>(level_counts_[k]) / n;
    sample.fluid.delta0 = static_cast<double>(ledger_.red.size()) / n;
    sample.fluid.delta1 = static_cast<double>(ledger_.orange.size()) / n;
    sample.u = static_cast<double>(ledger_.green.size()) / n;
    sample.arrivals = result_.arrivals;
    sample.departures = result_.departures;
    sample.drops = result_.drops;
    sample.msgs_green = result_.msgs_green;
    sample.msgs_red = result_.msgs_red;
    sample.setups = result_.setups;
    result_.samples.push_back(std::move(sample));
}

std::vector<std::string> TabsSimulator::check_invariants() const {
    std::vector<std::string> out = ledger_.check_partition(mode_);
    const int n = cfg_.n_servers;
    const int phases = cfg_.service.phases();

    std::vector<std::uint64_t> expect(level_counts_.size(), 0);
    for (int s = 0; s < n; ++s) {
        const bool busy = mode_[s] == Mode::Busy;
        if (busy != (queue_len_[s] >= 1))
            out.push_back("server " + std::to_string(s) + " mode/queue mismatch");
        if (!cfg_.service.is_exponential() && busy != (phase_[s] >= 1))
            out.push_back("server " + std::to_string(s) + " mode/phase mismatch");
        for (int i = 1; i <= queue_len_[s]; ++i)
            ++expect[static_cast<std::size_t>(i - 1) * phases + (phase_[s] - 1)];
    }
    if (expect != level_counts_) out.push_back("occupancy counts drifted");

    std::uint64_t level1 = 0;
    for (int j = 0; j < phases; ++j) level1 += level_counts_[j];
    if (level1 != static_cast<std::uint64_t>(ledger_.yellow.size()))
        out.push_back("busy token count disagrees with occupancy");

    if (result_.msgs_green + result_.msgs_red >
        2 * result_.arrivals + 2 * static_cast<std::uint64_t>(n))
        out.push_back("message budget exceeded");
    if (result_.departures + result_.drops > result_.arrivals)
        out.push_back("more departures and drops than arrivals");
    return out;
}

SimResult TabsSimulator::run() {
    const long long n_samples =
        static_cast<long long>(std::floor(cfg_.horizon / cfg_.sample_interval + 1e-9));
    for (long long k = 0; k <= n_samples; ++k)
        schedule_.push({static_cast<double>(k) * cfg_.sample_interval, EventKind::Sample, -1, 0});
    schedule_next_arrival(0.0);

    const bool thinning = !cfg_.arrivals.is_constant();
    while (!schedule_.empty()) {
        const Event e = schedule_.top();
        schedule_.pop();
        if (e.time > cfg_.horizon) break;
        now_ = e.time;
        switch (e.kind) {
        case EventKind::Arrival: {
            bool accept = true;
            if (thinning)
                accept = rng_.uniform() * cfg_.arrivals.sup() < cfg_.arrivals.at(e.time);
            if (accept) dispatch_arrival(e.time);
            schedule_next_arrival(e.time);
            break;
        }
        case EventKind::Departure:
            complete_service(e.server, e.time);
            break;
        case EventKind::PhaseJump:
            phase_jump(e.server, e.time);
            break;
        case EventKind::StandbyExpiry:
            standby_expiry(e.server, e.tag, e.time);
            break;
        case EventKind::SetupComplete:
            setup_complete(e.server, e.time);
            break;
        case EventKind::Sample:
            take_sample(e.time);
            break;
        }
        if (cfg_.paranoid_checks) {
            auto violations = check_invariants();
            if (!violations.empty())
                throw std::logic_error("invariant violated after event at t=" +
                                       std::to_string(e.time) + ": " + violations.front());
        }
    }
    return std::move(result_);
}

SimResult run_simulation(const SimConfig& cfg) {
    if (cfg.policy == Policy::DelayedOff) return run_delayedoff(cfg);
    TabsSimulator sim(cfg);
    return sim.run();
}

} // namespace tabs::sim
