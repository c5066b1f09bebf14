#pragma once

#include <cstdint>
#include <deque>
#include <optional>
#include <queue>
#include <string>
#include <vector>

#include "tabs/core.hpp"
#include "tabs/rng.hpp"

namespace tabs::sim {

enum class Policy { Tabs, Jiq, DelayedOff };

const char* to_string(Policy p);

enum class Initial { AllIdleOn, AllIdleOff, Fractions };

// Service-time law: unit exponential unless a phase-type spec is given
// (which is normalized to unit mean at construction).
struct ServiceSpec {
    std::optional<PhaseTypeService> phase_type;

    bool is_exponential() const { return !phase_type.has_value(); }
    int phases() const { return phase_type ? phase_type->phase_count : 1; }
};

struct SimConfig {
    int n_servers = 1;
    int buffer = 10;
    ArrivalProfile arrivals = ArrivalProfile::constant(0.3);
    double mu = 0.1; // standby rate
    double nu = 0.1; // setup rate
    ServiceSpec service;
    Policy policy = Policy::Tabs;
    double horizon = 250.0;
    double sample_interval = 1.0;
    std::uint64_t seed = 1;
    Initial initial = Initial::AllIdleOn;
    FluidState initial_fractions; // used when initial == Fractions
    // Re-verify ledger/count invariants after every event (slow; tests only).
    bool paranoid_checks = false;

    std::vector<std::string> validate() const;
};

struct TaskRecord {
    double arrival = 0.0;
    double start = -1.0;     // < 0: never started within the horizon
    double departure = -1.0; // < 0: still in the system at the horizon
    int server = -1;
    bool dropped = false;

    bool served() const { return !dropped && start >= 0.0; }
    double wait() const { return start - arrival; }
};

struct TraceSample {
    double t = 0.0;
    FluidState fluid; // counts / N; phase-resolved for phase-type runs
    double u = 0.0;
    std::uint64_t arrivals = 0;
    std::uint64_t departures = 0;
    std::uint64_t drops = 0;
    std::uint64_t msgs_green = 0;
    std::uint64_t msgs_red = 0;
    std::uint64_t setups = 0;
};

struct SimResult {
    std::vector<TraceSample> samples;
    std::vector<TaskRecord> tasks;
    std::uint64_t arrivals = 0;
    std::uint64_t departures = 0;
    std::uint64_t drops = 0;
    std::uint64_t msgs_green = 0;
    std::uint64_t msgs_red = 0;
    std::uint64_t setups = 0;
};

// Event calendar entry. Ties at equal times break by kind priority in the
// declared order, then by ascending server id.
enum class EventKind : std::uint8_t {
    Departure = 0,
    PhaseJump = 1,
    SetupComplete = 2,
    StandbyExpiry = 3,
    Arrival = 4,
    Sample = 5,
};

struct Event {
    double time = 0.0;
    EventKind kind = EventKind::Arrival;
    int server = -1;
    std::uint64_t tag = 0; // epoch for lazily cancelled timers
};

struct EventAfter {
    bool operator()(const Event& a, const Event& b) const {
        if (a.time != b.time) return a.time > b.time;
        if (a.kind != b.kind) return a.kind > b.kind;
        return a.server > b.server;
    }
};

using EventSchedule = std::priority_queue<Event, std::vector<Event>, EventAfter>;

// Token-based simulator covering the TABS scheme and its always-on (JIQ)
// variant. Event handlers are public so tests can drive single transitions;
// run() replays the full seeded schedule.
class TabsSimulator {
public:
    explicit TabsSimulator(const SimConfig& cfg);

    SimResult run();

    // Dispatch one arriving task at time t: to a uniformly random green
    // server if any, otherwise to a uniformly random busy server (dropped if
    // that queue is full, or if no busy server exists either), in which case
    // one red server (if any) starts its setup.
    void dispatch_arrival(double t);
    // Service completion at a busy server.
    void complete_service(int server, double t);
    // Phase transition of the task in service (phase-type runs).
    void phase_jump(int server, double t);
    // Standby timer fired: the server turns off unless the tag is stale.
    void standby_expiry(int server, std::uint64_t tag, double t);
    // Setup finished: idle-on with a fresh standby timer.
    void setup_complete(int server, double t);
    void take_sample(double t);

    const DispatcherLedger& ledger() const { return ledger_; }
    Mode mode(int server) const { return mode_[server]; }
    int queue_len(int server) const { return queue_len_[server]; }
    const SimResult& result() const { return result_; }

    // Count/ledger invariant violations; empty when consistent.
    std::vector<std::string> check_invariants() const;

private:
    void seed_initial_state();
    void assign_to_idle(int server, double t, int task);
    // Draws the initial phase (1 for exponential service) and schedules the
    // service-progress event; returns the phase.
    int begin_service(int server, double t);
    void finish_task(int server, double t);
    void schedule_standby(int server, double t);
    void schedule_next_arrival(double t);
    void inc_level(int level, int phase);
    void dec_level(int level, int phase);

    SimConfig cfg_;
    Rng rng_;
    DispatcherLedger ledger_;
    std::vector<Mode> mode_;
    std::vector<int> queue_len_;
    std::vector<int> phase_; // 0 when not busy (phase-type runs only)
    std::vector<std::uint64_t> standby_epoch_;
    std::vector<std::deque<int>> fifo_; // waiting + in-service task ids per server
    std::vector<std::uint64_t> level_counts_; // (buffer x phases) servers with >= i tasks in phase j
    EventSchedule schedule_;
    SimResult result_;
    bool standby_enabled_ = true;
    double now_ = 0.0;
};

// M/M/N/setup/delayedoff baseline: a central FCFS queue, idle servers turn
// off after Exp(mu), waiting tasks trigger cancellable setups.
SimResult run_delayedoff(const SimConfig& cfg);

SimResult run_simulation(const SimConfig& cfg);

// One service duration (exponential or full phase-type sojourn).
double sample_service_duration(const ServiceSpec& service, Rng& rng);

} // namespace tabs::sim
