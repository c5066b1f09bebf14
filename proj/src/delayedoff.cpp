#include "tabs/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace tabs::sim {

namespace {

// M/M/N/setup/delayedoff: one central FCFS queue in front of N servers.
// Arrivals that find an idle-on server start service immediately; otherwise
// they wait, and an off server (if any) begins a setup on their behalf. A
// service completion hands the freed server to the head of the queue and
// cancels one running setup unless some waiting task has none, in which case
// the setup is re-associated (FIFO) to that task. Idle servers turn off
// after Exp(mu) without an assignment.
class DelayedOffSimulator {
public:
    explicit DelayedOffSimulator(const SimConfig& cfg) : cfg_(cfg), rng_(cfg.seed) {
        auto errors = cfg_.validate();
        if (!errors.empty()) throw std::invalid_argument("invalid config: " + errors.front());
        if (cfg_.initial == Initial::Fractions)
            throw std::invalid_argument(
                "the delayedoff baseline supports all-idle-on and all-idle-off starts");
        const int n = cfg_.n_servers;
        idle_on_.reset(n);
        idle_off_.reset(n);
        busy_.reset(n);
        setup_.reset(n);
        serving_.assign(n, -1);
        off_epoch_.assign(n, 0);
        setup_epoch_.assign(n, 0);
        if (cfg_.initial == Initial::AllIdleOn) {
            for (int s = 0; s < n; ++s) {
                idle_on_.insert(s);
                schedule_off_timer(s, 0.0);
            }
        } else {
            for (int s = 0; s < n; ++s) idle_off_.insert(s);
        }
    }

    SimResult run() {
        const long long n_samples =
            static_cast<long long>(std::floor(cfg_.horizon / cfg_.sample_interval + 1e-9));
        for (long long k = 0; k <= n_samples; ++k)
            schedule_.push(
                {static_cast<double>(k) * cfg_.sample_interval, EventKind::Sample, -1, 0});
        schedule_next_arrival(0.0);

        const bool thinning = !cfg_.arrivals.is_constant();
        while (!schedule_.empty()) {
            const Event e = schedule_.top();
            schedule_.pop();
            if (e.time > cfg_.horizon) break;
            switch (e.kind) {
            case EventKind::Arrival: {
                bool accept = true;
                if (thinning)
                    accept = rng_.uniform() * cfg_.arrivals.sup() < cfg_.arrivals.at(e.time);
                if (accept) on_arrival(e.time);
                schedule_next_arrival(e.time);
                break;
            }
            case EventKind::Departure:
                on_departure(e.server, e.time);
                break;
            case EventKind::SetupComplete:
                on_setup_complete(e.server, e.tag, e.time);
                break;
            case EventKind::StandbyExpiry:
                on_off_timer(e.server, e.tag);
                break;
            case EventKind::Sample:
                take_sample(e.time);
                break;
            case EventKind::PhaseJump:
                throw std::logic_error("phase events do not occur in the delayedoff baseline");
            }
            if (cfg_.paranoid_checks) {
                auto violations = check_invariants();
                if (!violations.empty())
                    throw std::logic_error("invariant violated at t=" + std::to_string(e.time) +
                                           ": " + violations.front());
            }
        }
        return std::move(result_);
    }

private:
    struct Waiting {
        int task;
        bool flagged; // a setup is running on this task's behalf
    };

    void schedule_next_arrival(double t) {
        const double rate = static_cast<double>(cfg_.n_servers) * cfg_.arrivals.sup();
        schedule_.push({t + rng_.exponential(rate), EventKind::Arrival, -1, 0});
    }

    void schedule_off_timer(int s, double t) {
        const std::uint64_t tag = ++off_epoch_[s];
        schedule_.push({t + rng_.exponential(cfg_.mu), EventKind::StandbyExpiry, s, tag});
    }

    void serve(int s, int task, double t) {
        busy_.insert(s);
        serving_[s] = task;
        result_.tasks[task].start = t;
        result_.tasks[task].server = s;
        schedule_.push({t + rng_.exponential(1.0), EventKind::Departure, s, 0});
    }

    void on_arrival(double t) {
        ++result_.arrivals;
        const int task = static_cast<int>(result_.tasks.size());
        TaskRecord record;
        record.arrival = t;
        result_.tasks.push_back(record);

        if (!idle_on_.empty()) {
            const int s = idle_on_.pick(rng_);
            idle_on_.erase(s);
            ++off_epoch_[s]; // cancel the off timer
            serve(s, task, t);
            return;
        }
        bool flagged = false;
        if (!idle_off_.empty()) {
            const int s = idle_off_.pick(rng_);
            idle_off_.erase(s);
            setup_.insert(s);
            setup_order_.push_back(s);
            const std::uint64_t tag = ++setup_epoch_[s];
            schedule_.push({t + rng_.exponential(cfg_.nu), EventKind::SetupComplete, s, tag});
            ++result_.setups;
            flagged = true;
            ++n_flagged_;
        }
        queue_.push_back({task, flagged});
    }

    void on_departure(int s, double t) {
        result_.tasks[serving_[s]].departure = t;
        serving_[s] = -1;
        busy_.erase(s);
        ++result_.departures;

        if (!queue_.empty()) {
            const Waiting head = queue_.front();
            queue_.pop_front();
            serve(s, head.task, t);
            if (head.flagged) {
                --n_flagged_;
                if (n_flagged_ < queue_.size()) {
                    // a waiting task without a setup inherits the head's
                    queue_[n_flagged_].flagged = true;
                    ++n_flagged_;
                } else {
                    // everyone waiting already has a setup; cancel the one
                    // started for the served task (oldest running setup)
                    const int sid = setup_order_.front();
                    setup_order_.pop_front();
                    ++setup_epoch_[sid];
                    setup_.erase(sid);
                    idle_off_.insert(sid);
                }
            }
            return;
        }
        idle_on_.insert(s);
        schedule_off_timer(s, t);
    }

    void on_setup_complete(int s, std::uint64_t tag, double t) {
        if (tag != setup_epoch_[s]) return; // cancelled
        setup_.erase(s);
        setup_order_.erase(std::find(setup_order_.begin(), setup_order_.end(), s));
        if (queue_.empty()) {
            // a setup only runs while its task waits; defensively idle the server
            idle_on_.insert(s);
            schedule_off_timer(s, t);
            return;
        }
        const Waiting head = queue_.front();
        queue_.pop_front();
        if (!head.flagged)
            throw std::logic_error("a setup completed while the queue head had none pending");
        --n_flagged_;
        serve(s, head.task, t);
    }

    void on_off_timer(int s, std::uint64_t tag) {
        if (tag != off_epoch_[s]) return;
        idle_on_.erase(s);
        idle_off_.insert(s);
    }

    void take_sample(double t) {
        const int n = cfg_.n_servers;
        TraceSample sample;
        sample.t = t;
        sample.fluid = FluidState(cfg_.buffer, 1);
        sample.fluid.q_ref(1) = static_cast<double>(busy_.size()) / n;
        sample.fluid.delta0 = static_cast<double>(idle_off_.size()) / n;
        sample.fluid.delta1 = static_cast<double>(setup_.size()) / n;
        sample.u = static_cast<double>(idle_on_.size()) / n;
        sample.arrivals = result_.arrivals;
        sample.departures = result_.departures;
        sample.drops = result_.drops;
        sample.setups = result_.setups;
        result_.samples.push_back(std::move(sample));
    }

    std::vector<std::string> check_invariants() const {
        std::vector<std::string> out;
        if (idle_on_.size() + idle_off_.size() + busy_.size() + setup_.size() != cfg_.n_servers)
            out.push_back("server sets do not partition the cluster");
        if (static_cast<std::size_t>(setup_.size()) != n_flagged_ ||
            setup_order_.size() != n_flagged_)
            out.push_back("setup count disagrees with flagged waiting tasks");
        if (n_flagged_ > queue_.size()) out.push_back("more setups than waiting tasks");
        for (std::size_t i = 0; i < queue_.size(); ++i)
            if (queue_[i].flagged != (i < n_flagged_)) {
                out.push_back("flagged tasks are not a prefix of the queue");
                break;
            }
        if (!queue_.empty() && !idle_on_.empty())
            out.push_back("tasks wait while a server idles");
        return out;
    }

    SimConfig cfg_;
    Rng rng_;
    IndexedSet idle_on_, idle_off_, busy_, setup_;
    std::vector<int> serving_;
    std::vector<std::uint64_t> off_epoch_, setup_epoch_;
    std::deque<Waiting> queue_;
    std::deque<int> setup_order_;
    std::size_t n_flagged_ = 0;
    EventSchedule schedule_;
    SimResult result_;
};

} // namespace

SimResult run_delayedoff(const SimConfig& cfg) {
    DelayedOffSimulator sim(cfg);
    return sim.run();
}

} // namespace tabs::sim
