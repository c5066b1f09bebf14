#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>
#include <tuple>

#include "tabs/csv.hpp"
#include "tabs/metrics.hpp"
#include "tabs/simulate.hpp"

using namespace tabs;
using namespace tabs::sim;

namespace {

SimConfig small_config() {
    SimConfig cfg;
    cfg.n_servers = 4;
    cfg.buffer = 2;
    cfg.arrivals = ArrivalProfile::constant(0.4);
    cfg.mu = 0.5;
    cfg.nu = 0.8;
    cfg.horizon = 10.0;
    cfg.sample_interval = 1.0;
    cfg.seed = 5;
    return cfg;
}

// ---- exact stationary distribution of the token protocol for small N ----
//
// With exponential service and buffer 2 the cluster state reduces to
// (n1, n2, on, off, su): busy servers, servers with a queued task, idle-on,
// idle-off and in-setup counts. The test solves pi Q = 0 directly and the
// simulator's long-run averages must agree. This is the independent oracle
// for the dispatch/standby/setup machinery.
struct ExactMarginals {
    double q1, q2, delta0, delta1, u;
};

ExactMarginals exact_tabs_marginals(int N, double lam, double mu, double nu) {
    using State = std::tuple<int, int, int, int>; // n1, n2, off, su (on is implied)
    std::map<State, int> index;
    std::vector<State> states;
    for (int n1 = 0; n1 <= N; ++n1)
        for (int n2 = 0; n2 <= n1; ++n2)
            for (int off = 0; n1 + off <= N; ++off)
                for (int su = 0; n1 + off + su <= N; ++su) {
                    index[{n1, n2, off, su}] = static_cast<int>(states.size());
                    states.push_back({n1, n2, off, su});
                }
    const int n = static_cast<int>(states.size());
    std::vector<double> Q(static_cast<std::size_t>(n) * n, 0.0);
    auto rate = [&](int from, State to, double r) {
        if (r <= 0.0) return;
        const int j = index.at(to);
        if (j == from) return;
        Q[static_cast<std::size_t>(from) * n + j] += r;
        Q[static_cast<std::size_t>(from) * n + from] -= r;
    };
    const double arrival = lam * N;
    for (int i = 0; i < n; ++i) {
        auto [n1, n2, off, su] = states[i];
        const int on = N - n1 - off - su;
        if (on > 0) {
            rate(i, {n1 + 1, n2, off, su}, arrival);
        } else {
            // no idle-on server: the task goes to a uniformly random busy
            // server (or is dropped), and one off server starts its setup
            const int off2 = off > 0 ? off - 1 : 0;
            const int su2 = off > 0 ? su + 1 : su;
            if (n1 > 0) {
                rate(i, {n1, n2 + 1, off2, su2}, arrival * (n1 - n2) / n1);
                rate(i, {n1, n2, off2, su2}, arrival * n2 / n1); // full queue: drop
            } else {
                rate(i, {n1, n2, off2, su2}, arrival); // nothing on: drop
            }
        }
        rate(i, {n1 - 1, n2, off, su}, static_cast<double>(n1 - n2)); // empties
        rate(i, {n1, n2 - 1, off, su}, static_cast<double>(n2));      // keeps one task
        rate(i, {n1, n2, off + 1, su}, mu * on);
        if (su > 0) rate(i, {n1, n2, off, su - 1}, nu * su);
    }
    // solve pi Q = 0 with normalization (replace the last column)
    std::vector<double> a(static_cast<std::size_t>(n) * n, 0.0);
    std::vector<double> b(n, 0.0);
    for (int row = 0; row < n; ++row)
        for (int col = 0; col < n; ++col)
            a[static_cast<std::size_t>(row) * n + col] = Q[static_cast<std::size_t>(col) * n + row];
    for (int col = 0; col < n; ++col) a[static_cast<std::size_t>(n - 1) * n + col] = 1.0;
    b[n - 1] = 1.0;
    for (int col = 0; col < n; ++col) {
        int pivot = col;
        for (int row = col + 1; row < n; ++row)
            if (std::abs(a[static_cast<std::size_t>(row) * n + col]) >
                std::abs(a[static_cast<std::size_t>(pivot) * n + col]))
                pivot = row;
        REQUIRE(std::abs(a[static_cast<std::size_t>(pivot) * n + col]) > 1e-12);
        if (pivot != col) {
            for (int k = 0; k < n; ++k)
                std::swap(a[static_cast<std::size_t>(pivot) * n + k],
                          a[static_cast<std::size_t>(col) * n + k]);
            std::swap(b[pivot], b[col]);
        }
        for (int row = col + 1; row < n; ++row) {
            const double f = a[static_cast<std::size_t>(row) * n + col] /
                             a[static_cast<std::size_t>(col) * n + col];
            if (f == 0.0) continue;
            for (int k = col; k < n; ++k)
                a[static_cast<std::size_t>(row) * n + k] -=
                    f * a[static_cast<std::size_t>(col) * n + k];
            b[row] -= f * b[col];
        }
    }
    std::vector<double> pi(n, 0.0);
    for (int row = n - 1; row >= 0; --row) {
        double v = b[row];
        for (int k = row + 1; k < n; ++k) v -= a[static_cast<std::size_t>(row) * n + k] * pi[k];
        pi[row] = v / a[static_cast<std::size_t>(row) * n + row];
    }
    ExactMarginals m{0, 0, 0, 0, 0};
    for (int i = 0; i < n; ++i) {
        auto [n1, n2, off, su] = states[i];
        const int on = N - n1 - off - su;
        m.q1 += pi[i] * n1;
        m.q2 += pi[i] * n2;
        m.delta0 += pi[i] * off;
        m.delta1 += pi[i] * su;
        m.u += pi[i] * on;
    }
    m.q1 /= N;
    m.q2 /= N;
    m.delta0 /= N;
    m.delta1 /= N;
    m.u /= N;
    return m;
}

} // namespace

TEST_CASE("an arrival with idle-on servers takes a green token") {
    SimConfig cfg = small_config();
    cfg.n_servers = 2;
    TabsSimulator sim(cfg);
    CHECK(sim.ledger().green.size() == 2);
    sim.dispatch_arrival(0.01);
    CHECK(sim.ledger().green.size() == 1);
    CHECK(sim.ledger().yellow.size() == 1);
    sim.take_sample(0.01);
    const auto& sample = sim.result().samples.back();
    CHECK(sample.fluid.q_level(1) == 0.5);
    CHECK(sample.u == 0.5);
    CHECK(sim.check_invariants().empty());
}

TEST_CASE("a lone server drifts off when nothing arrives") {
    SimConfig cfg = small_config();
    cfg.n_servers = 1;
    cfg.buffer = 10;
    cfg.arrivals = ArrivalProfile::constant(0.05);
    cfg.mu = 1e6; // standby fires long before any plausible arrival
    cfg.horizon = 0.01;
    cfg.sample_interval = 0.01;
    cfg.seed = 3;
    SimResult result = run_simulation(cfg);
    CHECK(result.arrivals == 0);
    CHECK(result.msgs_green == 1); // the initial token
    CHECK(result.msgs_red == 1);   // the standby expiry
    CHECK(result.samples.back().fluid.delta0 == 1.0);
}

TEST_CASE("arrivals without green tokens go to busy servers and trigger setups") {
    SimConfig cfg = small_config();
    cfg.n_servers = 3;
    cfg.initial = Initial::AllIdleOff;
    TabsSimulator sim(cfg);

    // nothing on at all: the task is lost but one setup still starts
    sim.dispatch_arrival(0.1);
    CHECK(sim.result().drops == 1);
    CHECK(sim.result().setups == 1);
    CHECK(sim.ledger().orange.size() == 1);
    CHECK(sim.ledger().red.size() == 2);

    // bring that server up, fill it to the buffer, then overflow
    int s = sim.ledger().orange.items()[0];
    sim.setup_complete(s, 0.2);
    CHECK(sim.ledger().green.size() == 1);
    sim.dispatch_arrival(0.3); // takes the green token
    CHECK(sim.queue_len(s) == 1);
    sim.dispatch_arrival(0.4); // no green: queued at the only busy server
    CHECK(sim.queue_len(s) == 2);
    CHECK(sim.result().setups == 2);
    const auto drops_before = sim.result().drops;
    sim.dispatch_arrival(0.5); // buffer is 2: dropped, and the last red starts up
    CHECK(sim.result().drops == drops_before + 1);
    CHECK(sim.result().setups == 3);
    CHECK(sim.ledger().red.size() == 0);
    CHECK(sim.check_invariants().empty());
}

TEST_CASE("stale standby timers are ignored") {
    SimConfig cfg = small_config();
    cfg.n_servers = 1;
    TabsSimulator sim(cfg);
    sim.dispatch_arrival(0.1); // cancels the pending timer by epoch bump
    CHECK(sim.mode(0) == Mode::Busy);
    sim.standby_expiry(0, 1, 0.2); // the stale tag from construction
    CHECK(sim.mode(0) == Mode::Busy);
    CHECK(sim.result().msgs_red == 0);
}

TEST_CASE("setup completion hands out a green token and a fresh timer") {
    SimConfig cfg = small_config();
    cfg.n_servers = 2;
    cfg.initial = Initial::AllIdleOff;
    TabsSimulator sim(cfg);
    sim.dispatch_arrival(0.1);
    const int s = sim.ledger().orange.items()[0];
    sim.setup_complete(s, 0.5);
    CHECK(sim.mode(s) == Mode::IdleOn);
    CHECK(sim.ledger().green.contains(s));
    sim.dispatch_arrival(0.6);
    CHECK(sim.mode(s) == Mode::Busy); // the only green server gets the task
}

TEST_CASE("jiq never turns servers off") {
    SimConfig cfg = small_config();
    cfg.n_servers = 50;
    cfg.policy = Policy::Jiq;
    cfg.horizon = 200.0;
    cfg.paranoid_checks = true;
    SimResult result = run_simulation(cfg);
    for (const auto& s : result.samples) {
        CHECK(s.fluid.delta0 == 0.0);
        CHECK(s.fluid.delta1 == 0.0);
    }
    CHECK(result.msgs_red == 0);
    CHECK(result.setups == 0);
}

TEST_CASE("identical configurations replay identical traces") {
    SimConfig cfg = small_config();
    cfg.n_servers = 30;
    cfg.horizon = 100.0;
    SimResult a = run_simulation(cfg);
    SimResult b = run_simulation(cfg);
    REQUIRE(a.samples.size() == b.samples.size());
    for (std::size_t k = 0; k < a.samples.size(); ++k)
        CHECK(csv::trace_row(a.samples[k], cfg.buffer) == csv::trace_row(b.samples[k], cfg.buffer));
    REQUIRE(a.tasks.size() == b.tasks.size());
    for (std::size_t k = 0; k < a.tasks.size(); ++k)
        CHECK(csv::task_row(a.tasks[k]) == csv::task_row(b.tasks[k]));

    cfg.seed += 1;
    SimResult c = run_simulation(cfg);
    CHECK(c.arrivals != a.arrivals); // different seed, different trace
}

TEST_CASE("event invariants hold throughout paranoid runs") {
    for (Initial initial : {Initial::AllIdleOn, Initial::AllIdleOff}) {
        SimConfig cfg = small_config();
        cfg.n_servers = 25;
        cfg.buffer = 3;
        cfg.horizon = 150.0;
        cfg.initial = initial;
        cfg.paranoid_checks = true;
        CHECK_NOTHROW(run_simulation(cfg));
    }
    SUBCASE("with phase-type service") {
        SimConfig cfg = small_config();
        cfg.n_servers = 25;
        cfg.horizon = 120.0;
        cfg.service.phase_type = PhaseTypeService::hyperexponential({0.75, 0.25}, {2.0, 0.4});
        cfg.paranoid_checks = true;
        SimResult result = run_simulation(cfg);
        CHECK(result.arrivals > 0);
    }
    SUBCASE("with a fractions start") {
        SimConfig cfg = small_config();
        cfg.n_servers = 40;
        cfg.buffer = 4;
        cfg.initial = Initial::Fractions;
        cfg.initial_fractions = FluidState::scalar({0.5, 0.25, 0.1, 0.0}, 0.2, 0.1);
        cfg.horizon = 100.0;
        cfg.paranoid_checks = true;
        SimResult result = run_simulation(cfg);
        CHECK(result.samples.front().fluid.q_level(1) == 0.5);
        CHECK(result.samples.front().fluid.delta0 == doctest::Approx(0.2));
    }
    SUBCASE("with a sinusoidal arrival rate") {
        SimConfig cfg = small_config();
        cfg.n_servers = 30;
        cfg.arrivals = ArrivalProfile::sinusoid(0.3, 0.2, 10.0);
        cfg.horizon = 150.0;
        cfg.paranoid_checks = true;
        CHECK_NOTHROW(run_simulation(cfg));
    }
}

TEST_CASE("message budget: at most two tokens per task plus the fleet") {
    Rng seeds(1234);
    for (int trial = 0; trial < 6; ++trial) {
        SimConfig cfg = small_config();
        cfg.n_servers = 10 + static_cast<int>(seeds.below(60));
        cfg.arrivals = ArrivalProfile::constant(0.1 + 0.8 * seeds.uniform());
        cfg.mu = 0.05 + 2.0 * seeds.uniform();
        cfg.nu = 0.05 + 2.0 * seeds.uniform();
        cfg.horizon = 120.0;
        cfg.seed = seeds.next();
        cfg.initial = trial % 2 ? Initial::AllIdleOff : Initial::AllIdleOn;
        SimResult result = run_simulation(cfg);
        CHECK(result.msgs_green + result.msgs_red <=
              2 * result.arrivals + 2 * static_cast<std::uint64_t>(cfg.n_servers));
        CHECK(result.departures + result.drops <= result.arrivals);
    }
}

TEST_CASE("long-run occupancy matches the exact chain") {
    SimConfig cfg = small_config();
    cfg.horizon = 40000.0;
    cfg.sample_interval = 1.0;
    auto check_point = [&](double lam, double mu, double nu, std::uint64_t seed) {
        cfg.arrivals = ArrivalProfile::constant(lam);
        cfg.mu = mu;
        cfg.nu = nu;
        cfg.seed = seed;
        const ExactMarginals exact = exact_tabs_marginals(cfg.n_servers, lam, mu, nu);
        SimResult result = run_simulation(cfg);
        auto est = metrics::stationary_estimate(result.samples, 4000.0);
        CHECK(est.mean.q_level(1) == doctest::Approx(exact.q1).epsilon(0.03));
        CHECK(std::abs(est.mean.q_level(2) - exact.q2) <= 0.01);
        CHECK(std::abs(est.mean.delta0 - exact.delta0) <= 0.02);
        CHECK(std::abs(est.mean.delta1 - exact.delta1) <= 0.01);
        CHECK(std::abs(est.u_mean - exact.u) <= 0.02);
    };
    check_point(0.4, 0.5, 0.8, 11);
    check_point(0.7, 0.2, 0.3, 12);
}

TEST_CASE("service sampling") {
    SUBCASE("unit exponential mean") {
        Rng rng(2024);
        ServiceSpec spec;
        double total = 0.0;
        const int n = 1000000;
        for (int i = 0; i < n; ++i) total += sample_service_duration(spec, rng);
        CHECK(total / n == doctest::Approx(1.0).epsilon(0.01));
    }
    SUBCASE("hyper-exponential mean and second moment") {
        Rng rng(2025);
        ServiceSpec spec;
        spec.phase_type = PhaseTypeService::hyperexponential({0.75, 0.25}, {2.0, 0.4});
        double total = 0.0, total_sq = 0.0;
        const int n = 1000000;
        for (int i = 0; i < n; ++i) {
            const double s = sample_service_duration(spec, rng);
            total += s;
            total_sq += s * s;
        }
        const double mean = total / n;
        CHECK(mean == doctest::Approx(1.0).epsilon(0.01));
        // E[S^2] = 2 (0.75 / 4 + 0.25 / 0.16) = 3.5, so the variance is 2.5
        CHECK(total_sq / n - mean * mean == doctest::Approx(2.5).epsilon(0.05));
    }
    SUBCASE("two-stage routing is deterministic") {
        auto erlang = PhaseTypeService::erlang(2);
        Rng rng(7);
        std::vector<double> row1{erlang.exit_prob(1), erlang.transition_prob(1, 1),
                                 erlang.transition_prob(1, 2)};
        std::vector<double> row2{erlang.exit_prob(2), erlang.transition_prob(2, 1),
                                 erlang.transition_prob(2, 2)};
        for (int i = 0; i < 50; ++i) {
            CHECK(rng.categorical(erlang.initial) == 0);  // always starts in phase 1
            CHECK(rng.categorical(row1) == 2);            // then moves to phase 2
            CHECK(rng.categorical(row2) == 0);            // then completes
        }
    }
}
