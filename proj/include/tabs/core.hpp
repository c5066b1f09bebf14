#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tabs/rng.hpp"

namespace tabs {

// Server operating modes. IdleOn is an empty server with a pending standby
// timer; Setup is an off server powering up.
enum class Mode : std::uint8_t { Busy, IdleOn, IdleOff, Setup };

const char* to_string(Mode m);

// Power draw per server: p_full when busy or in setup, p_idle when idle-on,
// zero when off.
struct EnergyParams {
    double p_full = 200.0; // watts
    double p_idle = 140.0; // watts

    double idle_ratio() const { return p_full > 0.0 ? p_idle / p_full : 0.0; }
    bool valid() const { return 0.0 <= p_idle && p_idle <= p_full; }
};

// Per-server arrival rate profile lambda(t), in tasks per mean service time.
// The simulator multiplies by the server count.
class ArrivalProfile {
public:
    enum class Kind { Constant, Sinusoid, Table };

    ArrivalProfile() = default; // a constant 0.3 profile

    static ArrivalProfile constant(double rate);
    // lambda(t) = base + amplitude * sin(t / period)
    static ArrivalProfile sinusoid(double base, double amplitude, double period);
    // Piecewise-constant steps (time, rate); first time must be 0.
    static ArrivalProfile table(std::vector<std::pair<double, double>> steps);

    double at(double t) const;
    // Supremum of the rate, used for thinning.
    double sup() const { return sup_; }
    // Representative rate: the constant value, the sinusoid base, or the
    // last table step.
    double nominal() const;

    Kind kind() const { return kind_; }
    bool is_constant() const { return kind_ == Kind::Constant; }
    double base() const { return base_; }
    double amplitude() const { return amplitude_; }
    double period() const { return period_; }
    const std::vector<std::pair<double, double>>& steps() const { return steps_; }

private:
    Kind kind_ = Kind::Constant;
    double base_ = 0.3;
    double amplitude_ = 0.0;
    double period_ = 1.0;
    double sup_ = 0.3;
    std::vector<std::pair<double, double>> steps_;
};

// A point of the fluid-scaled occupancy space E, or of its phase-type
// refinement when phases > 1. occupancy(i, j) is the fraction of servers
// with at least i tasks whose task in service is in phase j; delta0 and
// delta1 are the idle-off and setup fractions. The derived u is the idle-on
// fraction.
struct FluidState {
    int buffer = 0;
    int phases = 1;
    std::vector<double> occupancy; // row-major buffer x phases
    double delta0 = 0.0;
    double delta1 = 0.0;

    FluidState() = default;
    FluidState(int buffer_levels, int phase_count);
    static FluidState scalar(std::vector<double> q, double delta0, double delta1);

    double q(int level, int phase = 1) const {
        if (level > buffer) return 0.0;
        return occupancy[static_cast<std::size_t>(level - 1) * phases + (phase - 1)];
    }
    double& q_ref(int level, int phase = 1) {
        return occupancy[static_cast<std::size_t>(level - 1) * phases + (phase - 1)];
    }
    // Fraction of servers with at least `level` tasks, summed over phases.
    double q_level(int level) const;
    double busy_fraction() const { return q_level(1); }
    double idle_on() const { return 1.0 - busy_fraction() - delta0 - delta1; }
};

// Every violated membership condition of E (monotonicity, component ranges,
// simplex bound). Empty result means the state lies in E.
std::vector<std::string> validate_fluid_state(const FluidState& s);

// Nearest-point repair onto E: clamp components to [0,1], restore
// monotonicity by a cumulative min down the levels, then shrink
// (q, delta0, delta1) proportionally if their mass exceeds 1. Idempotent.
// Throws std::domain_error if the input is farther than `tolerance` from E
// (measured as the L-inf change the repair had to make).
FluidState project_to_E(const FluidState& s, double tolerance = 1e-6);

// Set of server ids with O(1) insert/erase/contains and O(1) uniform random
// pick, backed by a dense position index.
class IndexedSet {
public:
    IndexedSet() = default;
    explicit IndexedSet(int capacity) { reset(capacity); }

    void reset(int capacity);
    void insert(int id);
    void erase(int id);
    bool contains(int id) const { return pos_[id] >= 0; }
    int size() const { return static_cast<int>(items_.size()); }
    bool empty() const { return items_.empty(); }
    int pick(Rng& rng) const { return items_[rng.below(items_.size())]; }
    std::span<const int> items() const { return items_; }

private:
    std::vector<int> items_;
    std::vector<int> pos_;
};

// The dispatcher's token board. green/yellow/red/orange mirror the
// idle-on/busy/idle-off/setup server modes one-to-one (message transfer is
// instantaneous), so the four sets partition the server ids at all times.
struct DispatcherLedger {
    IndexedSet green;  // idle-on
    IndexedSet yellow; // busy
    IndexedSet red;    // idle-off
    IndexedSet orange; // setup

    DispatcherLedger() = default;
    explicit DispatcherLedger(int n_servers) { reset(n_servers); }

    void reset(int n_servers);
    IndexedSet& set_for(Mode m);
    const IndexedSet& set_for(Mode m) const;
    void move(int id, Mode from, Mode to);
    int total() const { return green.size() + yellow.size() + red.size() + orange.size(); }

    // Debug check: the sets must partition {0..n-1} and agree with the
    // per-server modes.
    std::vector<std::string> check_partition(std::span<const Mode> modes) const;
};

inline constexpr int kMaxPhases = 32;

// Phase-type service law: an absorbing continuous-time Markov chain on
// phases 1..K entered via the initial distribution r, jumping according to
// the row-substochastic matrix R at per-phase rates gamma, absorbed into
// state 0 with per-phase probability 1 - sum_k R[j][k]. `stationary` is the
// stationary law eta of the embedded jump chain including state 0.
struct PhaseTypeService {
    int phase_count = 1;
    std::vector<double> initial;    // r_j, size K
    std::vector<double> transition; // r_{j,k}, row-major K x K
    std::vector<double> rate;       // gamma_j, size K
    std::vector<double> stationary; // eta_0..eta_K, size K + 1

    double transition_prob(int j, int k) const {
        return transition[static_cast<std::size_t>(j - 1) * phase_count + (k - 1)];
    }
    double exit_prob(int j) const;

    // Validates and normalizes the rates so the service has unit mean.
    static PhaseTypeService make(std::vector<double> r, std::vector<double> R,
                                 std::vector<double> gamma);
    // Validates but keeps the rates as given (mean may differ from 1).
    static PhaseTypeService raw(std::vector<double> r, std::vector<double> R,
                                std::vector<double> gamma);

    static PhaseTypeService unit_exponential();
    // Mixture of exponentials: phase j with probability probs[j], rate rates[j].
    static PhaseTypeService hyperexponential(std::vector<double> probs,
                                             std::vector<double> rates);
    static PhaseTypeService erlang(int stages);
};

// Stationary distribution of the embedded jump chain (p_{0,j} = r_j,
// p_{j,k} = R[j][k], absorption re-enters through r). Solved by a dense
// direct linear solve; throws std::invalid_argument on a singular or
// inconsistent system.
std::vector<double> embedded_stationary(int phase_count, std::span<const double> r,
                                        std::span<const double> R);

// The mean expression (sum_i eta_i / (gamma_i eta_0))^{-1}. Note this is the
// reciprocal of the first moment except at unit mean, where both coincide;
// unit-mean services built by `make` report 1 here.
double phase_type_mean(const PhaseTypeService& d);

} // namespace tabs
