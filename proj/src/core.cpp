#include "tabs/core.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace tabs {

namespace {

std::string fmt_g(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

// Slack for float dust in membership checks; projection output and exact
// fixed points must validate cleanly.
constexpr double kValidateSlack = 1e-12;

} // namespace

const char* to_string(Mode m) {
    switch (m) {
    case Mode::Busy: return "busy";
    case Mode::IdleOn: return "idle-on";
    case Mode::IdleOff: return "idle-off";
    case Mode::Setup: return "setup";
    }
    return "?";
}

ArrivalProfile ArrivalProfile::constant(double rate) {
    if (!(rate > 0.0) || !(rate < 1.0))
        throw std::invalid_argument("constant arrival rate must lie in (0, 1), got " + fmt_g(rate));
    ArrivalProfile p;
    p.kind_ = Kind::Constant;
    p.base_ = rate;
    p.sup_ = rate;
    return p;
}

ArrivalProfile ArrivalProfile::sinusoid(double base, double amplitude, double period) {
    if (!(base > 0.0)) throw std::invalid_argument("sinusoid base rate must be positive");
    if (amplitude < 0.0 || amplitude >= base)
        throw std::invalid_argument("sinusoid amplitude must lie in [0, base) so the rate stays positive");
    if (!(period > 0.0)) throw std::invalid_argument("sinusoid period must be positive");
    ArrivalProfile p;
    p.kind_ = Kind::Sinusoid;
    p.base_ = base;
    p.amplitude_ = amplitude;
    p.period_ = period;
    p.sup_ = base + amplitude;
    return p;
}

ArrivalProfile ArrivalProfile::table(std::vector<std::pair<double, double>> steps) {
    if (steps.empty()) throw std::invalid_argument("arrival table needs at least one step");
    if (steps.front().first != 0.0)
        throw std::invalid_argument("arrival table must start at time 0");
    double sup = 0.0;
    for (std::size_t i = 0; i < steps.size(); ++i) {
        if (i > 0 && !(steps[i].first > steps[i - 1].first))
            throw std::invalid_argument("arrival table times must be strictly increasing");
        if (!(steps[i].second > 0.0))
            throw std::invalid_argument("arrival table rates must be positive");
        sup = std::max(sup, steps[i].second);
    }
    ArrivalProfile p;
    p.kind_ = Kind::Table;
    p.steps_ = std::move(steps);
    p.base_ = p.steps_.back().second;
    p.sup_ = sup;
    return p;
}

double ArrivalProfile::at(double t) const {
    switch (kind_) {
    case Kind::Constant: return base_;
    case Kind::Sinusoid: return base_ + amplitude_ * std::sin(t / period_);
    case Kind::Table: {
        // last step with time <= t
        auto it = std::upper_bound(steps_.begin(), steps_.end(), t,
                                   [](double v, const auto& s) { return v < s.first; });
        return std::prev(it)->second;
    }
    }
    return base_;
}

double ArrivalProfile::nominal() const { return base_; }

FluidState::FluidState(int buffer_levels, int phase_count)
    : buffer(buffer_levels), phases(phase_count),
      occupancy(static_cast<std::size_t>(buffer_levels) * phase_count, 0.0) {}

FluidState FluidState::scalar(std::vector<double> q, double delta0, double delta1) {
    FluidState s;
    s.buffer = static_cast<int>(q.size());
    s.phases = 1;
    s.occupancy = std::move(q);
    s.delta0 = delta0;
    s.delta1 = delta1;
    return s;
}

double FluidState::q_level(int level) const {
    if (level > buffer) return 0.0;
    double total = 0.0;
    for (int j = 1; j <= phases; ++j) total += q(level, j);
    return total;
}

std::vector<std::string> validate_fluid_state(const FluidState& s) {
    std::vector<std::string> out;
    if (s.buffer < 1) {
        out.push_back("buffer must be at least 1");
        return out;
    }
    auto name = [&](int i, int j) {
        if (s.phases == 1) return "q_" + std::to_string(i);
        return "q_{" + std::to_string(i) + "," + std::to_string(j) + "}";
    };
    for (int i = 1; i <= s.buffer; ++i)
        for (int j = 1; j <= s.phases; ++j) {
            const double v = s.q(i, j);
            if (!(v >= -kValidateSlack) || !(v <= 1.0 + kValidateSlack))
                out.push_back(name(i, j) + " = " + fmt_g(v) + " outside [0,1]");
        }
    if (!(s.delta0 >= -kValidateSlack) || !(s.delta0 <= 1.0 + kValidateSlack))
        out.push_back("delta0 = " + fmt_g(s.delta0) + " outside [0,1]");
    if (!(s.delta1 >= -kValidateSlack) || !(s.delta1 <= 1.0 + kValidateSlack))
        out.push_back("delta1 = " + fmt_g(s.delta1) + " outside [0,1]");
    for (int i = 1; i < s.buffer; ++i)
        for (int j = 1; j <= s.phases; ++j)
            if (s.q(i + 1, j) > s.q(i, j) + kValidateSlack)
                out.push_back(name(i + 1, j) + " > " + name(i, j));
    const double mass = s.q_level(1) + s.delta0 + s.delta1;
    if (mass > 1.0 + kValidateSlack)
        out.push_back("mass " + fmt_g(mass) + " > 1");
    return out;
}

FluidState project_to_E(const FluidState& s, double tolerance) {
    FluidState out = s;
    for (double& v : out.occupancy) v = std::clamp(v, 0.0, 1.0);
    out.delta0 = std::clamp(out.delta0, 0.0, 1.0);
    out.delta1 = std::clamp(out.delta1, 0.0, 1.0);
    // cumulative min down the levels, per phase
    for (int i = 2; i <= out.buffer; ++i)
        for (int j = 1; j <= out.phases; ++j)
            out.q_ref(i, j) = std::min(out.q(i, j), out.q(i - 1, j));
    const double mass = out.q_level(1) + out.delta0 + out.delta1;
    // the rescaled mass lands within a couple of ulp of 1, so a repair below
    // this threshold is left alone and the projection stays idempotent
    if (mass > 1.0 + 1e-14) {
        const double scale = 1.0 / mass;
        for (double& v : out.occupancy) v *= scale;
        out.delta0 *= scale;
        out.delta1 *= scale;
    }
    double dist = std::max(std::abs(out.delta0 - s.delta0), std::abs(out.delta1 - s.delta1));
    for (std::size_t k = 0; k < out.occupancy.size(); ++k)
        dist = std::max(dist, std::abs(out.occupancy[k] - s.occupancy[k]));
    if (!(dist <= tolerance))
        throw std::domain_error("state is " + fmt_g(dist) + " away from E, beyond the allowed " +
                                fmt_g(tolerance));
    return out;
}

void IndexedSet::reset(int capacity) {
    items_.clear();
    pos_.assign(capacity, -1);
}

void IndexedSet::insert(int id) {
    if (pos_[id] >= 0) return;
    pos_[id] = static_cast<int>(items_.size());
    items_.push_back(id);
}

void IndexedSet::erase(int id) {
    const int at = pos_[id];
    if (at < 0) return;
    const int last = items_.back();
    items_[at] = last;
    pos_[last] = at;
    items_.pop_back();
    pos_[id] = -1;
}

void DispatcherLedger::reset(int n_servers) {
    green.reset(n_servers);
    yellow.reset(n_servers);
    red.reset(n_servers);
    orange.reset(n_servers);
}

IndexedSet& DispatcherLedger::set_for(Mode m) {
    switch (m) {
    case Mode::IdleOn: return green;
    case Mode::Busy: return yellow;
    case Mode::IdleOff: return red;
    case Mode::Setup: return orange;
    }
    return green;
}

const IndexedSet& DispatcherLedger::set_for(Mode m) const {
    return const_cast<DispatcherLedger*>(this)->set_for(m);
}

void DispatcherLedger::move(int id, Mode from, Mode to) {
    set_for(from).erase(id);
    set_for(to).insert(id);
}

std::vector<std::string> DispatcherLedger::check_partition(std::span<const Mode> modes) const {
    std::vector<std::string> out;
    const int n = static_cast<int>(modes.size());
    if (total() != n)
        out.push_back("ledger holds " + std::to_string(total()) + " tokens for " +
                      std::to_string(n) + " servers");
    for (int id = 0; id < n; ++id) {
        int memberships = green.contains(id) + yellow.contains(id) + red.contains(id) +
                          orange.contains(id);
        if (memberships != 1)
            out.push_back("server " + std::to_string(id) + " held by " +
                          std::to_string(memberships) + " sets");
        else if (!set_for(modes[id]).contains(id))
            out.push_back("server " + std::to_string(id) + " is " + to_string(modes[id]) +
                          " but its token disagrees");
    }
    return out;
}

double PhaseTypeService::exit_prob(int j) const {
    double row = 0.0;
    for (int k = 1; k <= phase_count; ++k) row += transition_prob(j, k);
    return 1.0 - row;
}

namespace {

void validate_phase_type(int K, std::span<const double> r, std::span<const double> R,
                         std::span<const double> gamma) {
    if (K < 1 || K > kMaxPhases)
        throw std::invalid_argument("phase count must lie in [1, " +
                                    std::to_string(kMaxPhases) + "]");
    if (static_cast<int>(r.size()) != K || static_cast<int>(gamma.size()) != K ||
        static_cast<int>(R.size()) != K * K)
        throw std::invalid_argument("phase-type dimensions disagree with the phase count");
    double r_sum = 0.0;
    for (double v : r) {
        if (v < 0.0) throw std::invalid_argument("initial phase probabilities must be nonnegative");
        r_sum += v;
    }
    if (std::abs(r_sum - 1.0) > 1e-9)
        throw std::invalid_argument("initial phase distribution sums to " + fmt_g(r_sum) +
                                    ", expected 1");
    for (int j = 0; j < K; ++j) {
        double row = 0.0;
        for (int k = 0; k < K; ++k) {
            const double v = R[static_cast<std::size_t>(j) * K + k];
            if (v < 0.0) throw std::invalid_argument("transition probabilities must be nonnegative");
            if (j == k && v != 0.0)
                throw std::invalid_argument("self transitions are not allowed (r_{j,j} = 0)");
            row += v;
        }
        if (row > 1.0 + 1e-12)
            throw std::invalid_argument("transition row " + std::to_string(j + 1) +
                                        " sums to " + fmt_g(row) + " > 1");
    }
    for (double g : gamma)
        if (!(g > 0.0)) throw std::invalid_argument("phase rates must be positive");
    // every phase must reach the exit: walk the reversed transition graph
    // from the phases with positive exit probability
    std::vector<char> reaches(K, 0);
    std::vector<int> stack;
    for (int j = 0; j < K; ++j) {
        double row = 0.0;
        for (int k = 0; k < K; ++k) row += R[static_cast<std::size_t>(j) * K + k];
        if (1.0 - row > 1e-12) {
            reaches[j] = 1;
            stack.push_back(j);
        }
    }
    while (!stack.empty()) {
        const int k = stack.back();
        stack.pop_back();
        for (int j = 0; j < K; ++j)
            if (!reaches[j] && R[static_cast<std::size_t>(j) * K + k] > 0.0) {
                reaches[j] = 1;
                stack.push_back(j);
            }
    }
    for (int j = 0; j < K; ++j)
        if (!reaches[j])
            throw std::invalid_argument("phase " + std::to_string(j + 1) +
                                        " never reaches a service completion");
}

} // namespace

std::vector<double> embedded_stationary(int K, std::span<const double> r,
                                        std::span<const double> R) {
    // Unknowns eta_0..eta_K. Rows i = 1..K encode
    // eta_0 r_i + sum_j R[j][i] eta_j - eta_i = 0; the last row normalizes.
    const int n = K + 1;
    std::vector<double> a(static_cast<std::size_t>(n) * n, 0.0);
    std::vector<double> b(n, 0.0);
    for (int i = 1; i <= K; ++i) {
        a[static_cast<std::size_t>(i - 1) * n + 0] = r[i - 1];
        for (int j = 1; j <= K; ++j)
            a[static_cast<std::size_t>(i - 1) * n + j] += R[static_cast<std::size_t>(j - 1) * K + (i - 1)];
        a[static_cast<std::size_t>(i - 1) * n + i] -= 1.0;
    }
    for (int j = 0; j < n; ++j) a[static_cast<std::size_t>(K) * n + j] = 1.0;
    b[K] = 1.0;

    // Gaussian elimination with partial pivoting.
    for (int col = 0; col < n; ++col) {
        int pivot = col;
        for (int row = col + 1; row < n; ++row)
            if (std::abs(a[static_cast<std::size_t>(row) * n + col]) >
                std::abs(a[static_cast<std::size_t>(pivot) * n + col]))
                pivot = row;
        if (std::abs(a[static_cast<std::size_t>(pivot) * n + col]) < 1e-13)
            throw std::invalid_argument("phase-type embedded chain gives a singular system");
        if (pivot != col) {
            for (int j = 0; j < n; ++j)
                std::swap(a[static_cast<std::size_t>(pivot) * n + j],
                          a[static_cast<std::size_t>(col) * n + j]);
            std::swap(b[pivot], b[col]);
        }
        for (int row = col + 1; row < n; ++row) {
            const double f = a[static_cast<std::size_t>(row) * n + col] /
                             a[static_cast<std::size_t>(col) * n + col];
            if (f == 0.0) continue;
            for (int j = col; j < n; ++j)
                a[static_cast<std::size_t>(row) * n + j] -= f * a[static_cast<std::size_t>(col) * n + j];
            b[row] -= f * b[col];
        }
    }
    std::vector<double> eta(n, 0.0);
    for (int row = n - 1; row >= 0; --row) {
        double v = b[row];
        for (int j = row + 1; j < n; ++j) v -= a[static_cast<std::size_t>(row) * n + j] * eta[j];
        eta[row] = v / a[static_cast<std::size_t>(row) * n + row];
    }
    // verify the balance residual
    double residual = 0.0;
    for (int i = 1; i <= K; ++i) {
        double lhs = eta[0] * r[i - 1];
        for (int j = 1; j <= K; ++j) lhs += R[static_cast<std::size_t>(j - 1) * K + (i - 1)] * eta[j];
        residual = std::max(residual, std::abs(lhs - eta[i]));
    }
    double total = 0.0;
    for (double v : eta) total += v;
    residual = std::max(residual, std::abs(total - 1.0));
    if (!(residual <= 1e-12))
        throw std::invalid_argument("phase-type stationary solve is ill-conditioned (residual " +
                                    fmt_g(residual) + ")");
    for (double& v : eta)
        if (v < 0.0) {
            if (v < -1e-12)
                throw std::invalid_argument("phase-type stationary vector has a negative entry");
            v = 0.0;
        }
    return eta;
}

double phase_type_mean(const PhaseTypeService& d) {
    double acc = 0.0;
    for (int i = 1; i <= d.phase_count; ++i) {
        if (!(d.rate[i - 1] > 0.0)) throw std::invalid_argument("phase rates must be positive");
        acc += d.stationary[i] / (d.rate[i - 1] * d.stationary[0]);
    }
    return 1.0 / acc;
}

PhaseTypeService PhaseTypeService::raw(std::vector<double> r, std::vector<double> R,
                                       std::vector<double> gamma) {
    const int K = static_cast<int>(r.size());
    validate_phase_type(K, r, R, gamma);
    PhaseTypeService d;
    d.phase_count = K;
    d.initial = std::move(r);
    d.transition = std::move(R);
    d.rate = std::move(gamma);
    d.stationary = embedded_stationary(K, d.initial, d.transition);
    return d;
}

PhaseTypeService PhaseTypeService::make(std::vector<double> r, std::vector<double> R,
                                        std::vector<double> gamma) {
    PhaseTypeService d = raw(std::move(r), std::move(R), std::move(gamma));
    // Rescale the rates by the first moment so the service has unit mean;
    // the embedded chain (and eta) is unaffected.
    double moment = 0.0;
    for (int i = 1; i <= d.phase_count; ++i)
        moment += d.stationary[i] / (d.rate[i - 1] * d.stationary[0]);
    for (double& g : d.rate) g *= moment;
    const double check = phase_type_mean(d);
    if (std::abs(check - 1.0) > 1e-9)
        throw std::invalid_argument("phase-type normalization failed (mean " + fmt_g(check) + ")");
    return d;
}

PhaseTypeService PhaseTypeService::unit_exponential() {
    return make({1.0}, {0.0}, {1.0});
}

PhaseTypeService PhaseTypeService::hyperexponential(std::vector<double> probs,
                                                    std::vector<double> rates) {
    const int K = static_cast<int>(probs.size());
    std::vector<double> R(static_cast<std::size_t>(K) * K, 0.0);
    return make(std::move(probs), std::move(R), std::move(rates));
}

PhaseTypeService PhaseTypeService::erlang(int stages) {
    if (stages < 1) throw std::invalid_argument("erlang needs at least one stage");
    std::vector<double> r(stages, 0.0);
    r[0] = 1.0;
    std::vector<double> R(static_cast<std::size_t>(stages) * stages, 0.0);
    for (int j = 0; j + 1 < stages; ++j) R[static_cast<std::size_t>(j) * stages + j + 1] = 1.0;
    std::vector<double> gamma(stages, static_cast<double>(stages));
    return make(std::move(r), std::move(R), std::move(gamma));
}

} // namespace tabs
