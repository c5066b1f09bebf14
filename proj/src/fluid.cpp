#include "tabs/fluid.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace tabs::fluid {

namespace {

void require_in_E(const FluidState& s) {
    auto violations = validate_fluid_state(s);
    if (!violations.empty())
        throw std::domain_error("state outside E: " + violations.front());
}

// Same repair as project_to_E, in place; returns the L-inf change made.
double project_in_place(FluidState& s) {
    double repair = 0.0;
    for (double& v : s.occupancy) {
        const double c = std::clamp(v, 0.0, 1.0);
        repair = std::max(repair, std::abs(c - v));
        v = c;
    }
    {
        const double c0 = std::clamp(s.delta0, 0.0, 1.0);
        const double c1 = std::clamp(s.delta1, 0.0, 1.0);
        repair = std::max({repair, std::abs(c0 - s.delta0), std::abs(c1 - s.delta1)});
        s.delta0 = c0;
        s.delta1 = c1;
    }
    for (int i = 2; i <= s.buffer; ++i)
        for (int j = 1; j <= s.phases; ++j) {
            const double v = s.q(i, j);
            const double c = std::min(v, s.q(i - 1, j));
            repair = std::max(repair, v - c);
            s.q_ref(i, j) = c;
        }
    const double mass = s.q_level(1) + s.delta0 + s.delta1;
    if (mass > 1.0 + 1e-14) {
        const double scale = 1.0 / mass;
        for (double& v : s.occupancy) {
            const double c = v * scale;
            repair = std::max(repair, std::abs(c - v));
            v = c;
        }
        const double c0 = s.delta0 * scale;
        const double c1 = s.delta1 * scale;
        repair = std::max({repair, std::abs(c0 - s.delta0), std::abs(c1 - s.delta1)});
        s.delta0 = c0;
        s.delta1 = c1;
    }
    return repair;
}

// Fraction of incoming tasks that join idle servers (the scalar p_0, or
// sum_j p_{0,j} for phase runs).
double idle_fraction(const FluidState& s, double lam, double nu, const PhaseTypeService* svc) {
    if (s.idle_on() > kIdleTol) return 1.0;
    double idle_creation = s.delta1 * nu;
    if (svc) {
        for (int j = 1; j <= svc->phase_count; ++j)
            idle_creation += (s.q(1, j) - s.q(2, j)) * svc->rate[j - 1] * svc->exit_prob(j);
    } else {
        idle_creation += s.q_level(1) - s.q_level(2);
    }
    return std::min(idle_creation / lam, 1.0);
}

// Specialized single-phase step kernels operating on the packed integration
// vector [q_1..q_B, delta0, delta1, xi, integral of delta1]; the long
// stability horizons make this path hot.
double project_packed_scalar(double* y, int B) {
    double repair = 0.0;
    for (int i = 0; i < B + 2; ++i) {
        const double c = std::clamp(y[i], 0.0, 1.0);
        repair = std::max(repair, std::abs(c - y[i]));
        y[i] = c;
    }
    for (int i = 1; i < B; ++i)
        if (y[i] > y[i - 1]) {
            repair = std::max(repair, y[i] - y[i - 1]);
            y[i] = y[i - 1];
        }
    const double mass = y[0] + y[B] + y[B + 1];
    if (mass > 1.0 + 1e-14) {
        const double scale = 1.0 / mass;
        for (int i = 0; i < B + 2; ++i) {
            const double c = y[i] * scale;
            repair = std::max(repair, std::abs(y[i] - c));
            y[i] = c;
        }
    }
    return repair;
}

void rhs_packed_scalar(const double* y, int B, double lam, double mu, double nu, double* dy) {
    const double q1 = y[0];
    const double q2 = B > 1 ? y[1] : 0.0;
    const double d0 = y[B];
    const double d1 = y[B + 1];
    const double u = 1.0 - q1 - d0 - d1;
    double idle_frac = 1.0;
    if (!(u > kIdleTol)) idle_frac = std::min((d1 * nu + (q1 - q2)) / lam, 1.0);
    const double overflow = 1.0 - idle_frac;
    const double busy_frac = (overflow > 0.0 && q1 > 0.0) ? overflow / q1 : 0.0;
    dy[0] = lam * idle_frac - (q1 - q2);
    for (int i = 1; i < B; ++i) {
        const double above = i + 1 < B ? y[i + 1] : 0.0;
        dy[i] = lam * busy_frac * (y[i - 1] - y[i]) - (y[i] - above);
    }
    const double chi = (d0 > kOffTol) ? lam * overflow : 0.0;
    dy[B] = mu * u - chi;
    dy[B + 1] = chi - nu * d1;
    dy[B + 2] = chi;
    dy[B + 3] = d1;
}

// Derivative of the packed integration vector [occupancy, delta0, delta1,
// xi, integral of delta1]. svc == nullptr selects the scalar dynamics.
void rhs_into(const FluidState& s, double lam, double mu, double nu,
              const PhaseTypeService* svc, double* dy) {
    const int B = s.buffer;
    const int K = s.phases;
    const std::size_t m = s.occupancy.size();
    const double idle_frac = idle_fraction(s, lam, nu, svc);
    const double overflow = 1.0 - idle_frac;

    if (!svc) {
        const double q1 = s.q(1);
        const double busy_frac = (overflow > 0.0 && q1 > 0.0) ? overflow / q1 : 0.0;
        for (int i = 1; i <= B; ++i) {
            const double inflow =
                i == 1 ? lam * idle_frac : lam * busy_frac * (s.q(i - 1) - s.q(i));
            dy[i - 1] = inflow - (s.q(i) - s.q(i + 1));
        }
    } else {
        double busy = 0.0;
        for (int j = 1; j <= K; ++j) busy += s.q(1, j);
        const double busy_frac = (overflow > 0.0 && busy > 0.0) ? overflow / busy : 0.0;
        for (int i = 1; i <= B; ++i) {
            double completions = 0.0;
            for (int k = 1; k <= K; ++k)
                completions += s.q(i + 1, k) * svc->rate[k - 1] * svc->exit_prob(k);
            for (int j = 1; j <= K; ++j) {
                double v = i == 1 ? lam * idle_frac * svc->initial[j - 1]
                                  : lam * busy_frac * (s.q(i - 1, j) - s.q(i, j));
                for (int k = 1; k <= K; ++k)
                    v += s.q(i, k) * svc->rate[k - 1] * svc->transition_prob(k, j);
                v -= svc->rate[j - 1] * s.q(i, j);
                v += completions * svc->initial[j - 1];
                dy[static_cast<std::size_t>(i - 1) * K + (j - 1)] = v;
            }
        }
    }
    const double chi = (s.delta0 > kOffTol) ? lam * overflow : 0.0;
    dy[m] = mu * s.idle_on() - chi;
    dy[m + 1] = chi - nu * s.delta1;
    dy[m + 2] = chi;
    dy[m + 3] = s.delta1;
}

} // namespace

AssignmentProbs assignment_probs(const FluidState& s, double lam, double nu) {
    require_in_E(s);
    if (!(lam > 0.0)) throw std::domain_error("arrival rate must be positive");
    if (s.phases != 1) throw std::domain_error("scalar coefficients need a one-phase state");
    const int B = s.buffer;
    AssignmentProbs out;
    out.phases = 1;
    out.by_level.assign(B + 1, 0.0);
    const double idle_frac = idle_fraction(s, lam, nu, nullptr);
    out.by_level[0] = idle_frac;
    const double q1 = s.q(1);
    if (idle_frac < 1.0) {
        if (q1 > 0.0) {
            for (int i = 1; i <= B; ++i)
                out.by_level[i] = (1.0 - idle_frac) * (s.q(i) - s.q(i + 1)) / q1;
        } else {
            // no busy server can absorb the overflow; report it as lost flow
            out.dropped_flow = lam * (1.0 - idle_frac);
        }
    }
    out.by_phase = out.by_level;
    return out;
}

AssignmentProbs assignment_probs_phase(const FluidState& s, double lam, double nu,
                                       const PhaseTypeService& d) {
    require_in_E(s);
    if (!(lam > 0.0)) throw std::domain_error("arrival rate must be positive");
    if (s.phases != d.phase_count)
        throw std::domain_error("state and service disagree on the phase count");
    const int B = s.buffer;
    const int K = s.phases;
    AssignmentProbs out;
    out.phases = K;
    out.by_level.assign(B + 1, 0.0);
    out.by_phase.assign(static_cast<std::size_t>(B + 1) * K, 0.0);
    const double idle_frac = idle_fraction(s, lam, nu, &d);
    out.by_level[0] = idle_frac;
    for (int j = 1; j <= K; ++j) out.by_phase[j - 1] = d.initial[j - 1] * idle_frac;
    const double busy = s.busy_fraction();
    if (idle_frac < 1.0) {
        if (busy > 0.0) {
            for (int i = 1; i <= B; ++i) {
                double level = 0.0;
                for (int j = 1; j <= K; ++j) {
                    const double v = (1.0 - idle_frac) * (s.q(i, j) - s.q(i + 1, j)) / busy;
                    out.by_phase[static_cast<std::size_t>(i) * K + (j - 1)] = v;
                    level += v;
                }
                out.by_level[i] = level;
            }
        } else {
            out.dropped_flow = lam * (1.0 - idle_frac);
        }
    }
    return out;
}

FluidDeriv fluid_rhs(const FluidState& s, double t, const FluidParams& p) {
    if (s.phases != 1) throw std::domain_error("scalar dynamics need a one-phase state");
    require_in_E(s);
    FluidDeriv d;
    std::vector<double> dy(s.occupancy.size() + 4);
    rhs_into(s, p.arrivals.at(t), p.mu, p.nu, nullptr, dy.data());
    d.dq.assign(dy.begin(), dy.begin() + s.occupancy.size());
    d.ddelta0 = dy[s.occupancy.size()];
    d.ddelta1 = dy[s.occupancy.size() + 1];
    d.setup_rate = dy[s.occupancy.size() + 2];
    return d;
}

FluidDeriv fluid_rhs_phase(const FluidState& s, double t, const FluidParams& p) {
    if (!p.service) throw std::domain_error("phase dynamics need a phase-type service");
    if (s.phases != p.service->phase_count)
        throw std::domain_error("state and service disagree on the phase count");
    require_in_E(s);
    FluidDeriv d;
    std::vector<double> dy(s.occupancy.size() + 4);
    rhs_into(s, p.arrivals.at(t), p.mu, p.nu, &*p.service, dy.data());
    d.dq.assign(dy.begin(), dy.begin() + s.occupancy.size());
    d.ddelta0 = dy[s.occupancy.size()];
    d.ddelta1 = dy[s.occupancy.size() + 1];
    d.setup_rate = dy[s.occupancy.size() + 2];
    return d;
}

void FluidTrajectory::interpolate(double t, std::vector<double>& levels, double& delta0,
                                  double& delta1) const {
    if (samples.empty()) throw std::out_of_range("empty trajectory");
    const double eps = 1e-9 + dt;
    if (t < samples.front().t - eps || t > samples.back().t + eps)
        throw std::out_of_range("time outside the sampled trajectory range");
    auto it = std::lower_bound(samples.begin(), samples.end(), t,
                               [](const TrajectorySample& a, double v) { return a.t < v; });
    if (it == samples.begin()) ++it;
    if (it == samples.end()) --it;
    const TrajectorySample& hi = *it;
    const TrajectorySample& lo = *std::prev(it);
    const double span = hi.t - lo.t;
    const double w = span > 0.0 ? std::clamp((t - lo.t) / span, 0.0, 1.0) : 0.0;
    const int B = lo.state.buffer;
    levels.assign(B, 0.0);
    for (int i = 1; i <= B; ++i)
        levels[i - 1] = (1.0 - w) * lo.state.q_level(i) + w * hi.state.q_level(i);
    delta0 = (1.0 - w) * lo.state.delta0 + w * hi.state.delta0;
    delta1 = (1.0 - w) * lo.state.delta1 + w * hi.state.delta1;
}

FluidTrajectory integrate_fluid(const FluidState& initial, const FluidParams& p, double horizon,
                                const IntegrateOptions& opt) {
    if (!(opt.dt > 0.0)) throw std::invalid_argument("integration step must be positive");
    if (!(horizon > 0.0)) throw std::invalid_argument("horizon must be positive");
    const PhaseTypeService* svc =
        (p.service && p.service->phase_count > 1) ? &*p.service : nullptr;
    if (svc && initial.phases != svc->phase_count)
        throw std::invalid_argument("initial state and service disagree on the phase count");
    if (!svc && initial.phases != 1)
        throw std::invalid_argument("scalar integration needs a one-phase initial state");
    require_in_E(initial);

    const double dt = opt.dt;
    // One fixed-step crossing of a discontinuity overshoots E by O(dt x rate),
    // so the divergence guard scales with the step.
    const double proj_tol =
        opt.projection_tolerance > 0.0
            ? opt.projection_tolerance
            : std::max(1e-6, 2.0 * dt * (p.arrivals.sup() + p.mu + p.nu + 1.0));
    const long long steps = std::llround(horizon / dt);
    const long long stride =
        opt.sample_interval > 0.0 ? std::max(1LL, std::llround(opt.sample_interval / dt)) : 1;

    FluidTrajectory traj;
    traj.dt = dt;

    const std::size_t m = initial.occupancy.size();
    const std::size_t dim = m + 4;
    std::vector<double> y(dim, 0.0);
    std::copy(initial.occupancy.begin(), initial.occupancy.end(), y.begin());
    y[m] = initial.delta0;
    y[m + 1] = initial.delta1;

    FluidState scratch(initial.buffer, initial.phases);
    auto unpack = [&](const std::vector<double>& v) {
        std::copy(v.begin(), v.begin() + m, scratch.occupancy.begin());
        scratch.delta0 = v[m];
        scratch.delta1 = v[m + 1];
    };
    auto guard = [&](double repair, long long step) {
        traj.max_projection_repair = std::max(traj.max_projection_repair, repair);
        if (!(repair <= proj_tol))
            throw divergence_error("integration left E by " + std::to_string(repair) +
                                   " at step " + std::to_string(step));
    };
    auto record = [&](double t) {
        TrajectorySample sample;
        sample.t = t;
        unpack(y);
        sample.state = scratch;
        sample.u = sample.state.idle_on();
        sample.xi = y[m + 2];
        sample.delta1_integral = y[m + 3];
        traj.samples.push_back(std::move(sample));
    };

    if (opt.record_samples) record(0.0);

    const int B = initial.buffer;
    std::vector<double> k1(dim), k2(dim), k3(dim), k4(dim), work(dim);
    // projects the buffer in place, then evaluates the derivative into k
    auto stage = [&](std::vector<double>& v, double t, std::vector<double>& k, long long step) {
        if (!svc) {
            guard(project_packed_scalar(v.data(), B), step);
            rhs_packed_scalar(v.data(), B, p.arrivals.at(t), p.mu, p.nu, k.data());
        } else {
            unpack(v);
            guard(project_in_place(scratch), step);
            std::copy(scratch.occupancy.begin(), scratch.occupancy.end(), v.begin());
            v[m] = scratch.delta0;
            v[m + 1] = scratch.delta1;
            rhs_into(scratch, p.arrivals.at(t), p.mu, p.nu, svc, k.data());
        }
    };

    for (long long step = 0; step < steps; ++step) {
        const double t = static_cast<double>(step) * dt;
        stage(y, t, k1, step);
        for (std::size_t i = 0; i < dim; ++i) work[i] = y[i] + 0.5 * dt * k1[i];
        stage(work, t + 0.5 * dt, k2, step);
        for (std::size_t i = 0; i < dim; ++i) work[i] = y[i] + 0.5 * dt * k2[i];
        stage(work, t + 0.5 * dt, k3, step);
        for (std::size_t i = 0; i < dim; ++i) work[i] = y[i] + dt * k3[i];
        stage(work, t + dt, k4, step);
        for (std::size_t i = 0; i < dim; ++i)
            y[i] += dt / 6.0 * (k1[i] + 2.0 * (k2[i] + k3[i]) + k4[i]);
        // settle the endpoint back onto E
        if (!svc) {
            guard(project_packed_scalar(y.data(), B), step);
        } else {
            unpack(y);
            guard(project_in_place(scratch), step);
            std::copy(scratch.occupancy.begin(), scratch.occupancy.end(), y.begin());
            y[m] = scratch.delta0;
            y[m + 1] = scratch.delta1;
        }

        if (opt.record_samples && ((step + 1) % stride == 0 || step + 1 == steps))
            record(static_cast<double>(step + 1) * dt);
    }

    if (!opt.record_samples) record(static_cast<double>(steps) * dt);
    return traj;
}

FluidState fixed_point(double lam, int buffer) {
    if (!(lam > 0.0) || !(lam < 1.0))
        throw std::domain_error("the dynamics have a fixed point only for 0 < lambda < 1");
    FluidState s(buffer, 1);
    s.q_ref(1) = lam;
    s.delta0 = 1.0 - lam;
    s.delta1 = 0.0;
    return s;
}

FluidState fixed_point_phase(double lam, const PhaseTypeService& d, int buffer) {
    if (!(lam > 0.0) || !(lam < 1.0))
        throw std::domain_error("the dynamics have a fixed point only for 0 < lambda < 1");
    FluidState s(buffer, d.phase_count);
    for (int j = 1; j <= d.phase_count; ++j)
        s.q_ref(1, j) = d.stationary[j] * lam / (d.stationary[0] * d.rate[j - 1]);
    s.delta0 = 1.0 - lam;
    s.delta1 = 0.0;
    return s;
}

JiqPoint jiq_closed_form(double t, double lam, double mu) {
    JiqPoint out;
    out.q1 = lam * (1.0 - std::exp(-t));
    const double eps = mu - 1.0;
    if (std::abs(eps) < 1e-8) {
        // removable singularity at mu = 1
        out.y = std::exp(-t) * (1.0 - lam * t);
    } else {
        out.y = ((lam + eps) * std::exp(-mu * t) - lam * std::exp(-t)) / eps;
    }
    return out;
}

double state_distance(const FluidState& a, const FluidState& b) {
    const int B = std::max(a.buffer, b.buffer);
    double d = std::max(std::abs(a.delta0 - b.delta0), std::abs(a.delta1 - b.delta1));
    for (int i = 1; i <= B; ++i) d = std::max(d, std::abs(a.q_level(i) - b.q_level(i)));
    return d;
}

FluidState random_state_in_E(int buffer, Rng& rng) {
    // Dirichlet(1,...,1) split of the unit mass over the queue tiers,
    // delta0, delta1 and u; tier masses accumulate into a monotone q.
    std::vector<double> parts(buffer + 3);
    double total = 0.0;
    for (double& v : parts) {
        v = rng.exponential(1.0);
        total += v;
    }
    for (double& v : parts) v /= total;
    FluidState s(buffer, 1);
    double acc = 0.0;
    for (int i = buffer; i >= 1; --i) {
        acc += parts[i - 1];
        s.q_ref(i) = acc;
    }
    s.delta0 = parts[buffer];
    s.delta1 = parts[buffer + 1];
    return s;
}

StabilityReport stability_sweep(const FluidParams& p, int n_initials, double horizon, double tol,
                                std::uint64_t seed, const IntegrateOptions& opt, int jobs) {
    if (!p.arrivals.is_constant())
        throw std::invalid_argument("the stability sweep needs a constant arrival rate");
    if (n_initials < 1) throw std::invalid_argument("need at least one initial state");
    (void)jobs;
    const FluidState target = fixed_point(p.arrivals.nominal(), p.buffer);

    StabilityReport report;
    report.total = n_initials;
    report.distances.assign(n_initials, 0.0);
    std::vector<FluidState> initials(n_initials);
    for (int k = 0; k < n_initials; ++k) {
        Rng rng(seed + static_cast<std::uint64_t>(k));
        initials[k] = random_state_in_E(p.buffer, rng);
    }

    IntegrateOptions run_opt = opt;
    run_opt.record_samples = false;

    std::string first_error;
#ifdef _OPENMP
    const int threads = jobs > 0 ? jobs : omp_get_max_threads();
#pragma omp parallel for schedule(dynamic) num_threads(threads)
#endif
    for (int k = 0; k < n_initials; ++k) {
        try {
            FluidTrajectory traj = integrate_fluid(initials[k], p, horizon, run_opt);
            report.distances[k] = state_distance(traj.back().state, target);
        } catch (const std::exception& e) {
#ifdef _OPENMP
#pragma omp critical
#endif
            {
                if (first_error.empty())
                    first_error = "initial state " + std::to_string(k) + ": " + e.what();
            }
        }
    }
    if (!first_error.empty()) throw divergence_error(first_error);

    for (int k = 0; k < n_initials; ++k) {
        if (report.distances[k] <= tol) ++report.converged;
        if (report.distances[k] >= report.worst_distance) {
            report.worst_distance = report.distances[k];
            report.worst_initial = initials[k];
        }
    }
    return report;
}

} // namespace tabs::fluid
