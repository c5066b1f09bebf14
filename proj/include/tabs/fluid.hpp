#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include "tabs/core.hpp"

namespace tabs::fluid {

// Indicator thresholds for the discontinuous terms of the dynamics: the
// all-idle branch applies while u > kIdleTol, and setup flow is enabled
// while delta0 > kOffTol.
inline constexpr double kIdleTol = 1e-12;
inline constexpr double kOffTol = 1e-12;

struct FluidParams {
    ArrivalProfile arrivals = ArrivalProfile::constant(0.3);
    double mu = 0.1; // standby rate
    double nu = 0.1; // setup rate
    int buffer = 10;
    std::optional<PhaseTypeService> service; // nullopt = unit exponential
};

struct divergence_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Fraction of incoming tasks routed to servers with each queue length.
// by_level[m] is the fraction joining a server with exactly m tasks
// (m = 0 means an idle server); by_phase refines it by the service phase of
// the receiving server, (B+1) x K row-major, with row 0 split by the initial
// phase distribution. dropped_flow is the residual when u = 0 and no busy
// server exists to absorb the overflow.
struct AssignmentProbs {
    std::vector<double> by_level;
    std::vector<double> by_phase;
    double dropped_flow = 0.0;
    int phases = 1;

    double at(int level, int phase = 1) const {
        return by_phase[static_cast<std::size_t>(level) * phases + (phase - 1)];
    }
};

AssignmentProbs assignment_probs(const FluidState& s, double lam, double nu);
AssignmentProbs assignment_probs_phase(const FluidState& s, double lam, double nu,
                                       const PhaseTypeService& d);

// Time derivative of a fluid state; setup_rate is the integrand of the
// cumulative setup count xi.
struct FluidDeriv {
    std::vector<double> dq; // same shape as the state's occupancy
    double ddelta0 = 0.0;
    double ddelta1 = 0.0;
    double setup_rate = 0.0;
};

FluidDeriv fluid_rhs(const FluidState& s, double t, const FluidParams& p);
FluidDeriv fluid_rhs_phase(const FluidState& s, double t, const FluidParams& p);

struct TrajectorySample {
    double t = 0.0;
    FluidState state;
    double u = 0.0;
    double xi = 0.0;             // cumulative setup initiations
    double delta1_integral = 0.0; // integral of delta1, quadrature companion of xi
};

struct FluidTrajectory {
    std::vector<TrajectorySample> samples;
    double dt = 0.0;
    // Largest repair the per-step projection had to make; 0 means the
    // integration never left E.
    double max_projection_repair = 0.0;

    const TrajectorySample& front() const { return samples.front(); }
    const TrajectorySample& back() const { return samples.back(); }
    // Linear interpolation of the level sums and deltas at time t.
    // Throws std::out_of_range if t falls outside the sampled range.
    void interpolate(double t, std::vector<double>& levels, double& delta0, double& delta1) const;
};

struct IntegrateOptions {
    double dt = 1e-3;
    // Spacing of recorded samples; 0 records every step.
    double sample_interval = 0.0;
    // Allowance handed to the per-step projection; 0 picks
    // max(1e-6, 2 dt (sup lambda + mu + nu + 1)), the one-step overshoot
    // bound at a discontinuity crossing.
    double projection_tolerance = 0.0;
    bool record_samples = true; // false keeps only the endpoint
};

FluidTrajectory integrate_fluid(const FluidState& initial, const FluidParams& p, double horizon,
                                const IntegrateOptions& opt = {});

// Equilibrium of the constant-rate dynamics: q_1 = lambda, delta0 = 1 - lambda,
// everything else 0; independent of mu and nu. Requires 0 < lambda < 1.
FluidState fixed_point(double lam, int buffer);
FluidState fixed_point_phase(double lam, const PhaseTypeService& d, int buffer);

// Closed-form JIQ trajectory from the all-idle-on start: q_1(t) and
// y(t) = 1 - q_1(t) - delta0(t). The mu = 1 singularity is removable and
// evaluated by its limit.
struct JiqPoint {
    double q1 = 0.0;
    double y = 0.0;
};
JiqPoint jiq_closed_form(double t, double lam, double mu);

// L-inf distance between two states over the level sums and deltas.
double state_distance(const FluidState& a, const FluidState& b);

// Uniform random point of E: Dirichlet(1,...,1) mass split over the queue
// tiers, delta0, delta1 and u, with the tier masses accumulated into a
// monotone q.
FluidState random_state_in_E(int buffer, Rng& rng);

struct StabilityReport {
    int total = 0;
    int converged = 0;
    double worst_distance = 0.0;
    FluidState worst_initial;
    std::vector<double> distances; // by initial-state index
};

// Integrates n_initials random starting points to the horizon and measures
// the final distance to the fixed point. Initial states run concurrently
// (jobs threads, 0 = hardware default, 1 = serial); results are ordered by
// index so the report is independent of the thread count.
StabilityReport stability_sweep(const FluidParams& p, int n_initials, double horizon, double tol,
                                std::uint64_t seed, const IntegrateOptions& opt = {},
                                int jobs = 0);

} // namespace tabs::fluid
