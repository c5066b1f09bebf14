#include "tabs/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace tabs::metrics {

double fluid_mean_wait(const FluidState& s, double lam) {
    if (!(lam > 0.0)) throw std::domain_error("arrival rate must be positive");
    double waiting = 0.0;
    for (int i = 2; i <= s.buffer; ++i) waiting += s.q_level(i);
    return waiting / lam;
}

double empirical_mean_wait(std::span<const sim::TaskRecord> tasks, double warmup) {
    double total = 0.0;
    long long count = 0;
    for (const auto& task : tasks) {
        if (task.arrival < warmup || !task.served()) continue;
        total += task.wait();
        ++count;
    }
    if (count == 0) throw empty_sample_error("no served task arrived after the warmup");
    return total / static_cast<double>(count);
}

double energy_per_server(const FluidState& s, const EnergyParams& e) {
    return (s.busy_fraction() + s.delta1) * e.p_full + s.idle_on() * e.p_idle;
}

double energy_wastage(double mean_power, double lam_admitted, const EnergyParams& e) {
    return mean_power - lam_admitted * e.p_full;
}

double jiq_energy(double lam, const EnergyParams& e) {
    if (!(lam > 0.0) || !(lam < 1.0))
        throw std::domain_error("the JIQ stationary point needs 0 < lambda < 1");
    return lam * e.p_full * (1.0 + (1.0 / lam - 1.0) * e.idle_ratio());
}

double trajectory_gap(std::span<const sim::TraceSample> samples,
                      const fluid::FluidTrajectory& traj) {
    if (samples.empty() || traj.samples.empty())
        throw alignment_error("cannot compare empty traces");
    double gap = 0.0;
    std::vector<double> levels;
    for (const auto& sample : samples) {
        double d0 = 0.0, d1 = 0.0;
        try {
            traj.interpolate(sample.t, levels, d0, d1);
        } catch (const std::out_of_range& e) {
            throw alignment_error(e.what());
        }
        const int B = std::max<int>(sample.fluid.buffer, static_cast<int>(levels.size()));
        for (int i = 1; i <= B; ++i) {
            const double fl = i <= static_cast<int>(levels.size()) ? levels[i - 1] : 0.0;
            gap = std::max(gap, std::abs(sample.fluid.q_level(i) - fl));
        }
        gap = std::max(gap, std::abs(sample.fluid.delta0 - d0));
        gap = std::max(gap, std::abs(sample.fluid.delta1 - d1));
    }
    return gap;
}

StationaryEstimate stationary_estimate(std::span<const sim::TraceSample> samples, double warmup) {
    std::size_t first = 0;
    while (first < samples.size() && samples[first].t < warmup) ++first;
    const std::size_t count = samples.size() - first;
    if (count == 0) throw empty_sample_error("no samples past the warmup");

    const int buffer = samples[first].fluid.buffer;
    const int phases = samples[first].fluid.phases;
    const std::size_t dims = static_cast<std::size_t>(buffer) * phases + 3; // + delta0, delta1, u

    auto component = [&](const sim::TraceSample& s, std::size_t d) {
        if (d < s.fluid.occupancy.size()) return s.fluid.occupancy[d];
        if (d == s.fluid.occupancy.size()) return s.fluid.delta0;
        if (d == s.fluid.occupancy.size() + 1) return s.fluid.delta1;
        return s.u;
    };

    StationaryEstimate out;
    out.mean = FluidState(buffer, phases);
    out.std_error = FluidState(buffer, phases);

    const int batches = out.batches;
    std::vector<double> means(dims, 0.0);
    std::vector<double> ses(dims, 0.0);
    for (std::size_t d = 0; d < dims; ++d) {
        double total = 0.0;
        for (std::size_t k = first; k < samples.size(); ++k) total += component(samples[k], d);
        means[d] = total / static_cast<double>(count);

        if (count >= static_cast<std::size_t>(batches)) {
            // batch means over `batches` equal slices of the window
            double acc = 0.0;
            for (int b = 0; b < batches; ++b) {
                const std::size_t lo = first + count * b / batches;
                const std::size_t hi = first + count * (b + 1) / batches;
                double batch_total = 0.0;
                for (std::size_t k = lo; k < hi; ++k) batch_total += component(samples[k], d);
                const double batch_mean = batch_total / static_cast<double>(hi - lo);
                acc += (batch_mean - means[d]) * (batch_mean - means[d]);
            }
            ses[d] = std::sqrt(acc / (batches * (batches - 1.0)));
        }
    }

    std::copy(means.begin(), means.begin() + out.mean.occupancy.size(),
              out.mean.occupancy.begin());
    out.mean.delta0 = means[out.mean.occupancy.size()];
    out.mean.delta1 = means[out.mean.occupancy.size() + 1];
    out.u_mean = means[dims - 1];
    std::copy(ses.begin(), ses.begin() + out.std_error.occupancy.size(),
              out.std_error.occupancy.begin());
    out.std_error.delta0 = ses[out.std_error.occupancy.size()];
    out.std_error.delta1 = ses[out.std_error.occupancy.size() + 1];
    out.u_std_error = ses[dims - 1];
    return out;
}

MetricsReport compute_metrics(const sim::SimResult& result, const sim::SimConfig& cfg,
                              const EnergyParams& energy, double warmup) {
    MetricsReport report;
    report.warmup_used = warmup;

    try {
        report.mean_wait = empirical_mean_wait(result.tasks, warmup);
    } catch (const empty_sample_error&) {
        report.mean_wait = std::numeric_limits<double>::quiet_NaN();
    }

    // power and flow rates over the post-warmup sample window
    std::size_t first = 0;
    while (first < result.samples.size() && result.samples[first].t < warmup) ++first;
    if (first >= result.samples.size())
        throw empty_sample_error("no samples past the warmup");
    double power = 0.0;
    for (std::size_t k = first; k < result.samples.size(); ++k)
        power += energy_per_server(result.samples[k].fluid, energy);
    report.sample_count = static_cast<long long>(result.samples.size() - first);
    report.mean_power = power / static_cast<double>(report.sample_count);
    report.normalized_power = report.mean_power / (energy.p_full + energy.p_idle);

    const auto& begin = result.samples[first];
    const auto& end = result.samples.back();
    const double window = end.t - begin.t;
    const auto arrived = end.arrivals - begin.arrivals;
    const auto dropped = end.drops - begin.drops;
    if (window > 0.0 && arrived > 0) {
        report.admitted_load =
            static_cast<double>(arrived - dropped) / (cfg.n_servers * window);
        report.loss_fraction = static_cast<double>(dropped) / static_cast<double>(arrived);
    } else {
        report.admitted_load = 0.0;
        report.loss_fraction = 0.0;
    }
    report.wastage = energy_wastage(report.mean_power, report.admitted_load, energy);
    report.msg_per_task =
        result.arrivals > 0
            ? static_cast<double>(result.msgs_green + result.msgs_red) /
                  static_cast<double>(result.arrivals)
            : 0.0;
    return report;
}

} // namespace tabs::metrics
