#pragma once

#include <string>

#include "tabs/fluid.hpp"
#include "tabs/metrics.hpp"
#include "tabs/simulate.hpp"

namespace tabs::csv {

// All numerics are emitted with 12 significant digits ('.' decimal
// separator), so identical runs produce byte-identical files.
std::string format_number(double v);

std::string trace_header(int buffer);
std::string trace_row(const sim::TraceSample& s, int buffer);

// Fluid rows share the trace schema plus a trailing xi column.
std::string fluid_header(int buffer);
std::string fluid_row(const fluid::TrajectorySample& s, int buffer);

std::string task_header();
std::string task_row(const sim::TaskRecord& t);

std::string metrics_header(bool with_status);
std::string metrics_row(const std::string& scenario, sim::Policy policy,
                        const sim::SimConfig& cfg, const metrics::MetricsReport& report,
                        const std::string& status = "");

void write_file(const std::string& path, const std::string& contents);

} // namespace tabs::csv
