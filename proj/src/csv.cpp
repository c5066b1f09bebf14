#include "tabs/csv.hpp"

#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace tabs::csv {

std::string format_number(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

std::string trace_header(int buffer) {
    std::string out = "t";
    for (int i = 1; i <= buffer; ++i) out += ",q" + std::to_string(i);
    out += ",delta0,delta1,u,arrivals,departures,drops,msgs_green,msgs_red,setups";
    return out;
}

namespace {

std::string state_columns(double t, const FluidState& s, double u, int buffer) {
    std::string out = format_number(t);
    for (int i = 1; i <= buffer; ++i) out += "," + format_number(s.q_level(i));
    out += "," + format_number(s.delta0);
    out += "," + format_number(s.delta1);
    out += "," + format_number(u);
    return out;
}

} // namespace

std::string trace_row(const sim::TraceSample& s, int buffer) {
    std::string out = state_columns(s.t, s.fluid, s.u, buffer);
    out += "," + std::to_string(s.arrivals);
    out += "," + std::to_string(s.departures);
    out += "," + std::to_string(s.drops);
    out += "," + std::to_string(s.msgs_green);
    out += "," + std::to_string(s.msgs_red);
    out += "," + std::to_string(s.setups);
    return out;
}

std::string fluid_header(int buffer) { return trace_header(buffer) + ",xi"; }

std::string fluid_row(const fluid::TrajectorySample& s, int buffer) {
    // the flow-count columns have no meaning for the deterministic system
    std::string out = state_columns(s.t, s.state, s.u, buffer);
    out += ",0,0,0,0,0,0";
    out += "," + format_number(s.xi);
    return out;
}

std::string task_header() { return "arrival,start,departure,server,dropped"; }

std::string task_row(const sim::TaskRecord& t) {
    std::string out = format_number(t.arrival);
    out += ",";
    if (t.start >= 0.0) out += format_number(t.start);
    out += ",";
    if (t.departure >= 0.0) out += format_number(t.departure);
    out += ",";
    if (t.server >= 0) out += std::to_string(t.server);
    out += ",";
    out += t.dropped ? "1" : "0";
    return out;
}

std::string metrics_header(bool with_status) {
    std::string out = "scenario,policy,N,lambda,mu,nu,mean_wait,mean_power,"
                      "normalized_power,wastage,loss_fraction,msg_per_task";
    if (with_status) out += ",status";
    return out;
}

std::string metrics_row(const std::string& scenario, sim::Policy policy,
                        const sim::SimConfig& cfg, const metrics::MetricsReport& report,
                        const std::string& status) {
    std::string out = scenario;
    out += ",";
    out += sim::to_string(policy);
    out += "," + std::to_string(cfg.n_servers);
    out += "," + format_number(cfg.arrivals.nominal());
    out += "," + format_number(cfg.mu);
    out += "," + format_number(cfg.nu);
    out += "," + format_number(report.mean_wait);
    out += "," + format_number(report.mean_power);
    out += "," + format_number(report.normalized_power);
    out += "," + format_number(report.wastage);
    out += "," + format_number(report.loss_fraction);
    out += "," + format_number(report.msg_per_task);
    if (!status.empty()) out += "," + status;
    return out;
}

void write_file(const std::string& path, const std::string& contents) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    out << contents;
    if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

} // namespace tabs::csv
