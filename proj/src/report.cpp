#include "lightdp/report.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace lightdp {

void write_row(const std::string & path, const ReportRow & row) {
    std::ofstream out(path);
    if (!out) throw contract_error("report: cannot write " + path);
    out << "name = " << row.name << "\n";
    out << "depth = " << row.depth << "\n";
    out << "steps = " << row.steps << "\n";
    out << "params = " << row.params << "\n";
    out << "flops.encoder = " << row.flops_encoder << "\n";
    out << "flops.denoiser = " << row.flops_denoiser << "\n";
    out << "flops.total = " << row.flops_total << "\n";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", row.latency_ms);
    out << "latency.ms = " << buf << "\n";
    std::snprintf(buf, sizeof buf, "%.9g", row.success);
    out << "success = " << buf << "\n";
    std::snprintf(buf, sizeof buf, "%.9g", row.coverage);
    out << "coverage = " << buf << "\n";
}

ReportRow read_row(const std::string & path) {
    std::ifstream in(path);
    if (!in) throw contract_error("report: cannot read " + path);
    ReportRow row;
    std::string line;
    while (std::getline(in, line)) {
        const size_t eq = line.find('=');
        if (eq == std::string::npos) continue;
        auto trim = [](std::string s) {
            const size_t a = s.find_first_not_of(" \t");
            const size_t b = s.find_last_not_of(" \t\r\n");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        if (key == "name") row.name = val;
        else if (key == "depth") row.depth = std::stoi(val);
        else if (key == "steps") row.steps = std::stoi(val);
        else if (key == "params") row.params = std::stoll(val);
        else if (key == "flops.encoder") row.flops_encoder = std::stoll(val);
        else if (key == "flops.denoiser") row.flops_denoiser = std::stoll(val);
        else if (key == "flops.total") row.flops_total = std::stoll(val);
        else if (key == "latency.ms") row.latency_ms = std::stod(val);
        else if (key == "success") row.success = std::stod(val);
        else if (key == "coverage") row.coverage = std::stod(val);
        else throw contract_error("report: unknown key '" + key + "' in " + path);
    }
    return row;
}

namespace {

const ReportRow & teacher_row(const std::vector<ReportRow> & rows, const std::string & name) {
    for (const auto & r : rows)
        if (r.name == name) return r;
    throw contract_error("report: no teacher row named '" + name + "'");
}

void check_identity(const ReportRow & r) {
    if (r.flops_total != r.flops_encoder + i64(r.steps) * r.flops_denoiser)
        throw contract_error("report: flops identity violated for row '" + r.name + "'");
}

std::string fmt_or_pending(double v, const char * fmt) {
    if (v < 0) return "pending";
    char buf[64];
    std::snprintf(buf, sizeof buf, fmt, v);
    return buf;
}

}  // namespace

std::string make_report(const std::vector<ReportRow> & rows, const std::string & teacher_name) {
    const ReportRow & t = teacher_row(rows, teacher_name);
    std::ostringstream out;
    out << "config            depth steps     params      GFLOPs   latency_ms   success"
           "   flops_red   speedup\n";
    for (const auto & r : rows) {
        check_identity(r);
        const double gflops = double(r.flops_total) / 1e9;
        const double flops_red = 1.0 - double(r.flops_total) / double(t.flops_total);
        char line[256];
        std::snprintf(line, sizeof line, "%-17s %5d %5d %10lld %11.5f %12s %9s %11.4f %9s\n",
                      r.name.c_str(), r.depth, r.steps, (long long)r.params, gflops,
                      fmt_or_pending(r.latency_ms, "%.3f").c_str(),
                      fmt_or_pending(r.success, "%.3f").c_str(), flops_red,
                      (r.latency_ms > 0 && t.latency_ms > 0)
                          ? fmt_or_pending(t.latency_ms / r.latency_ms, "%.1fx").c_str()
                          : "pending");
        out << line;
    }
    return out.str();
}

std::string make_report_csv(const std::vector<ReportRow> & rows,
                            const std::string & teacher_name) {
    const ReportRow & t = teacher_row(rows, teacher_name);
    std::ostringstream out;
    out << "name,depth,steps,params,flops_encoder,flops_denoiser,flops_total,latency_ms,"
           "success,coverage,flops_reduction,speedup\n";
    for (const auto & r : rows) {
        check_identity(r);
        out << r.name << "," << r.depth << "," << r.steps << "," << r.params << ","
            << r.flops_encoder << "," << r.flops_denoiser << "," << r.flops_total << ","
            << r.latency_ms << "," << r.success << "," << r.coverage << ","
            << (1.0 - double(r.flops_total) / double(t.flops_total)) << ","
            << ((r.latency_ms > 0 && t.latency_ms > 0) ? t.latency_ms / r.latency_ms : -1.0)
            << "\n";
    }
    return out.str();
}

}  // namespace lightdp
