#pragma once

#include <string>
#include <vector>

#include "lightdp/common.hpp"

namespace lightdp {

// One evaluated configuration, persisted as a flat key=value "row.kv" file in
// its run directory. Missing measurements stay negative and render "pending".
struct ReportRow {
    std::string name;
    int depth = 0;
    int steps = 0;
    i64 params = 0;
    i64 flops_encoder = 0;
    i64 flops_denoiser = 0;  // per step
    i64 flops_total = 0;
    double latency_ms = -1.0;
    double success = -1.0;
    double coverage = -1.0;
};

void write_row(const std::string & path, const ReportRow & row);
ReportRow read_row(const std::string & path);

// Text table with ratio columns against the teacher row. Checks the
// per-row accounting identity flops_total = encoder + steps * denoiser.
std::string make_report(const std::vector<ReportRow> & rows, const std::string & teacher_name);
std::string make_report_csv(const std::vector<ReportRow> & rows, const std::string & teacher_name);

}  // namespace lightdp
