#pragma once

#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "lightdp/common.hpp"

namespace lightdp {

// Line-delimited metrics: one "key=value key=value ..." record per line,
// deterministic formatting. Wall-clock timings go into '#'-prefixed comment
// lines so the data records stay bit-identical across reruns of the same
// seeded config.
class MetricsLog {
  public:
    MetricsLog() = default;
    explicit MetricsLog(const std::string & path);
    ~MetricsLog();
    MetricsLog(const MetricsLog &) = delete;
    MetricsLog & operator=(const MetricsLog &) = delete;

    void record(i64 step, const std::vector<std::pair<std::string, double>> & kv);
    void comment(const std::string & text);
    void close();

    static std::string format_value(double v);

  private:
    FILE * f_ = nullptr;
    i64 last_step_ = -1;
};

struct MetricsRecord {
    i64 step = 0;
    std::map<std::string, double> values;
};

// Parses data lines (comments skipped).
std::vector<MetricsRecord> read_metrics(const std::string & path);

}  // namespace lightdp
