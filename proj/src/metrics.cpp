#include "lightdp/metrics.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace lightdp {

MetricsLog::MetricsLog(const std::string & path) {
    f_ = std::fopen(path.c_str(), "wb");
    if (!f_) throw contract_error("metrics: cannot open " + path + " for writing");
}

MetricsLog::~MetricsLog() { close(); }

void MetricsLog::close() {
    if (f_) {
        std::fclose(f_);
        f_ = nullptr;
    }
}

std::string MetricsLog::format_value(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

void MetricsLog::record(i64 step, const std::vector<std::pair<std::string, double>> & kv) {
    if (!f_) throw contract_error("metrics: log is closed");
    if (step <= last_step_)
        throw contract_error("metrics: step indices must be strictly increasing (got " +
                             std::to_string(step) + " after " + std::to_string(last_step_) + ")");
    last_step_ = step;
    std::fprintf(f_, "step=%lld", (long long)step);
    for (const auto & [k, v] : kv) std::fprintf(f_, " %s=%s", k.c_str(), format_value(v).c_str());
    std::fprintf(f_, "\n");
    std::fflush(f_);
}

void MetricsLog::comment(const std::string & text) {
    if (!f_) throw contract_error("metrics: log is closed");
    std::fprintf(f_, "# %s\n", text.c_str());
    std::fflush(f_);
}

std::vector<MetricsRecord> read_metrics(const std::string & path) {
    std::ifstream in(path);
    if (!in) throw contract_error("metrics: cannot open " + path);
    std::vector<MetricsRecord> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        MetricsRecord rec;
        std::istringstream ss(line);
        std::string tok;
        bool have_step = false;
        while (ss >> tok) {
            const size_t eq = tok.find('=');
            if (eq == std::string::npos) continue;
            const std::string key = tok.substr(0, eq);
            const std::string val = tok.substr(eq + 1);
            if (key == "step") {
                rec.step = std::stoll(val);
                have_step = true;
            } else {
                rec.values[key] = std::stod(val);
            }
        }
        if (have_step) out.push_back(std::move(rec));
    }
    return out;
}

}  // namespace lightdp
