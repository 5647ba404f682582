#include "lightdp/config.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

namespace lightdp {

namespace {

struct Field {
    const char * key;
    std::function<void(RunConfig &, const std::string &)> set;
    std::function<std::string(const RunConfig &)> get;
};

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

int parse_int(const std::string & v, const char * key) {
    try {
        size_t pos = 0;
        const int out = std::stoi(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception &) {
        throw contract_error(std::string("config: bad integer for ") + key + ": '" + v + "'");
    }
}

double parse_double(const std::string & v, const char * key) {
    try {
        size_t pos = 0;
        const double out = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception &) {
        throw contract_error(std::string("config: bad number for ") + key + ": '" + v + "'");
    }
}

bool parse_bool(const std::string & v, const char * key) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw contract_error(std::string("config: bad bool for ") + key + ": '" + v + "'");
}

#define INT_FIELD(key, member)                                                          \
    Field{key, [](RunConfig & c, const std::string & v) { c.member = parse_int(v, key); }, \
          [](const RunConfig & c) { return std::to_string(c.member); }}
#define DBL_FIELD(key, member)                                                             \
    Field{key, [](RunConfig & c, const std::string & v) { c.member = parse_double(v, key); }, \
          [](const RunConfig & c) { return fmt_double(c.member); }}
#define STR_FIELD(key, member)                                               \
    Field{key, [](RunConfig & c, const std::string & v) { c.member = v; }, \
          [](const RunConfig & c) { return c.member; }}
#define BOOL_FIELD(key, member)                                                          \
    Field{key, [](RunConfig & c, const std::string & v) { c.member = parse_bool(v, key); }, \
          [](const RunConfig & c) { return c.member ? std::string("true") : std::string("false"); }}

const std::vector<Field> & fields() {
    static const std::vector<Field> f = {
        INT_FIELD("net.depth", net_depth),
        INT_FIELD("net.hidden", net_hidden),
        INT_FIELD("net.heads", net_heads),
        INT_FIELD("net.horizon", net_horizon),
        INT_FIELD("net.ffn_mult", net_ffn_mult),
        DBL_FIELD("edm.sigma_data", edm_sigma_data),
        DBL_FIELD("edm.sigma_min", edm_sigma_min),
        DBL_FIELD("edm.sigma_max", edm_sigma_max),
        DBL_FIELD("edm.pmean", edm_pmean),
        DBL_FIELD("edm.pstd", edm_pstd),
        DBL_FIELD("edm.rho", edm_rho),
        INT_FIELD("env.max_steps", env_max_steps),
        DBL_FIELD("env.coverage_threshold", env_coverage_threshold),
        INT_FIELD("env.exec_horizon", env_exec_horizon),
        INT_FIELD("data.episodes", data_episodes),
        INT_FIELD("data.seed", data_seed),
        DBL_FIELD("train.lr", train_lr),
        DBL_FIELD("train.weight_decay", train_weight_decay),
        INT_FIELD("train.batch", train_batch),
        INT_FIELD("train.steps", train_steps),
        INT_FIELD("train.seed", train_seed),
        INT_FIELD("train.log_every", train_log_every),
        STR_FIELD("prune.scheme", prune_scheme),
        DBL_FIELD("prune.gate_lr", prune_gate_lr),
        DBL_FIELD("prune.tau_start", prune_tau_start),
        DBL_FIELD("prune.tau_end", prune_tau_end),
        DBL_FIELD("prune.snapshot_frac", prune_snapshot_frac),
        STR_FIELD("prune.stage", prune_stage),
        INT_FIELD("prune.epochs", prune_epochs),
        INT_FIELD("prune.steps_per_epoch", prune_steps_per_epoch),
        INT_FIELD("distill.skip", distill_skip),
        INT_FIELD("distill.schedule_steps", distill_schedule_steps),
        DBL_FIELD("distill.mu_start", distill_mu_start),
        DBL_FIELD("distill.mu_end", distill_mu_end),
        INT_FIELD("distill.epochs", distill_epochs),
        INT_FIELD("distill.steps_per_epoch", distill_steps_per_epoch),
        DBL_FIELD("distill.lr", distill_lr),
        BOOL_FIELD("distill.teacher_substeps", distill_teacher_substeps),
        INT_FIELD("eval.episodes", eval_episodes),
        INT_FIELD("eval.steps", eval_steps),
        INT_FIELD("eval.seed", eval_seed),
        INT_FIELD("bench.trials", bench_trials),
        INT_FIELD("bench.steps", bench_steps),
    };
    return f;
}

#undef INT_FIELD
#undef DBL_FIELD
#undef STR_FIELD
#undef BOOL_FIELD

std::string trim(const std::string & s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    size_t b = s.find_last_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    return s.substr(a, b - a + 1);
}

}  // namespace

void RunConfig::apply_line(const std::string & line) {
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') return;
    const size_t eq = t.find('=');
    if (eq == std::string::npos)
        throw contract_error("config: expected key=value, got '" + t + "'");
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    for (const auto & f : fields()) {
        if (key == f.key) {
            f.set(*this, value);
            return;
        }
    }
    throw contract_error("config: unknown key '" + key + "'");
}

void RunConfig::apply_file(const std::string & path) {
    std::ifstream in(path);
    if (!in) throw contract_error("config: cannot open " + path);
    std::string line;
    while (std::getline(in, line)) apply_line(line);
}

std::string RunConfig::serialized() const {
    std::ostringstream out;
    for (const auto & f : fields()) out << f.key << " = " << f.get(*this) << "\n";
    return out.str();
}

std::pair<int, int> RunConfig::scheme() const {
    const size_t colon = prune_scheme.find(':');
    if (colon == std::string::npos)
        throw contract_error("config: prune.scheme must be N:M, got '" + prune_scheme + "'");
    const int n = parse_int(prune_scheme.substr(0, colon), "prune.scheme");
    const int m = parse_int(prune_scheme.substr(colon + 1), "prune.scheme");
    return {n, m};
}

void RunConfig::validate() const {
    if (net_depth < 1 || net_hidden < net_heads || net_heads < 1 ||
        net_hidden % net_heads != 0)
        throw contract_error("config: bad network dims");
    if (!(edm_sigma_min > 0 && edm_sigma_min < edm_sigma_max))
        throw contract_error("config: need 0 < sigma_min < sigma_max");
    const auto [n, m] = scheme();
    if (!(n >= 1 && n < m)) throw contract_error("config: prune scheme needs 1 <= N < M");
    if (net_depth % m != 0)
        throw contract_error("config: depth " + std::to_string(net_depth) +
                             " not divisible by scheme M=" + std::to_string(m));
    if (!(distill_mu_start >= 0 && distill_mu_start <= distill_mu_end && distill_mu_end < 1))
        throw contract_error("config: need 0 <= mu_start <= mu_end < 1");
    if (!(distill_skip >= 1 && distill_skip < distill_schedule_steps))
        throw contract_error("config: need 1 <= skip < schedule_steps");
    if (prune_stage != "distill" && prune_stage != "pretrain")
        throw contract_error("config: prune.stage must be 'distill' or 'pretrain'");
    if (eval_steps < 1 || eval_episodes < 1 || bench_trials < 10)
        throw contract_error("config: eval/bench settings out of range");
}

}  // namespace lightdp
