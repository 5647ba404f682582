#include "lightdp/harness.hpp"

#include <cstdlib>
#include <sstream>

namespace lightdp::harness {

sim::PushSimConfig sim_config(const RunConfig & rc) {
    sim::PushSimConfig cfg;
    cfg.max_steps = rc.env_max_steps;
    cfg.coverage_threshold = rc.env_coverage_threshold;
    return cfg;
}

DenoiserConfig net_config(const RunConfig & rc) {
    const sim::PushSimConfig sc = sim_config(rc);
    DenoiserConfig cfg;
    cfg.depth = rc.net_depth;
    cfg.hidden = rc.net_hidden;
    cfg.heads = rc.net_heads;
    cfg.horizon = rc.net_horizon;
    cfg.ffn_mult = rc.net_ffn_mult;
    cfg.action_dim = sc.action_dim();
    cfg.obs_dim = sc.obs_dim();
    cfg.obs_seq_len = sc.obs_seq_len;
    cfg.validate();
    return cfg;
}

EdmCoeffs edm_coeffs(const RunConfig & rc, EdmMode mode) {
    EdmCoeffs co;
    co.mode = mode;
    co.sigma_data = rc.edm_sigma_data;
    co.sigma_min = rc.edm_sigma_min;
    co.sigma_max = rc.edm_sigma_max;
    co.pmean = rc.edm_pmean;
    co.pstd = rc.edm_pstd;
    return co;
}

NetPolicy::NetPolicy(const DenoiserNet<float> & net, EdmCoeffs co, int sample_steps)
    : net_(&net), co_(co), wrapped_(net, co),
      schedule_(karras_schedule(sample_steps, co.sigma_min, co.sigma_max)) {}

std::vector<double> NetPolicy::act(const sim::Observation & obs, Rng & rng) {
    Tensor<float> o({1, net_->cfg.obs_dim}, std::vector<float>(obs.begin(), obs.end()));
    Tensor<float> chunk =
        co_.mode == EdmMode::diffusion
            ? sample_euler(wrapped_, o, schedule_, rng, net_->cfg.horizon, net_->cfg.action_dim)
            : sample_consistency(wrapped_, o, schedule_, rng, net_->cfg.horizon,
                                 net_->cfg.action_dim);
    std::vector<double> out(chunk.data().begin(), chunk.data().end());
    return out;
}

TrajectoryDataset gen_data(const RunConfig & rc) {
    return generate_dataset(sim_config(rc), rc.data_episodes, std::uint64_t(rc.data_seed),
                            rc.net_horizon);
}

DenoiserNet<float> train_teacher(const RunConfig & rc, const TrajectoryDataset & data,
                                 MetricsLog * log) {
    const DenoiserConfig cfg = net_config(rc);
    if (data.obs_dim != cfg.obs_dim || data.action_dim != cfg.action_dim ||
        data.horizon != cfg.horizon)
        throw contract_error("train: dataset dims do not match the network config");
    DenoiserNet<float> net(cfg);
    Rng rng(std::uint64_t(rc.train_seed));
    net.init_weights(rng);
    const EdmCoeffs co = edm_coeffs(rc, EdmMode::diffusion);
    AdamW<float> opt(rc.train_lr, rc.train_weight_decay);

    for (int it = 0; it < rc.train_steps; ++it) {
        auto batch = data.sample_batch(rc.train_batch, rng);
        Tape<float> tape;
        auto bd = net.bind(&tape);
        auto loss = score_matching_loss(net, bd, co, batch, rng);
        const double lv = double(loss.item());
        if (!std::isfinite(lv))
            throw training_error("train: loss diverged at step " + std::to_string(it));
        tape.backward(loss);
        opt.begin_step();
        for (size_t pi = 0; pi < net.params().size(); ++pi)
            if (tape.has_grad(bd.p[pi].node()))
                opt.step(net.params()[pi].value.data(), tape.grad(bd.p[pi]), pi);
        if (log && (it % rc.train_log_every == 0 || it + 1 == rc.train_steps))
            log->record(it, {{"loss", lv}, {"lr", rc.train_lr}});
    }
    return net;
}

PruneOutput prune_pretrain(const RunConfig & rc, const DenoiserNet<float> & teacher,
                           const TrajectoryDataset & data) {
    const auto [n, m] = rc.scheme();
    const PruningScheme scheme{n, m};
    DenoiserNet<float> net = teacher.clone();

    GateTrainOpts opts;
    opts.epochs = std::max(1, int(std::lround(rc.prune_snapshot_frac * rc.prune_epochs)));
    opts.steps_per_epoch = rc.prune_steps_per_epoch;
    opts.batch = rc.train_batch;
    opts.lr = rc.train_lr;
    opts.weight_decay = rc.train_weight_decay;
    opts.gate_lr = rc.prune_gate_lr;
    opts.tau_start = rc.prune_tau_start;
    opts.tau_end = rc.prune_tau_end;
    opts.seed = std::uint64_t(rc.train_seed) ^ 0x9E3779B9ull;

    const EdmCoeffs co = edm_coeffs(rc, EdmMode::diffusion);
    PruneOutput out;
    out.importances = normalized_importances(net, std::max(1, net.cfg.hidden / 4));
    auto res = train_gates(net, data, scheme, co, opts);
    out.logits = res.logits;
    auto [pruned, masks] = select_and_prune(net, res.logits);
    out.net = std::move(pruned);
    out.masks = masks;
    return out;
}

void finetune(const RunConfig & rc, DenoiserNet<float> & net, const TrajectoryDataset & data,
              int steps, MetricsLog * log) {
    const EdmCoeffs co = edm_coeffs(rc, EdmMode::diffusion);
    Rng rng(std::uint64_t(rc.train_seed) + 0x51ed2701ull);
    AdamW<float> opt(rc.train_lr, rc.train_weight_decay);
    for (int it = 0; it < steps; ++it) {
        auto batch = data.sample_batch(rc.train_batch, rng);
        Tape<float> tape;
        auto bd = net.bind(&tape);
        auto loss = score_matching_loss(net, bd, co, batch, rng);
        const double lv = double(loss.item());
        if (!std::isfinite(lv))
            throw training_error("finetune: loss diverged at step " + std::to_string(it));
        tape.backward(loss);
        opt.begin_step();
        for (size_t pi = 0; pi < net.params().size(); ++pi)
            if (tape.has_grad(bd.p[pi].node()))
                opt.step(net.params()[pi].value.data(), tape.grad(bd.p[pi]), pi);
        if (log && (it % rc.train_log_every == 0 || it + 1 == steps))
            log->record(it, {{"loss", lv}, {"lr", rc.train_lr}});
    }
}

DistillResult<float> distill_policy(const RunConfig & rc, const DenoiserNet<float> & teacher,
                                    const TrajectoryDataset & data, bool with_scheme,
                                    MetricsLog * log) {
    DistillConfig cfg;
    cfg.skip_k = rc.distill_skip;
    cfg.schedule_steps = rc.distill_schedule_steps;
    cfg.mu_start = rc.distill_mu_start;
    cfg.mu_end = rc.distill_mu_end;
    cfg.epochs = rc.distill_epochs;
    cfg.steps_per_epoch = rc.distill_steps_per_epoch;
    cfg.batch = rc.train_batch;
    cfg.lr = rc.distill_lr;
    cfg.weight_decay = rc.train_weight_decay;
    cfg.teacher_substeps = rc.distill_teacher_substeps;
    cfg.rho = rc.edm_rho;
    cfg.gate_lr = rc.prune_gate_lr;
    cfg.tau_start = rc.prune_tau_start;
    cfg.tau_end = rc.prune_tau_end;
    cfg.snapshot_frac = rc.prune_snapshot_frac;
    cfg.seed = std::uint64_t(rc.train_seed) + 0xD1B54A32ull;

    const EdmCoeffs teacher_co = edm_coeffs(rc, EdmMode::diffusion);
    const EdmCoeffs cons = edm_coeffs(rc, EdmMode::consistency);
    WrappedPolicy<float> teacher_fn(teacher, teacher_co);

    std::optional<PruningScheme> scheme;
    if (with_scheme) {
        const auto [n, m] = rc.scheme();
        scheme = PruningScheme{n, m};
    }
    return distill(teacher, teacher_fn, data, scheme, cons, cfg, log);
}

EvalOutput eval_checkpoint(const RunConfig & rc, const Checkpoint & ck, int episodes, int steps,
                           std::uint64_t seed) {
    const sim::PushSimConfig sc = sim_config(rc);
    EdmCoeffs co = edm_coeffs(rc, ck.mode);
    NetPolicy policy(ck.net, co, steps);
    EvalOutput out;
    out.detail = sim::evaluate(sc, policy, episodes, seed, rc.env_max_steps, rc.env_exec_horizon);
    out.success = out.detail.success_rate;
    out.coverage = out.detail.mean_max_coverage;
    return out;
}

std::string prune_report_text(const DenoiserConfig & cfg, const std::vector<double> & importances,
                              const GateLogits & logits, const Mask & masks, int steps_full,
                              int steps_pruned) {
    std::ostringstream out;
    out << "layer importances (normalized):\n";
    for (size_t i = 0; i < importances.size(); ++i) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "  layer %zu: %.6f\n", i, importances[i]);
        out << buf;
    }
    out << "group logits:\n";
    for (size_t g = 0; g < logits.logits.size(); ++g) {
        out << "  group " << g << ":";
        for (size_t c = 0; c < logits.logits[g].size(); ++c) {
            char buf[48];
            std::snprintf(buf, sizeof buf, " %.4f", logits.logits[g][c]);
            out << buf;
            out << "[";
            for (int v : logits.candidates[c]) out << v;
            out << "]";
        }
        out << "\n";
    }
    out << "selected masks:";
    for (int m : masks) out << " " << m;
    out << "\n";

    std::vector<int> all_ones(size_t(cfg.depth), 1);
    const i64 p_full = count_params(cfg, all_ones);
    const i64 p_kept = count_params(cfg, masks);
    const i64 f_full = count_flops_total(cfg, all_ones, steps_full);
    const i64 f_kept = count_flops_total(cfg, masks, steps_pruned);
    out << "params: " << p_full << " -> " << p_kept << "\n";
    out << "flops (" << steps_full << " -> " << steps_pruned << " steps): " << f_full << " -> "
        << f_kept << "\n";
    out << "machine: params.full=" << p_full << " params.pruned=" << p_kept
        << " flops.full=" << f_full << " flops.pruned=" << f_kept << "\n";
    return out.str();
}

ReportRow row_for(const std::string & name, const DenoiserConfig & cfg, int steps) {
    ReportRow row;
    row.name = name;
    row.depth = cfg.depth;
    row.steps = steps;
    const std::vector<int> ones(size_t(cfg.depth), 1);
    row.params = count_params(cfg, ones);
    const auto fm = count_flops(cfg, ones);
    row.flops_encoder = fm.encoder;
    row.flops_denoiser = fm.denoiser_per_step;
    row.flops_total = fm.total(steps);
    return row;
}

std::string output_root(const std::string & fallback) {
    const char * env = std::getenv("LIGHTDP_OUT");
    return env && *env ? std::string(env) : fallback;
}

}  // namespace lightdp::harness
