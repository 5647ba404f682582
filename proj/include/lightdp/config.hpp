#pragma once

#include <map>
#include <string>
#include <vector>

#include "lightdp/common.hpp"

namespace lightdp {

// Flat key=value run configuration. Every tunable of every stage lives here;
// unknown keys are rejected and each run writes its fully resolved config
// next to its outputs.
struct RunConfig {
    // network
    int net_depth = 8;
    int net_hidden = 256;
    int net_heads = 4;
    int net_horizon = 16;
    int net_ffn_mult = 4;

    // edm / diffusion
    double edm_sigma_data = 0.5;
    double edm_sigma_min = 0.002;
    double edm_sigma_max = 80.0;
    double edm_pmean = -1.2;
    double edm_pstd = 1.2;
    double edm_rho = 7.0;

    // environment (the remaining physics constants are fixed in PushSimConfig)
    int env_max_steps = 300;
    double env_coverage_threshold = 0.9;
    int env_exec_horizon = 8;

    // dataset
    int data_episodes = 500;
    int data_seed = 7;

    // teacher training
    double train_lr = 1e-4;
    double train_weight_decay = 0.0;
    int train_batch = 64;
    int train_steps = 3000;
    int train_seed = 1;
    int train_log_every = 50;

    // pruning
    std::string prune_scheme = "1:2";  // N:M
    double prune_gate_lr = 0.05;
    double prune_tau_start = 4.0;
    double prune_tau_end = 0.1;
    double prune_snapshot_frac = 2.0 / 3.0;
    std::string prune_stage = "distill";  // "distill" or "pretrain"
    int prune_epochs = 12;                // used by the pretrain-stage route
    int prune_steps_per_epoch = 150;

    // consistency distillation
    int distill_skip = 10;
    int distill_schedule_steps = 100;
    double distill_mu_start = 0.95;
    double distill_mu_end = 0.999;
    int distill_epochs = 12;
    int distill_steps_per_epoch = 150;
    double distill_lr = 5e-4;
    bool distill_teacher_substeps = false;  // k unit DDIM steps instead of one

    // evaluation
    int eval_episodes = 100;
    int eval_steps = 100;  // denoiser evaluations per action prediction
    int eval_seed = 100000;

    // latency benchmark
    int bench_trials = 30;
    int bench_steps = 100;

    void apply_line(const std::string & line);          // "key=value"
    void apply_file(const std::string & path);
    std::string serialized() const;                     // deterministic order
    void validate() const;

    // "N:M" -> {N, M}
    std::pair<int, int> scheme() const;
};

}  // namespace lightdp
