#pragma once

#include <optional>
#include <string>

#include "lightdp/bench.hpp"
#include "lightdp/checkpoint.hpp"
#include "lightdp/flops.hpp"
#include "lightdp/config.hpp"
#include "lightdp/dataset.hpp"
#include "lightdp/distill.hpp"
#include "lightdp/metrics.hpp"
#include "lightdp/pruner.hpp"
#include "lightdp/report.hpp"

// Pipeline stages behind the CLI subcommands. The acceptance suite drives the
// same functions in-process.

namespace lightdp::harness {

sim::PushSimConfig sim_config(const RunConfig & rc);
DenoiserConfig net_config(const RunConfig & rc);
EdmCoeffs edm_coeffs(const RunConfig & rc, EdmMode mode);

// Sampler-backed policy for closed-loop evaluation: Euler PF-ODE integration
// for diffusion checkpoints, multi-step consistency sampling for distilled
// ones. Thread-safe across episodes (read-only weights).
class NetPolicy : public sim::Policy {
  public:
    NetPolicy(const DenoiserNet<float> & net, EdmCoeffs co, int sample_steps);

    std::vector<double> act(const sim::Observation & obs, Rng & rng) override;
    int horizon() const override { return net_->cfg.horizon; }

  private:
    const DenoiserNet<float> * net_;
    EdmCoeffs co_;
    WrappedPolicy<float> wrapped_;
    std::vector<double> schedule_;
};

TrajectoryDataset gen_data(const RunConfig & rc);

DenoiserNet<float> train_teacher(const RunConfig & rc, const TrajectoryDataset & data,
                                 MetricsLog * log);

// Gate training under L_DM followed by selection (the prune.stage=pretrain
// route). Returns the pruned network, its masks, and the trained logits.
struct PruneOutput {
    DenoiserNet<float> net;
    Mask masks;
    GateLogits logits;
    std::vector<double> importances;
};
PruneOutput prune_pretrain(const RunConfig & rc, const DenoiserNet<float> & teacher,
                           const TrajectoryDataset & data);

// Plain L_DM fine-tuning (post-prune recovery).
void finetune(const RunConfig & rc, DenoiserNet<float> & net, const TrajectoryDataset & data,
              int steps, MetricsLog * log);

DistillResult<float> distill_policy(const RunConfig & rc, const DenoiserNet<float> & teacher,
                                    const TrajectoryDataset & data, bool with_scheme,
                                    MetricsLog * log);

struct EvalOutput {
    double success = 0.0;
    double coverage = 0.0;
    sim::EvalResult detail;
};
EvalOutput eval_checkpoint(const RunConfig & rc, const Checkpoint & ck, int episodes, int steps,
                           std::uint64_t seed);

// Human-readable pruning report plus machine-readable key=value lines.
std::string prune_report_text(const DenoiserConfig & cfg, const std::vector<double> & importances,
                              const GateLogits & logits, const Mask & masks, int steps_full,
                              int steps_pruned);

ReportRow row_for(const std::string & name, const DenoiserConfig & cfg, int steps);

// Output root: LIGHTDP_OUT env var when set, else the given default.
std::string output_root(const std::string & fallback = ".");

}  // namespace lightdp::harness
