#pragma once

#include "lightdp/net.hpp"

namespace lightdp {

// Analytic cost model for the policy. FLOPs are multiply-accumulates x 2 in
// the linear layers and attention products; the per-step denoiser term counts
// retained transformer blocks only, so it is exactly linear in depth and in
// step count. The encoder runs once per action prediction.

// Exact scalar-parameter count: embeddings, conditioning, head, plus every
// retained block. Pruned blocks contribute zero.
i64 count_params(const DenoiserConfig & cfg, const std::vector<int> & masks);
i64 count_params(const DenoiserConfig & cfg);  // all blocks retained

// encoder_flops_override > 0 substitutes a fixed cost for the observation
// encoder (the paper-scale encoders are modeled, not run).
struct FlopsModel {
    i64 encoder = 0;            // once per action prediction
    i64 denoiser_per_step = 0;  // retained blocks only
    i64 total(i64 steps) const { return encoder + steps * denoiser_per_step; }
};

FlopsModel count_flops(const DenoiserConfig & cfg, const std::vector<int> & masks,
                       i64 encoder_flops_override = 0);
i64 count_flops_total(const DenoiserConfig & cfg, const std::vector<int> & masks, i64 steps,
                      i64 encoder_flops_override = 0);

}  // namespace lightdp
