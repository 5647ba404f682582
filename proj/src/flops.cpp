#include "lightdp/flops.hpp"

namespace lightdp {

namespace {

i64 block_param_count(const DenoiserConfig & cfg) {
    const i64 H = cfg.hidden, F = i64(cfg.ffn_mult) * H;
    const i64 attn = 4 * (H * H + H);          // q, k, v, o projections + biases
    const i64 ffn = (H * F + F) + (F * H + H);
    const i64 lns = 4 * H;                     // two layernorms, gain + bias
    return attn + ffn + lns;
}

i64 retained(const DenoiserConfig & cfg, const std::vector<int> & masks) {
    if (int(masks.size()) != cfg.depth)
        throw contract_error("count: mask length " + std::to_string(masks.size()) +
                             " != depth " + std::to_string(cfg.depth));
    i64 n = 0;
    for (int m : masks) n += (m != 0);
    return n;
}

}  // namespace

i64 count_params(const DenoiserConfig & cfg, const std::vector<int> & masks) {
    cfg.validate();
    const i64 H = cfg.hidden, A = cfg.action_dim, T = cfg.horizon, O = cfg.obs_dim;
    i64 n = 0;
    n += A * H + H;          // action embedding
    n += T * H;              // positional table
    n += 2 * (H * H + H);    // timestep MLP
    n += (O * H + H) + (H * H + H);  // observation encoder
    n += H * 6 * H + 6 * H;  // shared modulation
    n += 2 * H;              // final layernorm
    n += H * A + A;          // output head
    n += retained(cfg, masks) * block_param_count(cfg);
    return n;
}

i64 count_params(const DenoiserConfig & cfg) {
    return count_params(cfg, std::vector<int>(size_t(cfg.depth), 1));
}

FlopsModel count_flops(const DenoiserConfig & cfg, const std::vector<int> & masks,
                       i64 encoder_flops_override) {
    cfg.validate();
    const i64 H = cfg.hidden, T = cfg.horizon, F = i64(cfg.ffn_mult) * H, O = cfg.obs_dim;
    FlopsModel fm;
    fm.encoder = encoder_flops_override > 0 ? encoder_flops_override : 2 * (O * H + H * H);
    // per block: qkvo projections, attention score & apply, ffn
    const i64 block_macs = 4 * T * H * H + 2 * T * T * H + 2 * T * H * F;
    fm.denoiser_per_step = 2 * retained(cfg, masks) * block_macs;
    return fm;
}

i64 count_flops_total(const DenoiserConfig & cfg, const std::vector<int> & masks, i64 steps,
                      i64 encoder_flops_override) {
    if (steps < 1) throw contract_error("count_flops_total: steps must be >= 1");
    return count_flops(cfg, masks, encoder_flops_override).total(steps);
}

}  // namespace lightdp
