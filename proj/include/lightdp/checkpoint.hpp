#pragma once

#include <optional>
#include <string>

#include "lightdp/edm.hpp"
#include "lightdp/net.hpp"

namespace lightdp {

// Single-file checkpoint with an explicit little-endian layout (".ckpt"):
//
//   magic "LDPC" | u32 version | u8 edm_mode
//   u32 depth, hidden, heads, action_dim, horizon, obs_seq_len, obs_dim, ffn_mult
//   u32 n_params
//   per param: u16 name_len | name | u8 ndims | u32 dims[] | f32 data[]
//   u8 has_gates  [ u32 n_groups, per group: u32 len, f64 logits[] ]
//   u8 has_masks  [ u32 n, u8 masks[] ]
//
// Parameters are written in registry order, so save -> load -> save is
// byte-identical.
struct Checkpoint {
    DenoiserNet<float> net;
    EdmMode mode = EdmMode::diffusion;
    std::optional<std::vector<std::vector<double>>> gate_logits;
    std::optional<std::vector<int>> masks;
};

void save_checkpoint(const std::string & path, const Checkpoint & ck);
Checkpoint load_checkpoint(const std::string & path);

}  // namespace lightdp
