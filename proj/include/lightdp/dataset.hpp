#pragma once

#include <string>

#include "lightdp/edm.hpp"
#include "lightdp/pushsim.hpp"

namespace lightdp {

// Expert demonstration storage. On disk (".ldpt", all little-endian):
//
//   magic "LDPT" | u32 version | u32 obs_dim | u32 action_dim | u32 horizon
//   u32 episode_count
//   per episode: u32 length
//                f32 obs[length * obs_dim]
//                f32 actions[length * action_dim]
//
// Training samples are windows: the observation at step t paired with the
// action chunk actions[t .. t+horizon), padded by repeating the last action
// at episode end.
struct Episode {
    std::vector<float> obs;      // length * obs_dim
    std::vector<float> actions;  // length * action_dim
    int length = 0;
};

class TrajectoryDataset {
  public:
    int obs_dim = 40;
    int action_dim = 2;
    int horizon = 16;
    std::vector<Episode> episodes;

    void save(const std::string & path) const;
    static TrajectoryDataset load(const std::string & path);

    i64 num_windows() const;

    // Uniform window sample, assembled into batch tensors.
    Batch<float> sample_batch(int batch, Rng & rng) const;

    // One specific window (for deterministic probes).
    void window(i64 index, std::vector<float> & obs_out, std::vector<float> & chunk_out) const;
};

// Rolls the scripted expert and keeps successful episodes until `episodes`
// have been collected (consecutive seeds from seed_base).
TrajectoryDataset generate_dataset(const sim::PushSimConfig & cfg, int episodes,
                                   std::uint64_t seed_base, int horizon);

}  // namespace lightdp
