#include "lightdp/dataset.hpp"

#include <cstdio>
#include <cstring>

namespace lightdp {

namespace {

void put_u32(FILE * f, std::uint32_t v) {
    unsigned char b[4] = {(unsigned char)(v & 0xff), (unsigned char)((v >> 8) & 0xff),
                          (unsigned char)((v >> 16) & 0xff), (unsigned char)((v >> 24) & 0xff)};
    std::fwrite(b, 1, 4, f);
}

std::uint32_t get_u32(FILE * f) {
    unsigned char b[4];
    if (std::fread(b, 1, 4, f) != 4) throw contract_error("dataset: truncated file");
    return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
           (std::uint32_t(b[3]) << 24);
}

void put_f32(FILE * f, const float * v, size_t n) {
    // 4 LE bytes per value
    for (size_t i = 0; i < n; ++i) {
        std::uint32_t bits;
        std::memcpy(&bits, &v[i], 4);
        put_u32(f, bits);
    }
}

void get_f32(FILE * f, float * v, size_t n) {
    for (size_t i = 0; i < n; ++i) {
        const std::uint32_t bits = get_u32(f);
        std::memcpy(&v[i], &bits, 4);
    }
}

}  // namespace

void TrajectoryDataset::save(const std::string & path) const {
    FILE * f = std::fopen(path.c_str(), "wb");
    if (!f) throw contract_error("dataset: cannot open " + path + " for writing");
    std::fwrite("LDPT", 1, 4, f);
    put_u32(f, 1);
    put_u32(f, std::uint32_t(obs_dim));
    put_u32(f, std::uint32_t(action_dim));
    put_u32(f, std::uint32_t(horizon));
    put_u32(f, std::uint32_t(episodes.size()));
    for (const auto & ep : episodes) {
        put_u32(f, std::uint32_t(ep.length));
        put_f32(f, ep.obs.data(), ep.obs.size());
        put_f32(f, ep.actions.data(), ep.actions.size());
    }
    std::fclose(f);
}

TrajectoryDataset TrajectoryDataset::load(const std::string & path) {
    FILE * f = std::fopen(path.c_str(), "rb");
    if (!f) throw contract_error("dataset: cannot open " + path);
    char magic[4];
    if (std::fread(magic, 1, 4, f) != 4 || std::memcmp(magic, "LDPT", 4) != 0) {
        std::fclose(f);
        throw contract_error("dataset: bad magic in " + path);
    }
    TrajectoryDataset d;
    const auto version = get_u32(f);
    if (version != 1) {
        std::fclose(f);
        throw contract_error("dataset: unsupported version " + std::to_string(version));
    }
    d.obs_dim = int(get_u32(f));
    d.action_dim = int(get_u32(f));
    d.horizon = int(get_u32(f));
    const auto n_eps = get_u32(f);
    d.episodes.resize(n_eps);
    for (auto & ep : d.episodes) {
        ep.length = int(get_u32(f));
        ep.obs.resize(size_t(ep.length) * size_t(d.obs_dim));
        ep.actions.resize(size_t(ep.length) * size_t(d.action_dim));
        get_f32(f, ep.obs.data(), ep.obs.size());
        get_f32(f, ep.actions.data(), ep.actions.size());
    }
    std::fclose(f);
    return d;
}

i64 TrajectoryDataset::num_windows() const {
    i64 n = 0;
    for (const auto & ep : episodes) n += ep.length;
    return n;
}

void TrajectoryDataset::window(i64 index, std::vector<float> & obs_out,
                               std::vector<float> & chunk_out) const {
    i64 k = index;
    for (const auto & ep : episodes) {
        if (k >= ep.length) {
            k -= ep.length;
            continue;
        }
        obs_out.assign(ep.obs.begin() + k * obs_dim, ep.obs.begin() + (k + 1) * obs_dim);
        chunk_out.resize(size_t(horizon) * size_t(action_dim));
        for (int t = 0; t < horizon; ++t) {
            const i64 src = std::min<i64>(k + t, ep.length - 1);
            for (int a = 0; a < action_dim; ++a)
                chunk_out[size_t(t * action_dim + a)] = ep.actions[size_t(src * action_dim + a)];
        }
        return;
    }
    throw contract_error("dataset: window index out of range");
}

Batch<float> TrajectoryDataset::sample_batch(int batch, Rng & rng) const {
    const i64 total = num_windows();
    if (total == 0) throw contract_error("dataset: empty");
    std::vector<float> obs(size_t(batch) * size_t(obs_dim));
    std::vector<float> act(size_t(batch) * size_t(horizon) * size_t(action_dim));
    std::vector<float> wobs, wchunk;
    for (int b = 0; b < batch; ++b) {
        const i64 idx = i64(rng.u64() % std::uint64_t(total));
        window(idx, wobs, wchunk);
        std::copy(wobs.begin(), wobs.end(), obs.begin() + i64(b) * obs_dim);
        std::copy(wchunk.begin(), wchunk.end(), act.begin() + i64(b) * horizon * action_dim);
    }
    return {Tensor<float>({batch, obs_dim}, std::move(obs)),
            Tensor<float>({batch, horizon, action_dim}, std::move(act))};
}

TrajectoryDataset generate_dataset(const sim::PushSimConfig & cfg, int episodes,
                                   std::uint64_t seed_base, int horizon) {
    TrajectoryDataset d;
    d.obs_dim = cfg.obs_dim();
    d.action_dim = cfg.action_dim();
    d.horizon = horizon;
    std::uint64_t seed = seed_base;
    int attempts = 0;
    const int max_attempts = episodes * 4;
    while (int(d.episodes.size()) < episodes && attempts < max_attempts) {
        auto r = sim::rollout_expert(cfg, seed, /*record=*/true);
        ++attempts;
        ++seed;
        if (!r.success) continue;  // imitate successful demonstrations only
        Episode ep;
        ep.length = int(r.actions.size());
        ep.obs.reserve(size_t(ep.length) * size_t(d.obs_dim));
        ep.actions.reserve(size_t(ep.length) * 2);
        for (const auto & o : r.observations) ep.obs.insert(ep.obs.end(), o.begin(), o.end());
        for (const auto & a : r.actions) {
            ep.actions.push_back(float(a[0]));
            ep.actions.push_back(float(a[1]));
        }
        d.episodes.push_back(std::move(ep));
    }
    if (int(d.episodes.size()) < episodes)
        throw training_error("generate_dataset: expert succeeded on only " +
                             std::to_string(d.episodes.size()) + "/" + std::to_string(episodes) +
                             " episodes");
    return d;
}

}  // namespace lightdp
