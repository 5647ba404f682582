#pragma once

#include <cmath>
#include <map>
#include <string>

#include "lightdp/rng.hpp"
#include "lightdp/tensor.hpp"

// The transformer denoiser: a stack of gated residual blocks (multi-head
// self-attention + FFN, pre-layernorm) over action-chunk tokens, conditioned
// on the observation feature and the noise level through scale/shift
// modulation of every layernorm. A block whose gate is zero is skipped
// outright, so its output bit-equals its input.

namespace lightdp {

struct DenoiserConfig {
    int depth = 8;
    int hidden = 256;
    int heads = 4;
    int action_dim = 2;
    int horizon = 16;
    int obs_seq_len = 2;
    int obs_dim = 40;   // flattened observation (already stacked over obs_seq_len)
    int ffn_mult = 4;

    void validate() const {
        if (depth < 1) throw contract_error("DenoiserConfig: depth must be >= 1");
        if (horizon < 1) throw contract_error("DenoiserConfig: horizon must be >= 1");
        if (heads < 1 || hidden % heads != 0)
            throw contract_error("DenoiserConfig: hidden (" + std::to_string(hidden) +
                                 ") must be divisible by heads (" + std::to_string(heads) + ")");
        if (action_dim < 1 || obs_dim < 1 || ffn_mult < 1)
            throw contract_error("DenoiserConfig: dims must be positive");
    }

    bool operator==(const DenoiserConfig &) const = default;
};

template <class R>
struct Param {
    std::string name;
    Tensor<R> value;
};

// Parameter leaves bound to a tape (or to nothing, for inference).
template <class R>
struct Bound {
    std::vector<Tensor<R>> p;
    Tape<R> * tape = nullptr;
};

template <class R>
class DenoiserNet {
  public:
    struct BlockIdx {
        int wq, bq, wk, bk, wv, bv, wo, bo;
        int w1, b1, w2, b2;
        int ln1g, ln1b, ln2g, ln2b;
    };

    DenoiserConfig cfg;

    DenoiserNet() = default;

    explicit DenoiserNet(DenoiserConfig c) : cfg(c) {
        cfg.validate();
        const int H = cfg.hidden, A = cfg.action_dim, T = cfg.horizon;
        const int F = cfg.ffn_mult * H, O = cfg.obs_dim;
        emb_w_ = add_param("embed.action.w", {A, H});
        emb_b_ = add_param("embed.action.b", {H});
        pos_ = add_param("embed.pos", {T, H});
        t_w1_ = add_param("temb.fc1.w", {H, H});
        t_b1_ = add_param("temb.fc1.b", {H});
        t_w2_ = add_param("temb.fc2.w", {H, H});
        t_b2_ = add_param("temb.fc2.b", {H});
        o_w1_ = add_param("obs.fc1.w", {O, H});
        o_b1_ = add_param("obs.fc1.b", {H});
        o_w2_ = add_param("obs.fc2.w", {H, H});
        o_b2_ = add_param("obs.fc2.b", {H});
        mod_w_ = add_param("mod.w", {H, 6 * H});
        mod_b_ = add_param("mod.b", {6 * H});
        for (int i = 0; i < cfg.depth; ++i) {
            const std::string b = "block" + std::to_string(i) + ".";
            BlockIdx ix;
            ix.wq = add_param(b + "attn.wq", {H, H});
            ix.bq = add_param(b + "attn.bq", {H});
            ix.wk = add_param(b + "attn.wk", {H, H});
            ix.bk = add_param(b + "attn.bk", {H});
            ix.wv = add_param(b + "attn.wv", {H, H});
            ix.bv = add_param(b + "attn.bv", {H});
            ix.wo = add_param(b + "attn.wo", {H, H});
            ix.bo = add_param(b + "attn.bo", {H});
            ix.w1 = add_param(b + "ffn.w1", {H, F});
            ix.b1 = add_param(b + "ffn.b1", {F});
            ix.w2 = add_param(b + "ffn.w2", {F, H});
            ix.b2 = add_param(b + "ffn.b2", {H});
            ix.ln1g = add_param(b + "ln1.g", {H});
            ix.ln1b = add_param(b + "ln1.b", {H});
            ix.ln2g = add_param(b + "ln2.g", {H});
            ix.ln2b = add_param(b + "ln2.b", {H});
            blocks_.push_back(ix);
        }
        lnf_g_ = add_param("final.ln.g", {H});
        lnf_b_ = add_param("final.ln.b", {H});
        head_w_ = add_param("head.w", {H, A});
        head_b_ = add_param("head.b", {A});
    }

    // Scaled-normal init (std 0.02); layernorm gains 1; modulation and output
    // head zero so the initial raw prediction is exactly zero.
    void init_weights(Rng & rng) {
        for (auto & p : params_) {
            auto & v = p.value.data();
            const bool is_gain = p.name.ends_with("ln.g") || p.name.ends_with("ln1.g") ||
                                 p.name.ends_with("ln2.g");
            const bool is_bias = p.name.ends_with(".b") || p.name.ends_with(".bq") ||
                                 p.name.ends_with(".bk") || p.name.ends_with(".bv") ||
                                 p.name.ends_with(".bo") || p.name.ends_with(".b1") ||
                                 p.name.ends_with(".b2");
            const bool is_zero = p.name.starts_with("head.") || p.name.starts_with("mod.");
            if (is_gain) {
                std::fill(v.begin(), v.end(), R(1));
            } else if (is_zero || is_bias) {
                std::fill(v.begin(), v.end(), R(0));
            } else {
                for (auto & x : v) x = R(rng.normal(0.0, 0.02));
            }
        }
    }

    const std::vector<Param<R>> & params() const { return params_; }
    std::vector<Param<R>> & params() { return params_; }
    const std::vector<BlockIdx> & block_index() const { return blocks_; }

    int find(const std::string & name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw contract_error("no parameter named " + name);
        return it->second;
    }

    i64 num_scalars() const {
        i64 n = 0;
        for (const auto & p : params_) n += p.value.size();
        return n;
    }

    DenoiserNet clone() const {
        DenoiserNet out(cfg);
        for (size_t i = 0; i < params_.size(); ++i)
            out.params_[i].value.data() = params_[i].value.data();
        return out;
    }

    Bound<R> bind(Tape<R> * tape) const {
        Bound<R> b;
        b.tape = tape;
        b.p.reserve(params_.size());
        for (const auto & p : params_)
            b.p.push_back(tape ? tape->leaf(p.value) : p.value);
        return b;
    }

    // Raw inner forward f(x, obs, cnoise). `x` is the (already c_in-scaled)
    // noised action chunk [B, horizon, action_dim], obs is [B, obs_dim],
    // cnoise one value per batch row. Exactly one of hard/relaxed gates may
    // be given; nullptr for both means every block is active.
    Tensor<R> forward(const Bound<R> & bd, const Tensor<R> & x, const Tensor<R> & obs,
                      const std::vector<R> & cnoise,
                      const std::vector<int> * hard_masks = nullptr,
                      const std::vector<Tensor<R>> * relaxed_gates = nullptr) const {
        check_forward_shapes(x, obs, cnoise, hard_masks, relaxed_gates);
        const int T = cfg.horizon, H = cfg.hidden;
        const i64 B = x.shape()[0];

        Tensor<R> tok = add(matmul(x, bd.p[size_t(emb_w_)]), bd.p[size_t(emb_b_)]);
        tok = add(tok, bd.p[size_t(pos_)]);

        // conditioning vector: timestep feature + observation feature
        Tensor<R> tfeat = sinusoidal(cnoise);
        tfeat = add(matmul(tfeat, bd.p[size_t(t_w1_)]), bd.p[size_t(t_b1_)]);
        tfeat = gelu(tfeat);
        tfeat = add(matmul(tfeat, bd.p[size_t(t_w2_)]), bd.p[size_t(t_b2_)]);
        Tensor<R> ofeat = add(matmul(obs, bd.p[size_t(o_w1_)]), bd.p[size_t(o_b1_)]);
        ofeat = gelu(ofeat);
        ofeat = add(matmul(ofeat, bd.p[size_t(o_w2_)]), bd.p[size_t(o_b2_)]);
        Tensor<R> cond = add(tfeat, ofeat);

        // shared scale/shift modulation for (ln1, ln2, final ln)
        Tensor<R> mods = add(matmul(cond, bd.p[size_t(mod_w_)]), bd.p[size_t(mod_b_)]);
        Tensor<R> mscale[3], mshift[3];
        for (int s = 0; s < 3; ++s) {
            mscale[s] = add_const(expand_tokens(slice_last(mods, 2 * s * H, H), T), R(1));
            mshift[s] = expand_tokens(slice_last(mods, (2 * s + 1) * H, H), T);
        }

        Tensor<R> h = tok;
        for (int i = 0; i < cfg.depth; ++i) {
            if (hard_masks && (*hard_masks)[size_t(i)] == 0) continue;
            Tensor<R> out = block_forward(bd, i, h, mscale, mshift, int(B));
            if (relaxed_gates) {
                // h + m * (block(h) - h): value equals the gated mix, gradient
                // w.r.t. the gate is <dL/dh_next, block(h) - h>
                h = add(h, mul(sub(out, h), (*relaxed_gates)[size_t(i)]));
            } else {
                h = out;
            }
        }

        Tensor<R> y = layernorm(h, bd.p[size_t(lnf_g_)], bd.p[size_t(lnf_b_)]);
        y = add(mul(y, mscale[2]), mshift[2]);
        return add(matmul(y, bd.p[size_t(head_w_)]), bd.p[size_t(head_b_)]);
    }

    // Convenience: inference forward without a tape.
    Tensor<R> forward(const Tensor<R> & x, const Tensor<R> & obs, const std::vector<R> & cnoise,
                      const std::vector<int> * hard_masks = nullptr) const {
        Bound<R> bd = bind(nullptr);
        return forward(bd, x, obs, cnoise, hard_masks, nullptr);
    }

  private:
    std::vector<Param<R>> params_;
    std::map<std::string, int> index_;
    std::vector<BlockIdx> blocks_;
    int emb_w_ = -1, emb_b_ = -1, pos_ = -1;
    int t_w1_ = -1, t_b1_ = -1, t_w2_ = -1, t_b2_ = -1;
    int o_w1_ = -1, o_b1_ = -1, o_w2_ = -1, o_b2_ = -1;
    int mod_w_ = -1, mod_b_ = -1;
    int lnf_g_ = -1, lnf_b_ = -1, head_w_ = -1, head_b_ = -1;

    int add_param(const std::string & name, Shape shape) {
        params_.push_back({name, Tensor<R>::zeros(std::move(shape))});
        index_[name] = int(params_.size()) - 1;
        return int(params_.size()) - 1;
    }

    void check_forward_shapes(const Tensor<R> & x, const Tensor<R> & obs,
                              const std::vector<R> & cnoise, const std::vector<int> * hard,
                              const std::vector<Tensor<R>> * relaxed) const {
        if (x.ndim() != 3 || x.shape()[1] != cfg.horizon || x.shape()[2] != cfg.action_dim)
            throw dimension_error("forward: actions must be [B," + std::to_string(cfg.horizon) +
                                  "," + std::to_string(cfg.action_dim) + "], got " +
                                  shape_str(x.shape()));
        if (obs.ndim() != 2 || obs.shape()[0] != x.shape()[0] || obs.shape()[1] != cfg.obs_dim)
            throw dimension_error("forward: obs must be [B," + std::to_string(cfg.obs_dim) +
                                  "], got " + shape_str(obs.shape()));
        if (i64(cnoise.size()) != x.shape()[0])
            throw dimension_error("forward: cnoise length must equal batch");
        if (hard && relaxed) throw contract_error("forward: both hard and relaxed gates given");
        if (hard && int(hard->size()) != cfg.depth)
            throw contract_error("forward: hard mask length != depth");
        if (relaxed && int(relaxed->size()) != cfg.depth)
            throw contract_error("forward: relaxed gate count != depth");
    }

    Tensor<R> sinusoidal(const std::vector<R> & cnoise) const {
        const int H = cfg.hidden, half = cfg.hidden / 2;
        const i64 B = i64(cnoise.size());
        std::vector<R> f(size_t(B) * size_t(H));
        for (i64 b = 0; b < B; ++b) {
            for (int j = 0; j < half; ++j) {
                const double w = std::pow(10000.0, -double(j) / double(half));
                const double a = double(cnoise[size_t(b)]) * w;
                f[size_t(b * H + j)] = R(std::sin(a));
                f[size_t(b * H + half + j)] = R(std::cos(a));
            }
        }
        return Tensor<R>({int(B), H}, std::move(f));
    }

    Tensor<R> block_forward(const Bound<R> & bd, int i, const Tensor<R> & x,
                            const Tensor<R> * mscale, const Tensor<R> * mshift, int B) const {
        const auto & ix = blocks_[size_t(i)];
        const int T = cfg.horizon, H = cfg.hidden, nh = cfg.heads, dh = H / nh;

        Tensor<R> a = layernorm(x, bd.p[size_t(ix.ln1g)], bd.p[size_t(ix.ln1b)]);
        a = add(mul(a, mscale[0]), mshift[0]);

        auto split = [&](const Tensor<R> & t) {
            return permute(reshape(t, {B, T, nh, dh}), {0, 2, 1, 3});
        };
        Tensor<R> q = split(add(matmul(a, bd.p[size_t(ix.wq)]), bd.p[size_t(ix.bq)]));
        Tensor<R> k = split(add(matmul(a, bd.p[size_t(ix.wk)]), bd.p[size_t(ix.bk)]));
        Tensor<R> v = split(add(matmul(a, bd.p[size_t(ix.wv)]), bd.p[size_t(ix.bv)]));

        Tensor<R> scores = scale(matmul(q, permute(k, {0, 1, 3, 2})), R(1.0 / std::sqrt(double(dh))));
        Tensor<R> att = matmul(softmax(scores), v);
        att = reshape(permute(att, {0, 2, 1, 3}), {B, T, H});
        att = add(matmul(att, bd.p[size_t(ix.wo)]), bd.p[size_t(ix.bo)]);
        Tensor<R> h1 = add(x, att);

        Tensor<R> f = layernorm(h1, bd.p[size_t(ix.ln2g)], bd.p[size_t(ix.ln2b)]);
        f = add(mul(f, mscale[1]), mshift[1]);
        f = add(matmul(f, bd.p[size_t(ix.w1)]), bd.p[size_t(ix.b1)]);
        f = gelu(f);
        f = add(matmul(f, bd.p[size_t(ix.w2)]), bd.p[size_t(ix.b2)]);
        return add(h1, f);
    }
};

// Gradients keyed by parameter name, as produced by a backward pass.
template <class R>
std::map<std::string, std::vector<R>> named_gradients(const DenoiserNet<R> & net,
                                                      const Bound<R> & bd) {
    if (!bd.tape) throw contract_error("named_gradients: binding has no tape");
    std::map<std::string, std::vector<R>> out;
    for (size_t i = 0; i < net.params().size(); ++i)
        out[net.params()[i].name] = bd.tape->grad(bd.p[i]);
    return out;
}

}  // namespace lightdp
