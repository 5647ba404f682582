#pragma once

#include <algorithm>
#include <optional>

#include "lightdp/edm.hpp"
#include "lightdp/net.hpp"
#include "lightdp/optimizer.hpp"
#include "lightdp/svd.hpp"

// Pruning by learning: every group of M consecutive blocks keeps N, the
// retained subset chosen by a per-group categorical over the C(M,N) candidate
// masks. Candidate logits start from SVD-based layer importance and train
// jointly with the weights through Gumbel-Softmax straight-through sampling.

namespace lightdp {

struct PruningScheme {
    int n_keep = 1;
    int m_group = 2;

    void validate(int depth) const {
        if (!(n_keep >= 1 && n_keep < m_group))
            throw contract_error("scheme: need 1 <= N < M, got " + std::to_string(n_keep) + ":" +
                                 std::to_string(m_group));
        if (depth % m_group != 0)
            throw contract_error("scheme: depth " + std::to_string(depth) +
                                 " not divisible by M=" + std::to_string(m_group));
    }

    int groups(int depth) const { return depth / m_group; }
};

using Mask = std::vector<int>;  // one {0,1} per layer in a group (or whole net)

// All binary vectors of length M with exactly N ones, in descending
// lexicographic order: (3,4) gives 1110, 1101, 1011, 0111.
inline std::vector<Mask> enumerate_masks(const PruningScheme & s) {
    if (!(s.n_keep >= 1 && s.n_keep < s.m_group))
        throw contract_error("enumerate_masks: need 1 <= N < M");
    std::vector<Mask> out;
    for (unsigned bits = 0; bits < (1u << s.m_group); ++bits) {
        Mask m(size_t(s.m_group));
        int pop = 0;
        for (int i = 0; i < s.m_group; ++i) {
            m[size_t(i)] = (bits >> (s.m_group - 1 - i)) & 1u;
            pop += m[size_t(i)];
        }
        if (pop == s.n_keep) out.push_back(std::move(m));
    }
    std::sort(out.begin(), out.end(), std::greater<Mask>());
    return out;
}

// ---------------------------------------------------------------------------
// SVD importance
// ---------------------------------------------------------------------------

// ||W - U_k S_k V_k^T||_F for one weight matrix.
template <class R>
double svd_importance(const Tensor<R> & w, int k, const std::string & name = "W") {
    if (w.ndim() != 2) throw dimension_error("svd_importance: expects a matrix");
    std::vector<double> wd(w.data().begin(), w.data().end());
    return svd_truncation_error(wd, w.shape()[0], w.shape()[1], k, name);
}

// Block importance: truncation error summed over the attention q/k/v and both
// FFN matrices.
template <class R>
double layer_importance(const DenoiserNet<R> & net, int block, int k) {
    const auto & ix = net.block_index()[size_t(block)];
    const std::string tag = "block" + std::to_string(block);
    double total = 0.0;
    for (int pi : {ix.wq, ix.wk, ix.wv, ix.w1, ix.w2})
        total += svd_importance(net.params()[size_t(pi)].value, k, tag);
    return total;
}

// All layers, normalized: p_i = I_i / sum_j I_j.
template <class R>
std::vector<double> normalized_importances(const DenoiserNet<R> & net, int k) {
    std::vector<double> p(size_t(net.cfg.depth));
    double sum = 0.0;
    for (int i = 0; i < net.cfg.depth; ++i) {
        p[size_t(i)] = layer_importance(net, i, k);
        sum += p[size_t(i)];
    }
    if (sum > 0.0)
        for (auto & v : p) v /= sum;
    return p;
}

// ---------------------------------------------------------------------------
// gate logits
// ---------------------------------------------------------------------------

struct GateLogits {
    PruningScheme scheme;
    std::vector<Mask> candidates;               // shared across groups
    std::vector<std::vector<double>> logits;    // [group][candidate]
};

// Candidate logit = sum of group-normalized layer scores over its retained
// layers, shifted to zero mean per group.
inline GateLogits init_gate_logits(const std::vector<double> & importances,
                                   const PruningScheme & scheme) {
    const int depth = int(importances.size());
    scheme.validate(depth);
    GateLogits g;
    g.scheme = scheme;
    g.candidates = enumerate_masks(scheme);
    const int G = scheme.groups(depth), M = scheme.m_group;
    g.logits.resize(size_t(G));
    for (int gi = 0; gi < G; ++gi) {
        double gsum = 0.0;
        for (int j = 0; j < M; ++j) gsum += importances[size_t(gi * M + j)];
        std::vector<double> lg(g.candidates.size(), 0.0);
        for (size_t c = 0; c < g.candidates.size(); ++c) {
            for (int j = 0; j < M; ++j)
                if (g.candidates[c][size_t(j)])
                    lg[c] += gsum > 0.0 ? importances[size_t(gi * M + j)] / gsum : 0.0;
        }
        double mean = 0.0;
        for (double v : lg) mean += v;
        mean /= double(lg.size());
        for (double & v : lg) v -= mean;
        g.logits[size_t(gi)] = std::move(lg);
    }
    return g;
}

// argmax with the documented tie-break: on equal logits the lexicographically
// smallest candidate mask wins (the last one in descending-lex order).
inline int select_candidate(const std::vector<double> & logits) {
    int best = 0;
    for (int c = 1; c < int(logits.size()); ++c)
        if (logits[size_t(c)] >= logits[size_t(best)]) best = c;
    return best;
}

inline Mask selected_masks(const GateLogits & g, int depth) {
    Mask out(size_t(depth), 1);
    const int M = g.scheme.m_group;
    for (int gi = 0; gi < g.scheme.groups(depth); ++gi) {
        const int c = select_candidate(g.logits[size_t(gi)]);
        for (int j = 0; j < M; ++j) out[size_t(gi * M + j)] = g.candidates[size_t(c)][size_t(j)];
    }
    return out;
}

// ---------------------------------------------------------------------------
// gumbel-softmax straight-through sampling
// ---------------------------------------------------------------------------

template <class R>
struct GumbelSample {
    Tensor<R> st;       // straight-through candidate weights (on tape)
    Tensor<R> relaxed;  // softmax((logits + g) / tau) (on tape)
    int hard = 0;       // argmax candidate index
};

// Deterministic core: caller supplies the Gumbel noise.
template <class R>
GumbelSample<R> gumbel_sample_with_noise(const Tensor<R> & logit_leaf,
                                         const std::vector<double> & noise, double tau) {
    if (tau <= 0.0) throw contract_error("gumbel_sample: tau must be positive");
    if (i64(noise.size()) != logit_leaf.size())
        throw dimension_error("gumbel_sample: noise length mismatch");
    const int C = int(noise.size());
    std::vector<R> g(noise.size());
    for (size_t i = 0; i < noise.size(); ++i) g[i] = R(noise[i]);
    Tensor<R> noisy = add(logit_leaf, Tensor<R>({C}, std::move(g)));
    GumbelSample<R> out;
    out.relaxed = softmax(scale(noisy, R(1.0 / tau)));
    // argmax of (logits + g); ties resolve to the later (lexicographically
    // smaller) candidate, matching select_candidate
    const auto & nv = noisy.data();
    int hard = 0;
    for (int c = 1; c < int(nv.size()); ++c)
        if (nv[size_t(c)] >= nv[size_t(hard)]) hard = c;
    out.hard = hard;
    // st = relaxed + const(onehot - relaxed): forward value is the one-hot,
    // backward is the relaxed softmax jacobian
    std::vector<R> delta(nv.size());
    for (size_t c = 0; c < nv.size(); ++c)
        delta[c] = (int(c) == hard ? R(1) : R(0)) - out.relaxed.data()[c];
    out.st = add(out.relaxed, Tensor<R>({C}, std::move(delta)));
    return out;
}

template <class R>
GumbelSample<R> gumbel_sample(const Tensor<R> & logit_leaf, double tau, Rng & rng) {
    std::vector<double> noise(size_t(logit_leaf.size()));
    for (auto & v : noise) v = rng.gumbel();
    return gumbel_sample_with_noise(logit_leaf, noise, tau);
}

// Per-step gate draw for the whole network: leaves for every group's logits,
// straight-through per-layer gate tensors, and the hard mask.
template <class R>
struct GateDraw {
    std::vector<Tensor<R>> logit_leaves;   // one per group
    std::vector<Tensor<R>> layer_gates;    // one scalar tensor per layer
    Mask hard_masks;                       // {0,1} per layer
};

template <class R>
GateDraw<R> draw_gates(Tape<R> & tape, const GateLogits & g, int depth, double tau, Rng & rng) {
    GateDraw<R> out;
    const int M = g.scheme.m_group;
    out.hard_masks.assign(size_t(depth), 1);
    for (int gi = 0; gi < g.scheme.groups(depth); ++gi) {
        const int C = int(g.logits[size_t(gi)].size());
        std::vector<R> lv(static_cast<size_t>(C));
        for (size_t c = 0; c < lv.size(); ++c) lv[c] = R(g.logits[size_t(gi)][c]);
        Tensor<R> leaf = tape.leaf(Tensor<R>({C}, std::move(lv)));
        out.logit_leaves.push_back(leaf);
        auto s = gumbel_sample(leaf, tau, rng);
        for (int j = 0; j < M; ++j) {
            std::vector<R> col(static_cast<size_t>(C));
            for (size_t c = 0; c < col.size(); ++c) col[c] = R(g.candidates[c][size_t(j)]);
            out.layer_gates.push_back(dot(s.st, Tensor<R>({C}, std::move(col))));
            out.hard_masks[size_t(gi * M + j)] = g.candidates[size_t(s.hard)][size_t(j)];
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// physical pruning
// ---------------------------------------------------------------------------

// Removes masked-out blocks; the result's forward equals the gated forward of
// the full network bit-for-bit.
template <class R>
DenoiserNet<R> prune_with_masks(const DenoiserNet<R> & net, const Mask & masks) {
    if (int(masks.size()) != net.cfg.depth)
        throw contract_error("prune_with_masks: mask length != depth");
    int kept = 0;
    for (int m : masks) kept += (m != 0);
    if (kept == 0) throw contract_error("prune_with_masks: cannot remove every block");
    DenoiserConfig cfg = net.cfg;
    cfg.depth = kept;
    DenoiserNet<R> out(cfg);
    // non-block parameters copy by name
    for (size_t i = 0; i < out.params().size(); ++i) {
        const auto & name = out.params()[i].name;
        if (name.starts_with("block")) continue;
        out.params()[i].value.data() = net.params()[size_t(net.find(name))].value.data();
    }
    // retained blocks compact downward in order
    int dst = 0;
    for (int src = 0; src < net.cfg.depth; ++src) {
        if (!masks[size_t(src)]) continue;
        const std::string from = "block" + std::to_string(src) + ".";
        const std::string to = "block" + std::to_string(dst) + ".";
        for (const char * leafname :
             {"attn.wq", "attn.bq", "attn.wk", "attn.bk", "attn.wv", "attn.bv", "attn.wo",
              "attn.bo", "ffn.w1", "ffn.b1", "ffn.w2", "ffn.b2", "ln1.g", "ln1.b", "ln2.g",
              "ln2.b"}) {
            out.params()[size_t(out.find(to + leafname))].value.data() =
                net.params()[size_t(net.find(from + leafname))].value.data();
        }
        ++dst;
    }
    return out;
}

template <class R>
std::pair<DenoiserNet<R>, Mask> select_and_prune(const DenoiserNet<R> & net, const GateLogits & g) {
    const Mask masks = selected_masks(g, net.cfg.depth);
    return {prune_with_masks(net, masks), masks};
}

// ---------------------------------------------------------------------------
// joint gate + weight training on the score-matching loss
// ---------------------------------------------------------------------------

struct GateTrainOpts {
    int epochs = 8;
    int steps_per_epoch = 100;
    int batch = 32;
    double lr = 1e-3;
    double weight_decay = 0.0;
    double gate_lr = 0.05;
    double tau_start = 4.0;
    double tau_end = 0.1;
    int svd_k = 0;  // 0 -> hidden / 4
    std::uint64_t seed = 1;
};

template <class R>
struct GateTrainResult {
    GateLogits logits;
    std::vector<double> epoch_loss;
};

// Joint optimization of weights and gate logits under L_DM with gumbel-drawn
// masks injected through the residual gates. The degenerate scheme N == M is
// not trainable (no candidates); callers use plain training for that.
template <class R, class DatasetT>
GateTrainResult<R> train_gates(DenoiserNet<R> & net, const DatasetT & dataset,
                               const PruningScheme & scheme, const EdmCoeffs & co,
                               const GateTrainOpts & opts) {
    scheme.validate(net.cfg.depth);
    const int k = opts.svd_k > 0 ? opts.svd_k : std::max(1, net.cfg.hidden / 4);
    GateLogits logits = init_gate_logits(normalized_importances(net, k), scheme);

    Rng rng(opts.seed);
    AdamW<R> wopt(opts.lr, opts.weight_decay);
    AdamW<double> gopt(opts.gate_lr);
    GateTrainResult<R> out;

    for (int epoch = 0; epoch < opts.epochs; ++epoch) {
        const double tau =
            opts.epochs > 1 ? opts.tau_start + (opts.tau_end - opts.tau_start) * epoch /
                                                   double(opts.epochs - 1)
                            : opts.tau_start;
        double loss_sum = 0.0;
        for (int it = 0; it < opts.steps_per_epoch; ++it) {
            auto batch = dataset.sample_batch(opts.batch, rng);
            Tape<R> tape;
            auto bd = net.bind(&tape);
            auto draw = draw_gates(tape, logits, net.cfg.depth, tau, rng);
            Tensor<R> loss = score_matching_loss(net, bd, co, batch, rng, nullptr,
                                                 &draw.layer_gates);
            const double lv = double(loss.item());
            if (!std::isfinite(lv))
                throw training_error("train_gates: loss diverged at epoch " +
                                     std::to_string(epoch) + " step " + std::to_string(it));
            loss_sum += lv;
            tape.backward(loss);

            wopt.begin_step();
            for (size_t pi = 0; pi < net.params().size(); ++pi) {
                if (!tape.has_grad(bd.p[pi].node())) continue;
                const auto grad = tape.grad(bd.p[pi]);
                wopt.step(net.params()[pi].value.data(), grad, pi);
            }
            gopt.begin_step();
            for (size_t gi = 0; gi < draw.logit_leaves.size(); ++gi) {
                const auto gradf = tape.grad(draw.logit_leaves[gi]);
                std::vector<double> grad(gradf.begin(), gradf.end());
                gopt.step(logits.logits[gi], grad, gi);
            }
        }
        out.epoch_loss.push_back(loss_sum / opts.steps_per_epoch);
    }
    out.logits = std::move(logits);
    return out;
}

}  // namespace lightdp
