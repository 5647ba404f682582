#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>

#include "lightdp/pruner.hpp"
#include "synthetic_dataset.hpp"

using namespace lightdp;

namespace {

// independent singular values via jacobi eigensolve of W^T W (test oracle)
std::vector<double> gram_singular_values(const std::vector<double> & w, int m, int n) {
    std::vector<double> g(size_t(n) * size_t(n), 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            double acc = 0;
            for (int r = 0; r < m; ++r) acc += w[size_t(r * n + i)] * w[size_t(r * n + j)];
            g[size_t(i * n + j)] = acc;
        }
    for (int sweep = 0; sweep < 200; ++sweep) {
        double off = 0;
        for (int p = 0; p < n - 1; ++p)
            for (int q = p + 1; q < n; ++q) off += std::fabs(g[size_t(p * n + q)]);
        if (off < 1e-13) break;
        for (int p = 0; p < n - 1; ++p)
            for (int q = p + 1; q < n; ++q) {
                const double apq = g[size_t(p * n + q)];
                if (std::fabs(apq) < 1e-300) continue;
                const double tau = (g[size_t(q * n + q)] - g[size_t(p * n + p)]) / (2 * apq);
                const double t = (tau >= 0 ? 1.0 : -1.0) / (std::fabs(tau) + std::sqrt(1 + tau * tau));
                const double c = 1 / std::sqrt(1 + t * t), s = c * t;
                for (int k = 0; k < n; ++k) {
                    const double a = g[size_t(k * n + p)], b = g[size_t(k * n + q)];
                    g[size_t(k * n + p)] = c * a - s * b;
                    g[size_t(k * n + q)] = s * a + c * b;
                }
                for (int k = 0; k < n; ++k) {
                    const double a = g[size_t(p * n + k)], b = g[size_t(q * n + k)];
                    g[size_t(p * n + k)] = c * a - s * b;
                    g[size_t(q * n + k)] = s * a + c * b;
                }
            }
    }
    std::vector<double> ev(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) ev[size_t(i)] = std::sqrt(std::max(0.0, g[size_t(i * n + i)]));
    std::sort(ev.begin(), ev.end(), std::greater<double>());
    return ev;
}

DenoiserConfig tiny_cfg(int depth, int hidden = 16) {
    DenoiserConfig cfg;
    cfg.depth = depth;
    cfg.hidden = hidden;
    cfg.heads = 2;
    cfg.action_dim = 2;
    cfg.horizon = 4;
    cfg.obs_dim = 6;
    cfg.ffn_mult = 2;
    return cfg;
}

template <class R>
void randomize(DenoiserNet<R> & net, unsigned seed, double std = 0.15) {
    Rng rng(seed);
    for (auto & p : net.params())
        for (auto & v : p.value.data())
            v = p.name.ends_with(".g") ? R(1) : R(rng.normal(0.0, std));
}

template <class R>
void make_identity_block(DenoiserNet<R> & net, int block) {
    const std::string b = "block" + std::to_string(block) + ".";
    for (const char * w : {"attn.wo", "attn.bo", "ffn.w2", "ffn.b2"}) {
        auto & v = net.params()[size_t(net.find(b + w))].value.data();
        std::fill(v.begin(), v.end(), R(0));
    }
}

}  // namespace

TEST_CASE("svd_importance: exact-rank zero, k=0 norm, tail-energy oracle") {
    Rng rng(3);
    // exact rank-2 matrix
    std::vector<float> a(16), b(16), w(64, 0.f);
    rng.fill_uniform(a, -1.0, 1.0);
    rng.fill_uniform(b, -1.0, 1.0);
    for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 8; ++j)
            w[size_t(i * 8 + j)] = a[size_t(i)] * b[size_t(j)] + a[size_t(i + 8)] * b[size_t(j + 8)];
    Tensor<float> W({8, 8}, w);
    std::vector<double> wd(w.begin(), w.end());
    CHECK(svd_importance(W, 2) <= 1e-6 * frobenius_norm(wd));
    CHECK(svd_importance(W, 0) == doctest::Approx(frobenius_norm(wd)));

    std::vector<float> r(64);
    rng.fill_uniform(r, -2.0, 2.0);
    Tensor<float> Wr({8, 8}, r);
    std::vector<double> rd(r.begin(), r.end());
    auto sv = gram_singular_values(rd, 8, 8);
    double tail = 0;
    for (int t = 4; t < 8; ++t) tail += sv[size_t(t)] * sv[size_t(t)];
    CHECK(svd_importance(Wr, 4) == doctest::Approx(std::sqrt(tail)).epsilon(1e-6));
}

TEST_CASE("layer_importance: zero block, homogeneity, per-matrix sum") {
    auto net = DenoiserNet<float>(tiny_cfg(2));
    randomize(net, 7);
    // zero block 0 entirely
    for (auto & p : net.params())
        if (p.name.starts_with("block0."))
            std::fill(p.value.data().begin(), p.value.data().end(), 0.f);
    CHECK(layer_importance(net, 0, 4) == 0.0);

    const double base = layer_importance(net, 1, 4);
    CHECK(base > 0.0);

    // doubling every matrix in the block doubles the importance
    for (auto & p : net.params())
        if (p.name.starts_with("block1."))
            for (auto & v : p.value.data()) v *= 2.f;
    CHECK(layer_importance(net, 1, 4) == doctest::Approx(2.0 * base).epsilon(1e-9));

    // equals the sum of per-matrix truncation errors
    double sum = 0.0;
    for (const char * nm : {"attn.wq", "attn.wk", "attn.wv", "ffn.w1", "ffn.w2"})
        sum += svd_importance(net.params()[size_t(net.find(std::string("block1.") + nm))].value, 4);
    CHECK(layer_importance(net, 1, 4) == doctest::Approx(sum).epsilon(1e-12));
}

TEST_CASE("importance ranking is invariant under global weight scaling") {
    auto net = DenoiserNet<float>(tiny_cfg(4));
    randomize(net, 11);
    auto p1 = normalized_importances(net, 4);
    auto raw1 = std::vector<double>(4);
    for (int i = 0; i < 4; ++i) raw1[size_t(i)] = layer_importance(net, i, 4);
    for (auto & p : net.params())
        if (p.name.starts_with("block"))
            for (auto & v : p.value.data()) v *= 3.f;
    auto p2 = normalized_importances(net, 4);
    for (int i = 0; i < 4; ++i) {
        CHECK(layer_importance(net, i, 4) == doctest::Approx(3.0 * raw1[size_t(i)]).epsilon(1e-6));
        CHECK(p2[size_t(i)] == doctest::Approx(p1[size_t(i)]).epsilon(1e-6));
    }
}

TEST_CASE("enumerate_masks matches the published 3:4 list and brute force") {
    auto m34 = enumerate_masks({3, 4});
    const std::vector<Mask> expect34 = {{1, 1, 1, 0}, {1, 1, 0, 1}, {1, 0, 1, 1}, {0, 1, 1, 1}};
    CHECK(m34 == expect34);

    auto m12 = enumerate_masks({1, 2});
    CHECK(m12 == std::vector<Mask>{{1, 0}, {0, 1}});

    // brute force over all bit strings for every scheme with M <= 6
    for (int M = 2; M <= 6; ++M) {
        for (int N = 1; N < M; ++N) {
            auto got = enumerate_masks({N, M});
            std::set<Mask> brute;
            for (unsigned bits = 0; bits < (1u << M); ++bits) {
                Mask m(static_cast<size_t>(M));
                int pop = 0;
                for (int i = 0; i < M; ++i) {
                    m[size_t(i)] = (bits >> i) & 1u;
                    pop += m[size_t(i)];
                }
                if (pop == N) brute.insert(m);
            }
            CHECK(got.size() == brute.size());
            std::set<Mask> got_set(got.begin(), got.end());
            CHECK(got_set == brute);
            // descending lexicographic order
            for (size_t i = 0; i + 1 < got.size(); ++i) CHECK(got[i] > got[i + 1]);
        }
    }
    CHECK_THROWS_AS(enumerate_masks({4, 4}), contract_error);
}

TEST_CASE("init_gate_logits: uniform symmetry and dominance") {
    auto uniform = init_gate_logits({1, 1, 1, 1}, {3, 4});
    for (double v : uniform.logits[0]) CHECK(v == doctest::Approx(0.0));

    auto dom = init_gate_logits({10, 1, 1, 1}, {3, 4});
    const int best = select_candidate(dom.logits[0]);
    CHECK(dom.candidates[size_t(best)][0] == 1);  // the argmax mask retains layer 0
}

TEST_CASE("init_gate_logits matches the hand-computed table for [4,3,2,1]") {
    auto g = init_gate_logits({4, 3, 2, 1}, {3, 4});
    // group-normalized p = [.4,.3,.2,.1]; candidate sums in descending-lex
    // order (1110, 1101, 1011, 0111) are .9, .8, .7, .6; zero-mean -> mean .75
    const std::vector<double> expect = {0.15, 0.05, -0.05, -0.15};
    REQUIRE(g.logits[0].size() == 4);
    for (int c = 0; c < 4; ++c)
        CHECK(g.logits[0][size_t(c)] == doctest::Approx(expect[size_t(c)]).epsilon(1e-12));
}

TEST_CASE("gumbel: zero noise approaches argmax as tau -> 0") {
    Tape<double> tape;
    auto leaf = tape.leaf(Tensor<double>({3}, {0.2, 1.4, -0.5}));
    auto s = gumbel_sample_with_noise(leaf, {0.0, 0.0, 0.0}, 1e-3);
    CHECK(s.hard == 1);
    CHECK(s.st.data()[1] == doctest::Approx(1.0));
    CHECK(s.relaxed.data()[1] == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("gumbel: equal logits select 50/50 within 3 sigma over 10k draws") {
    Rng rng(17);
    int first = 0;
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
        Tape<double> tape;
        auto leaf = tape.leaf(Tensor<double>({2}, {0.7, 0.7}));
        auto s = gumbel_sample(leaf, 1.0, rng);
        first += (s.hard == 0);
        // relaxed weights always sum to 1
        CHECK(s.relaxed.data()[0] + s.relaxed.data()[1] == doctest::Approx(1.0).epsilon(1e-9));
    }
    const double sigma = std::sqrt(0.25 * n);
    CHECK(std::fabs(first - n / 2.0) <= 3.0 * sigma);
}

TEST_CASE("straight-through: logits receive the relaxed-path gradient") {
    Rng rng(23);
    std::vector<double> noise = {rng.gumbel(), rng.gumbel(), rng.gumbel(), rng.gumbel()};
    std::vector<double> logits_v = {0.3, -0.2, 0.9, 0.1};
    std::vector<double> rvals = {1.1, -0.7, 0.4, 2.0};
    const double tau = 0.8;
    Tensor<double> r({4}, std::vector<double>(rvals));

    // analytic gradient through the straight-through sample
    Tape<double> tape;
    auto leaf = tape.leaf(Tensor<double>({4}, std::vector<double>(logits_v)));
    auto s = gumbel_sample_with_noise(leaf, noise, tau);
    tape.backward(dot(s.st, r));
    auto analytic = tape.grad(leaf);

    // finite differences of the relaxed-path loss on the same frozen draw
    for (int i = 0; i < 4; ++i) {
        const double h = 1e-6;
        auto eval_relaxed = [&](double delta) {
            auto lv = logits_v;
            lv[size_t(i)] += delta;
            Tape<double> t2;
            auto l2 = t2.leaf(Tensor<double>({4}, std::vector<double>(lv)));
            auto s2 = gumbel_sample_with_noise(l2, noise, tau);
            return dot(s2.relaxed, r).item();
        };
        const double fd = (eval_relaxed(h) - eval_relaxed(-h)) / (2 * h);
        CHECK(analytic[size_t(i)] == doctest::Approx(fd).epsilon(1e-5));
    }
}

TEST_CASE("every emitted mask satisfies the per-group popcount constraint") {
    Rng rng(29);
    for (int trial = 0; trial < 50; ++trial) {
        const int M = 2 + int(rng.u64() % 3);       // 2..4
        const int N = 1 + int(rng.u64() % (M - 1)); // 1..M-1
        const int groups = 1 + int(rng.u64() % 3);
        GateLogits g;
        g.scheme = {N, M};
        g.candidates = enumerate_masks(g.scheme);
        g.logits.resize(size_t(groups));
        for (auto & lg : g.logits) {
            lg.resize(g.candidates.size());
            for (auto & v : lg) v = rng.normal();
        }
        const Mask m = selected_masks(g, groups * M);
        for (int gi = 0; gi < groups; ++gi) {
            int pop = 0;
            for (int j = 0; j < M; ++j) pop += m[size_t(gi * M + j)];
            CHECK(pop == N);
        }
    }
}

TEST_CASE("pruned network forward bit-equals the gated full network") {
    auto net = DenoiserNet<float>(tiny_cfg(4));
    randomize(net, 31);
    Rng rng(37);
    for (const Mask masks : {Mask{1, 0, 1, 0}, Mask{0, 1, 1, 0}, Mask{1, 0, 0, 1}}) {
        auto pruned = prune_with_masks(net, masks);
        for (int trial = 0; trial < 10; ++trial) {
            std::vector<float> xv(2 * 4 * 2), ov(2 * 6);
            rng.fill_uniform(xv, -1.5, 1.5);
            rng.fill_uniform(ov, -1.0, 1.0);
            Tensor<float> x({2, 4, 2}, xv);
            Tensor<float> obs({2, 6}, ov);
            std::vector<float> cnoise = {0.3f, -0.8f};
            auto full = net.forward(x, obs, cnoise, &masks);
            auto small = pruned.forward(x, obs, cnoise);
            CHECK(std::memcmp(full.data().data(), small.data().data(),
                              full.data().size() * sizeof(float)) == 0);
        }
    }
}

TEST_CASE("select_and_prune: depth-8 1:2 scheme gives depth 4 and exact param drop") {
    DenoiserConfig cfg = tiny_cfg(8, 32);
    cfg.heads = 4;
    auto net = DenoiserNet<float>(cfg);
    randomize(net, 41);
    GateLogits g = init_gate_logits(normalized_importances(net, 8), {1, 2});
    auto [pruned, masks] = select_and_prune(net, g);
    CHECK(pruned.cfg.depth == 4);
    int kept = 0;
    for (int m : masks) kept += m;
    CHECK(kept == 4);
    // removed blocks account exactly for the parameter difference
    const i64 full = net.num_scalars();
    const i64 small = pruned.num_scalars();
    i64 block_scalars = 0;
    for (const auto & p : net.params())
        if (p.name.starts_with("block0.")) block_scalars += p.value.size();
    CHECK(full - small == 4 * block_scalars);
}

TEST_CASE("equal logits tie-break selects the lexicographically smallest mask") {
    GateLogits g;
    g.scheme = {1, 2};
    g.candidates = enumerate_masks(g.scheme);   // [1,0], [0,1]
    g.logits = {{0.25, 0.25}};
    const Mask m = selected_masks(g, 2);
    CHECK(m == Mask{0, 1});

    GateLogits g34;
    g34.scheme = {3, 4};
    g34.candidates = enumerate_masks(g34.scheme);
    g34.logits = {{1.0, 1.0, 1.0, 1.0}};
    CHECK(selected_masks(g34, 4) == Mask{0, 1, 1, 1});
}

TEST_CASE("degenerate full-keep masks behave as plain training wiring") {
    // N == M is rejected by the scheme; an all-ones hard mask must match the
    // unmasked forward exactly (covered bit-exactly in the net tests); here we
    // check the training-entry contract
    CHECK_THROWS_AS(enumerate_masks({2, 2}), contract_error);
}

TEST_CASE("planted identity blocks are pruned by learned gates") {
    testutil::SyntheticDataset data(6, 4, 2, 512, 99);
    EdmCoeffs co;

    int hits = 0;
    const int runs = 3;
    for (int run = 0; run < runs; ++run) {
        auto net = DenoiserNet<float>(tiny_cfg(4));
        Rng ir(100 + unsigned(run));
        net.init_weights(ir);

        // light pretraining so the surviving blocks carry real function
        {
            Rng rng(200 + unsigned(run));
            AdamW<float> opt(2e-3);
            for (int it = 0; it < 120; ++it) {
                auto batch = data.sample_batch(16, rng);
                Tape<float> tape;
                auto bd = net.bind(&tape);
                auto loss = score_matching_loss(net, bd, co, batch, rng);
                tape.backward(loss);
                opt.begin_step();
                for (size_t pi = 0; pi < net.params().size(); ++pi)
                    if (tape.has_grad(bd.p[pi].node()))
                        opt.step(net.params()[pi].value.data(), tape.grad(bd.p[pi]), pi);
            }
        }
        make_identity_block(net, 1);
        make_identity_block(net, 2);

        GateTrainOpts opts;
        opts.epochs = 3;
        opts.steps_per_epoch = 80;
        opts.batch = 16;
        opts.lr = 5e-4;
        opts.gate_lr = 0.08;
        opts.seed = 300 + unsigned(run);
        auto res = train_gates(net, data, {1, 2}, co, opts);
        const Mask m = selected_masks(res.logits, 4);
        if (m[1] == 0 && m[2] == 0) ++hits;
    }
    CHECK(hits >= 2);  // the 10-seed version runs in the acceptance suite
}

TEST_CASE("gate logits move during training (straight-through contract)") {
    testutil::SyntheticDataset data(6, 4, 2, 128, 7);
    EdmCoeffs co;
    auto net = DenoiserNet<float>(tiny_cfg(4));
    Rng ir(5);
    net.init_weights(ir);
    auto before = init_gate_logits(normalized_importances(net, 4), {1, 2});
    GateTrainOpts opts;
    opts.epochs = 1;
    opts.steps_per_epoch = 20;
    opts.batch = 8;
    opts.seed = 11;
    auto res = train_gates(net, data, {1, 2}, co, opts);
    double moved = 0;
    for (size_t gi = 0; gi < res.logits.logits.size(); ++gi)
        for (size_t c = 0; c < res.logits.logits[gi].size(); ++c)
            moved += std::fabs(res.logits.logits[gi][c] - before.logits[gi][c]);
    CHECK(moved > 1e-6);
}
