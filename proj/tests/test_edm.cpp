#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>

#include "lightdp/edm.hpp"
#include "toy_gaussian.hpp"

using namespace lightdp;

namespace {

template <class R>
DenoiserNet<R> small_net(unsigned seed, int depth = 2, int hidden = 16) {
    DenoiserConfig cfg;
    cfg.depth = depth;
    cfg.hidden = hidden;
    cfg.heads = 2;
    cfg.action_dim = 2;
    cfg.horizon = 4;
    cfg.obs_dim = 6;
    cfg.ffn_mult = 2;
    DenoiserNet<R> net(cfg);
    Rng rng(seed);
    net.init_weights(rng);
    return net;
}

template <class R>
void randomize_all(DenoiserNet<R> & net, unsigned seed) {
    Rng rng(seed);
    for (auto & p : net.params())
        for (auto & v : p.value.data()) v = R(rng.normal(0.0, 0.3));
}

}  // namespace

TEST_CASE("edm coefficient identities") {
    EdmCoeffs co;
    co.mode = EdmMode::diffusion;
    // at sigma = sigma_data, c_skip is exactly 1/2
    CHECK(co.c_skip(co.sigma_data) == doctest::Approx(0.5).epsilon(1e-12));

    EdmCoeffs cm = co;
    cm.mode = EdmMode::consistency;
    CHECK(cm.c_skip(cm.sigma_min) == 1.0);
    CHECK(cm.c_out(cm.sigma_min) == 0.0);
}

TEST_CASE("consistency wrap at sigma_min is the identity regardless of weights") {
    auto net = small_net<float>(3);
    randomize_all(net, 17);  // arbitrary weights, not trained
    EdmCoeffs co;
    co.mode = EdmMode::consistency;
    WrappedPolicy<float> pol(net, co);
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<float> xv(2 * 4 * 2);
        rng.fill_uniform(xv, -3.0, 3.0);
        Tensor<float> x({2, 4, 2}, xv);
        std::vector<float> ov(2 * 6);
        rng.fill_uniform(ov, -1.0, 1.0);
        Tensor<float> obs({2, 6}, ov);
        auto out = pol.denoise(x, obs, {co.sigma_min, co.sigma_min});
        CHECK(std::memcmp(out.data().data(), x.data().data(), xv.size() * sizeof(float)) == 0);
    }
}

TEST_CASE("diffusion wrap with f == 0 returns c_skip * x") {
    auto net = small_net<float>(7);  // head zero-init, so the raw net output is 0
    EdmCoeffs co;
    WrappedPolicy<float> pol(net, co);
    Rng rng(9);
    std::vector<float> xv(1 * 4 * 2);
    rng.fill_uniform(xv, -2.0, 2.0);
    Tensor<float> x({1, 4, 2}, xv);
    Tensor<float> obs = Tensor<float>::zeros({1, 6});
    const double sg = 1.7;
    auto out = pol.denoise(x, obs, {sg});
    for (size_t i = 0; i < xv.size(); ++i)
        CHECK(out.data()[i] == doctest::Approx(float(co.c_skip(sg)) * xv[i]));
}

TEST_CASE("wrap rejects sigma outside the configured range") {
    auto net = small_net<float>(7);
    EdmCoeffs co;
    WrappedPolicy<float> pol(net, co);
    Tensor<float> x = Tensor<float>::zeros({1, 4, 2});
    Tensor<float> obs = Tensor<float>::zeros({1, 6});
    CHECK_THROWS_AS(pol.denoise(x, obs, {co.sigma_max * 2}), contract_error);
    CHECK_THROWS_AS(pol.denoise(x, obs, {co.sigma_min / 2}), contract_error);
}

TEST_CASE("perfect denoiser gives zero loss; loss is nonnegative") {
    // all-zero weights make the raw net constant f == head bias; pick the bias
    // so D(a_t) == a for one fixed draw
    DenoiserConfig cfg;
    cfg.depth = 1;
    cfg.hidden = 8;
    cfg.heads = 2;
    cfg.action_dim = 1;
    cfg.horizon = 1;
    cfg.obs_dim = 2;
    DenoiserNet<double> net(cfg);  // zero weights

    EdmCoeffs co;
    const double a = 0.37, sg = 0.9, eps = -1.1;
    const double a_t = a + sg * eps;
    const double need = (a - co.c_skip(sg) * a_t) / co.c_out(sg);
    net.params()[size_t(net.find("head.b"))].value.data()[0] = need;
    // layernorm gains must be 1 for the zero-weight path to stay all-zero
    for (auto & p : net.params())
        if (p.name.ends_with(".g")) std::fill(p.value.data().begin(), p.value.data().end(), 1.0);

    Batch<double> batch{Tensor<double>::zeros({1, 2}), Tensor<double>({1, 1, 1}, {a})};
    Bound<double> bd = net.bind(nullptr);
    auto loss = score_matching_loss_with_draws(net, bd, co, batch, {sg}, {eps});
    CHECK(loss.item() == doctest::Approx(0.0).epsilon(1e-18));

    // nonnegativity on random nets and batches
    auto rnet = small_net<double>(21);
    randomize_all(rnet, 23);
    Rng rng(25);
    for (int t = 0; t < 5; ++t) {
        std::vector<double> av(3 * 4 * 2), ov(3 * 6);
        rng.fill_uniform(av, -1.0, 1.0);
        rng.fill_uniform(ov, -1.0, 1.0);
        Batch<double> b{Tensor<double>({3, 6}, ov), Tensor<double>({3, 4, 2}, av)};
        Bound<double> rbd = rnet.bind(nullptr);
        CHECK(score_matching_loss(rnet, rbd, co, b, rng).item() >= 0.0);
    }
}

TEST_CASE("f == 0 loss matches the closed form for fixed draws") {
    auto net = small_net<double>(31);  // zero head -> f == 0
    EdmCoeffs co;
    Rng rng(33);
    const int B = 4, T = 4, A = 2;
    std::vector<double> av(size_t(B * T * A)), ov(size_t(B * 6));
    rng.fill_uniform(av, -1.0, 1.0);
    rng.fill_uniform(ov, -1.0, 1.0);
    Batch<double> batch{Tensor<double>({B, 6}, ov), Tensor<double>({B, T, A}, av)};

    std::vector<double> sigma = {0.3, 41.0, 1.2, 5.0};
    std::vector<double> eps(size_t(B * T * A));
    rng.fill_normal(eps);

    Bound<double> bd = net.bind(nullptr);
    const double loss = score_matching_loss_with_draws(net, bd, co, batch, sigma, eps).item();

    double expect = 0.0;
    for (int i = 0; i < B; ++i) {
        const double cs = co.c_skip(sigma[size_t(i)]);
        double row = 0.0;
        for (int j = 0; j < T * A; ++j) {
            const double at = av[size_t(i * T * A + j)] + sigma[size_t(i)] * eps[size_t(i * T * A + j)];
            const double d = cs * at - av[size_t(i * T * A + j)];
            row += d * d;
        }
        expect += co.loss_weight(sigma[size_t(i)]) * row / B;
    }
    CHECK(loss == doctest::Approx(expect).epsilon(1e-10));
}

TEST_CASE("karras schedule: descending, endpoints pinned, 1-step degenerate") {
    auto s = karras_schedule(100, 0.002, 80.0);
    CHECK(s.size() == 100);
    CHECK(s.front() == 80.0);
    CHECK(s.back() == 0.002);
    for (size_t i = 0; i + 1 < s.size(); ++i) CHECK(s[i] > s[i + 1]);

    auto one = karras_schedule(1, 0.002, 80.0);
    CHECK(one == std::vector<double>{80.0});
}

TEST_CASE("1-step euler returns the denoiser's one-shot prediction") {
    toy::AnalyticGaussianDenoiser<float> den(0.5, 0.35);
    Tensor<float> obs = Tensor<float>::zeros({8, 1});
    auto sched = karras_schedule(1, 0.002, 80.0);
    Rng rng(41);
    auto out = sample_euler(den, obs, sched, rng, 1, 1);

    Rng rng2(41);
    std::vector<float> x0(8);
    for (auto & v : x0) v = float(80.0 * rng2.normal());
    auto expect = den.denoise(Tensor<float>({8, 1, 1}, x0), obs, std::vector<double>(8, 80.0));
    for (i64 i = 0; i < out.size(); ++i)
        CHECK(out.data()[size_t(i)] == expect.data()[size_t(i)]);
}

TEST_CASE("euler samples match the analytic gaussian within 2%") {
    const double mu = 0.5, s = 0.35;
    toy::AnalyticGaussianDenoiser<float> den(mu, s);
    const int N = 4000;
    Tensor<float> obs = Tensor<float>::zeros({N, 1});
    auto sched = karras_schedule(100, 0.002, 80.0);
    Rng rng(43);
    auto out = sample_euler(den, obs, sched, rng, 1, 1);
    double m, sd;
    toy::moments(out.data(), m, sd);
    CHECK(std::fabs(m - mu) <= 0.02 * std::max(std::fabs(mu), s));
    CHECK(std::fabs(sd - s) <= 0.02 * s);
}

TEST_CASE("identical seeds give bit-identical euler chunks") {
    toy::AnalyticGaussianDenoiser<float> den(0.1, 0.5);
    Tensor<float> obs = Tensor<float>::zeros({4, 1});
    auto sched = karras_schedule(20, 0.002, 80.0);
    Rng r1(77), r2(77);
    auto a = sample_euler(den, obs, sched, r1, 1, 1);
    auto b = sample_euler(den, obs, sched, r2, 1, 1);
    CHECK(std::memcmp(a.data().data(), b.data().data(), size_t(a.size()) * sizeof(float)) == 0);
}

TEST_CASE("euler reports the step index on NaN") {
    struct NanDenoiser : DenoiseFn<float> {
        Tensor<float> denoise(const Tensor<float> & x, const Tensor<float> &,
                              const std::vector<double> &) const override {
            auto out = Tensor<float>::zeros(x.shape());
            out.data()[0] = std::nanf("");
            return out;
        }
    } den;
    Tensor<float> obs = Tensor<float>::zeros({1, 1});
    Rng rng(5);
    CHECK_THROWS_WITH_AS(sample_euler(den, obs, karras_schedule(3, 0.01, 1.0), rng, 1, 1),
                         doctest::Contains("step 0"), numeric_error);
}

TEST_CASE("ddim step: sigma_to = 0 returns D; D == 0 scales by the ratio") {
    toy::AnalyticGaussianDenoiser<float> den(0.3, 0.4);
    Rng rng(51);
    std::vector<float> xv(6);
    rng.fill_uniform(xv, -2.0, 2.0);
    Tensor<float> x({6, 1, 1}, xv);
    Tensor<float> obs = Tensor<float>::zeros({6, 1});

    auto d = den.denoise(x, obs, std::vector<double>(6, 2.0));
    auto stepped = ddim_step(den, x, obs, 2.0, 0.0);
    for (i64 i = 0; i < stepped.size(); ++i)
        CHECK(stepped.data()[size_t(i)] == d.data()[size_t(i)]);

    toy::ZeroDenoiser<float> zero;
    auto scaled = ddim_step(zero, x, obs, 2.0, 0.5);
    for (i64 i = 0; i < scaled.size(); ++i)
        CHECK(scaled.data()[size_t(i)] == doctest::Approx(0.25f * xv[size_t(i)]));
}

TEST_CASE("ddim never increases sigma") {
    toy::ZeroDenoiser<float> zero;
    Tensor<float> x = Tensor<float>::zeros({1, 1, 1});
    Tensor<float> obs = Tensor<float>::zeros({1, 1});
    CHECK_THROWS_AS(ddim_step(zero, x, obs, 1.0, 2.0), contract_error);
}

TEST_CASE("ddim composition is exact for point-mass data") {
    // With a delta data distribution D is constant, the PF-ODE is linear in x,
    // and one DDIM step across [hi, lo] equals two chained steps exactly.
    toy::AnalyticGaussianDenoiser<double> den(0.42, 0.0);
    Rng rng(53);
    std::vector<double> xv(5);
    rng.fill_uniform(xv, -3.0, 3.0);
    Tensor<double> x({5, 1, 1}, xv);
    Tensor<double> obs = Tensor<double>::zeros({5, 1});

    const double hi = 7.0, mid = 1.3, lo = 0.2;
    auto direct = ddim_step(den, x, obs, hi, lo);
    auto chained = ddim_step(den, ddim_step(den, x, obs, hi, mid), obs, mid, lo);
    for (i64 i = 0; i < direct.size(); ++i)
        CHECK(std::fabs(direct.data()[size_t(i)] - chained.data()[size_t(i)]) <= 1e-10);
}

TEST_CASE("consistency multistep sampler is deterministic and finite") {
    toy::AnalyticGaussianDenoiser<float> den(0.2, 0.3);
    Tensor<float> obs = Tensor<float>::zeros({16, 1});
    auto grid = karras_schedule(4, 0.002, 80.0);
    Rng r1(61), r2(61);
    auto a = sample_consistency(den, obs, grid, r1, 1, 1);
    auto b = sample_consistency(den, obs, grid, r2, 1, 1);
    CHECK(std::memcmp(a.data().data(), b.data().data(), size_t(a.size()) * sizeof(float)) == 0);
    for (const float v : a.data()) CHECK(std::isfinite(v));
}
