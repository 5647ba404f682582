#include "lightdp/bench.hpp"

#include <algorithm>
#include <chrono>

#include <omp.h>

namespace lightdp {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

double percentile(std::vector<double> v, double p) {
    std::sort(v.begin(), v.end());
    const double x = p * double(v.size() - 1);
    const size_t i = size_t(x);
    const size_t j = std::min(i + 1, v.size() - 1);
    const double a = x - double(i);
    return v[i] * (1.0 - a) + v[j] * a;
}

}  // namespace

LatencyReport bench_latency(const DenoiserNet<float> & net, const EdmCoeffs & co, int steps,
                            int trials) {
    if (trials < 10) throw contract_error("bench_latency: trials must be >= 10");
    const int saved_threads = omp_get_max_threads();
    omp_set_num_threads(1);

    LatencyReport rep;
    rep.steps = steps;
    rep.trials = trials;

    const auto & cfg = net.cfg;
    Rng rng(12345);
    std::vector<float> ov(size_t(cfg.obs_dim));
    rng.fill_uniform(ov, -1.0, 1.0);
    const Tensor<float> obs({1, cfg.obs_dim}, ov);
    const auto schedule = karras_schedule(steps, co.sigma_min, co.sigma_max);
    WrappedPolicy<float> pol(net, co);

    const int warmup = 20;
    std::vector<double> totals;
    totals.reserve(size_t(trials));
    for (int t = 0; t < warmup + trials; ++t) {
        Rng trial_rng(77 + std::uint64_t(t));
        const auto t0 = Clock::now();
        auto chunk = sample_euler(pol, obs, schedule, trial_rng, cfg.horizon, cfg.action_dim);
        const double ms = ms_since(t0);
        if (t >= warmup) totals.push_back(ms);
        (void)chunk;
    }
    rep.total_ms_mean = 0;
    for (double v : totals) rep.total_ms_mean += v;
    rep.total_ms_mean /= double(totals.size());
    rep.total_ms_p95 = percentile(totals, 0.95);

    // one denoiser evaluation (includes its conditioning path)
    {
        std::vector<float> xv(size_t(cfg.horizon) * size_t(cfg.action_dim));
        rng.fill_uniform(xv, -1.0, 1.0);
        Tensor<float> x({1, cfg.horizon, cfg.action_dim}, xv);
        const std::vector<double> sig(1, co.sigma_max);
        for (int t = 0; t < warmup; ++t) (void)pol.denoise(x, obs, sig);
        const auto t0 = Clock::now();
        const int reps = std::max(trials, 30);
        for (int t = 0; t < reps; ++t) (void)pol.denoise(x, obs, sig);
        rep.denoiser_step_ms = ms_since(t0) / reps;
    }

    // the observation-encoder MLP alone
    {
        const auto & w1 = net.params()[size_t(net.find("obs.fc1.w"))].value;
        const auto & b1 = net.params()[size_t(net.find("obs.fc1.b"))].value;
        const auto & w2 = net.params()[size_t(net.find("obs.fc2.w"))].value;
        const auto & b2 = net.params()[size_t(net.find("obs.fc2.b"))].value;
        for (int t = 0; t < warmup; ++t) (void)add(matmul(gelu(add(matmul(obs, w1), b1)), w2), b2);
        const auto t0 = Clock::now();
        const int reps = std::max(trials * 10, 300);
        for (int t = 0; t < reps; ++t) (void)add(matmul(gelu(add(matmul(obs, w1), b1)), w2), b2);
        rep.encoder_ms = ms_since(t0) / reps;
    }

    omp_set_num_threads(saved_threads);
    return rep;
}

}  // namespace lightdp
