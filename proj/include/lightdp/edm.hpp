#pragma once

#include <cmath>

#include "lightdp/net.hpp"
#include "lightdp/rng.hpp"

// EDM parameterization of the denoiser, the score-matching training loss,
// and the samplers: Euler integration of the probability-flow ODE for the
// multi-step teacher, deterministic DDIM steps as the distillation solver,
// and multi-step consistency sampling for the distilled student.

namespace lightdp {

enum class EdmMode { diffusion, consistency };

struct EdmCoeffs {
    EdmMode mode = EdmMode::diffusion;
    double sigma_data = 0.5;
    double sigma_min = 0.002;
    double sigma_max = 80.0;
    // training-time noise-level distribution: ln(sigma) ~ N(pmean, pstd^2)
    double pmean = -1.2;
    double pstd = 1.2;

    double c_in(double s) const { return 1.0 / std::sqrt(s * s + sigma_data * sigma_data); }

    double c_skip(double s) const {
        const double sd2 = sigma_data * sigma_data;
        if (mode == EdmMode::diffusion) return sd2 / (s * s + sd2);
        const double d = s - sigma_min;
        return sd2 / (d * d + sd2);
    }

    double c_out(double s) const {
        const double sd = sigma_data;
        if (mode == EdmMode::diffusion) return s * sd / std::sqrt(s * s + sd * sd);
        return sd * (s - sigma_min) / std::sqrt(sd * sd + s * s);
    }

    double c_noise(double s) const { return 0.25 * std::log(s); }

    // EDM loss weight alpha(sigma)
    double loss_weight(double s) const {
        const double sd = sigma_data;
        return (s * s + sd * sd) / ((s * sd) * (s * sd));
    }

    void check_sigma(double s) const {
        if (!(s >= sigma_min && s <= sigma_max))
            throw contract_error("sigma " + std::to_string(s) + " outside [" +
                                 std::to_string(sigma_min) + ", " + std::to_string(sigma_max) + "]");
    }
};

// Karras-warped grid from sigma_max down to sigma_min, strictly descending.
inline std::vector<double> karras_schedule(int steps, double sigma_min, double sigma_max,
                                           double rho = 7.0) {
    if (steps < 1) throw contract_error("karras_schedule: steps must be >= 1");
    if (!(sigma_min > 0.0 && sigma_max > sigma_min))
        throw contract_error("karras_schedule: need 0 < sigma_min < sigma_max");
    std::vector<double> s(static_cast<size_t>(steps));
    if (steps == 1) {
        s[0] = sigma_max;
        return s;
    }
    const double a = std::pow(sigma_max, 1.0 / rho);
    const double b = std::pow(sigma_min, 1.0 / rho);
    for (int i = 0; i < steps; ++i) {
        const double u = a + (b - a) * double(i) / double(steps - 1);
        s[size_t(i)] = std::pow(u, rho);
    }
    s[0] = sigma_max;
    s[size_t(steps - 1)] = sigma_min;
    for (int i = 0; i + 1 < steps; ++i)
        if (!(s[size_t(i)] > s[size_t(i + 1)]))
            throw numeric_error("karras_schedule: grid not strictly descending");
    return s;
}

// Anything that maps (noised actions, obs, sigma) to denoised actions.
// Implemented by EDM-wrapped networks and by analytic test oracles.
template <class R>
struct DenoiseFn {
    virtual ~DenoiseFn() = default;
    virtual Tensor<R> denoise(const Tensor<R> & x, const Tensor<R> & obs,
                              const std::vector<double> & sigma) const = 0;
};

// D(x, sigma) = c_skip * x + c_out * f(c_in * x, c_noise), on tape when the
// binding has one. Per-row sigma; x itself is treated as a constant input.
template <class R>
Tensor<R> edm_wrap_forward(const DenoiserNet<R> & net, const Bound<R> & bd, const EdmCoeffs & co,
                           const Tensor<R> & x, const Tensor<R> & obs,
                           const std::vector<double> & sigma,
                           const std::vector<int> * hard = nullptr,
                           const std::vector<Tensor<R>> * relaxed = nullptr) {
    const i64 B = x.shape()[0];
    if (i64(sigma.size()) != B) throw dimension_error("edm_wrap_forward: sigma length != batch");
    std::vector<R> cin(static_cast<size_t>(B)), cskip(static_cast<size_t>(B)), cout_(static_cast<size_t>(B)), cn(static_cast<size_t>(B));
    for (i64 i = 0; i < B; ++i) {
        co.check_sigma(sigma[size_t(i)]);
        cin[size_t(i)] = R(co.c_in(sigma[size_t(i)]));
        cskip[size_t(i)] = R(co.c_skip(sigma[size_t(i)]));
        cout_[size_t(i)] = R(co.c_out(sigma[size_t(i)]));
        cn[size_t(i)] = R(co.c_noise(sigma[size_t(i)]));
    }
    Tensor<R> xin = scale_rows(detach(x), cin);
    Tensor<R> f = net.forward(bd, xin, obs, cn, hard, relaxed);
    Tensor<R> skip_part = scale_rows(detach(x), cskip);  // constant branch
    return add(scale_rows(f, cout_), skip_part);
}

// Inference-side denoiser: a network plus coefficients and an optional hard
// mask, seen through the DenoiseFn interface.
template <class R>
class WrappedPolicy : public DenoiseFn<R> {
  public:
    WrappedPolicy(const DenoiserNet<R> & net, EdmCoeffs co, std::vector<int> hard_masks = {})
        : net_(&net), co_(co), masks_(std::move(hard_masks)) {}

    Tensor<R> denoise(const Tensor<R> & x, const Tensor<R> & obs,
                      const std::vector<double> & sigma) const override {
        // Consistency boundary: at sigma_min the wrap is the identity for any
        // weights; skip the network entirely.
        if (co_.mode == EdmMode::consistency) {
            bool all_boundary = true;
            for (double s : sigma) all_boundary &= (s <= co_.sigma_min);
            if (all_boundary) return Tensor<R>(x.shape(), x.data());
        }
        Bound<R> bd = net_->bind(nullptr);
        return edm_wrap_forward(*net_, bd, co_, x, obs, sigma,
                                masks_.empty() ? nullptr : &masks_);
    }

    const EdmCoeffs & coeffs() const { return co_; }

  private:
    const DenoiserNet<R> * net_;
    EdmCoeffs co_;
    std::vector<int> masks_;
};

template <class R>
struct Batch {
    Tensor<R> obs;      // [B, obs_dim]
    Tensor<R> actions;  // [B, horizon, action_dim]
};

// L_DM with the noise draws fixed by the caller: mean over the batch of
// alpha(sigma) * ||D(a + sigma*eps) - a||^2. `eps` is flat, one value per
// action scalar.
template <class R>
Tensor<R> score_matching_loss_with_draws(const DenoiserNet<R> & net, const Bound<R> & bd,
                                         const EdmCoeffs & co, const Batch<R> & batch,
                                         const std::vector<double> & sigma,
                                         const std::vector<double> & eps,
                                         const std::vector<int> * hard = nullptr,
                                         const std::vector<Tensor<R>> * relaxed = nullptr) {
    const i64 B = batch.actions.shape()[0];
    if (B < 1) throw contract_error("score_matching_loss: empty batch");
    const i64 per = batch.actions.size() / B;
    if (i64(sigma.size()) != B || i64(eps.size()) != batch.actions.size())
        throw dimension_error("score_matching_loss: draw sizes do not match batch");

    std::vector<R> weight(static_cast<size_t>(B));
    for (i64 i = 0; i < B; ++i) weight[size_t(i)] = R(co.loss_weight(sigma[size_t(i)]) / double(B));

    std::vector<R> noised(batch.actions.data());
    for (i64 i = 0; i < B; ++i)
        for (i64 j = 0; j < per; ++j)
            noised[size_t(i * per + j)] += R(sigma[size_t(i)] * eps[size_t(i * per + j)]);
    Tensor<R> a_t(batch.actions.shape(), std::move(noised));

    Tensor<R> d = edm_wrap_forward(net, bd, co, a_t, batch.obs, sigma, hard, relaxed);
    Tensor<R> diff = sub(d, detach(batch.actions));
    Tensor<R> per_row = sum_per_row(mul(diff, diff), B);
    return dot(per_row, Tensor<R>({int(B)}, std::vector<R>(weight)));
}

// L_DM with sigma drawn log-normally per item and fresh Gaussian noise.
template <class R>
Tensor<R> score_matching_loss(const DenoiserNet<R> & net, const Bound<R> & bd,
                              const EdmCoeffs & co, const Batch<R> & batch, Rng & rng,
                              const std::vector<int> * hard = nullptr,
                              const std::vector<Tensor<R>> * relaxed = nullptr) {
    const i64 B = batch.actions.shape()[0];
    if (B < 1) throw contract_error("score_matching_loss: empty batch");
    std::vector<double> sigma(static_cast<size_t>(B));
    for (i64 i = 0; i < B; ++i) {
        double s = std::exp(rng.normal(co.pmean, co.pstd));
        sigma[size_t(i)] = std::min(std::max(s, co.sigma_min), co.sigma_max);
    }
    std::vector<double> eps(static_cast<size_t>(batch.actions.size()));
    for (auto & e : eps) e = rng.normal();
    return score_matching_loss_with_draws(net, bd, co, batch, sigma, eps, hard, relaxed);
}

namespace detail {
template <class R>
void check_finite(const Tensor<R> & x, const char * what, int step) {
    for (const R v : x.data())
        if (!std::isfinite(double(v)))
            throw numeric_error(std::string(what) + ": non-finite value at step " +
                                std::to_string(step));
}
}  // namespace detail

// Euler integration of the PF-ODE dx/dsigma = (x - D(x, sigma)) / sigma from
// sigma_max noise down to 0; the last grid point steps to sigma = 0, which
// lands exactly on D. One denoiser evaluation per grid point.
template <class R>
Tensor<R> sample_euler(const DenoiseFn<R> & den, const Tensor<R> & obs,
                       const std::vector<double> & schedule, Rng & rng, int horizon,
                       int action_dim) {
    const int B = obs.shape()[0];
    const int S = int(schedule.size());
    std::vector<R> x0(static_cast<size_t>(B) * static_cast<size_t>(horizon) * static_cast<size_t>(action_dim));
    for (auto & v : x0) v = R(schedule[0] * rng.normal());
    Tensor<R> x({B, horizon, action_dim}, std::move(x0));
    for (int i = 0; i < S; ++i) {
        const double s = schedule[size_t(i)];
        const double s_next = (i + 1 < S) ? schedule[size_t(i + 1)] : 0.0;
        std::vector<double> sv(static_cast<size_t>(B), s);
        Tensor<R> d = den.denoise(x, obs, sv);
        detail::check_finite(d, "sample_euler", i);
        if (s_next == 0.0) {  // the closing step lands exactly on D
            x = d;
            break;
        }
        const R c = R((s_next - s) / s);
        // x += (s_next - s) * (x - d) / s
        std::vector<R> nx(x.data());
        for (i64 j = 0; j < x.size(); ++j)
            nx[size_t(j)] += c * (x.data()[size_t(j)] - d.data()[size_t(j)]);
        x = Tensor<R>(x.shape(), std::move(nx));
    }
    return x;
}

// One deterministic DDIM step in variance-exploded coordinates:
// x_to = D + (sigma_to / sigma_from) * (x - D). sigma_to = 0 returns D.
template <class R>
Tensor<R> ddim_step(const DenoiseFn<R> & den, const Tensor<R> & x, const Tensor<R> & obs,
                    const std::vector<double> & sigma_from, const std::vector<double> & sigma_to) {
    const i64 B = x.shape()[0];
    if (i64(sigma_from.size()) != B || i64(sigma_to.size()) != B)
        throw dimension_error("ddim_step: sigma vectors must match batch");
    for (i64 i = 0; i < B; ++i)
        if (!(sigma_to[size_t(i)] < sigma_from[size_t(i)]))
            throw contract_error("ddim_step: sigma_to must be < sigma_from");
    Tensor<R> d = den.denoise(x, obs, sigma_from);
    const i64 per = x.size() / B;
    std::vector<R> out(d.data());
    for (i64 i = 0; i < B; ++i) {
        const double ratio = sigma_to[size_t(i)] / sigma_from[size_t(i)];
        if (ratio == 0.0) continue;  // formula collapses to D exactly
        for (i64 j = 0; j < per; ++j) {
            const i64 k = i * per + j;
            out[size_t(k)] += R(ratio) * (x.data()[size_t(k)] - d.data()[size_t(k)]);
        }
    }
    return Tensor<R>(x.shape(), std::move(out));
}

template <class R>
Tensor<R> ddim_step(const DenoiseFn<R> & den, const Tensor<R> & x, const Tensor<R> & obs,
                    double sigma_from, double sigma_to) {
    const size_t B = size_t(x.shape()[0]);
    return ddim_step(den, x, obs, std::vector<double>(B, sigma_from),
                     std::vector<double>(B, sigma_to));
}

// Multi-step consistency sampling: denoise to clean, re-noise to the next
// grid level, repeat. One f evaluation per grid point.
template <class R>
Tensor<R> sample_consistency(const DenoiseFn<R> & f, const Tensor<R> & obs,
                             const std::vector<double> & grid, Rng & rng, int horizon,
                             int action_dim) {
    const int B = obs.shape()[0];
    std::vector<R> x0(static_cast<size_t>(B) * static_cast<size_t>(horizon) * static_cast<size_t>(action_dim));
    for (auto & v : x0) v = R(grid[0] * rng.normal());
    Tensor<R> x({B, horizon, action_dim}, std::move(x0));
    Tensor<R> clean;
    for (size_t i = 0; i < grid.size(); ++i) {
        if (i > 0) {
            std::vector<R> renoised(clean.data());
            for (auto & v : renoised) v += R(grid[i] * rng.normal());
            x = Tensor<R>(clean.shape(), std::move(renoised));
        }
        clean = f.denoise(x, obs, std::vector<double>(size_t(B), grid[i]));
        detail::check_finite(clean, "sample_consistency", int(i));
    }
    return clean;
}

}  // namespace lightdp
