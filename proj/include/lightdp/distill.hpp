#pragma once

#include <optional>

#include "lightdp/metrics.hpp"
#include "lightdp/pruner.hpp"

// Consistency distillation. The frozen teacher solves one DDIM interval of k
// schedule indices; the student matches the EMA target's prediction at the
// interval's low end (x0-prediction form, squared-L2 distance, stop-gradient
// on the target). When a pruning scheme is given, gumbel-drawn gates ride on
// the student during the first phase of training; at the snapshot epoch the
// argmax masks are frozen, the student is physically pruned, the target is
// rebuilt from it, and the remaining epochs fine-tune without mask sampling.

namespace lightdp {

struct DistillConfig {
    int skip_k = 10;
    int schedule_steps = 100;
    double mu_start = 0.95;
    double mu_end = 0.999;
    int epochs = 12;
    int steps_per_epoch = 150;
    int batch = 64;
    double lr = 5e-4;
    double weight_decay = 0.0;
    bool teacher_substeps = false;  // k unit DDIM steps instead of one solve
    double rho = 7.0;

    // gate search (only used when a scheme is passed)
    double gate_lr = 0.05;
    double tau_start = 4.0;
    double tau_end = 0.1;
    double snapshot_frac = 2.0 / 3.0;
    int svd_k = 0;

    int gap_probe_items = 8;
    std::uint64_t seed = 1;

    void validate() const {
        if (!(mu_start >= 0.0 && mu_start <= mu_end && mu_end < 1.0))
            throw contract_error("distill: need 0 <= mu_start <= mu_end < 1");
        if (!(skip_k >= 1 && skip_k < schedule_steps))
            throw contract_error("distill: need 1 <= skip_k < schedule_steps");
        if (epochs < 0 || steps_per_epoch < 1 || batch < 1)
            throw contract_error("distill: bad loop sizes");
    }
};

// EMA decay at a given epoch: linear ramp from mu_start to mu_end, clamped.
inline double mu_at(const DistillConfig & cfg, int epoch) {
    if (cfg.epochs <= 1) return cfg.mu_start;
    const double f = std::clamp(double(epoch) / double(cfg.epochs - 1), 0.0, 1.0);
    return std::clamp(cfg.mu_start + (cfg.mu_end - cfg.mu_start) * f, cfg.mu_start, cfg.mu_end);
}

// target <- mu * target + (1 - mu) * student, elementwise, no tape involved.
template <class R>
void ema_update(DenoiserNet<R> & target, const DenoiserNet<R> & student, double mu) {
    if (!(target.cfg == student.cfg) || target.params().size() != student.params().size())
        throw contract_error("ema_update: architectures do not match");
    if (mu == 1.0) return;
    for (size_t i = 0; i < target.params().size(); ++i) {
        auto & t = target.params()[i].value.data();
        const auto & s = student.params()[i].value.data();
        if (t.size() != s.size()) throw contract_error("ema_update: parameter size mismatch");
        if (mu == 0.0) {
            t = s;
            continue;
        }
        for (size_t j = 0; j < t.size(); ++j)
            t[j] = R(mu * double(t[j]) + (1.0 - mu) * double(s[j]));
    }
}

// Teacher solve across the interval [u, u+k] of the schedule: one DDIM step
// by default, k unit steps when substeps is set. Per-item interval indices;
// no gradients flow.
template <class R>
Tensor<R> teacher_target(const DenoiseFn<R> & teacher, const Tensor<R> & a_noised,
                         const Tensor<R> & obs, const std::vector<double> & schedule,
                         const std::vector<int> & u, int k, bool substeps = false) {
    const i64 B = a_noised.shape()[0];
    if (i64(u.size()) != B) throw dimension_error("teacher_target: index count != batch");
    const int S = int(schedule.size());
    for (int ui : u)
        if (ui < 0 || ui + k >= S)
            throw contract_error("teacher_target: interval exceeds the schedule");
    if (!substeps) {
        std::vector<double> hi(static_cast<size_t>(B)), lo(static_cast<size_t>(B));
        for (i64 i = 0; i < B; ++i) {
            hi[size_t(i)] = schedule[size_t(u[size_t(i)])];
            lo[size_t(i)] = schedule[size_t(u[size_t(i)] + k)];
        }
        return ddim_step(teacher, a_noised, obs, hi, lo);
    }
    Tensor<R> x = a_noised;
    for (int m = 0; m < k; ++m) {
        std::vector<double> hi(static_cast<size_t>(B)), lo(static_cast<size_t>(B));
        for (i64 i = 0; i < B; ++i) {
            hi[size_t(i)] = schedule[size_t(u[size_t(i)] + m)];
            lo[size_t(i)] = schedule[size_t(u[size_t(i)] + m + 1)];
        }
        x = ddim_step(teacher, x, obs, hi, lo);
    }
    return x;
}

// L_CD with the interval indices and noise fixed by the caller. The student
// branch runs on the tape; teacher and target branches never do.
template <class R>
Tensor<R> consistency_loss_with_draws(
    const DenoiserNet<R> & student, const Bound<R> & bd, const DenoiserNet<R> & target,
    const DenoiseFn<R> & teacher, const EdmCoeffs & cons, const Batch<R> & batch,
    const std::vector<double> & schedule, int k, const std::vector<int> & u,
    const std::vector<double> & eps, bool substeps = false,
    const std::vector<Tensor<R>> * student_gates = nullptr,
    const std::vector<int> * hard_masks = nullptr) {
    const i64 B = batch.actions.shape()[0];
    if (B < 1) throw contract_error("consistency_loss: empty batch");
    const i64 per = batch.actions.size() / B;
    if (i64(eps.size()) != batch.actions.size())
        throw dimension_error("consistency_loss: eps size mismatch");

    std::vector<double> sig_hi(static_cast<size_t>(B)), sig_lo(static_cast<size_t>(B));
    for (i64 i = 0; i < B; ++i) {
        sig_hi[size_t(i)] = schedule[size_t(u[size_t(i)])];
        sig_lo[size_t(i)] = schedule[size_t(u[size_t(i)] + k)];
    }

    std::vector<R> noised(batch.actions.data());
    for (i64 i = 0; i < B; ++i)
        for (i64 j = 0; j < per; ++j)
            noised[size_t(i * per + j)] += R(sig_hi[size_t(i)] * eps[size_t(i * per + j)]);
    Tensor<R> a_hi(batch.actions.shape(), std::move(noised));

    Tensor<R> a_lo = teacher_target(teacher, a_hi, batch.obs, schedule, u, k, substeps);

    // student at the high-noise end, on tape
    Tensor<R> student_out = edm_wrap_forward(student, bd, cons, a_hi, batch.obs, sig_hi,
                                             hard_masks, student_gates);
    // gradient-stopped target at the low end
    Bound<R> tbd = target.bind(nullptr);
    Tensor<R> target_out =
        edm_wrap_forward(target, tbd, cons, a_lo, batch.obs, sig_lo, hard_masks);

    Tensor<R> diff = sub(student_out, detach(target_out));
    Tensor<R> per_row = sum_per_row(mul(diff, diff), B);
    return scale(sum_all(per_row), R(1.0 / double(B)));
}

template <class R>
Tensor<R> consistency_loss(const DenoiserNet<R> & student, const Bound<R> & bd,
                           const DenoiserNet<R> & target, const DenoiseFn<R> & teacher,
                           const EdmCoeffs & cons, const Batch<R> & batch,
                           const std::vector<double> & schedule, int k, Rng & rng,
                           bool substeps = false,
                           const std::vector<Tensor<R>> * student_gates = nullptr,
                           const std::vector<int> * hard_masks = nullptr) {
    const i64 B = batch.actions.shape()[0];
    const int S = int(schedule.size());
    std::vector<int> u(static_cast<size_t>(B));
    for (auto & v : u) v = rng.uniform_int(0, S - 1 - k);
    std::vector<double> eps(size_t(batch.actions.size()));
    for (auto & e : eps) e = rng.normal();
    return consistency_loss_with_draws(student, bd, target, teacher, cons, batch, schedule, k, u,
                                       eps, substeps, student_gates, hard_masks);
}

// Fixed probe for the self-consistency gap: points along shared teacher
// trajectories; the gap is the mean distance between the student's denoised
// outputs at consecutive points. Falls monotonically as distillation
// converges.
template <class R>
struct GapProbe {
    std::vector<Tensor<R>> states;   // trajectory points x_j
    std::vector<double> sigmas;      // matching sigma_j
    Tensor<R> obs;
};

template <class R>
GapProbe<R> build_gap_probe(const DenoiseFn<R> & teacher, const Batch<R> & probe_batch,
                            const std::vector<double> & schedule, int k, std::uint64_t seed) {
    GapProbe<R> probe;
    probe.obs = probe_batch.obs;
    const i64 P = probe_batch.obs.shape()[0];
    const i64 per = probe_batch.actions.size() / P;
    Rng rng(seed);
    std::vector<R> x0(size_t(P * per));
    for (auto & v : x0) v = R(schedule[0] * rng.normal());
    Tensor<R> x(probe_batch.actions.shape(), std::move(x0));

    const int S = int(schedule.size());
    std::vector<int> points;
    for (int j = 0; j < S; j += k) points.push_back(j);
    if (points.back() != S - 1) points.push_back(S - 1);

    probe.states.push_back(x);
    probe.sigmas.push_back(schedule[0]);
    for (size_t m = 0; m + 1 < points.size(); ++m) {
        const double hi = schedule[size_t(points[m])];
        const double lo = schedule[size_t(points[m + 1])];
        x = ddim_step(teacher, x, probe.obs, hi, lo);
        probe.states.push_back(x);
        probe.sigmas.push_back(lo);
    }
    return probe;
}

template <class R>
double self_consistency_gap(const DenoiserNet<R> & student, const EdmCoeffs & cons,
                            const GapProbe<R> & probe, const std::vector<int> * masks = nullptr) {
    WrappedPolicy<R> f(student, cons, masks ? *masks : std::vector<int>{});
    const i64 P = probe.obs.shape()[0];
    double total = 0.0;
    int pairs = 0;
    Tensor<R> prev;
    for (size_t m = 0; m < probe.states.size(); ++m) {
        Tensor<R> out = f.denoise(probe.states[m], probe.obs,
                                  std::vector<double>(size_t(P), probe.sigmas[m]));
        if (m > 0) {
            const i64 per = out.size() / P;
            for (i64 i = 0; i < P; ++i) {
                double d2 = 0.0;
                for (i64 j = 0; j < per; ++j) {
                    const double d = double(out.data()[size_t(i * per + j)]) -
                                     double(prev.data()[size_t(i * per + j)]);
                    d2 += d * d;
                }
                total += std::sqrt(d2);
            }
            ++pairs;
        }
        prev = out;
    }
    return total / double(pairs * P);
}

template <class R>
struct DistillResult {
    DenoiserNet<R> student;
    Mask masks;  // all-ones when no pruning scheme was given
    GateLogits logits;
    std::vector<double> epoch_loss;
    std::vector<double> epoch_gap;
    std::vector<double> epoch_mu;
    std::vector<double> epoch_tau;
};

// The unified loop. `init_net` seeds both student and target (the teacher's
// weights in the real pipeline); `teacher` drives the DDIM targets.
template <class R, class DatasetT>
DistillResult<R> distill(const DenoiserNet<R> & init_net, const DenoiseFn<R> & teacher,
                         const DatasetT & dataset, const std::optional<PruningScheme> & scheme,
                         const EdmCoeffs & cons, const DistillConfig & cfg,
                         MetricsLog * log = nullptr) {
    cfg.validate();
    if (cons.mode != EdmMode::consistency)
        throw contract_error("distill: student coefficients must be consistency-mode");

    DistillResult<R> out;
    out.student = init_net.clone();
    DenoiserNet<R> target = init_net.clone();
    out.masks.assign(size_t(init_net.cfg.depth), 1);

    const auto schedule = karras_schedule(cfg.schedule_steps, cons.sigma_min, cons.sigma_max,
                                          cfg.rho);
    Rng rng(cfg.seed);

    const bool pruning = scheme.has_value();
    int gate_epochs = 0;
    if (pruning) {
        scheme->validate(init_net.cfg.depth);
        gate_epochs = std::clamp(int(std::lround(cfg.snapshot_frac * cfg.epochs)), 1,
                                 std::max(1, cfg.epochs - 1));
        const int k = cfg.svd_k > 0 ? cfg.svd_k : std::max(1, init_net.cfg.hidden / 4);
        out.logits = init_gate_logits(normalized_importances(init_net, k), *scheme);
    }

    // fixed probe on shared teacher trajectories
    Rng probe_rng(cfg.seed ^ 0xABCDEF12345ull);
    auto probe_batch = dataset.sample_batch(cfg.gap_probe_items, probe_rng);
    auto probe = build_gap_probe(teacher, probe_batch, schedule, cfg.skip_k,
                                 cfg.seed ^ 0x5555AAAAull);

    AdamW<R> wopt(cfg.lr, cfg.weight_decay);
    AdamW<double> gopt(cfg.gate_lr);
    bool pruned = false;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        if (pruning && !pruned && epoch == gate_epochs) {
            auto [small, masks] = select_and_prune(out.student, out.logits);
            out.student = std::move(small);
            out.masks = masks;
            target = out.student.clone();
            wopt = AdamW<R>(cfg.lr, cfg.weight_decay);  // parameter set changed
            pruned = true;
        }
        const bool gate_phase = pruning && !pruned;
        const double tau =
            gate_epochs > 1 ? cfg.tau_start + (cfg.tau_end - cfg.tau_start) *
                                                  std::min(epoch, gate_epochs - 1) /
                                                  double(gate_epochs - 1)
                            : cfg.tau_start;
        const double mu = mu_at(cfg, epoch);

        double loss_sum = 0.0;
        for (int it = 0; it < cfg.steps_per_epoch; ++it) {
            auto batch = dataset.sample_batch(cfg.batch, rng);
            Tape<R> tape;
            auto bd = out.student.bind(&tape);
            Tensor<R> loss;
            std::optional<GateDraw<R>> draw;
            if (gate_phase) {
                draw = draw_gates(tape, out.logits, out.student.cfg.depth, tau, rng);
                loss = consistency_loss(out.student, bd, target, teacher, cons, batch, schedule,
                                        cfg.skip_k, rng, cfg.teacher_substeps, &draw->layer_gates,
                                        &draw->hard_masks);
            } else {
                loss = consistency_loss(out.student, bd, target, teacher, cons, batch, schedule,
                                        cfg.skip_k, rng, cfg.teacher_substeps);
            }
            const double lv = double(loss.item());
            if (!std::isfinite(lv))
                throw training_error("distill: loss diverged at epoch " + std::to_string(epoch) +
                                     " step " + std::to_string(it));
            loss_sum += lv;
            tape.backward(loss);

            wopt.begin_step();
            for (size_t pi = 0; pi < out.student.params().size(); ++pi)
                if (tape.has_grad(bd.p[pi].node()))
                    wopt.step(out.student.params()[pi].value.data(), tape.grad(bd.p[pi]), pi);
            if (gate_phase) {
                gopt.begin_step();
                for (size_t gi = 0; gi < draw->logit_leaves.size(); ++gi) {
                    const auto gradf = tape.grad(draw->logit_leaves[gi]);
                    std::vector<double> grad(gradf.begin(), gradf.end());
                    gopt.step(out.logits.logits[gi], grad, gi);
                }
            }
            ema_update(target, out.student, mu);
        }

        const Mask gate_masks = gate_phase ? selected_masks(out.logits, out.student.cfg.depth)
                                           : Mask();
        const double gap = self_consistency_gap(out.student, cons, probe,
                                                gate_phase ? &gate_masks : nullptr);
        out.epoch_loss.push_back(loss_sum / cfg.steps_per_epoch);
        out.epoch_gap.push_back(gap);
        out.epoch_mu.push_back(mu);
        out.epoch_tau.push_back(gate_phase ? tau : 0.0);
        if (log)
            log->record(epoch, {{"cd_loss", loss_sum / cfg.steps_per_epoch},
                                {"gap", gap},
                                {"mu", mu},
                                {"tau", gate_phase ? tau : 0.0}});
    }
    return out;
}

}  // namespace lightdp
