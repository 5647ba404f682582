#pragma once

#include "lightdp/edm.hpp"
#include "lightdp/net.hpp"

namespace lightdp {

// Single-threaded latency benchmark of one full action prediction: the
// observation encoder runs once, the denoiser once per sampling step.
// Monotonic clock, 20 warmup trials discarded.
struct LatencyReport {
    int steps = 0;
    int trials = 0;
    double encoder_ms = 0.0;        // one encoder pass
    double denoiser_step_ms = 0.0;  // one denoiser evaluation, averaged
    double total_ms_mean = 0.0;     // full sampler, wall clock
    double total_ms_p95 = 0.0;

    double components_ms() const { return encoder_ms + steps * denoiser_step_ms; }
    double denoiser_fraction() const {
        const double c = components_ms();
        return c > 0 ? steps * denoiser_step_ms / c : 0.0;
    }
};

LatencyReport bench_latency(const DenoiserNet<float> & net, const EdmCoeffs & co, int steps,
                            int trials);

}  // namespace lightdp
