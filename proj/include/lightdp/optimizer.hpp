#pragma once

#include <cmath>
#include <vector>

#include "lightdp/common.hpp"

namespace lightdp {

// AdamW with double-precision moments regardless of the parameter type.
// One instance per optimized group (network weights, gate logits).
template <class R>
class AdamW {
  public:
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;

    AdamW() = default;
    AdamW(double lr_, double wd_ = 0.0) : lr(lr_), weight_decay(wd_) {}

    void begin_step() { ++t_; }

    // Updates `value` in place from `grad`; `slot` identifies the tensor so
    // its moments persist across steps.
    void step(std::vector<R> & value, const std::vector<R> & grad, size_t slot) {
        if (value.size() != grad.size())
            throw contract_error("AdamW: value/grad size mismatch");
        if (slots_m_.size() <= slot) {
            slots_m_.resize(slot + 1);
            slots_v_.resize(slot + 1);
        }
        auto & m = slots_m_[slot];
        auto & v = slots_v_[slot];
        if (m.empty()) {
            m.assign(value.size(), 0.0);
            v.assign(value.size(), 0.0);
        }
        const double bc1 = 1.0 - std::pow(beta1, double(t_));
        const double bc2 = 1.0 - std::pow(beta2, double(t_));
        for (size_t i = 0; i < value.size(); ++i) {
            const double g = double(grad[i]);
            m[i] = beta1 * m[i] + (1.0 - beta1) * g;
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
            const double mh = m[i] / bc1;
            const double vh = v[i] / bc2;
            double x = double(value[i]);
            x -= lr * (mh / (std::sqrt(vh) + eps) + weight_decay * x);
            value[i] = R(x);
        }
    }

  private:
    int t_ = 0;
    std::vector<std::vector<double>> slots_m_, slots_v_;
};

}  // namespace lightdp
