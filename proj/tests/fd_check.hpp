#pragma once

#include <cmath>
#include <functional>
#include <vector>

// Central finite-difference oracle used across the gradient tests. Stays
// independent of the tape: it only re-evaluates a scalar-valued callable
// while nudging one input element at a time.

namespace fdcheck {

// Central difference d loss / d theta[i] with step h, evaluated by mutating
// theta in place and restoring it.
inline std::vector<double> central_diff(std::vector<double> & theta,
                                        const std::function<double()> & loss,
                                        double h = 1e-5) {
    std::vector<double> g(theta.size());
    for (size_t i = 0; i < theta.size(); ++i) {
        const double keep = theta[i];
        theta[i] = keep + h;
        const double up = loss();
        theta[i] = keep - h;
        const double dn = loss();
        theta[i] = keep;
        g[i] = (up - dn) / (2.0 * h);
    }
    return g;
}

// Max elementwise deviation, normalized by the larger of the two gradient
// scales so near-zero components do not blow up the ratio.
inline double max_rel_err(const std::vector<double> & analytic,
                          const std::vector<double> & fd) {
    double scale = 1e-8;
    for (double v : analytic) scale = std::max(scale, std::fabs(v));
    for (double v : fd) scale = std::max(scale, std::fabs(v));
    double worst = 0.0;
    for (size_t i = 0; i < analytic.size(); ++i)
        worst = std::max(worst, std::fabs(analytic[i] - fd[i]));
    return worst / scale;
}

}  // namespace fdcheck
