#pragma once

#include <string>
#include <vector>

#include "lightdp/common.hpp"

namespace lightdp {

// Thin SVD W = U diag(S) V^T with singular values descending. Computed in
// double via one-sided Jacobi; converges to ~1e-10 column orthogonality.
struct SvdResult {
    int m = 0, n = 0, r = 0;       // r = min(m, n)
    std::vector<double> u;         // m x r, column-major by singular index: u[i*r + t]
    std::vector<double> s;         // r, descending, nonnegative
    std::vector<double> v;         // n x r: v[j*r + t]
};

// `name` is only used in the non-convergence error message.
SvdResult svd(const std::vector<double> & w, int m, int n, const std::string & name = "W");

// Frobenius norm of W minus its best rank-k approximation.
double svd_truncation_error(const std::vector<double> & w, int m, int n, int k,
                            const std::string & name = "W");

double frobenius_norm(const std::vector<double> & w);

}  // namespace lightdp
