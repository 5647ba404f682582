#include "lightdp/svd.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace lightdp {

double frobenius_norm(const std::vector<double> & w) {
    double acc = 0.0;
    for (double v : w) acc += v * v;
    return std::sqrt(acc);
}

namespace {

constexpr int kMaxSweeps = 100;
constexpr double kConvergence = 1e-10;

// One-sided Jacobi on the columns of a (m x n, row-major, m >= n assumed by
// caller). On exit the columns of a are U*S and vt accumulates V.
bool jacobi_orthogonalize(std::vector<double> & a, std::vector<double> & v, int m, int n) {
    // v starts as identity n x n
    v.assign(size_t(n) * size_t(n), 0.0);
    for (int i = 0; i < n; ++i) v[size_t(i) * size_t(n) + size_t(i)] = 1.0;

    for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
        double off = 0.0;
        for (int p = 0; p < n - 1; ++p) {
            for (int q = p + 1; q < n; ++q) {
                double app = 0.0, aqq = 0.0, apq = 0.0;
                for (int i = 0; i < m; ++i) {
                    const double x = a[size_t(i) * size_t(n) + size_t(p)];
                    const double y = a[size_t(i) * size_t(n) + size_t(q)];
                    app += x * x;
                    aqq += y * y;
                    apq += x * y;
                }
                const double denom = std::sqrt(app * aqq);
                if (denom > 0.0) off = std::max(off, std::fabs(apq) / denom);
                if (denom == 0.0 || std::fabs(apq) <= kConvergence * denom) continue;

                const double tau = (aqq - app) / (2.0 * apq);
                const double t = (tau >= 0.0 ? 1.0 : -1.0) /
                                 (std::fabs(tau) + std::sqrt(1.0 + tau * tau));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (int i = 0; i < m; ++i) {
                    double & x = a[size_t(i) * size_t(n) + size_t(p)];
                    double & y = a[size_t(i) * size_t(n) + size_t(q)];
                    const double xp = c * x - s * y;
                    const double yq = s * x + c * y;
                    x = xp;
                    y = yq;
                }
                for (int i = 0; i < n; ++i) {
                    double & x = v[size_t(i) * size_t(n) + size_t(p)];
                    double & y = v[size_t(i) * size_t(n) + size_t(q)];
                    const double xp = c * x - s * y;
                    const double yq = s * x + c * y;
                    x = xp;
                    y = yq;
                }
            }
        }
        if (off <= kConvergence) return true;
    }
    return false;
}

}  // namespace

SvdResult svd(const std::vector<double> & w, int m, int n, const std::string & name) {
    if (m <= 0 || n <= 0 || i64(w.size()) != i64(m) * i64(n))
        throw dimension_error("svd: bad matrix " + name + " (" + std::to_string(m) + "x" +
                              std::to_string(n) + ", " + std::to_string(w.size()) + " values)");
    for (double v : w)
        if (!std::isfinite(v)) throw numeric_error("svd: non-finite entry in " + name);

    // Work on the tall orientation; swap U and V back afterwards.
    const bool transposed = m < n;
    const int tm = transposed ? n : m;
    const int tn = transposed ? m : n;
    std::vector<double> a(size_t(tm) * size_t(tn));
    if (transposed) {
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j)
                a[size_t(j) * size_t(tn) + size_t(i)] = w[size_t(i) * size_t(n) + size_t(j)];
    } else {
        a = w;
    }

    std::vector<double> v;
    if (!jacobi_orthogonalize(a, v, tm, tn))
        throw numeric_error("svd: Jacobi iteration did not converge for " + name + " after " +
                            std::to_string(kMaxSweeps) + " sweeps");

    // Column norms are the singular values.
    const int r = tn;
    std::vector<double> sv(static_cast<size_t>(r));
    for (int j = 0; j < r; ++j) {
        double acc = 0.0;
        for (int i = 0; i < tm; ++i) {
            const double x = a[size_t(i) * size_t(tn) + size_t(j)];
            acc += x * x;
        }
        sv[size_t(j)] = std::sqrt(acc);
    }
    std::vector<int> order(static_cast<size_t>(r));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int x, int y) { return sv[size_t(x)] > sv[size_t(y)]; });

    SvdResult out;
    out.m = m;
    out.n = n;
    out.r = std::min(m, n);
    out.s.resize(size_t(out.r));
    // tall-orientation factors
    std::vector<double> ut(size_t(tm) * size_t(out.r), 0.0);
    std::vector<double> vt(size_t(tn) * size_t(out.r), 0.0);
    for (int t = 0; t < out.r; ++t) {
        const int j = order[size_t(t)];
        const double s = sv[size_t(j)];
        out.s[size_t(t)] = s;
        const double inv = s > 0.0 ? 1.0 / s : 0.0;
        for (int i = 0; i < tm; ++i)
            ut[size_t(i) * size_t(out.r) + size_t(t)] = a[size_t(i) * size_t(tn) + size_t(j)] * inv;
        for (int i = 0; i < tn; ++i)
            vt[size_t(i) * size_t(out.r) + size_t(t)] = v[size_t(i) * size_t(tn) + size_t(j)];
    }
    if (transposed) {
        out.u = std::move(vt);  // m x r
        out.v = std::move(ut);  // n x r
    } else {
        out.u = std::move(ut);
        out.v = std::move(vt);
    }
    return out;
}

double svd_truncation_error(const std::vector<double> & w, int m, int n, int k,
                            const std::string & name) {
    if (k < 0 || k > std::min(m, n))
        throw contract_error("svd_truncation_error: k=" + std::to_string(k) + " out of range for " +
                             std::to_string(m) + "x" + std::to_string(n));
    if (k == 0) return frobenius_norm(w);
    const SvdResult f = svd(w, m, n, name);
    // residual = W - U_k S_k V_k^T, formed explicitly
    std::vector<double> res(w);
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int t = 0; t < k; ++t)
                acc += f.u[size_t(i) * size_t(f.r) + size_t(t)] * f.s[size_t(t)] *
                       f.v[size_t(j) * size_t(f.r) + size_t(t)];
            res[size_t(i) * size_t(n) + size_t(j)] -= acc;
        }
    }
    return frobenius_norm(res);
}

}  // namespace lightdp
