#pragma once

#include <algorithm>
#include <cstdint>

#include <omp.h>

#include "lightdp/common.hpp"

// Dense kernels behind the tensor ops. Every kernel comes in two flavors:
//
//   kern::ref::*  -- naive serial loops, the reference used by tests and the
//                    kernel benchmark
//   kern::*       -- cache-friendly loops, OpenMP-parallel over output rows
//                    when the problem is large enough
//
// The parallel kernels partition output elements across threads and keep the
// per-element accumulation order fixed, so results are bit-identical for any
// thread count. Reductions inside one output element never cross threads.

namespace lightdp::kern {

// Below this many multiply-accumulates a gemm runs serially; thread fork
// overhead dominates for the tiny batch-1 attention gemms otherwise.
inline constexpr i64 kParallelMacThreshold = 1 << 18;

inline i64 max_threads() { return omp_get_max_threads(); }

namespace ref {

// c[M,N] = a[M,K] * b[K,N]
template <class R>
void gemm_nn(const R * a, const R * b, R * c, i64 M, i64 N, i64 K) {
    for (i64 i = 0; i < M; ++i) {
        for (i64 j = 0; j < N; ++j) {
            R acc = R(0);
            for (i64 k = 0; k < K; ++k) acc += a[i * K + k] * b[k * N + j];
            c[i * N + j] = acc;
        }
    }
}

// c[M,N] = a[M,K] * b[N,K]^T
template <class R>
void gemm_nt(const R * a, const R * b, R * c, i64 M, i64 N, i64 K) {
    for (i64 i = 0; i < M; ++i) {
        for (i64 j = 0; j < N; ++j) {
            R acc = R(0);
            for (i64 k = 0; k < K; ++k) acc += a[i * K + k] * b[j * K + k];
            c[i * N + j] = acc;
        }
    }
}

// c[K,N] = a[M,K]^T * g[M,N]
template <class R>
void gemm_tn(const R * a, const R * g, R * c, i64 M, i64 N, i64 K) {
    for (i64 k = 0; k < K; ++k) {
        for (i64 j = 0; j < N; ++j) {
            R acc = R(0);
            for (i64 m = 0; m < M; ++m) acc += a[m * K + k] * g[m * N + j];
            c[k * N + j] = acc;
        }
    }
}

}  // namespace ref

namespace detail {

// one output row, k-ascending accumulation
template <class R>
inline void gemm_nn_row(const R * ai, const R * b, R * ci, i64 N, i64 K, bool accumulate) {
    if (!accumulate) std::fill(ci, ci + N, R(0));
    for (i64 k = 0; k < K; ++k) {
        const R aik = ai[k];
        const R * bk = b + k * N;
        for (i64 j = 0; j < N; ++j) ci[j] += aik * bk[j];
    }
}

}  // namespace detail

// c[M,N] (+)= a[M,K] * b[K,N]. The parallel branch is entered only for large
// problems; an `if` clause on the pragma would still pay the OpenMP runtime
// call on every tiny attention gemm.
template <class R>
void gemm_nn(const R * a, const R * b, R * c, i64 M, i64 N, i64 K,
             bool accumulate = false) {
    if (M * N * K >= kParallelMacThreshold) {
#pragma omp parallel for schedule(static)
        for (i64 i = 0; i < M; ++i)
            detail::gemm_nn_row(a + i * K, b, c + i * N, N, K, accumulate);
        return;
    }
    for (i64 i = 0; i < M; ++i) detail::gemm_nn_row(a + i * K, b, c + i * N, N, K, accumulate);
}

// c[M,N] (+)= a[M,K] * b[N,K]^T. Large problems transpose b into a scratch
// buffer so the inner loop takes the vectorizable broadcast form; per-element
// accumulation order is k-ascending either way, so results stay deterministic
// and thread-count independent.
template <class R>
void gemm_nt(const R * a, const R * b, R * c, i64 M, i64 N, i64 K,
             bool accumulate = false) {
    if (M * N * K >= (i64(1) << 16)) {
        static thread_local std::vector<R> scratch;
        scratch.resize(size_t(K) * size_t(N));
        for (i64 j = 0; j < N; ++j)
            for (i64 k = 0; k < K; ++k) scratch[size_t(k * N + j)] = b[j * K + k];
        const R * bt = scratch.data();
        if (M * N * K >= kParallelMacThreshold) {
#pragma omp parallel for schedule(static)
            for (i64 i = 0; i < M; ++i)
                detail::gemm_nn_row(a + i * K, bt, c + i * N, N, K, accumulate);
        } else {
            for (i64 i = 0; i < M; ++i)
                detail::gemm_nn_row(a + i * K, bt, c + i * N, N, K, accumulate);
        }
        return;
    }
    for (i64 i = 0; i < M; ++i) {
        const R * ai = a + i * K;
        for (i64 j = 0; j < N; ++j) {
            const R * bj = b + j * K;
            R acc = R(0);
            for (i64 k = 0; k < K; ++k) acc += ai[k] * bj[k];
            if (accumulate) c[i * N + j] += acc;
            else c[i * N + j] = acc;
        }
    }
}

namespace detail {

template <class R>
inline void gemm_tn_row(const R * a, const R * g, R * ck, i64 M, i64 N, i64 K, i64 k,
                        bool accumulate) {
    if (!accumulate) std::fill(ck, ck + N, R(0));
    for (i64 m = 0; m < M; ++m) {
        const R amk = a[m * K + k];
        const R * gm = g + m * N;
        for (i64 j = 0; j < N; ++j) ck[j] += amk * gm[j];
    }
}

}  // namespace detail

// c[K,N] (+)= a[M,K]^T * g[M,N]
template <class R>
void gemm_tn(const R * a, const R * g, R * c, i64 M, i64 N, i64 K,
             bool accumulate = false) {
    if (M * N * K >= kParallelMacThreshold) {
#pragma omp parallel for schedule(static)
        for (i64 k = 0; k < K; ++k) detail::gemm_tn_row(a, g, c + k * N, M, N, K, k, accumulate);
        return;
    }
    for (i64 k = 0; k < K; ++k) detail::gemm_tn_row(a, g, c + k * N, M, N, K, k, accumulate);
}

// Batched variants: `batch` independent slices with fixed strides. The slice
// loop lives inside the kernel so tiny attention gemms pay one call and can
// parallelize across slices.
template <class R>
void gemm_nn_batched(const R * a, const R * b, R * c, i64 batch, i64 M, i64 N, i64 K,
                     bool accumulate, i64 stride_a, i64 stride_b, i64 stride_c) {
    if (batch * M * N * K >= kParallelMacThreshold && batch > 1) {
#pragma omp parallel for schedule(static)
        for (i64 t = 0; t < batch; ++t)
            for (i64 i = 0; i < M; ++i)
                detail::gemm_nn_row(a + t * stride_a + i * K, b + t * stride_b,
                                    c + t * stride_c + i * N, N, K, accumulate);
        return;
    }
    for (i64 t = 0; t < batch; ++t)
        for (i64 i = 0; i < M; ++i)
            detail::gemm_nn_row(a + t * stride_a + i * K, b + t * stride_b,
                                c + t * stride_c + i * N, N, K, accumulate);
}

template <class R>
void gemm_nt_batched(const R * a, const R * b, R * c, i64 batch, i64 M, i64 N, i64 K,
                     bool accumulate, i64 stride_a, i64 stride_b, i64 stride_c) {
    const bool par = batch * M * N * K >= kParallelMacThreshold && batch > 1;
#pragma omp parallel for schedule(static) if (par)
    for (i64 t = 0; t < batch; ++t) {
        const R * at = a + t * stride_a;
        const R * bt = b + t * stride_b;
        R * ct = c + t * stride_c;
        for (i64 i = 0; i < M; ++i) {
            const R * ai = at + i * K;
            for (i64 j = 0; j < N; ++j) {
                const R * bj = bt + j * K;
                R acc = R(0);
                for (i64 k = 0; k < K; ++k) acc += ai[k] * bj[k];
                if (accumulate) ct[i * N + j] += acc;
                else ct[i * N + j] = acc;
            }
        }
    }
}

template <class R>
void gemm_tn_batched(const R * a, const R * g, R * c, i64 batch, i64 M, i64 N, i64 K,
                     bool accumulate, i64 stride_a, i64 stride_g, i64 stride_c) {
    const bool par = batch * M * N * K >= kParallelMacThreshold && batch > 1;
#pragma omp parallel for schedule(static) if (par)
    for (i64 t = 0; t < batch; ++t)
        for (i64 k = 0; k < K; ++k)
            detail::gemm_tn_row(a + t * stride_a, g + t * stride_g, c + t * stride_c + k * N, M,
                                N, K, k, accumulate);
}

}  // namespace lightdp::kern
