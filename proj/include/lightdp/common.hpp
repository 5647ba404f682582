#pragma once

#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace lightdp {

namespace detail {
// The op graph allocates and frees megabyte-sized activation buffers every
// step; keep those on the heap instead of per-allocation mmap/munmap cycles,
// which would return freshly zeroed pages each time.
#if defined(__GLIBC__)
inline const int malloc_tuning = [] {
    mallopt(M_MMAP_THRESHOLD, 512 * 1024 * 1024);
    mallopt(M_TRIM_THRESHOLD, 512 * 1024 * 1024);
    return 0;
}();
#endif
}  // namespace detail

using i64 = std::int64_t;
using Shape = std::vector<int>;

// Shape mismatches between operands (wrong matmul dims, bad broadcast).
struct dimension_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// API misuse: out-of-range sigma, non-scalar loss, incompatible networks.
struct contract_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Runtime numeric failure: NaN in a sampler, SVD non-convergence.
struct numeric_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Divergence during an optimization loop.
struct training_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline i64 numel(const Shape & s) {
    i64 n = 1;
    for (int e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape & s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

}  // namespace lightdp
