#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace lightdp {

// Deterministic random stream. All stochastic draws in the project go through
// this wrapper so runs are reproducible from a single seed. Normal variates
// use explicit Box-Muller rather than std::normal_distribution, whose output
// sequence is implementation-defined.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    std::uint64_t u64() { return eng_(); }

    // Uniform in [0, 1).
    double uniform() {
        return double(eng_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) {
        return lo + (hi - lo) * uniform();
    }

    // Uniform integer in [lo, hi] inclusive.
    int uniform_int(int lo, int hi) {
        return lo + int(eng_() % std::uint64_t(hi - lo + 1));
    }

    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    double normal(double mean, double std) { return mean + std * normal(); }

    double gumbel() {
        double u = uniform();
        if (u < 1e-300) u = 1e-300;
        return -std::log(-std::log(u));
    }

    template <class R>
    void fill_normal(std::vector<R> & v, double mean = 0.0, double std = 1.0) {
        for (auto & x : v) x = R(normal(mean, std));
    }

    template <class R>
    void fill_uniform(std::vector<R> & v, double lo, double hi) {
        for (auto & x : v) x = R(uniform(lo, hi));
    }

  private:
    std::mt19937_64 eng_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace lightdp
