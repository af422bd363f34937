#pragma once

#include <algorithm>
#include <cstdint>
#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

namespace lambda_flows {

/// Mixes a 64-bit value to a well-spread 64-bit value (splitmix64 finalizer).
inline std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Derives the seed of child stream `index` from a root seed.
/// Counter splitting keeps replicate streams independent and reproducible:
/// replicate k always sees the same stream no matter how work is scheduled.
inline std::uint64_t split_seed(std::uint64_t root, std::uint64_t index) {
    return mix64(root ^ mix64(index + 0x632be59bd9b4e019ULL));
}

/// Seeded random stream used by all simulators.
///
/// Wraps std::mt19937_64 (whose single-seed initialization is fully specified
/// by the standard, so streams are portable) and provides the few variates the
/// toolkit needs. Floating-point draws are built from raw 64-bit words with
/// fixed arithmetic rather than std distributions, which keeps byte-identical
/// output a property of the seed alone.
class RandomStream {
public:
    explicit RandomStream(std::uint64_t seed) : eng_(seed) {}

    std::uint64_t next_word() { return eng_(); }

    /// Uniform on [0,1) with 53 random bits.
    double uniform01() {
        return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
    }

    /// Uniform on (0,1]; safe as a log argument.
    double uniform01_pos() { return 1.0 - uniform01(); }

    /// Exponential with the given rate.
    double exponential(double rate) {
        if (!(rate > 0.0)) throw std::invalid_argument("exponential: rate must be positive");
        return -std::log(uniform01_pos()) / rate;
    }

    /// Uniform integer in [0, bound). Rejection keeps it unbiased.
    std::uint64_t uniform_below(std::uint64_t bound) {
        if (bound == 0) throw std::invalid_argument("uniform_below: bound must be positive");
        const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % bound);
        std::uint64_t w;
        do { w = eng_(); } while (w >= limit);
        return w % bound;
    }

    int uniform_int(int bound) { return static_cast<int>(uniform_below(static_cast<std::uint64_t>(bound))); }

    /// Sorted uniform random p-subset of {1,...,m} via partial Fisher-Yates.
    /// `scratch` is reused across calls to avoid reallocation in hot loops.
    void uniform_subset(int m, int p, std::vector<int>& scratch, std::vector<int>& out) {
        if (p < 0 || p > m) throw std::invalid_argument("uniform_subset: need 0 <= p <= m");
        scratch.resize(static_cast<std::size_t>(m));
        for (int i = 0; i < m; ++i) scratch[static_cast<std::size_t>(i)] = i + 1;
        out.resize(static_cast<std::size_t>(p));
        for (int i = 0; i < p; ++i) {
            const int j = i + uniform_int(m - i);
            std::swap(scratch[static_cast<std::size_t>(i)], scratch[static_cast<std::size_t>(j)]);
            out[static_cast<std::size_t>(i)] = scratch[static_cast<std::size_t>(i)];
        }
        std::sort(out.begin(), out.end());
    }

private:
    std::mt19937_64 eng_;
};

} // namespace lambda_flows
