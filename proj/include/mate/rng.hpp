#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "mate/errors.hpp"

namespace mate {

/// Portable seeded randomness.
///
/// The generator algorithm is a fixed constant of this library:
/// the engine is std::mt19937_64 (its output sequence is pinned by the
/// C++ standard), substream seeds are derived with splitmix64, and all
/// variate transforms below are hand-rolled so that results are
/// bit-identical across platforms and standard library vendors. Never
/// swap in std::uniform_*_distribution or std::normal_distribution:
/// their outputs are implementation-defined.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

class rng {
public:
    explicit rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

    /// Derives an independent child stream. The child depends only on
    /// (parent seed, tag, index), not on how much the parent has been
    /// consumed, so per-camera streams are order-independent.
    rng substream(std::uint64_t tag, std::uint64_t index = 0) const {
        return rng(splitmix64(splitmix64(seed_ ^ tag) + index));
    }

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    /// Uniform double in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n). n must be positive.
    std::uint64_t uniform_index(std::uint64_t n) {
        if (n == 0) throw numeric_error("rng: uniform_index with n = 0");
        return next_u64() % n;
    }

    /// Standard normal variate via Box-Muller. Consumes two uniforms per
    /// call; the second branch is discarded to keep the stream position a
    /// simple function of the call count.
    double gaussian() {
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform(); // log(0) guard; probability 2^-53
        return std::sqrt(-2.0 * std::log(u1)) *
               std::cos(2.0 * 3.141592653589793238462643383279502884 * u2);
    }

    double gaussian(double mean, double sigma) { return mean + sigma * gaussian(); }

    /// Fisher-Yates shuffle.
    template <typename T>
    void shuffle(std::vector<T>& values) {
        for (std::size_t i = values.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(uniform_index(i));
            std::swap(values[i - 1], values[j]);
        }
    }

    /// Random permutation of 1..n (1-based, matching identity indexing).
    std::vector<int> permutation_1_based(int n) {
        std::vector<int> perm(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i + 1;
        shuffle(perm);
        return perm;
    }

    /// k distinct indices drawn from [0, n) without replacement, in draw order.
    std::vector<int> sample_without_replacement(int n, int k) {
        std::vector<int> pool(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) pool[static_cast<std::size_t>(i)] = i;
        std::vector<int> out;
        out.reserve(static_cast<std::size_t>(k));
        for (int i = 0; i < k; ++i) {
            std::size_t j = static_cast<std::size_t>(uniform_index(pool.size()));
            out.push_back(pool[j]);
            pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(j));
        }
        return out;
    }

    std::uint64_t seed() const { return seed_; }

private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
};

// Stream tags used across the library. Listed here so substream layouts are
// easy to audit and independent oracles can re-derive any stream.
namespace stream {
inline constexpr std::uint64_t latent = 0x1001;
inline constexpr std::uint64_t camera_transform = 0x1002;
inline constexpr std::uint64_t camera_members = 0x1003;
inline constexpr std::uint64_t camera_labels = 0x1004;
inline constexpr std::uint64_t observation = 0x1005;
inline constexpr std::uint64_t test_observation = 0x1006;
inline constexpr std::uint64_t init = 0x2001;
inline constexpr std::uint64_t sampler = 0x2002;
inline constexpr std::uint64_t per_camera_model = 0x2003;
inline constexpr std::uint64_t relabel = 0x3001;
} // namespace stream

} // namespace mate
