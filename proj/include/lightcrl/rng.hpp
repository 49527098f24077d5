#pragma once

// Portable, seedable randomness. Every stochastic choice in the library goes
// through these generators so that a 64-bit seed fully determines the output,
// independent of the platform's <random> distributions:
//   - SplitMix64 expands a single seed into stream state,
//   - Xoshiro256** produces the uniform 64-bit stream,
//   - Gaussian deviates come from the Box-Muller transform on that stream.

#include <array>
#include <cmath>
#include <cstdint>

namespace lightcrl {

class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

private:
    std::uint64_t state_;
};

class Xoshiro256ss {
public:
    explicit Xoshiro256ss(std::uint64_t seed) {
        SplitMix64 sm(seed);
        for (auto& w : state_) w = sm.next();
    }

    std::uint64_t next() {
        const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    /// Uniform double in [0, 1) with 53 significant bits.
    double next_double() {
        return static_cast<double>(next() >> 11) * 0x1.0p-53;
    }

    /// Uniform double in (0, 1]; never zero, safe under log().
    double next_double_open() {
        return static_cast<double>((next() >> 11) + 1) * 0x1.0p-53;
    }

    /// Uniform integer in [0, bound). bound must be nonzero.
    std::uint64_t next_below(std::uint64_t bound) {
        // Rejection sampling to avoid modulo bias.
        const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % bound);
        std::uint64_t x = next();
        while (x >= limit) x = next();
        return x % bound;
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) {
        return (x << k) | (x >> (64 - k));
    }

    std::array<std::uint64_t, 4> state_{};
};

/// Standard normal deviates via Box-Muller; produces a fixed sequence per seed.
class GaussianSampler {
public:
    explicit GaussianSampler(Xoshiro256ss& rng) : rng_(rng) {}

    double next() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = rng_.next_double_open();
        const double u2 = rng_.next_double();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

private:
    Xoshiro256ss& rng_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

/// Derives the shuffle seed for one epoch from the run seed. Stateless by
/// construction: a resumed run reproduces the same batch order from the
/// epoch index alone.
inline std::uint64_t epoch_seed(std::uint64_t run_seed, std::uint64_t epoch) {
    return SplitMix64(run_seed ^ (0x9E3779B97F4A7C15ULL * (epoch + 1))).next();
}

} // namespace lightcrl
