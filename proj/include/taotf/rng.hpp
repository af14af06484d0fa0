#pragma once

#include <cmath>
#include <cstdint>

namespace taotf {

// Counter-based 64-bit generator. The i-th draw of a stream with seed s is
//
//   out_i = finalize(s + (i+1) * 0x9E3779B97F4A7C15)
//
// where finalize is the SplitMix64 finalizer:
//
//   z ^= z >> 30;  z *= 0xBF58476D1CE4E5B9;
//   z ^= z >> 27;  z *= 0x94D049BB133111EB;
//   z ^= z >> 31;
//
// Draws are random-access (value depends only on seed and counter), so
// per-sample derived streams and golden outputs are portable bit-exactly.
class CounterRng {
public:
    explicit CounterRng(std::uint64_t seed, std::uint64_t counter = 0)
        : seed_(seed), counter_(counter) {}

    static std::uint64_t at(std::uint64_t seed, std::uint64_t counter) {
        std::uint64_t z = seed + (counter + 1) * 0x9E3779B97F4A7C15ULL;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    std::uint64_t next_u64() { return at(seed_, counter_++); }

    // Uniform in [0, 1), 53-bit mantissa.
    double next_uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Standard normal via Box-Muller; consumes exactly two draws, returns the
    // cosine branch only so replay never depends on call parity.
    double next_normal() {
        const double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
        const double u2 = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    // Uniform integer in [0, n), by scaling (n is tiny relative to 2^64 here).
    std::uint64_t next_below(std::uint64_t n) {
        return static_cast<std::uint64_t>(next_uniform() * static_cast<double>(n));
    }

    std::uint64_t seed() const { return seed_; }
    std::uint64_t counter() const { return counter_; }

private:
    std::uint64_t seed_;
    std::uint64_t counter_;
};

}  // namespace taotf
