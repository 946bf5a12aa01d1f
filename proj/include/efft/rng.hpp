#pragma once

#include <cstdint>

namespace efft {

/// Deterministic 64-bit PRNG: xorshift64* stepping on splitmix64-derived
/// state. Same seed produces the same sequence on every platform; no
/// dependence on the C++ standard library's distribution implementations.
///
/// Constants:
///   splitmix64: gamma 0x9E3779B97F4A7C15, mixers 0xBF58476D1CE4E5B9 and
///               0x94D049BB133111EB (Steele/Lea/Flood).
///   xorshift64*: shifts 12/25/27, multiplier 0x2545F4914F6CDD1D (Vigna).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(splitmix64(seed)) {
        if (state_ == 0) state_ = 0x9E3779B97F4A7C15ULL; // xorshift state must be nonzero
    }

    std::uint64_t next_u64() {
        std::uint64_t x = state_;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        state_ = x;
        return x * 0x2545F4914F6CDD1DULL;
    }

    /// Uniform in [0, 1), 53-bit resolution.
    double next_uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    /// Uniform in (0, 1]; safe as a log() argument.
    double next_uniform_open() {
        return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
    }

    /// Standard normal via Box-Muller. Consumes exactly two draws per call
    /// (the sine branch is discarded) so the stream position stays a pure
    /// function of the call count.
    double next_normal();

    /// Uniform integer in [0, n), n >= 1. Fixed-point multiply keeps the
    /// mapping platform-independent.
    std::uint64_t next_below(std::uint64_t n) {
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    /// Derive an independent stream for a tagged sub-task of this seed.
    static std::uint64_t derive(std::uint64_t seed, std::uint64_t tag) {
        return splitmix64(seed + 0x9E3779B97F4A7C15ULL * (tag + 1));
    }

private:
    static std::uint64_t splitmix64(std::uint64_t z) {
        z += 0x9E3779B97F4A7C15ULL;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    std::uint64_t state_;
};

} // namespace efft
