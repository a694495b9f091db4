#pragma once

#include <cstdint>

namespace ccmt {

// splitmix64 generator. The constants are fixed so that sampling decisions
// are reproducible bit-for-bit across platforms and languages.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) noexcept : state_(seed) {}

    std::uint64_t next_u64() noexcept {
        state_ += 0x9E3779B97F4A7C15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1) from the top 53 bits.
    double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n) as next_u64() mod n.
    std::uint64_t below(std::uint64_t n) noexcept { return next_u64() % n; }

    // Standard normal via Box-Muller (one draw per call, two uniforms consumed).
    double normal() noexcept;

    bool bernoulli(double p) noexcept { return uniform() < p; }

    std::uint64_t state() const noexcept { return state_; }

private:
    std::uint64_t state_;
};

// Deterministic seed derivation for independent sub-streams.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0) noexcept;

} // namespace ccmt
