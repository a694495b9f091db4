#include "ccmt/rng.hpp"

#include <cmath>
#include <numbers>

namespace ccmt {

double Rng::normal() noexcept {
    const double u1 = 1.0 - uniform(); // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b) noexcept {
    Rng mix(base ^ (a * 0xD1B54A32D192ED03ULL));
    mix.next_u64();
    Rng mix2(mix.next_u64() ^ (b * 0x8CB92BA72F3D8DD7ULL));
    return mix2.next_u64();
}

} // namespace ccmt
