#include "earvit/rng.hpp"

#include <cmath>
#include <limits>
#include <numbers>

namespace earvit {

std::uint64_t Rng::below(std::uint64_t n) {
    // Rejection on the top of the range keeps the result exactly uniform.
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x = engine_();
    while (x >= limit) x = engine_();
    return x % n;
}

double Rng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

double Rng::normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double Rng::truncated_normal(double std) {
    for (;;) {
        const double z = normal();
        if (z >= -2.0 && z <= 2.0) return z * std;
    }
}

std::uint64_t mix_seed(std::uint64_t base, std::uint64_t tag) {
    // splitmix64 finalizer over the combined value
    std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (tag + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

}  // namespace earvit
