#pragma once

#include <cstdint>
#include <random>

namespace earvit {

// Seeded generator with hand-written distributions. The std:: distribution
// objects are implementation-defined, so every draw here is derived only from
// the raw mt19937_64 stream, which the standard pins down exactly.
class Rng {
   public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }

    // Uniform integer in [0, n). n must be positive.
    std::uint64_t below(std::uint64_t n);

    // Uniform double in [0, 1) with 53 random bits.
    double uniform();

    // Standard normal via Box-Muller (no cached second value).
    double normal();

    // Normal(0, std) resampled until it falls within +-2 std.
    double truncated_normal(double std);

   private:
    std::mt19937_64 engine_;
};

// Derives an independent stream seed from a base seed and a tag.
std::uint64_t mix_seed(std::uint64_t base, std::uint64_t tag);

}  // namespace earvit
