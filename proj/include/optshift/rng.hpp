#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace optshift {

// splitmix64 finalizer; bijective 64-bit mixer.
std::uint64_t mix64(std::uint64_t z);

// Derives an independent stream seed from a master seed, a stream tag and a
// counter index. All randomness in the project flows through this so that a
// single config seed pins every draw.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream, std::uint64_t index = 0);

// Stream tags for derive_seed.
namespace streams {
inline constexpr std::uint64_t kModelInit = 1;
inline constexpr std::uint64_t kShuffle = 2;
inline constexpr std::uint64_t kSosSample = 3;
inline constexpr std::uint64_t kMixup = 4;
inline constexpr std::uint64_t kHutchinson = 5;
inline constexpr std::uint64_t kPowerInit = 6;
inline constexpr std::uint64_t kBlobs = 7;
}  // namespace streams

// mt19937_64 engine with hand-rolled distributions. The standard pins the
// engine's output exactly; the distributions here avoid the
// implementation-defined ones in <random> so results are bit-stable across
// toolchains.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1) with 53-bit resolution.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via Box-Muller (two uniforms per draw).
    double normal();

    // Gamma(alpha, 1) via Marsaglia-Tsang, with the power boost for alpha < 1.
    double gamma(double alpha);

    double beta(double a, double b);

    // Unbiased integer in [0, n) by rejection.
    std::size_t uniform_index(std::size_t n);

    std::vector<std::size_t> permutation(std::size_t n);

    // First k entries of a partial Fisher-Yates shuffle of [0, n).
    std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);

private:
    std::mt19937_64 engine_;
};

}  // namespace optshift
