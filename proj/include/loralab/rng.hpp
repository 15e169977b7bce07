#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>

namespace loralab {

// All randomness in the library flows through this generator. Draws are a
// pure function of the 64-bit state they were derived from, so any stream is
// reproducible from (master seed, derivation path) alone and identical across
// platforms; the standard <random> distributions are avoided on purpose since
// their output is implementation-defined.
class Rng {
public:
    explicit Rng(std::uint64_t state) : state_(state) {}

    // splitmix64
    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1), 53-bit resolution
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // uniform in [lo, hi)
    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    // uniform integer in [0, n)
    std::uint64_t next_below(std::uint64_t n) {
        // multiply-shift; bias is negligible for desk-scale n
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    // standard normal via Box-Muller (no cached spare: keeps draw count
    // per call fixed, which the stream-derivation contract relies on)
    double gaussian() {
        double u1 = next_double();
        double u2 = next_double();
        while (u1 <= 0.0) u1 = next_double();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    // true with probability prob
    bool bernoulli(double prob) { return next_double() < prob; }

private:
    std::uint64_t state_;
};

namespace stream {
// Fixed tags separating independent random streams derived from one seed.
inline constexpr std::uint64_t kInit = 1;
inline constexpr std::uint64_t kData = 2;
inline constexpr std::uint64_t kShuffle = 3;
inline constexpr std::uint64_t kTrainMask = 4;
inline constexpr std::uint64_t kEpochEval = 5;
inline constexpr std::uint64_t kEval = 6;
inline constexpr std::uint64_t kJensen = 7;
inline constexpr std::uint64_t kMonteCarlo = 8;
inline constexpr std::uint64_t kProbe = 9;
}  // namespace stream

inline std::uint64_t mix_u64(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a ^ (b + 0x9E3779B97F4A7C15ULL + (a << 6) + (a >> 2));
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

// Derive an independent stream from a seed and a path of integers, e.g.
// derive_rng(seed, {stream::kTrainMask, epoch, iteration, instance, layer}).
inline Rng derive_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
    std::uint64_t s = mix_u64(seed, 0x5851F42D4C957F2DULL);
    for (std::uint64_t p : path) s = mix_u64(s, p);
    return Rng(s);
}

}  // namespace loralab
