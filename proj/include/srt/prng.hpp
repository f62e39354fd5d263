#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace srt {

// SplitMix64 (Steele, Lea & Flood). Shared by the toy-weight generator and the
// scalar dither simulator so both can be reproduced from this description:
//
//   state += 0x9E3779B97F4A7C15
//   z = state
//   z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//   z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//   return z ^ (z >> 31)
//
// uniform01() uses the top 53 bits: (next() >> 11) * 2^-53, in [0, 1).
class SplitMix64 {
public:
    explicit constexpr SplitMix64(std::uint64_t seed) noexcept : state_(seed) {}

    constexpr std::uint64_t next() noexcept
    {
        state_ += 0x9E3779B97F4A7C15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    constexpr double uniform01() noexcept
    {
        return static_cast<double>(next() >> 11) * 0x1.0p-53;
    }

    // Uniform on [lo, hi).
    constexpr double uniform(double lo, double hi) noexcept
    {
        return lo + (hi - lo) * uniform01();
    }

    // Standard normal via Box-Muller; consumes exactly two draws per call and
    // discards the second variate so the stream position is easy to reason about.
    double normal() noexcept
    {
        const double u1 = 1.0 - uniform01(); // (0, 1]
        const double u2 = uniform01();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    constexpr std::uint64_t state() const noexcept { return state_; }

private:
    std::uint64_t state_;
};

// Independent stream for element `index` of a computation seeded with `seed`.
constexpr std::uint64_t derive_stream_seed(std::uint64_t seed, std::uint64_t index) noexcept
{
    SplitMix64 mix(seed ^ (index * 0xD1B54A32D192ED03ULL));
    return mix.next();
}

} // namespace srt
