#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace bbmgibbs {

/// Seeded, stream-splittable random source.
///
/// Stream k of a given seed is an independent generator: the engine is a
/// std::mt19937_64 (bit-exact by the C++ standard) seeded with a splitmix64
/// mix of (seed, stream). Normals come from Box-Muller on 53-bit uniforms,
/// so a (seed, stream) pair reproduces the same draws on any conforming
/// toolchain. Ensemble member k always uses stream k, which makes members
/// reproducible independently of scheduling.
class SeededRng {
public:
    SeededRng(std::uint64_t seed, std::uint64_t stream)
        : seed_(seed), stream_(stream),
          engine_(mix(seed, stream)) {}

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream() const { return stream_; }

    /// Uniform on [0, 1) with 53-bit resolution.
    double uniform() { return static_cast<double>(engine_() >> 11) * kInv53; }

    /// Standard normal via Box-Muller; pairs are cached.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        // u1 in (0, 1] so log(u1) is finite.
        const double u1 = (static_cast<double>(engine_() >> 11) + 1.0) * kInv53;
        const double u2 = static_cast<double>(engine_() >> 11) * kInv53;
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * M_PI * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    static std::uint64_t mix(std::uint64_t seed, std::uint64_t stream) {
        return splitmix64(splitmix64(seed) ^ splitmix64(stream + 0x9E3779B97F4A7C15ull));
    }

    static std::uint64_t splitmix64(std::uint64_t x) {
        x += 0x9E3779B97F4A7C15ull;
        x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
        x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
        return x ^ (x >> 31);
    }

private:
    static constexpr double kInv53 = 1.0 / 9007199254740992.0;  // 2^-53

    std::uint64_t seed_;
    std::uint64_t stream_;
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

/// Reserved stream offsets so auxiliary draws never collide with ensemble
/// members (members occupy streams 0..count-1).
namespace stream_ns {
inline constexpr std::uint64_t probes = 0x5052424500000000ull;
inline constexpr std::uint64_t corpus = 0x434f525000000000ull;
inline constexpr std::uint64_t tails  = 0x5441494c00000000ull;
}

}  // namespace bbmgibbs
