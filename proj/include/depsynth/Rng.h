#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>

namespace depsynth {

// splitmix64 finalizer; used to derive independent, reproducible RNG streams
// from (seed, stream id) pairs, e.g. one stream per sampled row.
inline std::uint64_t mixBits(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::mt19937_64 makeRng(std::uint64_t seed) { return std::mt19937_64(mixBits(seed)); }

inline std::mt19937_64 makeStreamRng(std::uint64_t seed, std::uint64_t stream) {
    return std::mt19937_64(mixBits(mixBits(seed) ^ mixBits(stream + 0x51ed2701ULL)));
}

// Uniform draw in [0, 1) with 53 random bits; avoids the implementation-defined
// behaviour of std::uniform_real_distribution so streams are portable.
inline double uniformDouble(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Unbiased uniform integer in [0, n).
inline std::uint64_t boundedUint(std::mt19937_64& rng, std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    while (true) {
        const std::uint64_t r = rng();
        if (r < limit) return r % n;
    }
}

// Box-Muller standard normal deviate.
inline double standardNormal(std::mt19937_64& rng) {
    double u1 = uniformDouble(rng);
    while (u1 <= 0.0) u1 = uniformDouble(rng);
    const double u2 = uniformDouble(rng);
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * 3.141592653589793238462643383279502884 * u2);
}

// FNV-1a 64-bit; used for schema/graph fingerprints stored in model archives.
inline std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t h = 0xcbf29ce484222325ULL) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < size; ++i) {
        h ^= bytes[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t fnv1a64(const std::string& text, std::uint64_t h = 0xcbf29ce484222325ULL) {
    return fnv1a64(text.data(), text.size(), h);
}

}  // namespace depsynth
