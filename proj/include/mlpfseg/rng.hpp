#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace mlpfseg {

// All "learnable" parameters in this codebase are frozen at a deterministic
// seeded initialization; these helpers keep that reproducible across runs.
// The engine is std::mt19937_64 (bit-exact by the standard); the uniform
// mapping is done by hand so no implementation-defined distribution is involved.

inline double uniform_unit(std::mt19937_64& rng) {
    // 53 random bits -> [0, 1)
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Uniform in [-scale, scale).
inline double uniform_sym(std::mt19937_64& rng, double scale) { return (2.0 * uniform_unit(rng) - 1.0) * scale; }

inline std::vector<double> uniform_vector(std::mt19937_64& rng, size_t n, double scale) {
    std::vector<double> out(n);
    for (auto& v : out) v = uniform_sym(rng, scale);
    return out;
}

// Derive a stream seed from a base seed and a role tag, so e.g. the image head
// and the point head never share parameters even under the same base seed.
inline uint64_t derive_seed(uint64_t base, const std::string& role) {
    uint64_t h = base ^ 0x9e3779b97f4a7c15ull;
    for (unsigned char ch : role) {
        h ^= ch;
        h *= 0x100000001b3ull;
        h ^= h >> 29;
    }
    return h;
}

}  // namespace mlpfseg
