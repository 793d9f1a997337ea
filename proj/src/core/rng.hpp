#pragma once

#include <cstdint>

namespace fraglow {

// Counter-based generator: every draw is a pure function of its key, so
// replicated fragments reproduce identical streams regardless of placement
// or evaluation order.
namespace rng {

inline uint64_t mix(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline uint64_t key(uint64_t seed, uint64_t a, uint64_t b = 0, uint64_t c = 0, uint64_t d = 0) {
    uint64_t h = mix(seed);
    h = mix(h ^ a);
    h = mix(h ^ b);
    h = mix(h ^ c);
    h = mix(h ^ d);
    return h;
}

// Uniform in [0, 1).
inline double uniform(uint64_t k) {
    return static_cast<double>(k >> 11) * (1.0 / 9007199254740992.0);
}

inline double uniform(uint64_t seed, uint64_t a, uint64_t b = 0, uint64_t c = 0, uint64_t d = 0) {
    return uniform(key(seed, a, b, c, d));
}

// Uniform in [lo, hi).
inline double uniform_range(uint64_t k, double lo, double hi) { return lo + (hi - lo) * uniform(k); }

}  // namespace rng

}  // namespace fraglow
