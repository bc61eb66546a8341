#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>

namespace msef {

// 64-bit FNV-1a, used for file/tensor manifests and stable string hashing.
inline uint64_t fnv1a(const void* data, size_t len, uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline uint64_t fnv1a(std::string_view s, uint64_t h = 0xcbf29ce484222325ull) {
    return fnv1a(s.data(), s.size(), h);
}

// Counter-based generator: output i of stream `seed` is a pure function of
// (seed, i), so every draw is attributable and sub-streams can be derived
// without sharing state.
class CounterRng {
public:
    explicit CounterRng(uint64_t seed) : seed_(seed) {}

    uint64_t next_u64() { return mix(seed_, counter_++); }

    // Uniform in [0, 1), 53-bit resolution.
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    // Uniform integer in [0, n). n must be > 0.
    uint64_t next_below(uint64_t n) { return next_u64() % n; }

    // Box-Muller, two draws per sample, no caching.
    double gaussian() {
        double u1 = next_double();
        double u2 = next_double();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    uint64_t seed() const { return seed_; }
    uint64_t counter() const { return counter_; }

    // Deterministic sub-stream seed for a named child (e.g. one community).
    static uint64_t derive(uint64_t seed, std::string_view tag) {
        return mix(seed, fnv1a(tag));
    }
    static uint64_t derive(uint64_t seed, uint64_t tag) { return mix(seed, tag); }

private:
    // splitmix64 finalizer over seed+counter.
    static uint64_t mix(uint64_t seed, uint64_t ctr) {
        uint64_t z = seed + 0x9e3779b97f4a7c15ull * (ctr + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    uint64_t seed_;
    uint64_t counter_ = 0;
};

}  // namespace msef
