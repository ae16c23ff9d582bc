#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "dpig/error.hpp"

namespace dpig {

inline uint64_t splitmix64(uint64_t& state) {
    state += 0x9E3779B97F4A7C15ull;
    uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

// Deterministic seed derivation: one base seed fans out into independent
// streams keyed by (tag, index). Used to give each network init, each
// client, and the data pipeline its own stream.
inline uint64_t derive_seed(uint64_t base, uint64_t tag, uint64_t index) {
    uint64_t s = base ^ (tag * 0xBF58476D1CE4E5B9ull) ^ (index * 0x94D049BB133111EBull);
    return splitmix64(s);
}

// xoshiro256++ seeded via splitmix64. Every draw function consumes a fixed
// number of raw outputs (normal() consumes exactly two), so independent
// implementations can replay a stream exactly.
class Rng {
public:
    explicit Rng(uint64_t seed) {
        uint64_t sm = seed;
        for (auto& w : s_) w = splitmix64(sm);
    }

    uint64_t next_u64() {
        const uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
        const uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // [0, 1), 53-bit resolution
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller, cosine branch only: consumes exactly two raw outputs.
    double normal() {
        const double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
        const double u2 = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;        // [0, 1)
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    // [0, n); modulo bias is < n / 2^64, immaterial at our category counts
    int64_t uniform_int(int64_t n) {
        if (n <= 0) throw DomainError("uniform_int: n must be positive");
        return static_cast<int64_t>(next_u64() % static_cast<uint64_t>(n));
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (int64_t i = static_cast<int64_t>(v.size()) - 1; i > 0; --i) {
            const int64_t j = uniform_int(i + 1);
            std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(j)]);
        }
    }

private:
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    uint64_t s_[4];
};

// Stream tags for derive_seed.
namespace seed_tag {
inline constexpr uint64_t generator = 0x67;
inline constexpr uint64_t discriminator = 0x64;
inline constexpr uint64_t q_network = 0x71;
inline constexpr uint64_t trainer = 0x74;
inline constexpr uint64_t data = 0x73;
}  // namespace seed_tag

}  // namespace dpig
