#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>

namespace flatmin::rng {

// splitmix64 finalizer; used both to expand seeds and to hash key tuples.
inline std::uint64_t mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Deterministic sub-stream keying: fold tag values into a seed. Streams for
// (seed, step, split) and the like are derived this way so that evaluation
// order never affects what a consumer draws.
inline std::uint64_t derive(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) {
    std::uint64_t s = mix(seed);
    for (std::uint64_t t : tags) s = mix(s ^ mix(t));
    return s;
}

// xoshiro256++ with a hand-rolled Box-Muller normal. Not std::mt19937 on
// purpose: the bit stream (including normal draws) is identical across
// standard libraries and platforms, which the reproducibility contract needs.
class Stream {
public:
    explicit Stream(std::uint64_t seed) {
        std::uint64_t s = seed;
        for (auto& w : state_) {
            s = mix(s);
            w = s;
        }
        // xoshiro must not start from the all-zero state
        if ((state_[0] | state_[1] | state_[2] | state_[3]) == 0) state_[0] = 1;
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n)
    std::uint64_t uniform_index(std::uint64_t n) {
        // multiply-shift; bias is negligible for the n used here (< 2^32)
        return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)) % n;
    }

    // standard normal via Box-Muller (no cached second value, so the draw
    // count per call is fixed)
    double normal() {
        double u1 = 0.0;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
    std::uint64_t state_[4];
};

inline Stream substream(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) {
    return Stream(derive(seed, tags));
}

}  // namespace flatmin::rng
