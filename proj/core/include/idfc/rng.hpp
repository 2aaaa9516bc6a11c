// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace idfc {

/// SplitMix64 generator (Steele, Lea, Flood 2014). Every random decision in
/// the library flows from one of these, seeded explicitly, so any pipeline
/// stage can be replayed bit-for-bit from its 64-bit seed. std:: engines and
/// distributions are avoided on purpose: their sequences are
/// implementation-defined and would break cross-build reproducibility.
class SplitMix64 {
public:
    explicit SplitMix64(uint64_t seed) : state_(seed) {}

    uint64_t next() {
        uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    /// Uniform double in [0, 1) with 53 random bits.
    double next_double() {
        return static_cast<double>(next() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) {
        return lo + (hi - lo) * next_double();
    }

    /// Unbiased integer in [0, n) via Lemire's multiply-shift with rejection.
    uint64_t below(uint64_t n) {
        if (n == 0) return 0;
        while (true) {
            uint64_t x = next();
            __uint128_t m = static_cast<__uint128_t>(x) * n;
            uint64_t lo = static_cast<uint64_t>(m);
            if (lo >= n || lo >= static_cast<uint64_t>(-static_cast<int64_t>(n)) % n) {
                return static_cast<uint64_t>(m >> 64);
            }
        }
    }

    /// Standard normal via Box-Muller (cosine branch), two draws per call.
    double normal() {
        double u1 = next_double();
        double u2 = next_double();
        // Avoid log(0).
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
    }

    bool coin() { return (next() & 1ull) != 0; }

    uint64_t state() const { return state_; }
    void set_state(uint64_t s) { state_ = s; }

private:
    uint64_t state_;
};

/// FNV-1a over a tag string, folded with extra words through the SplitMix64
/// finalizer. Used to derive independent child seeds (per frame, per epoch,
/// per purpose) from one master seed.
inline uint64_t mix_seed(uint64_t seed, std::string_view tag,
                         uint64_t a = 0, uint64_t b = 0) {
    uint64_t h = 0xCBF29CE484222325ull ^ seed;
    for (char c : tag) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001B3ull;
    }
    h ^= a + 0x9E3779B97F4A7C15ull + (h << 6) + (h >> 2);
    h ^= b + 0x9E3779B97F4A7C15ull + (h << 6) + (h >> 2);
    SplitMix64 g(h);
    return g.next();
}

} // namespace idfc
