#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace lpcr {

/// Splitmix64 stream. All randomness in the project flows through named
/// streams derived from a master seed, so any draw sequence is reproducible
/// independently of every other stream (see derive_seed).
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, 1), 53-bit resolution.
    double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double next_uniform(double lo, double hi) { return lo + (hi - lo) * next_unit(); }

    /// Uniform integer in [0, n).
    uint64_t next_below(uint64_t n) {
        // 128-bit multiply rejection-free bound; bias < 2^-64, irrelevant here.
        return static_cast<uint64_t>((static_cast<__uint128_t>(next_u64()) * n) >> 64);
    }

    bool next_bernoulli(double p) { return next_unit() < p; }

    /// Box-Muller, pair-cached. Two uniform draws produce two deviates.
    double next_gaussian(double mean = 0.0, double stddev = 1.0) {
        if (have_spare_) {
            have_spare_ = false;
            return mean + stddev * spare_;
        }
        double u1 = 0.0;
        do { u1 = next_unit(); } while (u1 <= 0.0);
        const double u2 = next_unit();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * 3.141592653589793238462643383279502884 * u2;
        spare_ = radius * std::sin(angle);
        have_spare_ = true;
        return mean + stddev * radius * std::cos(angle);
    }

private:
    uint64_t state_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

/// FNV-1a over the name, mixed with the master seed and up to three stream
/// indices. Distinct (name, indices) tuples yield independent streams.
uint64_t derive_seed(uint64_t master, std::string_view name, uint64_t a = 0, uint64_t b = 0,
                     uint64_t c = 0);

inline Rng named_stream(uint64_t master, std::string_view name, uint64_t a = 0, uint64_t b = 0,
                        uint64_t c = 0) {
    return Rng(derive_seed(master, name, a, b, c));
}

}  // namespace lpcr
