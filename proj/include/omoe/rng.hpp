#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "omoe/matrix.hpp"

namespace omoe {

/// Seeded random source with bit-identical streams for a given seed.
/// The engine is std::mt19937_64 (standardized output sequence); the
/// distributions are hand-rolled because the std ones are
/// implementation-defined and would break run-to-run reproducibility
/// across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1) with 53 random mantissa bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller; consumes two uniforms per pair, caches the second draw.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        // Modulo bias is negligible against 2^64 for the small n used here.
        return engine_() % n;
    }

    Matrix gaussian_matrix(std::size_t rows, std::size_t cols, double stddev = 1.0) {
        Matrix m(rows, cols);
        for (std::size_t i = 0; i < m.size(); ++i) m[i] = stddev * normal();
        return m;
    }

    /// Derive an independent child stream; used to give every dataset,
    /// stage, and head reinitialization its own deterministic stream.
    Rng fork(std::uint64_t tag) {
        std::uint64_t h = 0x9E3779B97F4A7C15ULL ^ tag;
        h ^= engine_();
        h *= 0xBF58476D1CE4E5B9ULL;
        h ^= h >> 31;
        return Rng(h);
    }

private:
    std::mt19937_64 engine_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

/// Deterministic stream derivation without consuming parent state:
/// seed + tag mixed through splitmix64. Identical (seed, tag) pairs
/// always yield identical streams.
inline Rng derived_rng(std::uint64_t seed, std::uint64_t tag) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (tag + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return Rng(z ^ (z >> 31));
}

}  // namespace omoe
