// Seeded randomness for reproducible experiments.
//
// Every sampling routine in the library takes an explicit seed or generator;
// there is no global RNG state. uniform() and normal() are built on the raw
// mt19937_64 output stream so that sequences are identical across standard
// library implementations (std::normal_distribution makes no such promise).

#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace spqr {

// splitmix64 finalizer; decorrelates nearby seed values.
inline std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Derive an independent stream seed from a base seed and up to three
// stream identifiers (step index, row index, purpose tag, ...).
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a = 0,
                                 std::uint64_t b = 0, std::uint64_t c = 0) {
    std::uint64_t h = mix64(base);
    h = mix64(h ^ mix64(a ^ 0x517cc1b727220a95ULL));
    h = mix64(h ^ mix64(b ^ 0x6c62272e07bb0142ULL));
    h = mix64(h ^ mix64(c ^ 0x2f52d9eca3d5b3c1ULL));
    return h;
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    std::uint64_t next_u64() { return eng_(); }

    // Uniform double in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Standard normal via Marsaglia's polar method (second deviate cached).
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u, v, s;
        do {
            u = 2.0 * uniform() - 1.0;
            v = 2.0 * uniform() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double m = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * m;
        has_spare_ = true;
        return u * m;
    }

    // Unbiased integer in [0, n) by rejection.
    std::uint64_t below(std::uint64_t n) {
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
        std::uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return x % n;
    }

private:
    std::mt19937_64 eng_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// In-place Fisher-Yates shuffle of indices [0, n).
template <typename IndexVec>
void shuffle_indices(IndexVec& idx, Rng& rng) {
    for (std::size_t i = idx.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng.below(i));
        std::swap(idx[i - 1], idx[j]);
    }
}

} // namespace spqr
