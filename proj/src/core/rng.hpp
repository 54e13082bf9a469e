#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace altfl {

// Deterministic splitmix64 generator with hand-rolled distributions.
// std::mt19937 + std::normal_distribution are avoided on purpose: the
// distribution algorithms are implementation-defined, and reproducibility of
// every experiment across toolchains is a hard requirement here.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    // Derives an independent stream from a master seed, a purpose label and
    // up to two indices (round, client, sample, ...).  Streams for different
    // (label, a, b) tuples are decorrelated, and the mapping does not depend
    // on call order, so two protocols that touch the same logical stream draw
    // identical values.
    static Rng derive(std::uint64_t seed, std::string_view label,
                      std::uint64_t a = 0, std::uint64_t b = 0);

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).  Lemire multiply-shift; the bias of at most
    // n / 2^64 is irrelevant at the scales used here.
    std::uint64_t below(std::uint64_t n) {
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    // Standard normal via Box-Muller (pair-cached).
    double normal();

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::uint64_t state_;
    double cached_ = 0.0;
    bool has_cached_ = false;
};

}  // namespace altfl
