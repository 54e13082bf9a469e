#include "core/rng.hpp"

#include <cmath>
#include <numbers>

namespace altfl {

namespace {

std::uint64_t mix(std::uint64_t h, std::uint64_t v) {
    h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    // splitmix64 finalizer to spread the combined bits
    h = (h ^ (h >> 30)) * 0xbf58476d1ce4e5b9ULL;
    h = (h ^ (h >> 27)) * 0x94d049bb133111ebULL;
    return h ^ (h >> 31);
}

}  // namespace

Rng Rng::derive(std::uint64_t seed, std::string_view label, std::uint64_t a,
                std::uint64_t b) {
    std::uint64_t h = seed;
    for (unsigned char c : label) h = mix(h, c);
    h = mix(h, a);
    h = mix(h, b);
    return Rng(h);
}

double Rng::normal() {
    if (has_cached_) {
        has_cached_ = false;
        return cached_;
    }
    // u1 in (0, 1] so the log never sees zero.
    double u1 = 1.0 - uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * std::numbers::pi * u2;
    cached_ = r * std::sin(theta);
    has_cached_ = true;
    return r * std::cos(theta);
}

}  // namespace altfl
