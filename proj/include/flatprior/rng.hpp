#pragma once

// Counter-based random numbers. Every draw is a pure function of
// (key, counter), so any part of a run can be reproduced without replaying
// the stream that precedes it. Keys are derived by folding words into a
// splitmix64-style state.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <vector>

namespace flatprior {

inline std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

struct RngKey {
    std::uint64_t state = 0;

    static RngKey root(std::uint64_t seed) { return RngKey{mix64(seed)}; }

    // Derive a subkey; used for streams, outer iterations, sample indices.
    RngKey child(std::uint64_t word) const {
        return RngKey{mix64(state ^ (0xd1b54a32d192ed03ull + word))};
    }
};

// Uniform on the open interval (0,1); never returns an endpoint.
inline double uniform01(RngKey key, std::uint64_t counter) {
    const std::uint64_t r = mix64(key.state + 0x9e3779b97f4a7c15ull * counter);
    return (static_cast<double>(r >> 11) + 0.5) * 0x1.0p-53;
}

// Standard normal draws via Box-Muller on counter pairs. Element i depends
// only on (key, i), not on n.
inline void fill_gaussian(RngKey key, std::span<double> out) {
    const std::size_t n = out.size();
    for (std::size_t i = 0; i < n; i += 2) {
        const double u1 = uniform01(key, 2 * i);
        const double u2 = uniform01(key, 2 * i + 1);
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double phase = 2.0 * std::numbers::pi * u2;
        out[i] = r * std::cos(phase);
        if (i + 1 < n) out[i + 1] = r * std::sin(phase);
    }
}

inline std::vector<double> gaussian_vector(RngKey key, std::size_t n) {
    std::vector<double> v(n);
    fill_gaussian(key, v);
    return v;
}

}  // namespace flatprior
