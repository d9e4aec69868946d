#pragma once

#include <complex>
#include <numbers>
#include <vector>

#include "denomae/rng.hpp"

namespace fixtures {

// Jittered qpsk cloud built from arithmetic only (no libm), so the byte
// content of renders derived from it is platform independent.
inline std::vector<std::complex<double>> qpsk_cloud(int n, uint64_t seed,
                                                    double jitter = 0.15) {
    denomae::RngStream rng(seed);
    const double c = 1.0 / std::numbers::sqrt2;
    std::vector<std::complex<double>> pts;
    pts.reserve(n);
    for (int i = 0; i < n; ++i) {
        const double re = (rng.next_below(2) ? c : -c) + jitter * (rng.next_double() - 0.5);
        const double im = (rng.next_below(2) ? c : -c) + jitter * (rng.next_double() - 0.5);
        pts.push_back({re, im});
    }
    return pts;
}

}  // namespace fixtures
