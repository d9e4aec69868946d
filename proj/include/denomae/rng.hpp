#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace denomae {

// SplitMix64 finalizer. Bijective on u64.
constexpr uint64_t mix64(uint64_t x) {
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ULL;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebULL;
    x ^= x >> 31;
    return x;
}

// Counter-based splittable generator. A stream is (key, counter); draw i of a
// stream is mix64(key + i * golden), so streams are random-access and a run
// can be resumed by rebuilding the stream from its derivation path instead of
// serializing generator state. Child streams are derived by hashing a tag
// into the key.
class RngStream {
  public:
    explicit RngStream(uint64_t key) : key_(key) {}

    RngStream child(uint64_t tag) const {
        return RngStream(mix64(key_ ^ mix64(tag + 0x517cc1b727220a95ULL)));
    }
    RngStream child(uint64_t a, uint64_t b) const { return child(a).child(b); }
    RngStream child(uint64_t a, uint64_t b, uint64_t c) const {
        return child(a).child(b).child(c);
    }

    uint64_t next_u64() {
        ctr_ += 1;
        return mix64(key_ + ctr_ * 0x9e3779b97f4a7c15ULL);
    }

    // Uniform in [0, 1), 53-bit resolution.
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double next_uniform(double lo, double hi) {
        return lo + (hi - lo) * next_double();
    }

    // Unbiased integer in [0, n).
    uint64_t next_below(uint64_t n) {
        const uint64_t limit = n * (UINT64_MAX / n);
        uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return x % n;
    }

    // Standard normal via Box-Muller; the partner deviate is cached.
    double next_gaussian() {
        if (have_cached_) {
            have_cached_ = false;
            return cached_;
        }
        double u1 = next_double();
        while (u1 <= 0.0) u1 = next_double();
        const double u2 = next_double();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * std::numbers::pi * u2;
        cached_ = r * std::sin(a);
        have_cached_ = true;
        return r * std::cos(a);
    }

    // Normal truncated to [-2, 2] sigma, then scaled.
    double next_trunc_normal(double sigma) {
        double z = next_gaussian();
        while (z < -2.0 || z > 2.0) z = next_gaussian();
        return z * sigma;
    }

    uint64_t key() const { return key_; }

  private:
    uint64_t key_;
    uint64_t ctr_ = 0;
    bool have_cached_ = false;
    double cached_ = 0.0;
};

// Tags used to derive independent substreams from one master seed.
namespace rng_tag {
constexpr uint64_t payload_bits = 1;
constexpr uint64_t channel_noise = 2;
constexpr uint64_t scheme_pick = 3;
constexpr uint64_t snr_pick = 4;
constexpr uint64_t mask_plan = 5;
constexpr uint64_t weight_init = 6;
constexpr uint64_t dropout = 7;
constexpr uint64_t shuffle = 8;
constexpr uint64_t grad_check = 9;
constexpr uint64_t sample_seed = 10;
}  // namespace rng_tag

}  // namespace denomae
