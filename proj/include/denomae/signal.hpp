#pragma once

#include <complex>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "denomae/rng.hpp"
#include "denomae/tensor.hpp"

namespace denomae::sig {

using cplx = std::complex<double>;

// The ten modulation classes. Names double as manifest labels.
enum class Scheme {
    bpsk,
    qpsk,
    oqpsk,
    psk8,
    qam16,
    qam64,
    pam4,
    fsk4,
    cpfsk,
    gmsk,
};

const std::vector<Scheme>& all_schemes();
std::string_view scheme_name(Scheme s);
Scheme scheme_from_name(std::string_view name);  // DataError on unknown
int bits_per_symbol(Scheme s);
// Symbol alphabet at unit average power. For the phase-continuous schemes
// (4fsk, cpfsk, gmsk) the emitted samples live on the unit circle; the
// returned set is the per-symbol phase-increment alphabet mapped onto it.
std::vector<cplx> scheme_alphabet(Scheme s);

constexpr int kBaseLength = 1024;
constexpr double kSampleRateHz = 200000.0;
// Native pre-decimation length of the gmsk burst.
constexpr int kGmskNativeLength = 8196;

struct BasebandSignal {
    std::vector<cplx> samples;
    double sample_rate_hz = kSampleRateHz;
    Scheme scheme = Scheme::bpsk;
    uint64_t seed = 0;
};

// Maps a bit stream onto n_symbols of the scheme and emits the baseband
// sample sequence, normalized to unit average power over the sequence and
// snapped to a 2^-26 grid so channel sums stay exact. Phase-shaped schemes
// emit several samples per symbol; their native length can exceed 1024.
BasebandSignal modulate(Scheme s, const std::vector<uint8_t>& bits, int n_symbols,
                        uint64_t seed = 0);

// Symbol count per scheme whose native output covers at least kBaseLength.
int native_symbol_count(Scheme s);

// Uniform-index decimation to exactly 1024 samples, low-pass filtered first
// whenever the decimation factor exceeds 1. Shorter inputs are rejected.
BasebandSignal resample_to_base(const BasebandSignal& in);

struct ChannelDraw {
    double snr_db = 0.0;
    BasebandSignal clean;
    BasebandSignal noisy;
    std::vector<cplx> noise;
};

// Per-complex-sample noise variance for a given signal power and SNR.
double noise_variance(double signal_power, double snr_db);

// Adds circular complex Gaussian noise calibrated to the measured signal
// power. noisy == clean + noise holds exactly, elementwise.
ChannelDraw apply_awgn(const BasebandSignal& clean, double snr_db, uint64_t seed);

double mean_power(std::span<const cplx> samples);

// 10*log10(P_clean / P_diff); +infinity when the signals are identical.
double measure_snr(std::span<const cplx> clean, std::span<const cplx> noisy);

std::vector<double> real_part(std::span<const cplx> samples);

// 1024 reals -> 32x32 -> bilinear side x side -> min-max to [0,1] -> 3
// identical channels. Constant input maps to all zeros.
Tensor signal_to_image(const std::vector<double>& series, int side);

std::vector<uint8_t> random_bits(int n, RngStream& rng);

// Random payload, native-rate modulation, decimation to 1024 samples.
BasebandSignal synthesize(Scheme s, uint64_t seed);

}  // namespace denomae::sig
