#include "denomae/signal.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>

#include "denomae/errors.hpp"

namespace denomae::sig {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr int kSamplesPerSymbol = 8;  // phase-shaped schemes
constexpr int kGmskTailTrim = 4;      // incomplete pulse tail dropped from the burst

// Samples are kept on a 2^-26 grid. Sums of grid values are then exact in
// double, so noisy == clean + noise and noisy - clean == noise both hold
// bitwise.
constexpr double kGrid = 67108864.0;  // 2^26

double quantize(double v) { return std::nearbyint(v * kGrid) * (1.0 / kGrid); }

cplx quantize(cplx v) { return {quantize(v.real()), quantize(v.imag())}; }

// Gray-coded amplitude ladders.
constexpr std::array<double, 4> kGray2 = {-3.0, -1.0, +3.0, +1.0};  // index = b0b1
constexpr std::array<double, 8> kGray3 = {-7.0, -5.0, -1.0, -3.0,
                                          +7.0, +5.0, +1.0, +3.0};  // index = b0b1b2

int take_bits(const std::vector<uint8_t>& bits, size_t at, int n) {
    int v = 0;
    for (int i = 0; i < n; ++i) v = (v << 1) | (bits[at + i] & 1);
    return v;
}

int inverse_gray(int g) {
    int k = g;
    k ^= k >> 1;
    k ^= k >> 2;
    return k;
}

struct SchemeInfo {
    Scheme scheme;
    const char* name;
    int bps;
};

constexpr std::array<SchemeInfo, 10> kSchemes = {{
    {Scheme::bpsk, "bpsk", 1},
    {Scheme::qpsk, "qpsk", 2},
    {Scheme::oqpsk, "oqpsk", 2},
    {Scheme::psk8, "8psk", 3},
    {Scheme::qam16, "16qam", 4},
    {Scheme::qam64, "64qam", 6},
    {Scheme::pam4, "4pam", 2},
    {Scheme::fsk4, "4fsk", 2},
    {Scheme::cpfsk, "cpfsk", 1},
    {Scheme::gmsk, "gmsk", 1},
}};

const SchemeInfo& info(Scheme s) {
    for (const auto& si : kSchemes) {
        if (si.scheme == s) return si;
    }
    throw DataError("unknown modulation scheme");
}

cplx qpsk_point(int b0, int b1) {
    const double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
    return {(1 - 2 * b0) * inv_sqrt2, (1 - 2 * b1) * inv_sqrt2};
}

// Per-symbol phase increments (radians per sample) for the CPM schemes.
double fsk4_phase_step(int sym_bits) { return kGray2[sym_bits] * kPi / 8.0; }
double cpfsk_phase_step(int bit) { return (1 - 2 * bit) * kPi / 16.0; }

// Gaussian pulse for gmsk, BT = 0.3, truncated to +-2 symbols, normalized to
// unit sum so each symbol contributes a total phase of +-pi/2.
std::vector<double> gmsk_pulse() {
    const double bt = 0.3;
    const double sigma = std::sqrt(std::log(2.0)) / (2.0 * kPi * bt);
    const int half = 2 * kSamplesPerSymbol;
    std::vector<double> taps(2 * half + 1);
    double sum = 0.0;
    for (int i = 0; i < static_cast<int>(taps.size()); ++i) {
        const double t = static_cast<double>(i - half) / kSamplesPerSymbol;
        taps[i] = std::exp(-0.5 * (t / sigma) * (t / sigma));
        sum += taps[i];
    }
    for (auto& v : taps) v /= sum;
    return taps;
}

std::vector<cplx> linear_map(Scheme s, const std::vector<uint8_t>& bits, int n_symbols) {
    std::vector<cplx> out(n_symbols);
    const int bps = info(s).bps;
    for (int k = 0; k < n_symbols; ++k) {
        const size_t at = static_cast<size_t>(k) * bps;
        switch (s) {
            case Scheme::bpsk:
                out[k] = {static_cast<double>(1 - 2 * bits[at]), 0.0};
                break;
            case Scheme::qpsk:
                out[k] = qpsk_point(bits[at], bits[at + 1]);
                break;
            case Scheme::psk8: {
                const int k8 = inverse_gray(take_bits(bits, at, 3));
                const double ph = 2.0 * kPi * k8 / 8.0;
                out[k] = {std::cos(ph), std::sin(ph)};
                break;
            }
            case Scheme::qam16: {
                const double re = kGray2[take_bits(bits, at, 2)];
                const double im = kGray2[take_bits(bits, at + 2, 2)];
                out[k] = cplx{re, im} / std::sqrt(10.0);
                break;
            }
            case Scheme::qam64: {
                const double re = kGray3[take_bits(bits, at, 3)];
                const double im = kGray3[take_bits(bits, at + 3, 3)];
                out[k] = cplx{re, im} / std::sqrt(42.0);
                break;
            }
            case Scheme::pam4:
                out[k] = {kGray2[take_bits(bits, at, 2)] / std::sqrt(5.0), 0.0};
                break;
            default:
                throw DataError("linear_map: not a linear scheme");
        }
    }
    return out;
}

std::vector<cplx> modulate_samples(Scheme s, const std::vector<uint8_t>& bits, int n_symbols) {
    switch (s) {
        case Scheme::bpsk:
        case Scheme::qpsk:
        case Scheme::psk8:
        case Scheme::qam16:
        case Scheme::qam64:
        case Scheme::pam4:
            return linear_map(s, bits, n_symbols);

        case Scheme::oqpsk: {
            // Two samples per symbol with the quadrature leg delayed by one
            // sample (half a symbol).
            std::vector<cplx> out(2 * static_cast<size_t>(n_symbols));
            const double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
            for (int k = 0; k < n_symbols; ++k) {
                const double ik = (1 - 2 * bits[2 * k]) * inv_sqrt2;
                const double qk = (1 - 2 * bits[2 * k + 1]) * inv_sqrt2;
                const double q_prev = k > 0 ? (1 - 2 * bits[2 * k - 1]) * inv_sqrt2 : qk;
                out[2 * k] = {ik, q_prev};
                out[2 * k + 1] = {ik, qk};
            }
            return out;
        }

        case Scheme::fsk4:
        case Scheme::cpfsk: {
            const int bps = info(s).bps;
            std::vector<cplx> out(static_cast<size_t>(n_symbols) * kSamplesPerSymbol);
            double phase = 0.0;
            size_t n = 0;
            for (int k = 0; k < n_symbols; ++k) {
                const double step = s == Scheme::fsk4
                                        ? fsk4_phase_step(take_bits(bits, k * bps, 2))
                                        : cpfsk_phase_step(bits[k]);
                for (int i = 0; i < kSamplesPerSymbol; ++i) {
                    phase += step;
                    out[n++] = {std::cos(phase), std::sin(phase)};
                }
            }
            return out;
        }

        case Scheme::gmsk: {
            const auto pulse = gmsk_pulse();
            const int half = static_cast<int>(pulse.size()) / 2;
            const size_t len = static_cast<size_t>(n_symbols) * kSamplesPerSymbol;
            // Frequency track: NRZ impulses convolved with the Gaussian pulse.
            std::vector<double> freq(len, 0.0);
            for (int k = 0; k < n_symbols; ++k) {
                const double a = 1 - 2 * bits[k];
                const int center = k * kSamplesPerSymbol;
                for (int i = 0; i < static_cast<int>(pulse.size()); ++i) {
                    const int n = center + i - half;
                    if (n >= 0 && n < static_cast<int>(len)) freq[n] += a * pulse[i];
                }
            }
            std::vector<cplx> out(len);
            double phase = 0.0;
            for (size_t n = 0; n < len; ++n) {
                phase += 0.5 * kPi * freq[n];
                out[n] = {std::cos(phase), std::sin(phase)};
            }
            if (static_cast<int>(out.size()) > kGmskTailTrim) {
                out.resize(out.size() - kGmskTailTrim);
            }
            return out;
        }
    }
    throw DataError("unknown modulation scheme");
}

}  // namespace

const std::vector<Scheme>& all_schemes() {
    static const std::vector<Scheme> v = [] {
        std::vector<Scheme> s;
        for (const auto& si : kSchemes) s.push_back(si.scheme);
        return s;
    }();
    return v;
}

std::string_view scheme_name(Scheme s) { return info(s).name; }

Scheme scheme_from_name(std::string_view name) {
    for (const auto& si : kSchemes) {
        if (name == si.name) return si.scheme;
    }
    throw DataError("unknown modulation scheme: '" + std::string(name) + "'");
}

int bits_per_symbol(Scheme s) { return info(s).bps; }

std::vector<cplx> scheme_alphabet(Scheme s) {
    switch (s) {
        case Scheme::bpsk:
            return {{1, 0}, {-1, 0}};
        case Scheme::qpsk:
        case Scheme::oqpsk: {
            std::vector<cplx> a;
            for (int b0 : {0, 1}) {
                for (int b1 : {0, 1}) a.push_back(qpsk_point(b0, b1));
            }
            return a;
        }
        case Scheme::psk8: {
            std::vector<cplx> a;
            for (int k = 0; k < 8; ++k) {
                a.push_back({std::cos(2 * kPi * k / 8), std::sin(2 * kPi * k / 8)});
            }
            return a;
        }
        case Scheme::qam16: {
            std::vector<cplx> a;
            for (double re : kGray2) {
                for (double im : kGray2) a.push_back(cplx{re, im} / std::sqrt(10.0));
            }
            return a;
        }
        case Scheme::qam64: {
            std::vector<cplx> a;
            for (double re : kGray3) {
                for (double im : kGray3) a.push_back(cplx{re, im} / std::sqrt(42.0));
            }
            return a;
        }
        case Scheme::pam4: {
            std::vector<cplx> a;
            for (double re : kGray2) a.push_back({re / std::sqrt(5.0), 0.0});
            return a;
        }
        case Scheme::fsk4: {
            std::vector<cplx> a;
            for (int g = 0; g < 4; ++g) {
                const double ph = fsk4_phase_step(g);
                a.push_back({std::cos(ph), std::sin(ph)});
            }
            return a;
        }
        case Scheme::cpfsk: {
            std::vector<cplx> a;
            for (int b : {0, 1}) {
                const double ph = cpfsk_phase_step(b);
                a.push_back({std::cos(ph), std::sin(ph)});
            }
            return a;
        }
        case Scheme::gmsk:
            return {{1, 0}, {0, 1}, {-1, 0}, {0, -1}};
    }
    throw DataError("unknown modulation scheme");
}

int native_symbol_count(Scheme s) {
    switch (s) {
        case Scheme::oqpsk:
            return kBaseLength;  // 2 samples/symbol -> 2048
        case Scheme::fsk4:
        case Scheme::cpfsk:
            return kBaseLength / kSamplesPerSymbol;  // 1024 samples
        case Scheme::gmsk:
            return (kGmskNativeLength + kGmskTailTrim) / kSamplesPerSymbol;  // 8196 samples
        default:
            return kBaseLength;  // 1 sample/symbol
    }
}

BasebandSignal modulate(Scheme s, const std::vector<uint8_t>& bits, int n_symbols,
                        uint64_t seed) {
    if (n_symbols <= 0) throw DataError("modulate: n_symbols must be positive");
    const size_t needed = static_cast<size_t>(n_symbols) * info(s).bps;
    if (bits.size() < needed) {
        throw DataError("modulate: need " + std::to_string(needed) + " bits for " +
                        std::to_string(n_symbols) + " " + std::string(scheme_name(s)) +
                        " symbols, got " + std::to_string(bits.size()));
    }
    BasebandSignal out;
    out.scheme = s;
    out.seed = seed;
    out.samples = modulate_samples(s, bits, n_symbols);

    const double p = mean_power(out.samples);
    const double inv_amp = p > 0.0 ? 1.0 / std::sqrt(p) : 1.0;
    for (auto& v : out.samples) v = quantize(v * inv_amp);
    return out;
}

BasebandSignal resample_to_base(const BasebandSignal& in) {
    const int n = static_cast<int>(in.samples.size());
    if (n < kBaseLength) {
        throw DataError("resample_to_base: input length " + std::to_string(n) +
                        " is below " + std::to_string(kBaseLength));
    }
    BasebandSignal out;
    out.sample_rate_hz = in.sample_rate_hz;
    out.scheme = in.scheme;
    out.seed = in.seed;
    if (n == kBaseLength) {
        out.samples = in.samples;
        return out;
    }

    // Windowed-sinc low-pass at the target Nyquist, then uniform index pick.
    const double factor = static_cast<double>(n) / kBaseLength;
    const double fc = 0.5 / factor;
    const int half = std::min(64, 4 * static_cast<int>(std::ceil(factor)));
    const int len = 2 * half + 1;
    std::vector<double> taps(len);
    for (int i = 0; i < len; ++i) {
        const double t = i - half;
        const double x = 2.0 * kPi * fc * t;
        const double sinc = t == 0.0 ? 1.0 : std::sin(x) / x;
        const double window = 0.54 - 0.46 * std::cos(2.0 * kPi * i / (len - 1));
        taps[i] = 2.0 * fc * sinc * window;
    }

    out.samples.resize(kBaseLength);
    for (int m = 0; m < kBaseLength; ++m) {
        const int center = static_cast<int>((static_cast<int64_t>(m) * n) / kBaseLength);
        cplx acc{0.0, 0.0};
        double wsum = 0.0;
        for (int i = 0; i < len; ++i) {
            const int src = center + i - half;
            if (src < 0 || src >= n) continue;
            acc += taps[i] * in.samples[src];
            wsum += taps[i];
        }
        out.samples[m] = quantize(acc / wsum);
    }
    return out;
}

double noise_variance(double signal_power, double snr_db) {
    return signal_power / std::pow(10.0, snr_db / 10.0);
}

ChannelDraw apply_awgn(const BasebandSignal& clean, double snr_db, uint64_t seed) {
    if (clean.samples.empty()) throw DataError("apply_awgn: empty signal");
    const double p = mean_power(clean.samples);
    if (!(p > 0.0)) throw DataError("apply_awgn: zero-power signal");

    const double sigma2 = noise_variance(p, snr_db);
    const double comp_sigma = std::sqrt(sigma2 / 2.0);

    ChannelDraw draw;
    draw.snr_db = snr_db;
    draw.clean = clean;
    draw.noisy = clean;
    draw.noisy.seed = seed;
    draw.noise.resize(clean.samples.size());

    RngStream rng = RngStream(seed).child(rng_tag::channel_noise);
    for (size_t i = 0; i < clean.samples.size(); ++i) {
        const cplx n = quantize(cplx{comp_sigma * rng.next_gaussian(),
                                     comp_sigma * rng.next_gaussian()});
        draw.noise[i] = n;
        draw.noisy.samples[i] = clean.samples[i] + n;
    }
    return draw;
}

double mean_power(std::span<const cplx> samples) {
    double acc = 0.0;
    for (const cplx& v : samples) acc += v.real() * v.real() + v.imag() * v.imag();
    return samples.empty() ? 0.0 : acc / static_cast<double>(samples.size());
}

double measure_snr(std::span<const cplx> clean, std::span<const cplx> noisy) {
    if (clean.size() != noisy.size()) {
        throw ConfigError("measure_snr: length mismatch " + std::to_string(clean.size()) +
                          " vs " + std::to_string(noisy.size()));
    }
    double pc = 0.0, pn = 0.0;
    for (size_t i = 0; i < clean.size(); ++i) {
        const cplx d = noisy[i] - clean[i];
        pc += clean[i].real() * clean[i].real() + clean[i].imag() * clean[i].imag();
        pn += d.real() * d.real() + d.imag() * d.imag();
    }
    if (pn == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(pc / pn);
}

std::vector<double> real_part(std::span<const cplx> samples) {
    std::vector<double> out(samples.size());
    for (size_t i = 0; i < samples.size(); ++i) out[i] = samples[i].real();
    return out;
}

Tensor signal_to_image(const std::vector<double>& series, int side) {
    if (static_cast<int>(series.size()) != kBaseLength) {
        throw ConfigError("signal_to_image: series length must be " +
                          std::to_string(kBaseLength) + ", got " +
                          std::to_string(series.size()));
    }
    if (side < 32) throw ConfigError("signal_to_image: side must be >= 32");

    constexpr int kGridSide = 32;
    // Corner-aligned bilinear resize of the 32x32 row-major reshape.
    std::vector<double> resized(static_cast<size_t>(side) * side);
    const double scale = side == 1 ? 0.0 : static_cast<double>(kGridSide - 1) / (side - 1);
    for (int i = 0; i < side; ++i) {
        const double y = i * scale;
        const int y0 = std::min(static_cast<int>(y), kGridSide - 2);
        const double fy = y - y0;
        for (int j = 0; j < side; ++j) {
            const double x = j * scale;
            const int x0 = std::min(static_cast<int>(x), kGridSide - 2);
            const double fx = x - x0;
            const double v00 = series[y0 * kGridSide + x0];
            const double v01 = series[y0 * kGridSide + x0 + 1];
            const double v10 = series[(y0 + 1) * kGridSide + x0];
            const double v11 = series[(y0 + 1) * kGridSide + x0 + 1];
            resized[static_cast<size_t>(i) * side + j] =
                (1 - fy) * ((1 - fx) * v00 + fx * v01) + fy * ((1 - fx) * v10 + fx * v11);
        }
    }

    double lo = resized[0], hi = resized[0];
    for (double v : resized) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const double span = hi - lo;

    Tensor img({3, side, side});
    const int64_t plane = static_cast<int64_t>(side) * side;
    for (int64_t i = 0; i < plane; ++i) {
        const float v = span > 0.0 ? static_cast<float>((resized[i] - lo) / span) : 0.0f;
        img.data[i] = v;
        img.data[plane + i] = v;
        img.data[2 * plane + i] = v;
    }
    return img;
}

std::vector<uint8_t> random_bits(int n, RngStream& rng) {
    std::vector<uint8_t> bits(n);
    for (auto& b : bits) b = static_cast<uint8_t>(rng.next_u64() & 1);
    return bits;
}

BasebandSignal synthesize(Scheme s, uint64_t seed) {
    RngStream rng = RngStream(seed).child(rng_tag::payload_bits);
    const int n = native_symbol_count(s);
    const auto bits = random_bits(n * bits_per_symbol(s), rng);
    return resample_to_base(modulate(s, bits, n, seed));
}

}  // namespace denomae::sig
