#pragma once

#include <array>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "denomae/tensor.hpp"

namespace denomae::render {

using cplx = std::complex<double>;

// Square raster over the complex plane, [-extent, extent] on both axes
// (7x7 overall at the default extent). Pixel (i,j) covers a half-open
// square; row 0 is the top edge (+imag), column 0 the left edge (-real);
// the centroid sits at the square's center.
struct GridSpec {
    double extent = 3.5;
    int resolution = 224;
    enum class Clip {
        clamp,  // out-of-extent samples are moved to the boundary
        drop,   // out-of-extent samples are discarded
    };
    Clip clip = Clip::clamp;

    void validate() const;
    double pixel_size() const { return 2.0 * extent / resolution; }
};

struct DecayConfig {
    // Per-channel decay rates, soft to sharp; must be strictly increasing.
    std::array<double, 3> alphas = {20.0, 40.0, 80.0};
    enum class PowerMode {
        sample_power,  // contribution weighted by |s|^2
        unit,          // every sample weighs 1
    };
    PowerMode power_mode = PowerMode::sample_power;

    void validate() const;
};

// Raw accumulators, pre-normalization. Values are fixed-point (2^-32 units)
// so accumulation commutes: shuffling the sample order cannot change any
// pixel. render_gray_raw instead counts hits per pixel.
std::vector<int64_t> render_gray_raw(std::span<const cplx> samples, const GridSpec& grid);
std::vector<int64_t> render_enhanced_raw(std::span<const cplx> samples, const GridSpec& grid,
                                         double alpha, DecayConfig::PowerMode mode);

// Min-max normalized images in [0,1]; a constant raw image maps to zeros.
Tensor render_gray(std::span<const cplx> samples, const GridSpec& grid);
Tensor render_enhanced(std::span<const cplx> samples, const GridSpec& grid, double alpha,
                       DecayConfig::PowerMode mode = DecayConfig::PowerMode::sample_power);
// Three enhanced channels, one per decay rate -> [3, res, res].
Tensor render_rgb(std::span<const cplx> samples, const GridSpec& grid, const DecayConfig& decay);

// Binary PPM (P6, maxval 255), values quantized round-half-up. Accepts
// [H,W] (replicated to gray RGB) or [3,H,W].
void write_ppm(const Tensor& img, const std::filesystem::path& path);
std::string ppm_bytes(const Tensor& img);

// Side-by-side composition with a 2px separator, for triptych exports.
Tensor hstack_images(const std::vector<Tensor>& images);

}  // namespace denomae::render
