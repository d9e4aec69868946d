#include "denomae/render.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "denomae/detmath.hpp"
#include "denomae/errors.hpp"

namespace denomae::render {

namespace {

constexpr double kFixedScale = 4294967296.0;  // 2^32 units per intensity unit
constexpr double kTruncationMultiple = 4.0;   // contributions cut at d > 4/alpha

struct Placed {
    double x, y;    // possibly clamped position
    double power;   // weight of the sample's contribution
};

// Applies the clip policy; returns false when the sample is dropped.
bool place(const cplx& s, const GridSpec& grid, DecayConfig::PowerMode mode, Placed& out) {
    double x = s.real();
    double y = s.imag();
    const double e = grid.extent;
    if (grid.clip == GridSpec::Clip::drop) {
        if (x < -e || x > e || y < -e || y > e) return false;
    } else {
        x = std::clamp(x, -e, e);
        y = std::clamp(y, -e, e);
    }
    out.x = x;
    out.y = y;
    out.power = mode == DecayConfig::PowerMode::unit
                    ? 1.0
                    : s.real() * s.real() + s.imag() * s.imag();
    return true;
}

int bin_index(double v, double origin, double px, int res) {
    const int i = static_cast<int>(std::floor((v - origin) / px));
    return std::clamp(i, 0, res - 1);
}

Tensor normalize_raw(const std::vector<int64_t>& raw, int res) {
    int64_t lo = raw[0], hi = raw[0];
    for (int64_t v : raw) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    Tensor out({res, res});
    if (hi == lo) return out;  // constant raw image -> zeros
    const double span = static_cast<double>(hi - lo);
    for (size_t i = 0; i < raw.size(); ++i) {
        out.data[i] = static_cast<float>(static_cast<double>(raw[i] - lo) / span);
    }
    return out;
}

void require_nonempty(std::span<const cplx> samples) {
    if (samples.empty()) throw DataError("render: empty sample set");
}

}  // namespace

void GridSpec::validate() const {
    if (resolution < 8) throw ConfigError("GridSpec: resolution must be >= 8");
    if (!(extent > 0.0)) throw ConfigError("GridSpec: extent must be > 0");
}

void DecayConfig::validate() const {
    if (!(alphas[0] > 0.0 && alphas[0] < alphas[1] && alphas[1] < alphas[2])) {
        throw ConfigError("DecayConfig: alphas must satisfy 0 < a1 < a2 < a3");
    }
}

std::vector<int64_t> render_gray_raw(std::span<const cplx> samples, const GridSpec& grid) {
    grid.validate();
    require_nonempty(samples);
    const int res = grid.resolution;
    const double px = grid.pixel_size();
    std::vector<int64_t> counts(static_cast<size_t>(res) * res, 0);
    bool any = false;
    for (const cplx& s : samples) {
        Placed p;
        if (!place(s, grid, DecayConfig::PowerMode::unit, p)) continue;
        const int col = bin_index(p.x, -grid.extent, px, res);
        const int row = bin_index(grid.extent - p.y, 0.0, px, res);
        counts[static_cast<size_t>(row) * res + col] += 1;
        any = true;
    }
    if (!any) throw DataError("render: all samples outside extent (empty image)");
    return counts;
}

std::vector<int64_t> render_enhanced_raw(std::span<const cplx> samples, const GridSpec& grid,
                                         double alpha, DecayConfig::PowerMode mode) {
    grid.validate();
    require_nonempty(samples);
    if (!(alpha > 0.0)) throw ConfigError("render_enhanced: alpha must be > 0");

    const int res = grid.resolution;
    const double px = grid.pixel_size();
    const double radius = kTruncationMultiple / alpha;
    std::vector<int64_t> acc(static_cast<size_t>(res) * res, 0);
    bool any = false;

    for (const cplx& s : samples) {
        Placed p;
        if (!place(s, grid, mode, p)) continue;
        any = true;

        // Pixel bounding box whose centroids can lie within the truncation
        // radius. Centroid of column j is at -extent + (j + 0.5) px.
        const int c0 = std::max(0, static_cast<int>(std::floor((p.x - radius + grid.extent) / px - 0.5)));
        const int c1 = std::min(res - 1, static_cast<int>(std::ceil((p.x + radius + grid.extent) / px - 0.5)));
        const int r0 = std::max(0, static_cast<int>(std::floor((grid.extent - p.y - radius) / px - 0.5)));
        const int r1 = std::min(res - 1, static_cast<int>(std::ceil((grid.extent - p.y + radius) / px - 0.5)));

        for (int r = r0; r <= r1; ++r) {
            const double cy = grid.extent - (r + 0.5) * px;
            const double dy = cy - p.y;
            for (int c = c0; c <= c1; ++c) {
                const double cx = -grid.extent + (c + 0.5) * px;
                const double dx = cx - p.x;
                const double d = std::sqrt(dx * dx + dy * dy);
                if (d > radius) continue;
                const double contrib = p.power * detmath::exp_neg(-alpha * d);
                acc[static_cast<size_t>(r) * res + c] += std::llround(contrib * kFixedScale);
            }
        }
    }
    if (!any) throw DataError("render: all samples outside extent (empty image)");
    return acc;
}

Tensor render_gray(std::span<const cplx> samples, const GridSpec& grid) {
    return normalize_raw(render_gray_raw(samples, grid), grid.resolution);
}

Tensor render_enhanced(std::span<const cplx> samples, const GridSpec& grid, double alpha,
                       DecayConfig::PowerMode mode) {
    return normalize_raw(render_enhanced_raw(samples, grid, alpha, mode), grid.resolution);
}

Tensor render_rgb(std::span<const cplx> samples, const GridSpec& grid, const DecayConfig& decay) {
    decay.validate();
    const int res = grid.resolution;
    Tensor out({3, res, res});
    const int64_t plane = static_cast<int64_t>(res) * res;
    for (int ch = 0; ch < 3; ++ch) {
        const Tensor channel = render_enhanced(samples, grid, decay.alphas[ch], decay.power_mode);
        std::copy(channel.data.begin(), channel.data.end(), out.data.begin() + ch * plane);
    }
    return out;
}

std::string ppm_bytes(const Tensor& img) {
    int h = 0, w = 0;
    bool rgb = false;
    if (img.rank() == 2) {
        h = img.shape[0];
        w = img.shape[1];
    } else if (img.rank() == 3 && img.shape[0] == 3) {
        h = img.shape[1];
        w = img.shape[2];
        rgb = true;
    } else {
        throw ConfigError("ppm: expected [H,W] or [3,H,W], got " + shape_str(img.shape));
    }
    std::string out = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    out.reserve(out.size() + static_cast<size_t>(h) * w * 3);
    const int64_t plane = static_cast<int64_t>(h) * w;
    for (int64_t i = 0; i < plane; ++i) {
        for (int ch = 0; ch < 3; ++ch) {
            const float v = rgb ? img.data[ch * plane + i] : img.data[i];
            const double q = std::floor(static_cast<double>(v) * 255.0 + 0.5);
            out.push_back(static_cast<char>(static_cast<uint8_t>(std::clamp(q, 0.0, 255.0))));
        }
    }
    return out;
}

void write_ppm(const Tensor& img, const std::filesystem::path& path) {
    const std::string bytes = ppm_bytes(img);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for write: " + path.string());
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write failed: " + path.string());
}

Tensor hstack_images(const std::vector<Tensor>& images) {
    if (images.empty()) throw ConfigError("hstack_images: no images");
    constexpr int kSep = 2;
    const int h = images[0].shape.at(1);
    int total_w = 0;
    for (const auto& img : images) {
        if (img.rank() != 3 || img.shape[0] != 3 || img.shape[1] != h) {
            throw ConfigError("hstack_images: all images must be [3,H,W] with equal H");
        }
        total_w += img.shape[2];
    }
    total_w += kSep * (static_cast<int>(images.size()) - 1);
    Tensor out({3, h, total_w});
    for (auto& v : out.data) v = 0.5f;  // separator gray
    int at = 0;
    for (const auto& img : images) {
        const int w = img.shape[2];
        for (int ch = 0; ch < 3; ++ch) {
            for (int r = 0; r < h; ++r) {
                for (int c = 0; c < w; ++c) {
                    out.data[(static_cast<int64_t>(ch) * h + r) * total_w + at + c] =
                        img.data[(static_cast<int64_t>(ch) * h + r) * w + c];
                }
            }
        }
        at += w + kSep;
    }
    return out;
}

}  // namespace denomae::render
