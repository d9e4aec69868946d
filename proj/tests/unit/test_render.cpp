#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>

#include "doctest.h"

#include "denomae/detmath.hpp"
#include "denomae/render.hpp"
#include "denomae/signal.hpp"

#include "../common/fixtures.hpp"
#include "test_util.hpp"

using namespace denomae;
using namespace denomae::render;

namespace {

GridSpec small_grid(int res = 32) {
    GridSpec g;
    g.resolution = res;
    return g;
}

using fixtures::qpsk_cloud;

}  // namespace

TEST_CASE("deterministic exp matches libm and is exact at zero") {
    CHECK(detmath::exp_neg(0.0) == 1.0);
    RngStream rng(2);
    for (int i = 0; i < 2000; ++i) {
        const double x = -50.0 * rng.next_double();
        const double got = detmath::exp_neg(x);
        const double want = std::exp(x);
        CHECK(std::abs(got - want) <= 4e-15 * want);
    }
    CHECK(detmath::exp_neg(-800.0) == 0.0);
}

TEST_CASE("gray render: one sample at the origin lights the center bin at 1") {
    const std::vector<cplx> pts = {{0.0, 0.0}};
    const Tensor img = render_gray(pts, small_grid());
    int nonzero = 0;
    for (int r = 0; r < 32; ++r) {
        for (int c = 0; c < 32; ++c) {
            if (img.at(r, c) != 0.0f) {
                ++nonzero;
                CHECK(img.at(r, c) == 1.0f);
                CHECK(r == 16);
                CHECK(c == 16);
            }
        }
    }
    CHECK(nonzero == 1);
}

TEST_CASE("gray render: double occupancy maps to 1.0 and 0.5") {
    const std::vector<cplx> pts = {{1.0, 1.0}, {1.0, 1.0}, {-1.0, -1.0}};
    const Tensor img = render_gray(pts, small_grid());
    std::vector<float> hits;
    for (float v : img.data) {
        if (v != 0.0f) hits.push_back(v);
    }
    std::sort(hits.begin(), hits.end());
    REQUIRE(hits.size() == 2);
    CHECK(hits[0] == 0.5f);
    CHECK(hits[1] == 1.0f);
}

TEST_CASE("gray render: clean qpsk occupies exactly 4 pixels") {
    RngStream rng(77);
    std::vector<uint8_t> bits = sig::random_bits(200000, rng);
    const auto s = sig::modulate(sig::Scheme::qpsk, bits, 100000);
    GridSpec grid;
    grid.resolution = 224;
    const Tensor img = render_gray(s.samples, grid);
    int nonzero = 0;
    for (float v : img.data) nonzero += v != 0.0f;
    CHECK(nonzero == 4);
}

TEST_CASE("enhanced render: unit-power sample at a pixel centroid scores exp(0)") {
    GridSpec grid = small_grid();
    const double px = grid.pixel_size();
    // centroid of pixel (8, 20)
    const double cx = -grid.extent + (20 + 0.5) * px;
    const double cy = grid.extent - (8 + 0.5) * px;
    const double amp = 1.0 / std::numbers::sqrt2;
    const cplx sample{cx, cy};
    // |sample|^2 is not 1; use unit power mode to pin P = 1.
    const auto raw = render_enhanced_raw({&sample, 1}, grid, 80.0, DecayConfig::PowerMode::unit);
    CHECK(raw[8 * 32 + 20] == 4294967296LL);  // exp(0) * 2^32
    (void)amp;
}

TEST_CASE("enhanced render: contribution at distance 1 with alpha 1 is 1/e") {
    GridSpec grid;
    grid.resolution = 14;  // px = 0.5, centroids at +-0.25 steps
    const double px = grid.pixel_size();
    const double cx = -grid.extent + (7 + 0.5) * px;
    const double cy = grid.extent - (7 + 0.5) * px;
    const cplx sample{cx + 1.0, cy};  // exactly 1 plane unit from that centroid
    const auto raw = render_enhanced_raw({&sample, 1}, grid, 1.0, DecayConfig::PowerMode::unit);
    const double got = static_cast<double>(raw[7 * 14 + 7]) / 4294967296.0;
    CHECK(got == doctest::Approx(std::exp(-1.0)).epsilon(1e-9));
}

TEST_CASE("enhanced render at large alpha matches the gray support on centroids") {
    GridSpec grid = small_grid();
    const double px = grid.pixel_size();
    RngStream rng(8);
    std::vector<cplx> pts;
    for (int i = 0; i < 60; ++i) {
        const int r = static_cast<int>(rng.next_below(32));
        const int c = static_cast<int>(rng.next_below(32));
        pts.push_back({-grid.extent + (c + 0.5) * px, grid.extent - (r + 0.5) * px});
    }
    const auto gray = render_gray_raw(pts, grid);
    const auto sharp = render_enhanced_raw(pts, grid, 2000.0, DecayConfig::PowerMode::unit);
    REQUIRE(gray.size() == sharp.size());
    for (size_t i = 0; i < gray.size(); ++i) {
        CHECK((gray[i] != 0) == (sharp[i] != 0));
    }
}

TEST_CASE("enhanced render is permutation invariant bitwise") {
    auto pts = qpsk_cloud(500, 21);
    GridSpec grid = small_grid();
    const auto a = render_enhanced_raw(pts, grid, 40.0, DecayConfig::PowerMode::sample_power);
    RngStream rng(1);
    for (size_t i = 0; i + 1 < pts.size(); ++i) {
        std::swap(pts[i], pts[i + rng.next_below(pts.size() - i)]);
    }
    const auto b = render_enhanced_raw(pts, grid, 40.0, DecayConfig::PowerMode::sample_power);
    CHECK(a == b);
}

TEST_CASE("raw pixel values are nonincreasing in alpha") {
    const auto pts = qpsk_cloud(300, 5);
    GridSpec grid = small_grid();
    const auto soft = render_enhanced_raw(pts, grid, 20.0, DecayConfig::PowerMode::sample_power);
    const auto mid = render_enhanced_raw(pts, grid, 40.0, DecayConfig::PowerMode::sample_power);
    const auto sharp = render_enhanced_raw(pts, grid, 80.0, DecayConfig::PowerMode::sample_power);
    for (size_t i = 0; i < soft.size(); ++i) {
        CHECK(mid[i] <= soft[i]);
        CHECK(sharp[i] <= mid[i]);
    }
}

TEST_CASE("rendered channels are min-max normalized") {
    const auto pts = qpsk_cloud(400, 9);
    GridSpec grid = small_grid();
    DecayConfig decay;
    const Tensor img = render_rgb(pts, grid, decay);
    REQUIRE(img.shape == std::vector<int>{3, 32, 32});
    for (int ch = 0; ch < 3; ++ch) {
        float lo = 1e9f, hi = -1e9f;
        for (int i = 0; i < 32 * 32; ++i) {
            lo = std::min(lo, img.data[ch * 1024 + i]);
            hi = std::max(hi, img.data[ch * 1024 + i]);
        }
        CHECK(lo == 0.0f);
        CHECK(hi == doctest::Approx(1.0f).epsilon(1e-6));
    }
}

TEST_CASE("decay config rejects non-increasing alphas") {
    DecayConfig d;
    d.alphas = {40.0, 40.0, 80.0};
    CHECK_THROWS_AS(d.validate(), ConfigError);
    d.alphas = {-1.0, 2.0, 3.0};
    CHECK_THROWS_AS(d.validate(), ConfigError);
}

TEST_CASE("drop policy rejects a fully out-of-extent cloud") {
    GridSpec grid = small_grid();
    grid.clip = GridSpec::Clip::drop;
    const std::vector<cplx> pts = {{100.0, 0.0}, {0.0, -99.0}};
    CHECK_THROWS_AS(render_gray(pts, grid), DataError);
    CHECK_THROWS_AS(render_enhanced(pts, grid, 20.0), DataError);
}

TEST_CASE("clamp policy folds outliers onto the boundary") {
    GridSpec grid = small_grid();
    const std::vector<cplx> pts = {{100.0, 100.0}};
    const Tensor img = render_gray(pts, grid);
    CHECK(img.at(0, 31) == 1.0f);
}

TEST_CASE("rotating samples by 90 degrees rotates the image") {
    const auto pts = qpsk_cloud(200, 33);
    std::vector<cplx> rotated;
    rotated.reserve(pts.size());
    for (const auto& p : pts) rotated.push_back({-p.imag(), p.real()});

    GridSpec grid = small_grid();
    const auto base = render_enhanced_raw(pts, grid, 40.0, DecayConfig::PowerMode::unit);
    const auto rot = render_enhanced_raw(rotated, grid, 40.0, DecayConfig::PowerMode::unit);
    // counterclockwise rotation: pixel (r,c) -> (res-1-c, r)
    int mismatches = 0;
    for (int r = 0; r < 32; ++r) {
        for (int c = 0; c < 32; ++c) {
            const int64_t a = base[r * 32 + c];
            const int64_t b = rot[(31 - c) * 32 + r];
            // allow one-pixel aliasing: compare against the 3x3 neighborhood
            bool ok = a == b;
            for (int dr = -1; dr <= 1 && !ok; ++dr) {
                for (int dc = -1; dc <= 1 && !ok; ++dc) {
                    const int rr = 31 - c + dr, cc = r + dc;
                    if (rr < 0 || rr >= 32 || cc < 0 || cc >= 32) continue;
                    ok = a == rot[rr * 32 + cc];
                }
            }
            mismatches += !ok;
        }
    }
    CHECK(mismatches == 0);
}

TEST_CASE("ppm quantization rounds half up") {
    Tensor img({1, 2});
    img.data[0] = 0.5f;  // 127.5 -> 128
    img.data[1] = 1.0f;
    const std::string bytes = ppm_bytes(img);
    const std::string header = "P6\n2 1\n255\n";
    REQUIRE(bytes.size() == header.size() + 6);
    CHECK(bytes.substr(0, header.size()) == header);
    CHECK(static_cast<uint8_t>(bytes[header.size()]) == 128);
    CHECK(static_cast<uint8_t>(bytes[header.size() + 3]) == 255);
}

TEST_CASE("golden ppm renders are byte identical across runs") {
    const auto pts = qpsk_cloud(800, 4242);
    GridSpec grid = small_grid();
    DecayConfig decay;

    const std::string rgb_now = ppm_bytes(render_rgb(pts, grid, decay));
    const std::string rgb_again = ppm_bytes(render_rgb(pts, grid, decay));
    CHECK(rgb_now == rgb_again);

    const std::string gray_now = ppm_bytes(render_gray(pts, grid));

    // DENOMAE_WRITE_GOLDENS=1 refreshes the checked-in fixtures.
    if (std::getenv("DENOMAE_WRITE_GOLDENS")) {
        std::ofstream(testutil::data_dir() / "golden_qpsk_rgb32.ppm", std::ios::binary)
            << rgb_now;
        std::ofstream(testutil::data_dir() / "golden_qpsk_gray32.ppm", std::ios::binary)
            << gray_now;
    }
    auto read_golden = [](const char* name) {
        std::ifstream f(testutil::data_dir() / name, std::ios::binary);
        REQUIRE_MESSAGE(f.good(), "missing golden file; run once with DENOMAE_WRITE_GOLDENS=1");
        return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    };
    CHECK(rgb_now == read_golden("golden_qpsk_rgb32.ppm"));
    CHECK(gray_now == read_golden("golden_qpsk_gray32.ppm"));
}
