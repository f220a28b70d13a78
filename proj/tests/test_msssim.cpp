#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "memmc/msssim.hpp"
#include "test_util.hpp"

using namespace memmc;
using namespace testutil;

namespace {

Mat<float> random_plane(Index h, Index w, Rng& rng) {
    Mat<float> m(h, w);
    for (Index r = 0; r < h; ++r) {
        for (Index c = 0; c < w; ++c) m(r, c) = static_cast<float>(rng.uniform());
    }
    return m;
}

// Straight-line single-scale SSIM with a non-separable 2-D Gaussian window,
// written independently of the library's separable filtering path.
double naive_ssim(const Mat<float>& a, const Mat<float>& b, int win, double sigma, double c1,
                  double c2) {
    const Index oh = a.rows() - win + 1;
    const Index ow = a.cols() - win + 1;
    std::vector<std::vector<double>> kernel(static_cast<std::size_t>(win),
                                            std::vector<double>(static_cast<std::size_t>(win)));
    double ksum = 0.0;
    const double center = 0.5 * (win - 1);
    for (int i = 0; i < win; ++i) {
        for (int j = 0; j < win; ++j) {
            const double d2 = (i - center) * (i - center) + (j - center) * (j - center);
            kernel[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] =
                std::exp(-d2 / (2.0 * sigma * sigma));
            ksum += kernel[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
        }
    }
    for (auto& row : kernel) {
        for (double& v : row) v /= ksum;
    }

    double cs_total = 0.0;
    double lum_total = 0.0;
    for (Index r = 0; r < oh; ++r) {
        for (Index c = 0; c < ow; ++c) {
            double ma = 0, mb = 0, aa = 0, bb = 0, ab = 0;
            for (int i = 0; i < win; ++i) {
                for (int j = 0; j < win; ++j) {
                    const double k = kernel[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
                    const double va = a(r + i, c + j);
                    const double vb = b(r + i, c + j);
                    ma += k * va;
                    mb += k * vb;
                    aa += k * va * va;
                    bb += k * vb * vb;
                    ab += k * va * vb;
                }
            }
            const double var_a = std::max(0.0, aa - ma * ma);
            const double var_b = std::max(0.0, bb - mb * mb);
            const double cov = ab - ma * mb;
            cs_total += std::clamp((2 * cov + c2) / (var_a + var_b + c2), 0.0, 1.0);
            lum_total += std::clamp((2 * ma * mb + c1) / (ma * ma + mb * mb + c1), 0.0, 1.0);
        }
    }
    const double n = static_cast<double>(oh * ow);
    return (cs_total / n) * (lum_total / n);
}

}  // namespace

TEST_CASE("identical images score exactly one") {
    Rng rng(3);
    MsSsimParams p;
    Mat<float> x = random_plane(48, 48, rng);
    CHECK(ms_ssim(x, x, p) == 1.0);

    Image<float> img = random_image<float>(48, 48, 3, rng);
    CHECK(ms_ssim(img, img, p) == 1.0);
}

TEST_CASE("the similarity is symmetric bit for bit") {
    Rng rng(4);
    MsSsimParams p;
    for (int t = 0; t < 5; ++t) {
        Mat<float> a = random_plane(48, 48, rng);
        Mat<float> b = random_plane(48, 48, rng);
        CHECK(ms_ssim(a, b, p) == ms_ssim(b, a, p));
    }
}

TEST_CASE("scores stay inside the unit interval and only identity reaches one") {
    Rng rng(5);
    MsSsimParams p;
    for (int t = 0; t < 10; ++t) {
        Mat<float> a = random_plane(48, 48, rng);
        Mat<float> b = random_plane(48, 48, rng);
        const double v = ms_ssim(a, b, p);
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
        CHECK(v < 1.0 - 1e-9);  // independent noise is never a perfect match
    }
    Mat<float> zeros = Mat<float>::Zero(48, 48);
    Mat<float> ones = Mat<float>::Ones(48, 48);
    const double v = ms_ssim(zeros, ones, p);
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
    CHECK(v < 0.01);  // constant black vs white: luminance term ~ c1
}

TEST_CASE("constant images reduce to the closed-form luminance term") {
    MsSsimParams p;
    auto lum = [&p](double v1, double v2) {
        return (2.0 * v1 * v2 + p.c1) / (v1 * v1 + v2 * v2 + p.c1);
    };
    for (auto [v1, v2] : std::vector<std::pair<double, double>>{
             {0.3, 0.7}, {0.1, 0.9}, {0.5, 0.6}, {0.0, 1.0}}) {
        Mat<float> a = Mat<float>::Constant(48, 48, static_cast<float>(v1));
        Mat<float> b = Mat<float>::Constant(48, 48, static_cast<float>(v2));
        CHECK(ms_ssim(a, b, p) == doctest::Approx(lum(v1, v2)).epsilon(1e-6));
    }
}

TEST_CASE("single scale matches a naive windowed reimplementation") {
    Rng rng(6);
    MsSsimParams p;
    p.scales = 1;
    p.weights = {1.0};
    Mat<float> a = random_plane(20, 24, rng);
    Mat<float> b = a;
    // Perturb one region so the comparison is not trivially 1.
    for (Index r = 4; r < 10; ++r) {
        for (Index c = 6; c < 12; ++c) b(r, c) = static_cast<float>(rng.uniform());
    }
    const double got = ms_ssim(a, b, p);
    const double want = naive_ssim(a, b, p.window_side, p.sigma, p.c1, p.c2);
    CHECK(got == doctest::Approx(want).epsilon(1e-9));
    CHECK(naive_ssim(a, a, p.window_side, p.sigma, p.c1, p.c2) == doctest::Approx(1.0));
}

TEST_CASE("corrupting a region lowers the score") {
    Rng rng(7);
    MsSsimParams p;
    Mat<float> base = random_plane(48, 48, rng);
    // Smooth it so the comparison image has learnable structure.
    Mat<float> smooth = Mat<float>::Zero(48, 48);
    for (Index r = 1; r < 47; ++r) {
        for (Index c = 1; c < 47; ++c) {
            smooth(r, c) = (base(r - 1, c) + base(r + 1, c) + base(r, c - 1) + base(r, c + 1) +
                            base(r, c)) /
                           5.0f;
        }
    }
    Mat<float> corrupted = smooth;
    for (Index r = 16; r < 32; ++r) {
        for (Index c = 16; c < 32; ++c) corrupted(r, c) = static_cast<float>(rng.uniform());
    }
    CHECK(ms_ssim(smooth, corrupted, p) < ms_ssim(smooth, smooth, p));
    CHECK(ms_ssim(smooth, corrupted, p) < 0.95);
}

TEST_CASE("multi-channel scores are the channel mean") {
    Rng rng(8);
    MsSsimParams p;
    Image<float> a(48, 48, 2);
    Image<float> b(48, 48, 2);
    a.planes[0] = random_plane(48, 48, rng);
    b.planes[0] = a.planes[0];  // identical channel scores 1
    a.planes[1] = random_plane(48, 48, rng);
    b.planes[1] = random_plane(48, 48, rng);
    const double single = ms_ssim(a.planes[1], b.planes[1], p);
    CHECK(ms_ssim(a, b, p) == doctest::Approx(0.5 * (1.0 + single)).epsilon(1e-12));
}

TEST_CASE("window and scale adaptation fits small regions") {
    MsSsimParams p;

    MsSsimParams big = adapt_msssim(p, 64, 64);
    CHECK(big.scales == 3);
    CHECK(big.window_side == 11);

    MsSsimParams mid = adapt_msssim(p, 24, 24);
    CHECK(mid.scales == 2);  // 24 -> 12 fits an 11-window, 6 does not
    CHECK(mid.window_side == 11);
    CHECK(mid.weights.size() == 2);
    CHECK(mid.weights[0] + mid.weights[1] == doctest::Approx(1.0).epsilon(1e-12));

    MsSsimParams small = adapt_msssim(p, 6, 6);
    CHECK(small.scales == 1);
    CHECK(small.window_side == 6);
    CHECK(small.sigma == doctest::Approx(1.5 * 6.0 / 11.0).epsilon(1e-12));
    CHECK(small.weights.size() == 1);
    CHECK(small.weights[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK_NOTHROW(small.validate());

    Rng rng(9);
    Mat<float> a = random_plane(6, 6, rng);
    Mat<float> b = random_plane(6, 6, rng);
    const double v = ms_ssim(a, b, small);
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
    CHECK(ms_ssim(a, a, small) == 1.0);

    CHECK_THROWS_AS(adapt_msssim(p, 1, 20), ShapeError);
}

TEST_CASE("shape and parameter validation") {
    Rng rng(10);
    MsSsimParams p;
    Mat<float> a = random_plane(48, 48, rng);
    Mat<float> b = random_plane(48, 40, rng);
    CHECK_THROWS_AS(ms_ssim(a, b, p), ShapeError);

    // 32 halves to 8 at the third scale, below the 11-pixel window.
    Mat<float> small_a = random_plane(32, 32, rng);
    CHECK_THROWS_AS(ms_ssim(small_a, small_a, p), ShapeError);

    Mat<float> empty;
    CHECK_THROWS_AS(ms_ssim(empty, empty, p), ShapeError);

    Image<float> i2(48, 48, 2), i3(48, 48, 3);
    CHECK_THROWS_AS(ms_ssim(i2, i3, p), ShapeError);

    auto bad = [&a](auto mutate) {
        MsSsimParams q;
        mutate(q);
        CHECK_THROWS_AS(ms_ssim(a, a, q), ValueError);
    };
    bad([](MsSsimParams& q) { q.scales = 0; });
    bad([](MsSsimParams& q) { q.weights = {0.5, 0.5}; });
    bad([](MsSsimParams& q) { q.weights = {0.5, 0.6, -0.1}; });
    bad([](MsSsimParams& q) { q.weights = {0.5, 0.3, 0.3}; });
    bad([](MsSsimParams& q) { q.window_side = 1; });
    bad([](MsSsimParams& q) { q.sigma = 0.0; });
    bad([](MsSsimParams& q) { q.c1 = 0.0; });
    bad([](MsSsimParams& q) { q.c2 = -1.0; });

    CHECK_THROWS_AS(default_msssim_weights(0), ValueError);
    CHECK_THROWS_AS(default_msssim_weights(6), ValueError);
    CHECK(default_msssim_weights(5).size() == 5);
}
