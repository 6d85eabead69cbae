#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "stagecache/metrics.hpp"
#include "test_util.hpp"

using namespace stagecache;
using namespace stagecache::testing;

TEST_CASE("psnr: cap and closed-form offsets") {
    FreshLedger fx;
    Tensor5 a = randn({1, 1, 1, 8, 8}, 1);
    CHECK(psnr(a, a, 1.0) == kPsnrCap);

    // Constant offset d on range 1: MSE = d^2, PSNR = 10 log10(1 / d^2).
    Tensor5 z = zeros({1, 1, 1, 8, 8});
    Tensor5 off1 = full({1, 1, 1, 8, 8}, 0.1f);
    CHECK(psnr(z, off1, 1.0) == doctest::Approx(20.0).epsilon(1e-6));
    Tensor5 off2 = full({1, 1, 1, 8, 8}, 0.2f);
    CHECK(psnr(z, off2, 1.0) == doctest::Approx(10.0 * std::log10(1.0 / 0.04)).epsilon(1e-6));

    CHECK_THROWS_AS((psnr(a, zeros({1, 1, 1, 8, 9}), 1.0)), ShapeError);
    CHECK_THROWS_AS((psnr(a, a, 0.0)), ConfigError);
}

TEST_CASE("psnr monotonicity under paired noise scaling") {
    FreshLedger fx;
    Tensor5 a = randn({1, 1, 1, 16, 16}, 5);
    Tensor5 n = randn({1, 1, 1, 16, 16}, 6);
    double prev = kPsnrCap;
    for (float sigma : {0.01f, 0.02f, 0.05f, 0.1f, 0.3f}) {
        Tensor5 b = linear(1.0f, a, sigma, n);
        const double v = psnr(a, b, 1.0);
        CHECK(v < prev);
        prev = v;
    }
}

TEST_CASE("ssim: self-similarity, anti-correlation, degenerate constants") {
    FreshLedger fx;
    Tensor5 a = randn({1, 1, 1, 16, 16}, 11);
    CHECK(ssim(a, a, 1.0) == doctest::Approx(1.0).epsilon(1e-12));

    // b = -a on a zero-mean pattern: the covariance term flips the sign.
    // A checkerboard keeps every local window mean near zero so the
    // luminance factor stays positive.
    Tensor5 cb = zeros({1, 1, 1, 16, 16});
    for (int64_t y = 0; y < 16; ++y)
        for (int64_t x = 0; x < 16; ++x)
            cb.at(0, 0, 0, y, x) = ((y + x) % 2 == 0) ? 0.1f : -0.1f;
    Tensor5 b = scale(cb, -1.0f);
    CHECK(ssim(cb, b, 1.0) < 0.0);

    Tensor5 c1 = full({1, 1, 1, 8, 8}, 0.4f);
    Tensor5 c2 = full({1, 1, 1, 8, 8}, 0.4f);
    CHECK(ssim(c1, c2, 1.0) == doctest::Approx(1.0).epsilon(1e-12));

    CHECK_THROWS_AS((ssim(zeros({1, 1, 1, 6, 8}), zeros({1, 1, 1, 6, 8}), 1.0)), ShapeError);
}

TEST_CASE("ssim symmetry") {
    FreshLedger fx;
    Tensor5 a = randn({1, 1, 2, 12, 12}, 21);
    Tensor5 b = randn({1, 1, 2, 12, 12}, 22);
    CHECK(std::abs(ssim(a, b, 1.0) - ssim(b, a, 1.0)) < 1e-9);
}

TEST_CASE("video_series: locality and aggregate consistency") {
    FreshLedger fx;
    Tensor5 a = randn({1, 5, 2, 8, 8}, 31);
    Tensor5 same = a.clone();
    MetricSeries caps = video_series(&psnr, a, same, 1.0);
    for (double v : caps.per_frame) CHECK(v == kPsnrCap);

    Tensor5 b = a.clone();
    b.at(0, 3, 0, 4, 4) += 0.5f;  // perturb frame 3 only
    MetricSeries s = video_series(&psnr, a, b, 1.0);
    for (int64_t t = 0; t < 5; ++t) {
        if (t == 3) CHECK(s.per_frame[static_cast<size_t>(t)] < kPsnrCap);
        else CHECK(s.per_frame[static_cast<size_t>(t)] == kPsnrCap);
    }

    double mean = 0;
    for (double v : s.per_frame) mean += v;
    mean /= static_cast<double>(s.per_frame.size());
    CHECK(std::abs(s.mean - mean) < 1e-9);
    CHECK(s.min <= s.mean);
    CHECK(s.mean <= s.max);

    CHECK_THROWS_AS((video_series(&psnr, a, randn({1, 4, 2, 8, 8}, 1), 1.0)), ShapeError);
}

TEST_CASE("metrics csv layout") {
    FreshLedger fx;
    const auto dir = std::filesystem::temp_directory_path() / "sc_metrics_test";
    std::filesystem::create_directories(dir);
    const std::string path = (dir / "metrics.csv").string();

    Tensor5 a = randn({1, 3, 1, 8, 8}, 41);
    Tensor5 b = randn({1, 3, 1, 8, 8}, 42);
    const MetricSeries ps = video_series(&psnr, a, b, 1.0);
    const MetricSeries ss = video_series(&ssim, a, b, 1.0);
    write_metrics_csv(path, ps, ss);

    std::ifstream is(path);
    std::string line;
    std::getline(is, line);
    CHECK(line == "frame_index,psnr,ssim");
    int rows = 0;
    while (std::getline(is, line))
        if (!line.empty()) rows++;
    CHECK(rows == 3);
}
