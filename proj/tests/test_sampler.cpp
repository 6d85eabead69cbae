#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "stagecache/rng.hpp"
#include "stagecache/sampler.hpp"
#include "test_util.hpp"

using namespace stagecache;
using namespace stagecache::testing;

TEST_CASE("linear schedule construction") {
    const NoiseSchedule one = make_linear_schedule(1, 0.01, 0.02);
    CHECK(one.steps() == 1);
    CHECK(one.betas[0] == doctest::Approx(0.01));

    // Constant beta: closed form alpha_bar_t = (1 - beta)^(t+1).
    const double beta = 0.05;
    const NoiseSchedule c = make_linear_schedule(12, beta, beta);
    for (int64_t t = 0; t < 12; ++t)
        CHECK(c.alpha_bars[t] == doctest::Approx(std::pow(1.0 - beta, t + 1)).epsilon(1e-12));

    CHECK_THROWS_AS((make_linear_schedule(10, 0.01, 1.0)), ConfigError);
    CHECK_THROWS_AS((make_linear_schedule(0, 0.01, 0.02)), ConfigError);
}

TEST_CASE("schedule monotonicity and signal/noise normalization") {
    const NoiseSchedule s = make_linear_schedule(50, 0.002, 0.25);
    for (int64_t t = 0; t < s.steps(); ++t) {
        if (t > 0) CHECK(s.alpha_bars[t] < s.alpha_bars[t - 1]);
        const double a = std::sqrt(s.alpha_bars[t]);
        const double b = std::sqrt(1.0 - s.alpha_bars[t]);
        CHECK(std::abs(a * a + b * b - 1.0) < 1e-6);
    }
}

TEST_CASE("spaced schedule endpoints and consistency") {
    const NoiseSchedule full = make_linear_schedule(50, 0.002, 0.25);
    const SampledSchedule sub = spaced_schedule(full, 25);
    CHECK(sub.schedule.steps() == 25);
    CHECK(sub.source_timestep.front() == 0);
    CHECK(sub.source_timestep.back() == 49);
    CHECK(sub.schedule.alpha_bars[24] == doctest::Approx(full.alpha_bars[49]).epsilon(1e-12));
    CHECK_NOTHROW(sub.schedule.validate());
    CHECK_THROWS_AS((spaced_schedule(full, 51)), ConfigError);
}

TEST_CASE("forward_noise basics") {
    FreshLedger fx;
    const NoiseSchedule tiny = make_linear_schedule(4, 1e-9, 1e-9);
    Tensor5 x0 = randn({1, 1, 1, 4, 4}, 1);
    Tensor5 eps = randn({1, 1, 1, 4, 4}, 2);

    // eps = 0 leaves sqrt(abar_t) x0.
    const NoiseSchedule s = make_linear_schedule(10, 0.01, 0.2);
    Tensor5 scaled = forward_noise(x0, 3, zeros(x0.shape()), s);
    Tensor5 ref = scale(x0, static_cast<float>(std::sqrt(s.alpha_bars[3])));
    CHECK(max_abs_diff(scaled, ref) < 1e-7f);

    // Small-noise limit: with beta ~ 1e-9 at t = 0, x_t stays near x0.
    Tensor5 xt = forward_noise(x0, 0, eps, tiny);
    const double bound = std::sqrt(1.0 - tiny.alpha_bars[0]);
    CHECK(max_abs_diff(xt, x0) <= 4.0 * bound + 1e-6);

    CHECK_THROWS_AS((forward_noise(x0, 10, eps, s)), ConfigError);
}

TEST_CASE("forward_noise Monte-Carlo variance over seeds") {
    FreshLedger fx;
    const NoiseSchedule s = make_linear_schedule(10, 0.02, 0.3);
    const int64_t t = 6;
    Tensor5 x0 = full({1, 1, 1, 4, 4}, 0.25f);
    const int runs = 1000;
    // Variance of each element over seeds should approach 1 - abar_t.
    double sum = 0, sq = 0;
    int64_t count = 0;
    for (int r = 0; r < runs; ++r) {
        Tensor5 eps = randn(x0.shape(), 5000 + static_cast<uint64_t>(r));
        Tensor5 xt = forward_noise(x0, t, eps, s);
        for (int64_t i = 0; i < xt.elems(); ++i) {
            sum += xt.data()[i];
            sq += static_cast<double>(xt.data()[i]) * xt.data()[i];
            count++;
        }
    }
    const double mean = sum / count;
    const double var = sq / count - mean * mean;
    const double want = 1.0 - s.alpha_bars[t];
    CHECK(std::abs(var - want) < 0.1 * want);
}

TEST_CASE("ancestral step inverts forward noising as beta -> 0") {
    FreshLedger fx;
    const NoiseSchedule tiny = make_linear_schedule(10, 1e-10, 1e-10);
    Tensor5 x0 = randn({1, 1, 1, 6, 6}, 11);
    Tensor5 eps = randn({1, 1, 1, 6, 6}, 12);
    Tensor5 x5 = forward_noise(x0, 5, eps, tiny);
    Tensor5 x4_true = forward_noise(x0, 4, eps, tiny);
    Tensor5 x4 = reverse_step_ancestral(x5, 5, eps, tiny, 77);
    CHECK(max_abs_diff(x4, x4_true) < 1e-4f);
}

TEST_CASE("ancestral step: t = 0 adds no noise, fixed seed reproduces") {
    FreshLedger fx;
    const NoiseSchedule s = make_linear_schedule(10, 0.01, 0.2);
    Tensor5 x = randn({1, 1, 1, 4, 4}, 3);
    Tensor5 eps = randn(x.shape(), 4);

    Tensor5 a = reverse_step_ancestral(x, 0, eps, s, 123);
    const double mx = 1.0 / std::sqrt(s.alphas[0]);
    const double me = -mx * (1.0 - s.alphas[0]) / std::sqrt(1.0 - s.alpha_bars[0]);
    Tensor5 mean = linear(static_cast<float>(mx), x, static_cast<float>(me), eps);
    CHECK(bytes_equal(a, mean));

    Tensor5 r1 = reverse_step_ancestral(x, 5, eps, s, 99);
    Tensor5 r2 = reverse_step_ancestral(x, 5, eps, s, 99);
    CHECK(bytes_equal(r1, r2));
    Tensor5 r3 = reverse_step_ancestral(x, 5, eps, s, 100);
    CHECK_FALSE(bytes_equal(r1, r3));
}

TEST_CASE("ddim reconstructs x0 when eps is exact") {
    FreshLedger fx;
    const NoiseSchedule s = make_linear_schedule(10, 0.01, 0.2);
    Tensor5 x0 = randn({1, 1, 2, 4, 4}, 21);
    Tensor5 eps = randn(x0.shape(), 22);

    // Algebraic oracle: x0_hat = (x_t - sqrt(1-abar) eps) / sqrt(abar).
    const int64_t t = 7;
    Tensor5 xt = forward_noise(x0, t, eps, s);
    const double abar = s.alpha_bars[t];
    Tensor5 x0_hat = linear(static_cast<float>(1.0 / std::sqrt(abar)), xt,
                            static_cast<float>(-std::sqrt(1.0 - abar) / std::sqrt(abar)), eps);
    CHECK(max_abs_diff(x0_hat, x0) < 1e-4f);

    // The t = 0 DDIM update lands on x0_hat exactly (abar_prev = 1).
    Tensor5 xt0 = forward_noise(x0, 0, eps, s);
    Tensor5 rec = reverse_step_ddim(xt0, 0, eps, s);
    CHECK(max_abs_diff(rec, x0) < 1e-4f);

    Tensor5 d1 = reverse_step_ddim(xt, t, eps, s);
    Tensor5 d2 = reverse_step_ddim(xt, t, eps, s);
    CHECK(bytes_equal(d1, d2));
}

TEST_CASE("euler step: drift only under zero eps") {
    FreshLedger fx;
    const NoiseSchedule s = make_linear_schedule(10, 0.01, 0.2);
    Tensor5 x = full({1, 1, 1, 3, 3}, 2.0f);
    Tensor5 out = reverse_step_euler(x, 4, zeros(x.shape()), s);
    const float drift = static_cast<float>(2.0 - std::sqrt(s.alphas[4]));
    for (int64_t i = 0; i < out.elems(); ++i)
        CHECK(out.data()[i] == doctest::Approx(2.0f * drift).epsilon(1e-6));

    Tensor5 e1 = reverse_step_euler(x, 4, x, s);
    Tensor5 e2 = reverse_step_euler(x, 4, x, s);
    CHECK(bytes_equal(e1, e2));
}

TEST_CASE("cfg_combine") {
    FreshLedger fx;
    Tensor5 u = randn({1, 1, 1, 4, 4}, 31);
    Tensor5 c = randn({1, 1, 1, 4, 4}, 32);

    CHECK(bytes_equal(cfg_combine({u, c, 0.0}), u));
    CHECK(bytes_equal(cfg_combine({u, c, 1.0}), c));

    Tensor5 zu = zeros({1, 1, 1, 2, 2});
    Tensor5 oc = full({1, 1, 1, 2, 2}, 1.0f);
    Tensor5 two = cfg_combine({zu, oc, 2.0});
    for (int64_t i = 0; i < two.elems(); ++i) CHECK(two.data()[i] == 2.0f);

    CHECK_THROWS_AS((cfg_combine({u, zeros({1, 1, 1, 4, 5}), 1.0})), ShapeError);
}

TEST_CASE("cfg_combine is affine in the guidance scale") {
    FreshLedger fx;
    Tensor5 u = randn({1, 2, 2, 4, 4}, 41);
    Tensor5 c = randn({1, 2, 2, 4, 4}, 42);
    const double g1 = 0.7, g2 = 2.3;
    Tensor5 lhs = add(cfg_combine({u, c, g1}), cfg_combine({u, c, g2}));
    Tensor5 rhs = scale(cfg_combine({u, c, (g1 + g2) / 2.0}), 2.0f);
    CHECK(max_abs_diff(lhs, rhs) < 1e-6f);
}
