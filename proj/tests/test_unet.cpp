#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "stagecache/unet.hpp"
#include "test_util.hpp"

using namespace stagecache;
using namespace stagecache::testing;

namespace {

UNetConfig small_config() {
    UNetConfig cfg;
    cfg.depth = 3;
    cfg.base_channels = 8;
    cfg.kernel = 3;
    cfg.cache_depth = 0;
    cfg.in_channels = 4;
    cfg.weight_seed = 1234;
    return cfg;
}

// Independent MAC arithmetic: k^2 * c_in * c_out * h * w per block, summed
// over the blocks the mode executes.
int64_t mac_oracle(const UNetConfig& cfg, const Shape5& in, ForwardMode mode) {
    const int64_t bt = in.b * in.t;
    const int64_t k2 = cfg.kernel * cfg.kernel;
    auto conv = [&](int64_t ci, int64_t co, int64_t div) {
        return bt * k2 * ci * co * (in.h / div) * (in.w / div);
    };
    const int64_t M = cfg.depth;
    const int64_t m = cfg.cache_depth;
    auto ch = [&](int64_t level) { return cfg.base_channels << level; };
    int64_t total = conv(cfg.in_channels, ch(0), 1);  // stem
    total += conv(ch(0), ch(0), 1);                   // d0
    const int64_t deepest_d = mode == ForwardMode::Full ? M - 1 : m;
    for (int64_t i = 1; i <= deepest_d; ++i) total += conv(ch(i - 1), ch(i), 1 << i);
    if (mode == ForwardMode::Full) total += conv(ch(M - 1), ch(M - 1), 1 << M);  // mid
    const int64_t top_u = mode == ForwardMode::Full ? M - 1 : m;
    for (int64_t i = top_u; i >= 0; --i) {
        const int64_t c_next = (i + 1 == M) ? ch(M - 1) : ch(i + 1);
        total += conv(ch(i) + c_next, ch(i), 1 << i);
    }
    total += conv(ch(0), cfg.in_channels, 1);  // head
    return total;
}

}  // namespace

TEST_CASE("init_weights: determinism, distinctness, fan-in scaling") {
    const UNetConfig cfg = small_config();
    const UNetWeights w1 = init_weights(cfg);
    const UNetWeights w2 = init_weights(cfg);
    CHECK(w1.banks.size() == w2.banks.size());
    for (size_t i = 0; i < w1.banks.size(); ++i) CHECK(w1.banks[i].taps == w2.banks[i].taps);

    UNetConfig other = cfg;
    other.weight_seed = 999;
    const UNetWeights w3 = init_weights(other);
    CHECK(w1.banks[0].taps != w3.banks[0].taps);

    // d0 is a 3x3, c_in = 8 bank: tap variance should sit near 1/72.
    size_t d0 = 0;
    for (size_t i = 0; i < w1.block_names.size(); ++i)
        if (w1.block_names[i] == "d0") d0 = i;
    double sum = 0, sq = 0;
    for (float v : w1.banks[d0].taps) {
        sum += v;
        sq += static_cast<double>(v) * v;
    }
    const double n = static_cast<double>(w1.banks[d0].taps.size());
    const double var = sq / n - (sum / n) * (sum / n);
    CHECK(var > (1.0 / 72.0) * 0.7);
    CHECK(var < (1.0 / 72.0) * 1.3);
}

TEST_CASE("forward_full: shape, determinism, conditioning effect") {
    FreshLedger fx;
    const UNetConfig cfg = small_config();
    const UNetWeights w = init_weights(cfg);
    Tensor5 x = randn({2, 2, 4, 16, 16}, 5);

    FullForwardResult a = forward_full(x, 10, w, cfg);
    CHECK(a.eps.shape() == x.shape());
    FullForwardResult b = forward_full(x, 10, w, cfg);
    CHECK(bytes_equal(a.eps, b.eps));
    CHECK(bytes_equal(a.deep.u_next, b.deep.u_next));

    FullForwardResult c = forward_full(x, 25, w, cfg);
    CHECK(max_abs_diff(a.eps, c.eps) > 0.0f);  // timestep conditioning matters
}

TEST_CASE("forward rejects bad inputs") {
    FreshLedger fx;
    const UNetConfig cfg = small_config();
    const UNetWeights w = init_weights(cfg);
    CHECK_THROWS_AS((forward_full(randn({1, 1, 3, 16, 16}, 1), 0, w, cfg)), ShapeError);
    CHECK_THROWS_AS((forward_full(randn({1, 1, 4, 12, 12}, 1), 0, w, cfg)), ConfigError);
    Tensor5 bad = randn({1, 1, 4, 16, 16}, 1);
    bad.at(0, 0, 0, 0, 0) = std::numeric_limits<float>::infinity();
    CHECK_THROWS_AS((forward_full(bad, 0, w, cfg)), ShapeError);
}

TEST_CASE("cache seam exactness: same-step deep features reproduce forward_full") {
    FreshLedger fx;
    for (int64_t m = 0; m < 3; ++m) {
        UNetConfig cfg = small_config();
        cfg.cache_depth = m;
        const UNetWeights w = init_weights(cfg);
        Tensor5 x = randn({2, 2, 4, 16, 16}, 7 + static_cast<uint64_t>(m));
        FullForwardResult full = forward_full(x, 12, w, cfg);
        Tensor5 eps2 = forward_cached(x, 12, w, cfg, std::move(full.deep));
        CHECK(bytes_equal(full.eps, eps2));
    }
}

TEST_CASE("stale deep features stay finite and geometry is checked") {
    FreshLedger fx;
    const UNetConfig cfg = small_config();
    const UNetWeights w = init_weights(cfg);
    Tensor5 x1 = randn({1, 2, 4, 16, 16}, 31);
    Tensor5 x2 = randn({1, 2, 4, 16, 16}, 32);

    FullForwardResult at_x1 = forward_full(x1, 20, w, cfg);
    FullForwardResult at_x2 = forward_full(x2, 18, w, cfg);
    Tensor5 approx = forward_cached(x2, 18, w, cfg, std::move(at_x1.deep));
    CHECK(all_finite(approx));
    CHECK(max_abs_diff(approx, at_x2.eps) > 0.0f);  // it is an approximation

    DeepFeatures wrong;
    wrong.u_next = randn({1, 2, 4, 16, 16}, 33);  // not the seam geometry
    CHECK_THROWS_AS((forward_cached(x2, 18, w, cfg, std::move(wrong))), ShapeError);
}

TEST_CASE("skip accounting: executed block sets partition") {
    FreshLedger fx;
    UNetConfig cfg = small_config();
    cfg.cache_depth = 1;
    const UNetWeights w = init_weights(cfg);
    Tensor5 x = randn({1, 1, 4, 16, 16}, 3);

    ForwardStats full_stats;
    FullForwardResult full = forward_full(x, 5, w, cfg, nullptr, &full_stats);
    ForwardStats cached_stats;
    Tensor5 eps = forward_cached(x, 5, w, cfg, std::move(full.deep), nullptr, &cached_stats);

    const auto full_names = executed_block_names(cfg, ForwardMode::Full);
    const auto cached_names = executed_block_names(cfg, ForwardMode::Cached);
    CHECK(full_stats.executed_blocks == full_names);
    CHECK(cached_stats.executed_blocks == cached_names);

    // Deep blocks never run on a cached call.
    for (const char* deep : {"d2", "mid", "u2"}) {
        CHECK(full_stats.ran(deep));
        CHECK_FALSE(cached_stats.ran(deep));
    }
    // The union with {stem, d0, d1, u1, u0, head} is exactly the full set.
    std::vector<std::string> uni = cached_names;
    for (const char* deep : {"d2", "mid", "u2"}) uni.push_back(deep);
    CHECK(uni.size() == full_names.size());
}

TEST_CASE("flops_estimate matches the closed-form oracle and runtime counter") {
    FreshLedger fx;
    const UNetConfig cfg = small_config();
    const Shape5 in{2, 4, 4, 16, 16};

    const int64_t full_est = flops_estimate(cfg, in, ForwardMode::Full);
    const int64_t cached_est = flops_estimate(cfg, in, ForwardMode::Cached);
    CHECK(full_est == mac_oracle(cfg, in, ForwardMode::Full));
    CHECK(cached_est == mac_oracle(cfg, in, ForwardMode::Cached));
    CHECK(cached_est < full_est);

    const UNetWeights w = init_weights(cfg);
    Tensor5 x = randn(in, 17);
    ForwardStats fs;
    FullForwardResult full = forward_full(x, 2, w, cfg, nullptr, &fs);
    CHECK(fs.macs == full_est);
    ForwardStats cs;
    forward_cached(x, 2, w, cfg, std::move(full.deep), nullptr, &cs);
    CHECK(cs.macs == cached_est);
}

TEST_CASE("flops_estimate: depth 1 cached skips only the mid block") {
    UNetConfig cfg = small_config();
    cfg.depth = 1;
    cfg.cache_depth = 0;
    const Shape5 in{1, 1, 4, 8, 8};
    const auto full_names = executed_block_names(cfg, ForwardMode::Full);
    const auto cached_names = executed_block_names(cfg, ForwardMode::Cached);
    CHECK(full_names == std::vector<std::string>{"stem", "d0", "mid", "u0", "head"});
    CHECK(cached_names == std::vector<std::string>{"stem", "d0", "u0", "head"});
    const int64_t diff = flops_estimate(cfg, in, ForwardMode::Full) -
                         flops_estimate(cfg, in, ForwardMode::Cached);
    // mid: k^2 * c * c at the h/2 scale.
    CHECK(diff == 9 * 8 * 8 * 4 * 4);
}

TEST_CASE("cached MACs equal analytic values with chunked execution") {
    FreshLedger fx;
    const UNetConfig cfg = small_config();
    const UNetWeights w = init_weights(cfg);
    ChunkSpec spec;
    spec.eta = 2;
    spec.omega = 2;
    spec.halo = HaloMode::exact();
    spec.targets = {"u0"};
    Tensor5 x = randn({2, 2, 4, 16, 16}, 19);

    ForwardStats fs;
    FullForwardResult full = forward_full(x, 3, w, cfg, &spec, &fs);
    CHECK(fs.macs == flops_estimate(cfg, x.shape(), ForwardMode::Full));

    // And the chunked forward is bit-identical to the unchunked one.
    FullForwardResult plain = forward_full(x, 3, w, cfg);
    CHECK(bytes_equal(full.eps, plain.eps));
    CHECK(bytes_equal(full.deep.u_next, plain.deep.u_next));
}

TEST_CASE("cache_feature_shape follows the level geometry") {
    UNetConfig cfg = small_config();
    const Shape5 in{2, 8, 4, 64, 64};
    cfg.cache_depth = 2;  // deepest level of a depth-3 net
    const Shape5 deep = cache_feature_shape(cfg, in);
    CHECK(deep == Shape5{2, 8, 32, 16, 16});
    CHECK(deep.bytes() == 2 * 8 * 32 * 16 * 16 * 4);

    cfg.cache_depth = 0;
    CHECK(cache_feature_shape(cfg, in) == Shape5{2, 8, 16, 64, 64});
}
