#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "stagecache/rng.hpp"
#include "stagecache/tensor.hpp"
#include "test_util.hpp"

using namespace stagecache;
using namespace stagecache::testing;

TEST_CASE("shape validation") {
    CHECK_THROWS_AS((Shape5{1, 1, 1, 0, 2}.validate()), ShapeError);
    CHECK_THROWS_AS((zeros({1, 1, 1, 0, 2})), ShapeError);
    CHECK_THROWS_AS((Shape5{1 << 20, 1 << 20, 1 << 20, 1 << 20, 4}.validate()), ShapeError);
    CHECK_NOTHROW(Shape5{1, 1, 1, 1, 1}.validate());
}

TEST_CASE("zeros: contents and ledger bytes") {
    FreshLedger fx;
    {
        Tensor5 t = zeros({1, 1, 1, 2, 2});
        CHECK(t.elems() == 4);
        for (int64_t i = 0; i < 4; ++i) CHECK(t.data()[i] == 0.0f);
        CHECK(fx.ledger.occupancy(Tier::Fast) == 16);
    }
    CHECK(fx.ledger.occupancy(Tier::Fast) == 0);

    // 2*8*4*64*64 elements at 4 bytes each.
    const int64_t expect = 2 * 8 * 4 * 64 * 64 * 4;
    CHECK(expect == 1048576);
    Tensor5 big = zeros({2, 8, 4, 64, 64}, StageTag::Denoise);
    CHECK(fx.ledger.occupancy(Tier::Fast) == expect);
    CHECK(fx.ledger.peak(StageTag::Denoise, Tier::Fast) == expect);
}

TEST_CASE("alloc/free pairing through moves and clones") {
    FreshLedger fx;
    {
        Tensor5 a = zeros({1, 1, 1, 4, 4});
        Tensor5 b = std::move(a);  // no new events
        CHECK(fx.ledger.live_allocs() == 1);
        Tensor5 c = b.clone();
        CHECK(fx.ledger.live_allocs() == 2);
    }
    fx.ledger.verify_balanced();
    const auto events = fx.ledger.events();
    int allocs = 0, frees = 0;
    for (const auto& e : events) {
        if (e.kind == MemEventKind::Alloc) allocs++;
        if (e.kind == MemEventKind::Free) frees++;
    }
    CHECK(allocs == 2);
    CHECK(frees == 2);
}

TEST_CASE("randn: determinism, distinctness, moments") {
    FreshLedger fx;
    Tensor5 a = randn({1, 1, 1, 8, 8}, 7);
    Tensor5 b = randn({1, 1, 1, 8, 8}, 7);
    CHECK(bytes_equal(a, b));

    Tensor5 c = randn({1, 1, 1, 8, 8}, 8);
    CHECK_FALSE(bytes_equal(a, c));

    // Law-of-large-numbers bounds over 4096 draws.
    Tensor5 big = randn({1, 1, 1, 64, 64}, 7);
    double sum = 0, sq = 0;
    for (int64_t i = 0; i < big.elems(); ++i) {
        sum += big.data()[i];
        sq += static_cast<double>(big.data()[i]) * big.data()[i];
    }
    const double mean = sum / big.elems();
    const double var = sq / big.elems() - mean * mean;
    CHECK(std::abs(mean) < 0.1);
    CHECK(std::abs(var - 1.0) < 0.15);
}

TEST_CASE("conv2d: identity kernel") {
    FreshLedger fx;
    Tensor5 x = randn({1, 2, 1, 5, 5}, 3);
    const KernelBank id = const_bank(1, 1, 1, 1.0f);
    Tensor5 y = conv2d(x, id);
    CHECK(bytes_equal(x, y));
}

TEST_CASE("conv2d: all-ones 3x3 on a one-hot input") {
    FreshLedger fx;
    Tensor5 x = zeros({1, 1, 1, 5, 5});
    x.at(0, 0, 0, 2, 2) = 1.0f;
    const KernelBank ones = const_bank(1, 1, 3, 1.0f);
    Tensor5 y = conv2d(x, ones);
    Tensor5 ref = conv_ref(x, ones);
    CHECK(max_abs_diff(y, ref) == 0.0f);
    for (int64_t i = 0; i < 5; ++i)
        for (int64_t j = 0; j < 5; ++j) {
            const bool inside = std::abs(i - 2) <= 1 && std::abs(j - 2) <= 1;
            CHECK(y.at(0, 0, 0, i, j) == (inside ? 1.0f : 0.0f));
        }
}

TEST_CASE("conv2d: channel mismatch") {
    FreshLedger fx;
    Tensor5 x = zeros({1, 1, 2, 4, 4});
    CHECK_THROWS_AS((conv2d(x, const_bank(3, 1, 3, 1.0f))), ShapeError);
}

TEST_CASE("conv2d matches the independent oracle on random inputs") {
    FreshLedger fx;
    for (uint64_t seed = 0; seed < 8; ++seed) {
        Tensor5 x = randn({2, 1, 3, 6, 7}, 100 + seed);
        const KernelBank w = random_bank(3, 2, 3, 55 + seed);
        CHECK(max_abs_diff(conv2d(x, w), conv_ref(x, w)) == 0.0f);
    }
}

TEST_CASE("conv2d linearity (zero-bias banks)") {
    FreshLedger fx;
    for (uint64_t seed = 0; seed < 20; ++seed) {
        Tensor5 x = randn({1, 2, 2, 8, 8}, 200 + seed);
        Tensor5 y = randn({1, 2, 2, 8, 8}, 300 + seed);
        const KernelBank w = random_bank(2, 3, 3, 77 + seed, /*with_bias=*/false);
        Tensor5 lhs = conv2d(add(x, y), w);
        Tensor5 rhs = add(conv2d(x, w), conv2d(y, w));
        CHECK(max_abs_diff(lhs, rhs) < 1e-5f);
    }
}

TEST_CASE("conv2d_window equals a crop of the full convolution") {
    FreshLedger fx;
    Tensor5 x = randn({1, 1, 2, 9, 9}, 11);
    const KernelBank w = random_bank(2, 2, 3, 5);
    Tensor5 full = conv2d(x, w);
    Tensor5 win = conv2d_window(x, w, 2, 7, 3, 8);
    Tensor5 ref = crop_spatial(full, {2, 7, 3, 8});
    CHECK(bytes_equal(win, ref));
}

TEST_CASE("downsample2 / upsample2") {
    FreshLedger fx;
    Tensor5 x = Tensor5::uninit({1, 1, 1, 2, 2});
    x.at(0, 0, 0, 0, 0) = 1;
    x.at(0, 0, 0, 0, 1) = 2;
    x.at(0, 0, 0, 1, 0) = 3;
    x.at(0, 0, 0, 1, 1) = 4;
    Tensor5 d = downsample2(x);
    CHECK(d.shape() == Shape5{1, 1, 1, 1, 1});
    CHECK(d.at(0, 0, 0, 0, 0) == 2.5f);

    Tensor5 c = full({1, 1, 3, 4, 4}, 0.7f);
    Tensor5 rt = upsample2(downsample2(c));
    CHECK(bytes_equal(rt, c));

    CHECK_THROWS_AS((downsample2(zeros({1, 1, 1, 3, 4}))), ShapeError);
}

TEST_CASE("concat_channels: slab order and index arithmetic") {
    FreshLedger fx;
    Tensor5 a = randn({1, 1, 2, 3, 3}, 1);
    Tensor5 b = randn({1, 1, 3, 3, 3}, 2);
    Tensor5 cc = concat_channels(a, b);
    CHECK(cc.shape().c == 5);
    for (int64_t i = 0; i < 3; ++i)
        for (int64_t j = 0; j < 3; ++j) {
            CHECK(cc.at(0, 0, 0, i, j) == a.at(0, 0, 0, i, j));
            // First channel slab of b lands right after a's two channels.
            CHECK(cc.at(0, 0, 2, i, j) == b.at(0, 0, 0, i, j));
        }
    CHECK_THROWS_AS((concat_channels(a, randn({1, 1, 1, 4, 3}, 3))), ShapeError);
}

TEST_CASE("elementwise ops") {
    FreshLedger fx;
    Tensor5 x = randn({1, 1, 2, 4, 4}, 9);
    CHECK(bytes_equal(scale(x, 1.0f), x));
    CHECK(bytes_equal(add(x, zeros(x.shape())), x));
    Tensor5 z = silu(zeros({1, 1, 1, 2, 2}));
    for (int64_t i = 0; i < z.elems(); ++i) CHECK(z.data()[i] == 0.0f);
    CHECK_THROWS_AS((add(x, zeros({1, 1, 2, 4, 5}))), ShapeError);
}

TEST_CASE("crop / paste") {
    FreshLedger fx;
    Tensor5 x = ramp({1, 2, 2, 6, 5});

    Tensor5 whole = crop_spatial(x, {0, 6, 0, 5});
    CHECK(bytes_equal(whole, x));

    // Values match direct indexing.
    Tensor5 c = crop_spatial(x, {2, 4, 0, 2});
    for (int64_t y = 0; y < 2; ++y)
        for (int64_t xx = 0; xx < 2; ++xx)
            CHECK(c.at(0, 1, 1, y, xx) == x.at(0, 1, 1, y + 2, xx));

    // paste(crop(x, R), R) leaves x unchanged.
    Tensor5 copy = x.clone();
    paste_spatial(copy, c, 2, 0);
    CHECK(bytes_equal(copy, x));

    CHECK_THROWS_AS((crop_spatial(x, {4, 8, 0, 2})), ShapeError);
    CHECK_THROWS_AS((paste_spatial(copy, c, 5, 0)), ShapeError);
}

TEST_CASE("select_batch / stack_batch round trip") {
    FreshLedger fx;
    Tensor5 x = randn({3, 2, 2, 3, 3}, 21);
    Tensor5 s0 = select_batch(x, 0);
    Tensor5 s1 = select_batch(x, 1);
    Tensor5 s2 = select_batch(x, 2);
    Tensor5 back = stack_batch({&s0, &s1, &s2});
    CHECK(bytes_equal(back, x));
    CHECK_THROWS_AS((select_batch(x, 3)), ShapeError);
}

TEST_CASE("mac counter counts convolutions only") {
    FreshLedger fx;
    mac_reset();
    Tensor5 x = randn({1, 2, 3, 4, 4}, 5);
    Tensor5 y = add(x, x);
    CHECK(mac_total() == 0);
    const KernelBank w = random_bank(3, 2, 3, 1);
    conv2d(x, w);
    CHECK(mac_total() == 1 * 2 * 2 * 4 * 4 * 3 * 3 * 3);
}

TEST_CASE("counter rng stream is position independent") {
    const NormalStream s(42);
    const float a5 = s.at(5);
    const NormalStream t(42);
    CHECK(t.at(5) == a5);  // no sequential state
    CHECK(t.at(0) != t.at(1));
}
