#include "stagecache/tensor.hpp"

#include <atomic>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>

#include <Eigen/Core>

#include "stagecache/rng.hpp"

namespace stagecache {

namespace {

std::atomic<int64_t> g_macs{0};
void (*g_mac_hook)(int64_t, void*) = nullptr;
void* g_mac_ctx = nullptr;

void count_macs(int64_t macs) {
    g_macs.fetch_add(macs, std::memory_order_relaxed);
    if (g_mac_hook) g_mac_hook(macs, g_mac_ctx);
}

using ArrayMap = Eigen::Map<Eigen::ArrayXf>;
using ConstArrayMap = Eigen::Map<const Eigen::ArrayXf>;

ConstArrayMap as_array(const Tensor5& x) { return {x.data(), x.elems()}; }
ArrayMap as_array(Tensor5& x) { return {x.data(), x.elems()}; }

void require_same_shape(const Tensor5& a, const Tensor5& b, const char* what) {
    if (!(a.shape() == b.shape()))
        throw ShapeError(std::string(what) + ": shape mismatch " + a.shape().str() + " vs " +
                         b.shape().str());
}

}  // namespace

int64_t mac_total() { return g_macs.load(std::memory_order_relaxed); }
void mac_reset() { g_macs.store(0, std::memory_order_relaxed); }
void set_mac_hook(void (*hook)(int64_t, void*), void* ctx) {
    g_mac_hook = hook;
    g_mac_ctx = ctx;
}

void Shape5::validate() const {
    if (b < 1 || t < 1 || c < 1 || h < 1 || w < 1)
        throw ShapeError("all extents must be >= 1, got " + str());
    // Overflow check: multiply stepwise against the addressable limit.
    const int64_t limit = std::numeric_limits<int64_t>::max() / static_cast<int64_t>(sizeof(float));
    int64_t n = 1;
    for (int64_t e : {b, t, c, h, w}) {
        if (n > limit / e) throw ShapeError("element count overflows for " + str());
        n *= e;
    }
}

std::string Shape5::str() const {
    std::ostringstream os;
    os << "(" << b << "," << t << "," << c << "," << h << "," << w << ")";
    return os.str();
}

void KernelBank::validate() const {
    if (c_in < 1 || c_out < 1) throw ShapeError("kernel bank needs c_in, c_out >= 1");
    if (k < 1 || k % 2 == 0) throw ShapeError("kernel size must be odd, got " + std::to_string(k));
    if (static_cast<int64_t>(taps.size()) != c_out * c_in * k * k)
        throw ShapeError("kernel tap count mismatch");
    if (static_cast<int64_t>(bias.size()) != c_out) throw ShapeError("kernel bias count mismatch");
}

Tensor5::~Tensor5() {
    if (data_ && ledger_) ledger_->on_free(alloc_id_);
}

Tensor5::Tensor5(Tensor5&& other) noexcept
    : shape_(other.shape_),
      data_(std::move(other.data_)),
      tier_(other.tier_),
      alloc_id_(other.alloc_id_),
      ledger_(other.ledger_) {
    other.ledger_ = nullptr;
    other.alloc_id_ = 0;
}

Tensor5& Tensor5::operator=(Tensor5&& other) noexcept {
    if (this != &other) {
        if (data_ && ledger_) ledger_->on_free(alloc_id_);
        shape_ = other.shape_;
        data_ = std::move(other.data_);
        tier_ = other.tier_;
        alloc_id_ = other.alloc_id_;
        ledger_ = other.ledger_;
        other.ledger_ = nullptr;
        other.alloc_id_ = 0;
    }
    return *this;
}

Tensor5 Tensor5::uninit(const Shape5& shape, std::optional<StageTag> stage, Tier tier) {
    shape.validate();
    Tensor5 t;
    t.shape_ = shape;
    t.tier_ = tier;
    t.ledger_ = &current_ledger();
    t.alloc_id_ = t.ledger_->on_alloc(shape.bytes(), tier, stage);
    t.data_ = std::make_unique<float[]>(static_cast<size_t>(shape.elems()));
    return t;
}

Tensor5 Tensor5::clone() const {
    Tensor5 out = uninit(shape_, {}, tier_);
    std::memcpy(out.data_.get(), data_.get(), static_cast<size_t>(bytes()));
    return out;
}

void Tensor5::reshape(const Shape5& s) {
    s.validate();
    if (s.elems() != shape_.elems())
        throw ShapeError("reshape changes element count: " + shape_.str() + " -> " + s.str());
    shape_ = s;
}

void Tensor5::adopt_storage(std::unique_ptr<float[]> data, Tier tier) {
    data_ = std::move(data);
    tier_ = tier;
}

Tensor5 zeros(const Shape5& shape, std::optional<StageTag> stage) {
    Tensor5 t = Tensor5::uninit(shape, stage);
    std::memset(t.data(), 0, static_cast<size_t>(t.bytes()));
    return t;
}

Tensor5 full(const Shape5& shape, float value, std::optional<StageTag> stage) {
    Tensor5 t = Tensor5::uninit(shape, stage);
    as_array(t).setConstant(value);
    return t;
}

Tensor5 randn(const Shape5& shape, uint64_t seed, std::optional<StageTag> stage) {
    Tensor5 t = Tensor5::uninit(shape, stage);
    const NormalStream stream(seed);
    float* p = t.data();
    const int64_t n = t.elems();
    for (int64_t i = 0; i < n; ++i) p[i] = stream.at(static_cast<uint64_t>(i));
    return t;
}

Tensor5 conv2d(const Tensor5& x, const KernelBank& weights) {
    return conv2d_window(x, weights, 0, x.shape().h, 0, x.shape().w);
}

Tensor5 conv2d_window(const Tensor5& x, const KernelBank& weights, int64_t y0, int64_t y1,
                      int64_t x0, int64_t x1) {
    weights.validate();
    const Shape5& s = x.shape();
    if (weights.c_in != s.c)
        throw ShapeError("conv2d: input has " + std::to_string(s.c) + " channels, bank expects " +
                         std::to_string(weights.c_in));
    if (y1 <= y0 || x1 <= x0) throw ShapeError("conv2d_window: empty window");
    const int64_t r = (weights.k - 1) / 2;
    Tensor5 out = Tensor5::uninit({s.b, s.t, weights.c_out, y1 - y0, x1 - x0});

    // Fixed accumulation order (channel, ky, kx) ascending; one independent
    // accumulator per output element keeps tiled execution bit-exact. Taps
    // that fall outside the input contribute zero and are skipped without
    // disturbing the order of the remaining ones.
    for (int64_t b = 0; b < s.b; ++b)
        for (int64_t t = 0; t < s.t; ++t)
            for (int64_t oc = 0; oc < weights.c_out; ++oc)
                for (int64_t oy = y0; oy < y1; ++oy) {
                    const int64_t ky_lo = std::max<int64_t>(0, r - oy);
                    const int64_t ky_hi = std::min(weights.k, s.h - oy + r);
                    for (int64_t ox = x0; ox < x1; ++ox) {
                        const int64_t kx_lo = std::max<int64_t>(0, r - ox);
                        const int64_t kx_hi = std::min(weights.k, s.w - ox + r);
                        float acc = weights.bias[oc];
                        for (int64_t ic = 0; ic < weights.c_in; ++ic) {
                            const float* taps =
                                weights.taps.data() + (oc * weights.c_in + ic) * weights.k * weights.k;
                            for (int64_t ky = ky_lo; ky < ky_hi; ++ky) {
                                const float* row =
                                    x.data() + x.index(b, t, ic, oy + ky - r, ox - r);
                                const float* trow = taps + ky * weights.k;
                                for (int64_t kx = kx_lo; kx < kx_hi; ++kx)
                                    acc += trow[kx] * row[kx];
                            }
                        }
                        out.at(b, t, oc, oy - y0, ox - x0) = acc;
                    }
                }
    count_macs(s.b * s.t * weights.c_out * (y1 - y0) * (x1 - x0) * weights.k * weights.k *
               weights.c_in);
    return out;
}

Tensor5 downsample2(const Tensor5& x) {
    const Shape5& s = x.shape();
    if (s.h % 2 != 0 || s.w % 2 != 0)
        throw ShapeError("downsample2 needs even spatial extents, got " + s.str());
    return downsample2_window(x, 0, s.h / 2, 0, s.w / 2);
}

Tensor5 downsample2_window(const Tensor5& x, int64_t y0, int64_t y1, int64_t x0, int64_t x1) {
    const Shape5& s = x.shape();
    Tensor5 out = Tensor5::uninit({s.b, s.t, s.c, y1 - y0, x1 - x0});
    auto sample = [&](int64_t b, int64_t t, int64_t c, int64_t iy, int64_t ix) -> float {
        if (iy < 0 || iy >= s.h || ix < 0 || ix >= s.w) return 0.0f;
        return x.at(b, t, c, iy, ix);
    };
    for (int64_t b = 0; b < s.b; ++b)
        for (int64_t t = 0; t < s.t; ++t)
            for (int64_t c = 0; c < s.c; ++c)
                for (int64_t oy = y0; oy < y1; ++oy)
                    for (int64_t ox = x0; ox < x1; ++ox) {
                        const float sum = sample(b, t, c, 2 * oy, 2 * ox) +
                                          sample(b, t, c, 2 * oy, 2 * ox + 1) +
                                          sample(b, t, c, 2 * oy + 1, 2 * ox) +
                                          sample(b, t, c, 2 * oy + 1, 2 * ox + 1);
                        out.at(b, t, c, oy - y0, ox - x0) = 0.25f * sum;
                    }
    return out;
}

Tensor5 upsample2(const Tensor5& x) {
    const Shape5& s = x.shape();
    return upsample2_window(x, 0, s.h * 2, 0, s.w * 2);
}

Tensor5 upsample2_window(const Tensor5& x, int64_t y0, int64_t y1, int64_t x0, int64_t x1) {
    const Shape5& s = x.shape();
    Tensor5 out = Tensor5::uninit({s.b, s.t, s.c, y1 - y0, x1 - x0});
    for (int64_t b = 0; b < s.b; ++b)
        for (int64_t t = 0; t < s.t; ++t)
            for (int64_t c = 0; c < s.c; ++c)
                for (int64_t oy = y0; oy < y1; ++oy) {
                    const int64_t iy = oy >= 0 ? oy / 2 : (oy - 1) / 2;
                    for (int64_t ox = x0; ox < x1; ++ox) {
                        const int64_t ix = ox >= 0 ? ox / 2 : (ox - 1) / 2;
                        out.at(b, t, c, oy - y0, ox - x0) =
                            (iy < 0 || iy >= s.h || ix < 0 || ix >= s.w) ? 0.0f
                                                                         : x.at(b, t, c, iy, ix);
                    }
                }
    return out;
}

Tensor5 add(const Tensor5& a, const Tensor5& b) {
    require_same_shape(a, b, "add");
    Tensor5 out = Tensor5::uninit(a.shape());
    as_array(out) = as_array(a) + as_array(b);
    return out;
}

Tensor5 scale(const Tensor5& x, float alpha) {
    Tensor5 out = Tensor5::uninit(x.shape());
    as_array(out) = as_array(x) * alpha;
    return out;
}

Tensor5 add_scalar(const Tensor5& x, float value) {
    Tensor5 out = Tensor5::uninit(x.shape());
    as_array(out) = as_array(x) + value;
    return out;
}

Tensor5 linear(float a, const Tensor5& x, float b, const Tensor5& y) {
    require_same_shape(x, y, "linear");
    Tensor5 out = Tensor5::uninit(x.shape());
    as_array(out) = a * as_array(x) + b * as_array(y);
    return out;
}

Tensor5 silu(const Tensor5& x) {
    Tensor5 out = Tensor5::uninit(x.shape());
    auto v = as_array(x);
    as_array(out) = v / (1.0f + (-v).exp());
    return out;
}

Tensor5 affine(const Tensor5& x, float s, float o) {
    Tensor5 out = Tensor5::uninit(x.shape());
    as_array(out) = as_array(x) * s + o;
    return out;
}

Tensor5 concat_channels(const Tensor5& a, const Tensor5& b) {
    const Shape5& sa = a.shape();
    const Shape5& sb = b.shape();
    if (sa.b != sb.b || sa.t != sb.t || sa.h != sb.h || sa.w != sb.w)
        throw ShapeError("concat_channels: non-channel extents differ: " + sa.str() + " vs " +
                         sb.str());
    Tensor5 out = Tensor5::uninit({sa.b, sa.t, sa.c + sb.c, sa.h, sa.w});
    const int64_t plane = sa.h * sa.w;
    for (int64_t bi = 0; bi < sa.b; ++bi)
        for (int64_t ti = 0; ti < sa.t; ++ti) {
            std::memcpy(out.data() + out.index(bi, ti, 0, 0, 0),
                        a.data() + a.index(bi, ti, 0, 0, 0),
                        static_cast<size_t>(sa.c * plane) * sizeof(float));
            std::memcpy(out.data() + out.index(bi, ti, sa.c, 0, 0),
                        b.data() + b.index(bi, ti, 0, 0, 0),
                        static_cast<size_t>(sb.c * plane) * sizeof(float));
        }
    return out;
}

Tensor5 crop_spatial(const Tensor5& x, const SpatialRegion& r) {
    const Shape5& s = x.shape();
    if (r.y0 < 0 || r.x0 < 0 || r.y1 > s.h || r.x1 > s.w || r.y0 >= r.y1 || r.x0 >= r.x1)
        throw ShapeError("crop_spatial: region out of bounds");
    Tensor5 out = Tensor5::uninit({s.b, s.t, s.c, r.height(), r.width()});
    for (int64_t b = 0; b < s.b; ++b)
        for (int64_t t = 0; t < s.t; ++t)
            for (int64_t c = 0; c < s.c; ++c)
                for (int64_t y = r.y0; y < r.y1; ++y)
                    std::memcpy(out.data() + out.index(b, t, c, y - r.y0, 0),
                                x.data() + x.index(b, t, c, y, r.x0),
                                static_cast<size_t>(r.width()) * sizeof(float));
    return out;
}

void paste_spatial(Tensor5& dst, const Tensor5& src, int64_t y_off, int64_t x_off) {
    const Shape5& sd = dst.shape();
    const Shape5& ss = src.shape();
    if (sd.b != ss.b || sd.t != ss.t || sd.c != ss.c)
        throw ShapeError("paste_spatial: non-spatial extents differ");
    if (y_off < 0 || x_off < 0 || y_off + ss.h > sd.h || x_off + ss.w > sd.w)
        throw ShapeError("paste_spatial: window out of bounds");
    for (int64_t b = 0; b < ss.b; ++b)
        for (int64_t t = 0; t < ss.t; ++t)
            for (int64_t c = 0; c < ss.c; ++c)
                for (int64_t y = 0; y < ss.h; ++y)
                    std::memcpy(dst.data() + dst.index(b, t, c, y + y_off, x_off),
                                src.data() + src.index(b, t, c, y, 0),
                                static_cast<size_t>(ss.w) * sizeof(float));
}

Tensor5 select_batch(const Tensor5& x, int64_t b_index) {
    const Shape5& s = x.shape();
    if (b_index < 0 || b_index >= s.b) throw ShapeError("select_batch: index out of range");
    Tensor5 out = Tensor5::uninit({1, s.t, s.c, s.h, s.w});
    const int64_t slab = s.t * s.c * s.h * s.w;
    std::memcpy(out.data(), x.data() + b_index * slab,
                static_cast<size_t>(slab) * sizeof(float));
    return out;
}

Tensor5 stack_batch(const std::vector<const Tensor5*>& slabs) {
    if (slabs.empty()) throw ShapeError("stack_batch: no inputs");
    const Shape5 s0 = slabs[0]->shape();
    for (const Tensor5* t : slabs) {
        if (t->shape().b != 1) throw ShapeError("stack_batch: inputs must have b == 1");
        if (!(t->shape() == s0)) throw ShapeError("stack_batch: shape mismatch");
    }
    Tensor5 out = Tensor5::uninit(
        {static_cast<int64_t>(slabs.size()), s0.t, s0.c, s0.h, s0.w});
    const int64_t slab = s0.elems();
    for (size_t i = 0; i < slabs.size(); ++i)
        std::memcpy(out.data() + static_cast<int64_t>(i) * slab, slabs[i]->data(),
                    static_cast<size_t>(slab) * sizeof(float));
    return out;
}

bool bytes_equal(const Tensor5& a, const Tensor5& b) {
    if (!(a.shape() == b.shape())) return false;
    return std::memcmp(a.data(), b.data(), static_cast<size_t>(a.bytes())) == 0;
}

float max_abs_diff(const Tensor5& a, const Tensor5& b) {
    require_same_shape(a, b, "max_abs_diff");
    return (as_array(a) - as_array(b)).abs().maxCoeff();
}

bool all_finite(const Tensor5& x) { return as_array(x).isFinite().all(); }

}  // namespace stagecache
