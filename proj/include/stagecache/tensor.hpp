#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "stagecache/common.hpp"
#include "stagecache/ledger.hpp"

namespace stagecache {

/// Extents of a {batch, frames, channels, height, width} tensor.
struct Shape5 {
    int64_t b = 1, t = 1, c = 1, h = 1, w = 1;

    int64_t elems() const { return b * t * c * h * w; }
    int64_t bytes() const { return elems() * static_cast<int64_t>(sizeof(float)); }
    bool operator==(const Shape5&) const = default;

    /// Throws ShapeError unless all extents are >= 1 and the element count
    /// fits the address space.
    void validate() const;
    std::string str() const;
};

/// Dense row-major {b,t,c,h,w} tensor of 32-bit reals. Move-only: every
/// construction emits exactly one Alloc event and every destruction exactly
/// one Free event on the ledger that issued the allocation.
class Tensor5 {
public:
    Tensor5() = default;  // empty; no ledger events
    ~Tensor5();
    Tensor5(Tensor5&& other) noexcept;
    Tensor5& operator=(Tensor5&& other) noexcept;
    Tensor5(const Tensor5&) = delete;
    Tensor5& operator=(const Tensor5&) = delete;

    /// Allocate uninitialized storage, recording the Alloc under `stage`
    /// (ambient stage when omitted).
    static Tensor5 uninit(const Shape5& shape, std::optional<StageTag> stage = {},
                          Tier tier = Tier::Fast);

    Tensor5 clone() const;

    const Shape5& shape() const { return shape_; }
    Tier tier() const { return tier_; }
    uint64_t alloc_id() const { return alloc_id_; }
    // Identity-based so it stays safe to ask while a tier transfer is
    // swapping the storage on another thread.
    bool empty() const { return alloc_id_ == 0; }
    int64_t elems() const { return shape_.elems(); }
    int64_t bytes() const { return shape_.bytes(); }

    float* data() { return data_.get(); }
    const float* data() const { return data_.get(); }
    std::span<float> span() { return {data_.get(), static_cast<size_t>(elems())}; }
    std::span<const float> span() const { return {data_.get(), static_cast<size_t>(elems())}; }

    int64_t index(int64_t b, int64_t t, int64_t c, int64_t y, int64_t x) const {
        return ((((b * shape_.t + t) * shape_.c + c) * shape_.h + y) * shape_.w + x);
    }
    float at(int64_t b, int64_t t, int64_t c, int64_t y, int64_t x) const {
        return data_[index(b, t, c, y, x)];
    }
    float& at(int64_t b, int64_t t, int64_t c, int64_t y, int64_t x) {
        return data_[index(b, t, c, y, x)];
    }

    /// Reinterpret extents without touching storage; element counts must
    /// match. Used by the batch/frame merge, which is a pure reshape.
    void reshape(const Shape5& s);

    // Transfer-engine internal: swap in relocated storage after a tier move.
    // The ledger move events are recorded by the engine around this call.
    void adopt_storage(std::unique_ptr<float[]> data, Tier tier);

private:
    Shape5 shape_{};
    std::unique_ptr<float[]> data_;
    Tier tier_ = Tier::Fast;
    uint64_t alloc_id_ = 0;
    MemLedger* ledger_ = nullptr;
};

/// Convolution weights: c_out banks of c_in * k * k taps plus one bias per
/// output channel. k must be odd.
struct KernelBank {
    int64_t c_in = 0, c_out = 0, k = 0;
    std::vector<float> taps;  // [c_out][c_in][k][k]
    std::vector<float> bias;  // [c_out]

    float tap(int64_t oc, int64_t ic, int64_t ky, int64_t kx) const {
        return taps[((oc * c_in + ic) * k + ky) * k + kx];
    }
    void validate() const;
};

// -- allocation ---------------------------------------------------------------

Tensor5 zeros(const Shape5& shape, std::optional<StageTag> stage = {});
Tensor5 full(const Shape5& shape, float value, std::optional<StageTag> stage = {});

/// Standard-normal fill from the counter-based generator; identical
/// (shape, seed) gives a bit-identical buffer.
Tensor5 randn(const Shape5& shape, uint64_t seed, std::optional<StageTag> stage = {});

// -- convolution --------------------------------------------------------------

/// Same-size 2-D cross-correlation over (h, w) per (b, t) with zero padding.
/// Taps are accumulated in ascending (channel, ky, kx) order so results are
/// bit-reproducible.
Tensor5 conv2d(const Tensor5& x, const KernelBank& weights);

/// Restriction of conv2d to the output window [y0, y1) x [x0, x1), expressed
/// in x's coordinates. Reads outside x's extent contribute zero; callers
/// tiling a larger tensor must size their halo so only true boundaries are
/// padded. Windows may extend beyond x's extent.
Tensor5 conv2d_window(const Tensor5& x, const KernelBank& weights, int64_t y0, int64_t y1,
                      int64_t x0, int64_t x1);

// -- resampling ---------------------------------------------------------------

Tensor5 downsample2(const Tensor5& x);  // 2x2 mean pool; h and w must be even
Tensor5 upsample2(const Tensor5& x);    // nearest-neighbour duplication

/// Output window [y0,y1)x[x0,x1) of downsample2(x) / upsample2(x) in the
/// respective output coordinates; out-of-extent reads are zero.
Tensor5 downsample2_window(const Tensor5& x, int64_t y0, int64_t y1, int64_t x0, int64_t x1);
Tensor5 upsample2_window(const Tensor5& x, int64_t y0, int64_t y1, int64_t x0, int64_t x1);

// -- pointwise ----------------------------------------------------------------

Tensor5 add(const Tensor5& a, const Tensor5& b);
Tensor5 scale(const Tensor5& x, float alpha);
Tensor5 add_scalar(const Tensor5& x, float value);
/// a*x + b*y elementwise.
Tensor5 linear(float a, const Tensor5& x, float b, const Tensor5& y);
/// x * sigmoid(x).
Tensor5 silu(const Tensor5& x);
/// Per-tensor affine x*s + o (timestep conditioning).
Tensor5 affine(const Tensor5& x, float s, float o);

// -- layout -------------------------------------------------------------------

/// Channel concatenation; `a` occupies the leading channel slab.
Tensor5 concat_channels(const Tensor5& a, const Tensor5& b);

struct SpatialRegion {
    int64_t y0 = 0, y1 = 0, x0 = 0, x1 = 0;
    int64_t height() const { return y1 - y0; }
    int64_t width() const { return x1 - x0; }
    bool operator==(const SpatialRegion&) const = default;
};

Tensor5 crop_spatial(const Tensor5& x, const SpatialRegion& r);
/// Overwrite dst's sub-window starting at (y_off, x_off) with src.
void paste_spatial(Tensor5& dst, const Tensor5& src, int64_t y_off, int64_t x_off);

/// Single batch slab as a b=1 tensor (contiguous copy).
Tensor5 select_batch(const Tensor5& x, int64_t b_index);
/// Stack b=1 tensors along the batch axis.
Tensor5 stack_batch(const std::vector<const Tensor5*>& slabs);

// -- comparison helpers ---------------------------------------------------------

bool bytes_equal(const Tensor5& a, const Tensor5& b);
float max_abs_diff(const Tensor5& a, const Tensor5& b);
bool all_finite(const Tensor5& x);

// -- MAC accounting -------------------------------------------------------------

/// Multiply-accumulate counter fed by every convolution. Elementwise ops and
/// resampling do not count. The optional hook lets the simulated transfer
/// engine advance its virtual clock as compute retires.
int64_t mac_total();
void mac_reset();
void set_mac_hook(void (*hook)(int64_t macs, void* ctx), void* ctx);

}  // namespace stagecache
