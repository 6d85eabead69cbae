#pragma once

#include <string>

#include "stagecache/tensor.hpp"

namespace stagecache {

/// Frame-wise toy encoder/decoder pair. The decoder doubles h and w per
/// stage; there are no cross-frame layers, so sliced decoding is exact by
/// construction.
struct CodecConfig {
    int64_t latent_channels = 4;
    int64_t upsample_stages = 2;
    int64_t image_channels = 3;
    int64_t width = 8;  // internal conv channels
    uint64_t weight_seed = 77;

    int64_t scale() const { return int64_t(1) << upsample_stages; }
    void validate() const;
};

struct CodecWeights {
    std::vector<KernelBank> encoder;  // in, per-stage, out
    std::vector<KernelBank> decoder;  // in, per-stage, out
};

CodecWeights init_codec(const CodecConfig& config);

/// Encode frames (b, t, image_channels, H, W) to latents at H/scale.
Tensor5 encode(const Tensor5& frames, const CodecWeights& weights, const CodecConfig& config);

/// Merged {batch, frames} view: b' = B*T, t' = 1, frame index fastest within
/// the merged axis. A pure reshape; the inverse is unmerge_bt.
struct LatentBatch {
    Tensor5 merged;
    int64_t source_b = 1;
    int64_t source_t = 1;
};

LatentBatch merge_bt(Tensor5 latents);
Tensor5 unmerge_bt(LatentBatch batch);

/// Decode every merged frame in one pass.
Tensor5 decode_batch(const LatentBatch& lat, const CodecWeights& weights,
                     const CodecConfig& config);

/// Decode frame by frame into a preallocated output; each frame's working
/// set is freed before the next frame. Bit-identical to decode_batch.
Tensor5 decode_sliced(const LatentBatch& lat, const CodecWeights& weights,
                      const CodecConfig& config);

/// Analytic one-frame decode working set: the widest consecutive
/// (input, output) activation pair for a single merged frame.
int64_t decode_working_set_bytes(const CodecConfig& config, const Shape5& one_frame_latent);

/// Raw video export: flat 32-bit reals in {t, c, h, w} order, plus a sidecar
/// header file `<path>.hdr` holding one line "t c h w". b must be 1.
void write_video_raw(const std::string& path, const Tensor5& video);
Tensor5 read_video_raw(const std::string& path);

}  // namespace stagecache
