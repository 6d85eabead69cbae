#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "stagecache/chunk.hpp"
#include "stagecache/tensor.hpp"

namespace stagecache {

/// Toy U-Net epsilon predictor: a stem, one conv block per down level with
/// channel doubling, a mid block at the deepest scale, up blocks with skip
/// concatenation, and a linear head. Timestep conditioning is a per-block
/// scalar scale/shift derived from a sinusoidal embedding.
struct UNetConfig {
    int64_t depth = 3;          // down/up levels M
    int64_t base_channels = 8;  // channels at level 0, doubling per level
    int64_t kernel = 3;         // odd
    int64_t cache_depth = 0;    // level m of the cache seam, in [0, depth)
    int64_t in_channels = 4;    // latent channels
    uint64_t weight_seed = 1234;

    int64_t level_channels(int64_t level) const { return base_channels << level; }
    void validate() const;
};

/// One entry per block in execution order:
/// stem, d0..d_{M-1}, mid, u_{M-1}..u0, head.
struct UNetWeights {
    std::vector<std::string> block_names;
    std::vector<KernelBank> banks;
    std::vector<std::vector<float>> cond_scale;  // [block][emb]
    std::vector<std::vector<float>> cond_shift;
};

/// Deep features captured at the cache seam: the level-(m+1) up output
/// after upsampling, i.e. at level-m geometry, ready for Concat(D_m, .).
struct DeepFeatures {
    Tensor5 u_next;
    int64_t origin_step = -1;   // inference step index that produced it
    int64_t origin_t = -1;      // original schedule timestep
};

struct ForwardStats {
    std::vector<std::string> executed_blocks;
    int64_t macs = 0;
    bool ran(const std::string& name) const;
};

UNetWeights init_weights(const UNetConfig& config);

struct FullForwardResult {
    Tensor5 eps;
    DeepFeatures deep;
};

/// Full forward pass. `timestep` is the original schedule timestep used for
/// conditioning. Chunked execution applies to blocks named in chunk->targets.
FullForwardResult forward_full(const Tensor5& x, int64_t timestep, const UNetWeights& weights,
                               const UNetConfig& config, const ChunkSpec* chunk = nullptr,
                               ForwardStats* stats = nullptr);

/// Cached forward pass: runs only the shallow path (stem, d0..d_m) and the
/// up path from level m, consuming `deep` at the seam. The cached features
/// keep their origin-step conditioning; blocks below level m never execute.
Tensor5 forward_cached(const Tensor5& x, int64_t timestep, const UNetWeights& weights,
                       const UNetConfig& config, DeepFeatures deep,
                       const ChunkSpec* chunk = nullptr, ForwardStats* stats = nullptr);

/// As above, but the deep features are requested only at the seam, after the
/// shallow path has run — the overlap window for a prefetch in flight.
using DeepProvider = std::function<DeepFeatures()>;
Tensor5 forward_cached(const Tensor5& x, int64_t timestep, const UNetWeights& weights,
                       const UNetConfig& config, const DeepProvider& provider,
                       const ChunkSpec* chunk = nullptr, ForwardStats* stats = nullptr);

enum class ForwardMode { Full, Cached };

/// Closed-form multiply-accumulate count of the blocks the given mode
/// executes, for an input of the given extents. Counts convolution MACs
/// only, matching the runtime counter.
int64_t flops_estimate(const UNetConfig& config, const Shape5& input, ForwardMode mode);

/// Shape of the cached deep features for the given model input.
Shape5 cache_feature_shape(const UNetConfig& config, const Shape5& input);

/// Names of blocks the mode executes, in order.
std::vector<std::string> executed_block_names(const UNetConfig& config, ForwardMode mode);

}  // namespace stagecache
