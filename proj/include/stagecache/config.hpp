#pragma once

#include <string>

#include "stagecache/cache.hpp"
#include "stagecache/chunk.hpp"
#include "stagecache/codec.hpp"
#include "stagecache/sampler.hpp"
#include "stagecache/swap.hpp"
#include "stagecache/unet.hpp"

namespace stagecache {

/// Full experiment description. Every field maps to a dotted config-file key
/// (see README) and can be overridden on the command line with --set.
struct RunConfig {
    // run.*
    int64_t frames = 8;
    int64_t height = 64;
    int64_t width = 64;
    uint64_t seed = 42;
    std::string mode = "text";  // text | image
    std::string out_dir = "out";

    UNetConfig unet;    // unet.*
    CodecConfig codec;  // codec.*

    // schedule.*
    int64_t train_steps = 50;
    double beta_min = 0.002;
    double beta_max = 0.25;

    // sampler.*
    SamplerKind sampler = SamplerKind::Euler;
    int64_t inference_steps = 25;
    double guidance = 1.5;

    // cache.*
    bool cache_enabled = true;
    int64_t cache_interval = 2;

    // swap.*
    SwapConfig swap;

    // chunk.*
    bool chunk_enabled = true;
    ChunkSpec chunk;

    // decode.*
    bool slice_decode = true;

    // budget.*
    int64_t budget_fast_bytes = 0;  // 0 = unlimited

    void validate() const;

    Shape5 latent_shape() const {
        return {1, frames, codec.latent_channels, height / codec.scale(),
                width / codec.scale()};
    }
    Shape5 model_input_shape() const {
        const Shape5 l = latent_shape();
        return {2, l.t, l.c, l.h, l.w};
    }
    CachePolicy cache_policy() const { return {cache_interval, unet.cache_depth}; }

    /// True when no acceleration or memory optimization is active.
    bool is_plain_baseline() const;
    /// Copy with cache, swapping, chunking and sliced decode all disabled.
    RunConfig baseline() const;
};

RunConfig default_config();

/// Flat key-value config file: one `key = value` per line, '#' comments.
RunConfig load_config_file(const std::string& path);

/// Apply one `key=value` override.
void apply_override(RunConfig& cfg, const std::string& key, const std::string& value);

/// Serialize as the same key-value grammar load_config_file reads.
std::string config_to_text(const RunConfig& cfg);

/// JSON object mirroring the config (embedded in reports).
std::string config_to_json(const RunConfig& cfg);

}  // namespace stagecache
