#pragma once

#include <string>
#include <vector>

#include "stagecache/tensor.hpp"

namespace stagecache {

/// Halo policy for tiled execution. Exact sizes the border from the chain's
/// receptive radius so stitching is lossless; None trades seam artifacts for
/// the smallest tiles; Fixed pins an explicit border.
struct HaloMode {
    enum class Kind { Exact, Fixed, None };
    Kind kind = Kind::Exact;
    int64_t fixed = 0;

    static HaloMode exact() { return {Kind::Exact, 0}; }
    static HaloMode none() { return {Kind::None, 0}; }
    static HaloMode fixed_px(int64_t px) { return {Kind::Fixed, px}; }
};

/// Spatial chunking parameters: eta divides height, omega divides width.
struct ChunkSpec {
    int64_t eta = 1;
    int64_t omega = 1;
    HaloMode halo = HaloMode::exact();
    std::vector<std::string> targets;  // block identifiers the pipeline chunks
};

/// Single-input op chain the tile executor understands.
struct ChainOp {
    enum class Kind { Conv, Down2, Up2, Silu };
    Kind kind = Kind::Silu;
    const KernelBank* bank = nullptr;  // Conv only

    static ChainOp conv(const KernelBank& b) { return {Kind::Conv, &b}; }
    static ChainOp down2() { return {Kind::Down2, nullptr}; }
    static ChainOp up2() { return {Kind::Up2, nullptr}; }
    static ChainOp silu() { return {Kind::Silu, nullptr}; }
};
using BlockChain = std::vector<ChainOp>;

/// Radius r such that an output pixel depends only on inputs within Chebyshev
/// distance r, composed op by op: a conv adds (k-1)/2 at the current scale,
/// a downsample doubles the scale of everything after it.
int64_t receptive_radius(const BlockChain& chain);

/// One tile: the core output responsibility, the materialized input region
/// (core dilated by the halo, clamped to bounds) and the core's image in the
/// chain's output coordinates.
struct Tile {
    SpatialRegion core;
    SpatialRegion padded;
    SpatialRegion out_window;
};

struct TileGrid {
    std::vector<Tile> tiles;
    int64_t halo_px = 0;
    int64_t eta = 1, omega = 1;
};

/// Partition the input extent into eta x omega cores with halo borders.
/// Extents must divide evenly.
TileGrid split(const Shape5& input, const ChunkSpec& spec, const BlockChain& chain);

/// Run the chain on the full tensor (reference path).
Tensor5 apply_chain(const BlockChain& chain, const Tensor5& x);

/// Run the chain tile by tile and stitch the cores. Tiles execute
/// sequentially so the transient footprint is one tile's activations plus
/// the output buffer. With an Exact halo the result equals apply_chain.
Tensor5 run_chunked(const BlockChain& chain, const Tensor5& x, const ChunkSpec& spec);

/// Predicted transient activation bytes of run_chunked: the widest
/// (input, output) pair of any tile step plus the stitched output buffer.
int64_t chunk_peak_model(const ChunkSpec& spec, const BlockChain& chain, const Shape5& input);

/// Fused Concat(a, b) -> conv over tiles, without ever materializing the
/// full concatenation. Core output windows tile the full extent, so the MAC
/// count equals the unchunked convolution exactly.
Tensor5 chunked_concat_conv(const Tensor5& a, const Tensor5& b, const KernelBank& bank,
                            const ChunkSpec& spec);

}  // namespace stagecache
