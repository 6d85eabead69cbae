#include "stagecache/chunk.hpp"

#include <algorithm>
#include <cstring>

namespace stagecache {

namespace {

int64_t floor_div2(int64_t v) { return v >= 0 ? v / 2 : (v - 1) / 2; }
int64_t ceil_div2(int64_t v) { return v >= 0 ? (v + 1) / 2 : v / 2; }

// Minimal input region an op needs to produce `out`. For an upsample this is
// the covering region, valid for any output parity.
SpatialRegion op_input_region(const ChainOp& op, const SpatialRegion& out) {
    switch (op.kind) {
        case ChainOp::Kind::Conv: {
            const int64_t r = (op.bank->k - 1) / 2;
            return {out.y0 - r, out.y1 + r, out.x0 - r, out.x1 + r};
        }
        case ChainOp::Kind::Down2:
            return {out.y0 * 2, out.y1 * 2, out.x0 * 2, out.x1 * 2};
        case ChainOp::Kind::Up2:
            return {floor_div2(out.y0), ceil_div2(out.y1), floor_div2(out.x0),
                    ceil_div2(out.x1)};
        case ChainOp::Kind::Silu:
            return out;
    }
    throw ShapeError("unsupported op in chain");
}

// Image of an input region under an op: the outputs computable purely from
// that region. A downsample only yields its complete, globally aligned 2x2
// cells.
SpatialRegion op_output_image(const ChainOp& op, const SpatialRegion& in) {
    switch (op.kind) {
        case ChainOp::Kind::Conv:
        case ChainOp::Kind::Silu:
            return in;
        case ChainOp::Kind::Down2:
            return {ceil_div2(in.y0), floor_div2(in.y1), ceil_div2(in.x0), floor_div2(in.x1)};
        case ChainOp::Kind::Up2:
            return {in.y0 * 2, in.y1 * 2, in.x0 * 2, in.x1 * 2};
    }
    throw ShapeError("unsupported op in chain");
}

SpatialRegion intersect(const SpatialRegion& a, const SpatialRegion& b) {
    return {std::max(a.y0, b.y0), std::min(a.y1, b.y1), std::max(a.x0, b.x0),
            std::min(a.x1, b.x1)};
}

int64_t out_channels(const BlockChain& chain, int64_t c_in) {
    int64_t c = c_in;
    for (const ChainOp& op : chain)
        if (op.kind == ChainOp::Kind::Conv) {
            if (op.bank->c_in != c)
                throw ShapeError("chain conv expects " + std::to_string(op.bank->c_in) +
                                 " channels, got " + std::to_string(c));
            c = op.bank->c_out;
        }
    return c;
}

// Per-op output windows for one tile: backward inference from the core's
// image, clamped to the image of the materialized tile so out-of-window
// reads are genuine zero padding (seams under a short halo, true boundaries
// otherwise).
std::vector<SpatialRegion> plan_windows(const BlockChain& chain, const SpatialRegion& padded,
                                        const SpatialRegion& core_out) {
    const size_t n = chain.size();
    std::vector<SpatialRegion> needed(n + 1);
    needed[n] = core_out;
    for (size_t i = n; i-- > 0;) needed[i] = op_input_region(chain[i], needed[i + 1]);

    std::vector<SpatialRegion> image(n + 1);
    image[0] = padded;
    for (size_t i = 0; i < n; ++i) image[i + 1] = op_output_image(chain[i], image[i]);

    std::vector<SpatialRegion> windows(n + 1);
    for (size_t i = 0; i <= n; ++i) {
        windows[i] = intersect(needed[i], image[i]);
        // A downsample input must stay aligned to the global 2x2 grid.
        if (i < n && chain[i].kind == ChainOp::Kind::Down2) {
            windows[i] = {ceil_div2(windows[i].y0) * 2, floor_div2(windows[i].y1) * 2,
                          ceil_div2(windows[i].x0) * 2, floor_div2(windows[i].x1) * 2};
        }
        if (windows[i].height() <= 0 || windows[i].width() <= 0)
            throw ShapeError("tile window collapsed; halo too small for this chain");
    }
    return windows;
}

// Window op translated from full coordinates into the local frame of the
// materialized region.
Tensor5 apply_window(const ChainOp& op, const Tensor5& cur, const SpatialRegion& cur_region,
                     const SpatialRegion& out_window) {
    switch (op.kind) {
        case ChainOp::Kind::Conv:
            return conv2d_window(cur, *op.bank, out_window.y0 - cur_region.y0,
                                 out_window.y1 - cur_region.y0, out_window.x0 - cur_region.x0,
                                 out_window.x1 - cur_region.x0);
        case ChainOp::Kind::Down2: {
            if (cur_region.y0 % 2 != 0 || cur_region.x0 % 2 != 0)
                throw ShapeError("down2 tile input not aligned to the downsample grid");
            const int64_t oy = cur_region.y0 / 2;
            const int64_t ox = cur_region.x0 / 2;
            return downsample2_window(cur, out_window.y0 - oy, out_window.y1 - oy,
                                      out_window.x0 - ox, out_window.x1 - ox);
        }
        case ChainOp::Kind::Up2:
            return upsample2_window(cur, out_window.y0 - cur_region.y0 * 2,
                                    out_window.y1 - cur_region.y0 * 2,
                                    out_window.x0 - cur_region.x0 * 2,
                                    out_window.x1 - cur_region.x0 * 2);
        case ChainOp::Kind::Silu:
            return silu(cur);
    }
    throw ShapeError("unsupported op in chain");
}

}  // namespace

int64_t receptive_radius(const BlockChain& chain) {
    // Integer arithmetic in units of 2^(number of upsamples) so halving the
    // scale stays exact.
    int64_t unit = 1;
    for (const ChainOp& op : chain)
        if (op.kind == ChainOp::Kind::Up2) unit *= 2;
    int64_t scale = unit;
    int64_t radius_units = 0;
    for (const ChainOp& op : chain) {
        switch (op.kind) {
            case ChainOp::Kind::Conv:
                radius_units += ((op.bank->k - 1) / 2) * scale;
                break;
            case ChainOp::Kind::Down2: scale *= 2; break;
            case ChainOp::Kind::Up2: scale /= 2; break;
            case ChainOp::Kind::Silu: break;
        }
    }
    return (radius_units + unit - 1) / unit;
}

TileGrid split(const Shape5& input, const ChunkSpec& spec, const BlockChain& chain) {
    input.validate();
    if (spec.eta < 1 || spec.omega < 1) throw ConfigError("eta and omega must be >= 1");
    if (input.h % spec.eta != 0)
        throw ShapeError("height " + std::to_string(input.h) + " not divisible by eta " +
                         std::to_string(spec.eta));
    if (input.w % spec.omega != 0)
        throw ShapeError("width " + std::to_string(input.w) + " not divisible by omega " +
                         std::to_string(spec.omega));

    int64_t halo = 0;
    switch (spec.halo.kind) {
        case HaloMode::Kind::Exact: halo = receptive_radius(chain); break;
        case HaloMode::Kind::Fixed: halo = spec.halo.fixed; break;
        case HaloMode::Kind::None: halo = 0; break;
    }

    const int64_t th = input.h / spec.eta;
    const int64_t tw = input.w / spec.omega;
    TileGrid grid;
    grid.halo_px = halo;
    grid.eta = spec.eta;
    grid.omega = spec.omega;
    const SpatialRegion full{0, input.h, 0, input.w};
    for (int64_t i = 0; i < spec.eta; ++i)
        for (int64_t j = 0; j < spec.omega; ++j) {
            Tile t;
            t.core = {i * th, (i + 1) * th, j * tw, (j + 1) * tw};
            t.padded = intersect(
                {t.core.y0 - halo, t.core.y1 + halo, t.core.x0 - halo, t.core.x1 + halo}, full);
            SpatialRegion img = t.core;
            for (const ChainOp& op : chain) img = op_output_image(op, img);
            t.out_window = img;
            grid.tiles.push_back(t);
        }
    return grid;
}

Tensor5 apply_chain(const BlockChain& chain, const Tensor5& x) {
    Tensor5 cur;
    const Tensor5* src = &x;
    for (const ChainOp& op : chain) {
        Tensor5 next;
        switch (op.kind) {
            case ChainOp::Kind::Conv: next = conv2d(*src, *op.bank); break;
            case ChainOp::Kind::Down2: next = downsample2(*src); break;
            case ChainOp::Kind::Up2: next = upsample2(*src); break;
            case ChainOp::Kind::Silu: next = silu(*src); break;
        }
        cur = std::move(next);
        src = &cur;
    }
    if (src == &x) return x.clone();
    return cur;
}

Tensor5 run_chunked(const BlockChain& chain, const Tensor5& x, const ChunkSpec& spec) {
    const Shape5& s = x.shape();
    const TileGrid grid = split(s, spec, chain);

    // A single all-covering tile is the unchunked run.
    if (grid.tiles.size() == 1 && grid.tiles[0].padded == SpatialRegion{0, s.h, 0, s.w})
        return apply_chain(chain, x);

    SpatialRegion out_full{0, s.h, 0, s.w};
    for (const ChainOp& op : chain) out_full = op_output_image(op, out_full);
    const int64_t c_out = out_channels(chain, s.c);
    Tensor5 out = Tensor5::uninit({s.b, s.t, c_out, out_full.height(), out_full.width()});

    for (const Tile& tile : grid.tiles) {
        const auto windows = plan_windows(chain, tile.padded, tile.out_window);
        Tensor5 cur = crop_spatial(x, windows[0]);
        SpatialRegion cur_region = windows[0];
        for (size_t i = 0; i < chain.size(); ++i) {
            Tensor5 next = apply_window(chain[i], cur, cur_region, windows[i + 1]);
            cur = std::move(next);
            cur_region = windows[i + 1];
        }
        if (!(cur_region == tile.out_window))
            throw ShapeError("tile output window does not match the core image");
        paste_spatial(out, cur, tile.out_window.y0, tile.out_window.x0);
    }
    return out;
}

int64_t chunk_peak_model(const ChunkSpec& spec, const BlockChain& chain, const Shape5& input) {
    const TileGrid grid = split(input, spec, chain);
    const auto region_bytes = [&](const SpatialRegion& r, int64_t c) {
        return input.b * input.t * c * r.height() * r.width() *
               static_cast<int64_t>(sizeof(float));
    };

    SpatialRegion out_full{0, input.h, 0, input.w};
    for (const ChainOp& op : chain) out_full = op_output_image(op, out_full);
    const int64_t c_out = out_channels(chain, input.c);
    const int64_t out_bytes = region_bytes(out_full, c_out);

    if (grid.tiles.size() == 1 && grid.tiles[0].padded == SpatialRegion{0, input.h, 0, input.w}) {
        // Unchunked: the widest consecutive (input, output) pair of the chain.
        int64_t c = input.c;
        SpatialRegion r{0, input.h, 0, input.w};
        int64_t widest = region_bytes(r, c);
        for (const ChainOp& op : chain) {
            const int64_t in_b = region_bytes(r, c);
            const SpatialRegion r2 = op_output_image(op, r);
            const int64_t c2 = op.kind == ChainOp::Kind::Conv ? op.bank->c_out : c;
            widest = std::max(widest, in_b + region_bytes(r2, c2));
            r = r2;
            c = c2;
        }
        return widest;
    }

    int64_t widest = 0;
    for (const Tile& tile : grid.tiles) {
        const auto windows = plan_windows(chain, tile.padded, tile.out_window);
        int64_t c = input.c;
        widest = std::max(widest, region_bytes(windows[0], c));
        for (size_t i = 0; i < chain.size(); ++i) {
            const int64_t c2 = chain[i].kind == ChainOp::Kind::Conv ? chain[i].bank->c_out : c;
            widest = std::max(widest,
                              region_bytes(windows[i], c) + region_bytes(windows[i + 1], c2));
            c = c2;
        }
    }
    return widest + out_bytes;
}

Tensor5 chunked_concat_conv(const Tensor5& a, const Tensor5& b, const KernelBank& bank,
                            const ChunkSpec& spec) {
    const Shape5& sa = a.shape();
    const Shape5& sb = b.shape();
    if (sa.b != sb.b || sa.t != sb.t || sa.h != sb.h || sa.w != sb.w)
        throw ShapeError("chunked_concat_conv: spatial/batch extents differ");
    if (bank.c_in != sa.c + sb.c)
        throw ShapeError("chunked_concat_conv: bank expects " + std::to_string(bank.c_in) +
                         " channels");

    const BlockChain conv_only{ChainOp::conv(bank)};
    const TileGrid grid = split(sa, spec, conv_only);
    if (grid.tiles.size() == 1 && grid.tiles[0].padded == SpatialRegion{0, sa.h, 0, sa.w}) {
        Tensor5 cc = concat_channels(a, b);
        return conv2d(cc, bank);
    }

    Tensor5 out = Tensor5::uninit({sa.b, sa.t, bank.c_out, sa.h, sa.w});
    for (const Tile& tile : grid.tiles) {
        // Fused crop + concat straight into the tile buffer; the full
        // concatenation is never materialized.
        const SpatialRegion& p = tile.padded;
        Tensor5 cc = Tensor5::uninit({sa.b, sa.t, sa.c + sb.c, p.height(), p.width()});
        for (int64_t bi = 0; bi < sa.b; ++bi)
            for (int64_t ti = 0; ti < sa.t; ++ti) {
                for (int64_t ci = 0; ci < sa.c; ++ci)
                    for (int64_t y = p.y0; y < p.y1; ++y)
                        std::memcpy(cc.data() + cc.index(bi, ti, ci, y - p.y0, 0),
                                    a.data() + a.index(bi, ti, ci, y, p.x0),
                                    static_cast<size_t>(p.width()) * sizeof(float));
                for (int64_t ci = 0; ci < sb.c; ++ci)
                    for (int64_t y = p.y0; y < p.y1; ++y)
                        std::memcpy(cc.data() + cc.index(bi, ti, sa.c + ci, y - p.y0, 0),
                                    b.data() + b.index(bi, ti, ci, y, p.x0),
                                    static_cast<size_t>(p.width()) * sizeof(float));
            }
        Tensor5 ot = conv2d_window(cc, bank, tile.core.y0 - tile.padded.y0,
                                   tile.core.y1 - tile.padded.y0, tile.core.x0 - tile.padded.x0,
                                   tile.core.x1 - tile.padded.x0);
        cc = Tensor5();
        paste_spatial(out, ot, tile.core.y0, tile.core.x0);
    }
    return out;
}

}  // namespace stagecache
