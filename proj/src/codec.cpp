#include "stagecache/codec.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "stagecache/rng.hpp"

namespace stagecache {

namespace {

KernelBank draw_bank(int64_t c_in, int64_t c_out, int64_t k, uint64_t seed) {
    KernelBank bank;
    bank.c_in = c_in;
    bank.c_out = c_out;
    bank.k = k;
    const int64_t fan_in = k * k * c_in;
    const float gain = 1.0f / std::sqrt(static_cast<float>(fan_in));
    const NormalStream taps(seed);
    bank.taps.resize(static_cast<size_t>(c_out * fan_in));
    for (size_t i = 0; i < bank.taps.size(); ++i)
        bank.taps[i] = gain * taps.at(static_cast<uint64_t>(i));
    const NormalStream biases(derive_seed(seed, 0xb1a5));
    bank.bias.resize(static_cast<size_t>(c_out));
    for (size_t i = 0; i < bank.bias.size(); ++i)
        bank.bias[i] = 0.02f * biases.at(static_cast<uint64_t>(i));
    return bank;
}

Tensor5 conv_silu(const Tensor5& x, const KernelBank& bank) { return silu(conv2d(x, bank)); }

}  // namespace

void CodecConfig::validate() const {
    if (latent_channels < 1 || image_channels < 1 || width < 1)
        throw ConfigError("codec channel counts must be >= 1");
    if (upsample_stages < 1) throw ConfigError("codec upsample_stages must be >= 1");
}

// Bank layout per side: index 0 operates at the native resolution, then one
// conv per resampling stage; the last stage's conv doubles as the head
// (latent_channels out for the encoder, image_channels out for the decoder).
CodecWeights init_codec(const CodecConfig& config) {
    config.validate();
    CodecWeights w;
    uint64_t stream = 0;
    auto seed = [&] { return derive_seed(config.weight_seed, stream++); };

    w.encoder.push_back(draw_bank(config.image_channels, config.width, 3, seed()));
    for (int64_t i = 1; i <= config.upsample_stages; ++i) {
        const int64_t c_out = i == config.upsample_stages ? config.latent_channels : config.width;
        w.encoder.push_back(draw_bank(config.width, c_out, 3, seed()));
    }
    w.decoder.push_back(draw_bank(config.latent_channels, config.width, 3, seed()));
    for (int64_t i = 1; i <= config.upsample_stages; ++i) {
        const int64_t c_out = i == config.upsample_stages ? config.image_channels : config.width;
        w.decoder.push_back(draw_bank(config.width, c_out, 3, seed()));
    }
    return w;
}

Tensor5 encode(const Tensor5& frames, const CodecWeights& weights, const CodecConfig& config) {
    config.validate();
    const Shape5& s = frames.shape();
    if (s.c != config.image_channels)
        throw ShapeError("encode expects " + std::to_string(config.image_channels) +
                         " channels, got " + std::to_string(s.c));
    if (s.h % config.scale() != 0 || s.w % config.scale() != 0)
        throw ConfigError("encode needs extents divisible by 2^stages = " +
                          std::to_string(config.scale()));
    Tensor5 x = conv_silu(frames, weights.encoder[0]);
    for (int64_t i = 1; i <= config.upsample_stages; ++i) {
        Tensor5 down = downsample2(x);
        x = Tensor5();
        x = i < config.upsample_stages ? conv_silu(down, weights.encoder[i])
                                       : conv2d(down, weights.encoder[i]);
    }
    return x;
}

LatentBatch merge_bt(Tensor5 latents) {
    const Shape5 s = latents.shape();
    LatentBatch out;
    out.source_b = s.b;
    out.source_t = s.t;
    latents.reshape({s.b * s.t, 1, s.c, s.h, s.w});
    out.merged = std::move(latents);
    return out;
}

Tensor5 unmerge_bt(LatentBatch batch) {
    const Shape5 s = batch.merged.shape();
    if (s.b != batch.source_b * batch.source_t || s.t != 1)
        throw ShapeError("unmerge_bt: not a merged batch");
    batch.merged.reshape({batch.source_b, batch.source_t, s.c, s.h, s.w});
    return std::move(batch.merged);
}

namespace {

Tensor5 decode_tensor(const Tensor5& lat, const CodecWeights& weights,
                      const CodecConfig& config) {
    Tensor5 x = conv_silu(lat, weights.decoder[0]);
    for (int64_t i = 1; i <= config.upsample_stages; ++i) {
        Tensor5 up = upsample2(x);
        x = Tensor5();
        x = i < config.upsample_stages ? conv_silu(up, weights.decoder[i])
                                       : conv2d(up, weights.decoder[i]);
    }
    return x;
}

}  // namespace

Tensor5 decode_batch(const LatentBatch& lat, const CodecWeights& weights,
                     const CodecConfig& config) {
    config.validate();
    if (lat.merged.shape().c != config.latent_channels)
        throw ShapeError("decode expects " + std::to_string(config.latent_channels) +
                         " latent channels");
    return decode_tensor(lat.merged, weights, config);
}

Tensor5 decode_sliced(const LatentBatch& lat, const CodecWeights& weights,
                      const CodecConfig& config) {
    config.validate();
    const Shape5& s = lat.merged.shape();
    if (s.c != config.latent_channels)
        throw ShapeError("decode expects " + std::to_string(config.latent_channels) +
                         " latent channels");
    if (s.b == 1) return decode_tensor(lat.merged, weights, config);  // degenerate case
    const int64_t scale = config.scale();
    Tensor5 out = Tensor5::uninit({s.b, 1, config.image_channels, s.h * scale, s.w * scale});
    const int64_t out_slab = out.elems() / s.b;
    for (int64_t n = 0; n < s.b; ++n) {
        Tensor5 frame_lat = select_batch(lat.merged, n);
        Tensor5 frame = decode_tensor(frame_lat, weights, config);
        frame_lat = Tensor5();
        std::memcpy(out.data() + n * out_slab, frame.data(),
                    static_cast<size_t>(out_slab) * sizeof(float));
    }
    return out;
}

int64_t decode_working_set_bytes(const CodecConfig& config, const Shape5& one_frame_latent) {
    config.validate();
    const Shape5& s = one_frame_latent;
    auto bytes = [&](int64_t c, int64_t hh, int64_t ww) {
        return s.b * s.t * c * hh * ww * static_cast<int64_t>(sizeof(float));
    };
    int64_t h = s.h, w = s.w;
    int64_t prev = bytes(config.latent_channels, h, w);
    int64_t cur = bytes(config.width, h, w);
    int64_t widest = prev + cur;
    for (int64_t i = 1; i <= config.upsample_stages; ++i) {
        prev = cur;
        h *= 2;
        w *= 2;
        cur = bytes(config.width, h, w);  // upsample output
        widest = std::max(widest, prev + cur);
        prev = cur;
        const int64_t c_out =
            i == config.upsample_stages ? config.image_channels : config.width;
        cur = bytes(c_out, h, w);  // conv output
        widest = std::max(widest, prev + cur);
    }
    return widest;
}

void write_video_raw(const std::string& path, const Tensor5& video) {
    const Shape5& s = video.shape();
    if (s.b != 1) throw ShapeError("write_video_raw expects b == 1, got " + s.str());
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot write " + path);
    os.write(reinterpret_cast<const char*>(video.data()),
             static_cast<std::streamsize>(video.bytes()));
    std::ofstream hdr(path + ".hdr");
    if (!hdr) throw Error("cannot write " + path + ".hdr");
    hdr << s.t << " " << s.c << " " << s.h << " " << s.w << "\n";
}

Tensor5 read_video_raw(const std::string& path) {
    std::ifstream hdr(path + ".hdr");
    if (!hdr) throw Error("cannot read " + path + ".hdr");
    Shape5 s{1, 0, 0, 0, 0};
    hdr >> s.t >> s.c >> s.h >> s.w;
    if (!hdr) throw Error("malformed header " + path + ".hdr");
    Tensor5 video = Tensor5::uninit(s);
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("cannot read " + path);
    is.read(reinterpret_cast<char*>(video.data()), static_cast<std::streamsize>(video.bytes()));
    if (is.gcount() != video.bytes()) throw Error("short read from " + path);
    return video;
}

}  // namespace stagecache
