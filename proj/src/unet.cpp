#include "stagecache/unet.hpp"

#include <algorithm>
#include <cmath>

#include "stagecache/rng.hpp"

namespace stagecache {

namespace {

constexpr int kEmbDim = 8;

std::vector<float> sinusoidal_embedding(int64_t timestep) {
    std::vector<float> e(kEmbDim);
    for (int k = 0; k < kEmbDim / 2; ++k) {
        const double freq = std::pow(10000.0, -static_cast<double>(k) / (kEmbDim / 2));
        e[2 * k] = static_cast<float>(std::sin(timestep * freq));
        e[2 * k + 1] = static_cast<float>(std::cos(timestep * freq));
    }
    return e;
}

struct BlockPlan {
    std::string name;
    int64_t c_in, c_out;
    bool down_before = false;  // downsample the input first
    bool has_silu = true;
    int64_t level_div = 1;  // spatial divisor of the conv's operating scale
};

// Execution-order block list. Up block i consumes Concat(D_i, up(U_{i+1})).
std::vector<BlockPlan> block_plans(const UNetConfig& cfg) {
    std::vector<BlockPlan> plan;
    const int64_t M = cfg.depth;
    plan.push_back({"stem", cfg.in_channels, cfg.base_channels, false, true, 1});
    plan.push_back({"d0", cfg.base_channels, cfg.base_channels, false, true, 1});
    for (int64_t i = 1; i < M; ++i)
        plan.push_back({"d" + std::to_string(i), cfg.level_channels(i - 1), cfg.level_channels(i),
                        true, true, int64_t(1) << i});
    plan.push_back({"mid", cfg.level_channels(M - 1), cfg.level_channels(M - 1), true, true,
                    int64_t(1) << M});
    for (int64_t i = M - 1; i >= 0; --i) {
        const int64_t c_next = (i + 1 == M) ? cfg.level_channels(M - 1) : cfg.level_channels(i + 1);
        plan.push_back({"u" + std::to_string(i), cfg.level_channels(i) + c_next,
                        cfg.level_channels(i), false, true, int64_t(1) << i});
    }
    plan.push_back({"head", cfg.base_channels, cfg.in_channels, false, false, 1});
    return plan;
}

int64_t plan_index(const std::vector<BlockPlan>& plan, const std::string& name) {
    for (size_t i = 0; i < plan.size(); ++i)
        if (plan[i].name == name) return static_cast<int64_t>(i);
    throw InvariantError("unknown block " + name);
}

bool chunk_applies(const ChunkSpec* chunk, const std::string& name) {
    if (!chunk) return false;
    return std::find(chunk->targets.begin(), chunk->targets.end(), name) != chunk->targets.end();
}

struct Conditioning {
    float s, o;
};

Conditioning block_conditioning(const UNetWeights& w, int64_t block, const std::vector<float>& e) {
    float s = 1.0f, o = 0.0f;
    for (int k = 0; k < kEmbDim; ++k) {
        s += w.cond_scale[block][k] * e[k];
        o += w.cond_shift[block][k] * e[k];
    }
    return {s, o};
}

// Plain conv block: optional leading downsample, conditioning affine,
// convolution (optionally tiled), optional silu.
Tensor5 run_conv_block(const Tensor5& input, const BlockPlan& bp, const KernelBank& bank,
                       const Conditioning& cond, const ChunkSpec* chunk, ForwardStats* stats) {
    Tensor5 x = bp.down_before ? downsample2(input) : Tensor5();
    const Tensor5& src = bp.down_before ? x : input;
    Tensor5 conditioned = affine(src, cond.s, cond.o);
    x = Tensor5();

    Tensor5 out;
    if (chunk_applies(chunk, bp.name)) {
        BlockChain ops{ChainOp::conv(bank)};
        if (bp.has_silu) ops.push_back(ChainOp::silu());
        out = run_chunked(ops, conditioned, *chunk);
    } else {
        out = conv2d(conditioned, bank);
        conditioned = Tensor5();
        if (bp.has_silu) out = silu(out);
    }
    if (stats) stats->executed_blocks.push_back(bp.name);
    return out;
}

// Up block: conditioning on both concat operands (elementwise identical to
// conditioning the concatenation), then fused-or-plain concat+conv and silu.
Tensor5 run_up_block(Tensor5 skip, Tensor5 up_in, const BlockPlan& bp, const KernelBank& bank,
                     const Conditioning& cond, const ChunkSpec* chunk, ForwardStats* stats) {
    Tensor5 a = affine(skip, cond.s, cond.o);
    skip = Tensor5();
    Tensor5 b = affine(up_in, cond.s, cond.o);
    up_in = Tensor5();

    Tensor5 out;
    if (chunk_applies(chunk, bp.name)) {
        out = chunked_concat_conv(a, b, bank, *chunk);
        a = Tensor5();
        b = Tensor5();
    } else {
        Tensor5 cc = concat_channels(a, b);
        a = Tensor5();
        b = Tensor5();
        out = conv2d(cc, bank);
    }
    out = silu(out);
    if (stats) stats->executed_blocks.push_back(bp.name);
    return out;
}

void check_input(const Tensor5& x, const UNetConfig& cfg) {
    cfg.validate();
    const Shape5& s = x.shape();
    if (s.c != cfg.in_channels)
        throw ShapeError("denoiser expects " + std::to_string(cfg.in_channels) +
                         " channels, got " + std::to_string(s.c));
    const int64_t div = int64_t(1) << cfg.depth;
    if (s.h % div != 0 || s.w % div != 0)
        throw ConfigError("spatial extents must be divisible by 2^depth = " +
                          std::to_string(div) + ", got " + s.str());
    if (!all_finite(x)) throw ShapeError("denoiser input contains non-finite values");
}

}  // namespace

void UNetConfig::validate() const {
    if (depth < 1) throw ConfigError("unet depth must be >= 1");
    if (base_channels < 1) throw ConfigError("base_channels must be >= 1");
    if (kernel < 1 || kernel % 2 == 0) throw ConfigError("kernel must be odd");
    if (cache_depth < 0 || cache_depth >= depth)
        throw ConfigError("cache_depth must lie in [0, depth)");
    if (in_channels < 1) throw ConfigError("in_channels must be >= 1");
}

bool ForwardStats::ran(const std::string& name) const {
    return std::find(executed_blocks.begin(), executed_blocks.end(), name) !=
           executed_blocks.end();
}

UNetWeights init_weights(const UNetConfig& config) {
    config.validate();
    UNetWeights w;
    const auto plan = block_plans(config);
    uint64_t stream = 0;
    for (const BlockPlan& bp : plan) {
        KernelBank bank;
        bank.c_in = bp.c_in;
        bank.c_out = bp.c_out;
        bank.k = config.kernel;
        const int64_t fan_in = config.kernel * config.kernel * bp.c_in;
        const float gain = 1.0f / std::sqrt(static_cast<float>(fan_in));
        const NormalStream taps(derive_seed(config.weight_seed, stream++));
        bank.taps.resize(static_cast<size_t>(bp.c_out * fan_in));
        for (size_t i = 0; i < bank.taps.size(); ++i)
            bank.taps[i] = gain * taps.at(static_cast<uint64_t>(i));
        const NormalStream biases(derive_seed(config.weight_seed, stream++));
        bank.bias.resize(static_cast<size_t>(bp.c_out));
        for (size_t i = 0; i < bank.bias.size(); ++i)
            bank.bias[i] = 0.02f * biases.at(static_cast<uint64_t>(i));

        const NormalStream cond(derive_seed(config.weight_seed, stream++));
        std::vector<float> cs(kEmbDim), co(kEmbDim);
        for (int k = 0; k < kEmbDim; ++k) {
            cs[k] = 0.02f * cond.at(static_cast<uint64_t>(k));
            co[k] = 0.02f * cond.at(static_cast<uint64_t>(kEmbDim + k));
        }
        w.block_names.push_back(bp.name);
        w.banks.push_back(std::move(bank));
        w.cond_scale.push_back(std::move(cs));
        w.cond_shift.push_back(std::move(co));
    }
    return w;
}

FullForwardResult forward_full(const Tensor5& x, int64_t timestep, const UNetWeights& weights,
                               const UNetConfig& config, const ChunkSpec* chunk,
                               ForwardStats* stats) {
    check_input(x, config);
    const auto plan = block_plans(config);
    const auto emb = sinusoidal_embedding(timestep);
    const int64_t M = config.depth;
    const int64_t m = config.cache_depth;
    const int64_t mac_start = mac_total();

    auto run_plain = [&](const std::string& name, const Tensor5& in) {
        const int64_t j = plan_index(plan, name);
        return run_conv_block(in, plan[j], weights.banks[j],
                              block_conditioning(weights, j, emb), chunk, stats);
    };

    // Down path; skips[i] holds D_i.
    std::vector<Tensor5> skips;
    Tensor5 cur = run_plain("stem", x);
    cur = run_plain("d0", cur);
    skips.push_back(std::move(cur));
    for (int64_t i = 1; i < M; ++i) {
        Tensor5 d = run_plain("d" + std::to_string(i), skips.back());
        skips.push_back(std::move(d));
    }

    Tensor5 u = run_plain("mid", skips.back());

    DeepFeatures deep;
    deep.origin_t = timestep;
    for (int64_t i = M - 1; i >= 0; --i) {
        Tensor5 up_in = upsample2(u);
        u = Tensor5();
        if (i == m) deep.u_next = up_in.clone();
        const int64_t j = plan_index(plan, "u" + std::to_string(i));
        u = run_up_block(std::move(skips[i]), std::move(up_in), plan[j], weights.banks[j],
                         block_conditioning(weights, j, emb), chunk, stats);
    }

    FullForwardResult out{run_plain("head", u), std::move(deep)};
    if (stats) stats->macs += mac_total() - mac_start;
    return out;
}

Tensor5 forward_cached(const Tensor5& x, int64_t timestep, const UNetWeights& weights,
                       const UNetConfig& config, const DeepProvider& provider,
                       const ChunkSpec* chunk, ForwardStats* stats) {
    check_input(x, config);
    const auto plan = block_plans(config);
    const auto emb = sinusoidal_embedding(timestep);
    const int64_t m = config.cache_depth;
    const int64_t mac_start = mac_total();

    auto run_plain = [&](const std::string& name, const Tensor5& in) {
        const int64_t j = plan_index(plan, name);
        return run_conv_block(in, plan[j], weights.banks[j],
                              block_conditioning(weights, j, emb), chunk, stats);
    };

    std::vector<Tensor5> skips;
    Tensor5 cur = run_plain("stem", x);
    cur = run_plain("d0", cur);
    skips.push_back(std::move(cur));
    for (int64_t i = 1; i <= m; ++i) {
        Tensor5 d = run_plain("d" + std::to_string(i), skips.back());
        skips.push_back(std::move(d));
    }

    // Seam: request the deep features only now, after the shallow path. The
    // cached values keep their origin-step conditioning.
    DeepFeatures deep = provider();
    const Shape5 want = cache_feature_shape(config, x.shape());
    if (!(deep.u_next.shape() == want))
        throw ShapeError("cached deep features have shape " + deep.u_next.shape().str() +
                         ", seam expects " + want.str());

    Tensor5 u = std::move(deep.u_next);
    for (int64_t i = m; i >= 0; --i) {
        Tensor5 up_in = i == m ? std::move(u) : upsample2(u);
        u = Tensor5();
        const int64_t j = plan_index(plan, "u" + std::to_string(i));
        u = run_up_block(std::move(skips[i]), std::move(up_in), plan[j], weights.banks[j],
                         block_conditioning(weights, j, emb), chunk, stats);
    }

    Tensor5 eps = run_plain("head", u);
    if (stats) stats->macs += mac_total() - mac_start;
    return eps;
}

Tensor5 forward_cached(const Tensor5& x, int64_t timestep, const UNetWeights& weights,
                       const UNetConfig& config, DeepFeatures deep, const ChunkSpec* chunk,
                       ForwardStats* stats) {
    auto holder = std::make_shared<DeepFeatures>(std::move(deep));
    return forward_cached(
        x, timestep, weights, config,
        DeepProvider([holder]() { return std::move(*holder); }), chunk, stats);
}

int64_t flops_estimate(const UNetConfig& config, const Shape5& input, ForwardMode mode) {
    config.validate();
    input.validate();
    const auto plan = block_plans(config);
    const auto names = executed_block_names(config, mode);
    int64_t total = 0;
    for (const std::string& name : names) {
        const BlockPlan& bp = plan[plan_index(plan, name)];
        const int64_t h = input.h / bp.level_div;
        const int64_t w = input.w / bp.level_div;
        total += input.b * input.t * bp.c_out * h * w * config.kernel * config.kernel * bp.c_in;
    }
    return total;
}

Shape5 cache_feature_shape(const UNetConfig& config, const Shape5& input) {
    config.validate();
    const int64_t m = config.cache_depth;
    const int64_t c_next =
        (m + 1 == config.depth) ? config.level_channels(config.depth - 1)
                                : config.level_channels(m + 1);
    return {input.b, input.t, c_next, input.h >> m, input.w >> m};
}

std::vector<std::string> executed_block_names(const UNetConfig& config, ForwardMode mode) {
    std::vector<std::string> names;
    names.push_back("stem");
    const int64_t deepest_d = mode == ForwardMode::Full ? config.depth - 1 : config.cache_depth;
    for (int64_t i = 0; i <= deepest_d; ++i) names.push_back("d" + std::to_string(i));
    if (mode == ForwardMode::Full) names.push_back("mid");
    const int64_t top_u = mode == ForwardMode::Full ? config.depth - 1 : config.cache_depth;
    for (int64_t i = top_u; i >= 0; --i) names.push_back("u" + std::to_string(i));
    names.push_back("head");
    return names;
}

}  // namespace stagecache
