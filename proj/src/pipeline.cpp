#include "stagecache/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "stagecache/rng.hpp"

namespace stagecache {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

constexpr float kCondBias = 0.15f;  // toy conditioning: constant channel bias

// Deterministic synthetic frames for image-conditioned runs.
Tensor5 synthetic_frames(const RunConfig& cfg) {
    Tensor5 frames = Tensor5::uninit({1, cfg.frames, cfg.codec.image_channels, cfg.height,
                                      cfg.width});
    const Shape5& s = frames.shape();
    for (int64_t t = 0; t < s.t; ++t)
        for (int64_t c = 0; c < s.c; ++c)
            for (int64_t y = 0; y < s.h; ++y)
                for (int64_t x = 0; x < s.w; ++x) {
                    const double phase = 0.25 * static_cast<double>(t) + 0.5 * c;
                    frames.at(0, t, c, y, x) = static_cast<float>(
                        0.5 + 0.5 * std::sin(phase + 6.0 * y / s.h) *
                                  std::cos(phase + 6.0 * x / s.w));
                }
    return frames;
}

struct NonAccelKey {
    // Everything except the acceleration/memory knobs and output paths.
    std::string text;
    explicit NonAccelKey(const RunConfig& cfg) {
        RunConfig c = cfg.baseline();
        c.out_dir = "";
        c.budget_fast_bytes = 0;
        // Swap timing parameters are acceleration knobs too.
        c.swap = SwapConfig{};
        c.chunk = ChunkSpec{};
        c.cache_interval = 0;
        text = config_to_text(c);
    }
};

void require_comparable(const RunConfig& a, const RunConfig& b) {
    if (a.seed != b.seed) throw ConfigError("compare: seeds differ");
    if (NonAccelKey(a).text != NonAccelKey(b).text)
        throw ConfigError("compare: configs differ beyond acceleration knobs");
}

}  // namespace

RunResult run_pipeline(const RunConfig& cfg) {
    cfg.validate();

    RunResult res;
    res.config = cfg;
    res.ledger = std::make_shared<MemLedger>();
    MemLedger& ledger = *res.ledger;
    if (cfg.budget_fast_bytes > 0) ledger.set_fast_budget(cfg.budget_fast_bytes);

    LedgerScope scope(ledger);
    const Clock::time_point t_run = Clock::now();

    // Engine first, store second: the store's teardown awaits tickets, so it
    // must be destroyed before the engine.
    TransferEngine engine(cfg.swap, ledger);
    if (cfg.swap.simulate) {
        ledger.set_clock([&engine] { return engine.virtual_now_seconds(); });
        ledger.set_clock_label("virtual");
    }
    CacheStore store(cfg.swap.enabled() ? &engine : nullptr);

    // ---- Setup ------------------------------------------------------------
    Clock::time_point t0 = Clock::now();
    ledger.on_stage_enter(StageTag::Setup);
    const UNetWeights unet_weights = init_weights(cfg.unet);
    const CodecWeights codec_weights = init_codec(cfg.codec);
    const NoiseSchedule train_schedule =
        make_linear_schedule(cfg.train_steps, cfg.beta_min, cfg.beta_max);
    const SampledSchedule sub = spaced_schedule(train_schedule, cfg.inference_steps);
    const NoiseSchedule& schedule = sub.schedule;
    const CachePolicy policy = cfg.cache_policy();
    const StepPlan plan = cfg.cache_enabled
                              ? plan_steps(cfg.inference_steps, policy)
                              : StepPlan{std::vector<StepKind>(
                                    static_cast<size_t>(cfg.inference_steps), StepKind::Full)};
    const ChunkSpec* chunk = cfg.chunk_enabled ? &cfg.chunk : nullptr;
    res.cache_bytes_planned =
        cfg.cache_enabled ? cache_bytes(policy, cfg.unet, cfg.model_input_shape()) : 0;
    res.wall.setup = seconds_since(t0);

    // ---- Encode -----------------------------------------------------------
    t0 = Clock::now();
    ledger.on_stage_enter(StageTag::Encode);
    Tensor5 x;  // b=1 latent trajectory
    if (cfg.mode == "image") {
        Tensor5 frames = synthetic_frames(cfg);
        Tensor5 latent = encode(frames, codec_weights, cfg.codec);
        frames = Tensor5();
        Tensor5 eps0 = randn(latent.shape(), derive_seed(cfg.seed, 2));
        x = forward_noise(latent, schedule.steps() - 1, eps0, schedule);
    } else {
        x = randn(cfg.latent_shape(), derive_seed(cfg.seed, 1));
    }
    res.wall.encode = seconds_since(t0);

    // ---- Denoise ----------------------------------------------------------
    t0 = Clock::now();
    ledger.on_stage_enter(StageTag::Denoise);
    const int64_t S = cfg.inference_steps;
    for (int64_t s = 0; s < S; ++s) {
        const int64_t j = S - 1 - s;  // schedule index, descending noise
        const int64_t t_orig = sub.source_timestep[static_cast<size_t>(j)];

        Tensor5 x_in;
        {
            Tensor5 cond = add_scalar(x, kCondBias);
            x_in = stack_batch({&x, &cond});
        }

        ForwardStats stats;
        Tensor5 eps2;
        engine.compute_begin(s);
        if (plan.is_full(s)) {
            FullForwardResult full =
                forward_full(x_in, t_orig, unet_weights, cfg.unet, chunk, &stats);
            eps2 = std::move(full.eps);
            engine.compute_end(s);
            if (cfg.cache_enabled) {
                full.deep.origin_step = s;
                store.store(std::move(full.deep), s);
                if (cfg.swap.enabled()) {
                    if (plan.has_consumers(s)) {
                        store.evict_all(s);
                        store.prefetch_all(s, s + 1);
                    } else {
                        store.evict_all(s);
                    }
                }
            }
            if (res.macs_per_full_step == 0) res.macs_per_full_step = stats.macs;
            res.full_steps++;
        } else {
            const DeepProvider provider = [&]() {
                DeepFeatures deep = store.assemble();
                if (cfg.swap.enabled() && plan.is_last_consumer(s)) store.evict_all(s);
                return deep;
            };
            eps2 = forward_cached(x_in, t_orig, unet_weights, cfg.unet, provider, chunk,
                                  &stats);
            engine.compute_end(s);
            if (res.macs_per_cached_step == 0) res.macs_per_cached_step = stats.macs;
            res.cached_steps++;
        }
        res.denoiser_macs += stats.macs;
        x_in = Tensor5();

        Tensor5 eps;
        {
            Tensor5 eps_u = select_batch(eps2, 0);
            Tensor5 eps_c = select_batch(eps2, 1);
            eps2 = Tensor5();
            eps = cfg_combine({eps_u, eps_c, cfg.guidance});
        }

        switch (cfg.sampler) {
            case SamplerKind::Ancestral:
                x = reverse_step_ancestral(x, j, eps, schedule,
                                           derive_seed(cfg.seed, 0x1000 + s));
                break;
            case SamplerKind::Ddim: x = reverse_step_ddim(x, j, eps, schedule); break;
            case SamplerKind::Euler: x = reverse_step_euler(x, j, eps, schedule); break;
        }
    }
    engine.drain();
    res.wall.denoise = seconds_since(t0);

    // ---- Decode -----------------------------------------------------------
    t0 = Clock::now();
    ledger.on_stage_enter(StageTag::Decode);
    Tensor5 video;
    {
        LatentBatch lat = merge_bt(std::move(x));
        Tensor5 merged_video = cfg.slice_decode ? decode_sliced(lat, codec_weights, cfg.codec)
                                                : decode_batch(lat, codec_weights, cfg.codec);
        lat.merged = Tensor5();
        // (B*T, 1, c, h, w) and (B, T, c, h, w) share their layout.
        const Shape5 vs = merged_video.shape();
        merged_video.reshape({1, vs.b, vs.c, vs.h, vs.w});
        video = std::move(merged_video);
    }
    res.wall.decode = seconds_since(t0);

    store.teardown();
    engine.drain();

    res.timeline = engine.timeline();
    res.makespan_s = makespan_seconds(res.timeline);
    res.stall_s = stall_total_seconds(res.timeline);
    res.simulated = cfg.swap.simulate;
    if (cfg.swap.simulate) {
        ledger.set_clock({});  // the engine's virtual clock dies with this scope
        ledger.set_clock_label("virtual");
    }

    res.wall.total = seconds_since(t_run);
    res.video = std::move(video);
    res.mem = ledger.report();

    // Teardown audit: the returned video must be the only live allocation.
    if (ledger.live_allocs() != 1 || ledger.live_bytes() != res.video.bytes())
        throw InvariantError("pipeline teardown left " + std::to_string(ledger.live_allocs()) +
                             " allocations (" + std::to_string(ledger.live_bytes()) +
                             " bytes) beyond the returned video");
    return res;
}

std::string run_report_json(const RunResult& res) {
    nlohmann::json j;
    j["config"] = nlohmann::json::parse(config_to_json(res.config));
    j["wall_seconds"] = {{"setup", res.wall.setup},
                         {"encode", res.wall.encode},
                         {"denoise", res.wall.denoise},
                         {"decode", res.wall.decode},
                         {"total", res.wall.total}};
    for (int s = 0; s < 4; ++s) {
        const auto tag = static_cast<StageTag>(s);
        j["peaks"][to_string(tag)] = {{"fast", res.mem.peak[s][0]},
                                      {"slow", res.mem.peak[s][1]}};
    }
    j["overall_peak"] = {{"fast", res.mem.overall_peak(Tier::Fast)},
                         {"slow", res.mem.overall_peak(Tier::Slow)}};
    j["mac"] = {{"denoiser_total", res.denoiser_macs},
                {"per_full_step", res.macs_per_full_step},
                {"per_cached_step", res.macs_per_cached_step},
                {"full_steps", res.full_steps},
                {"cached_steps", res.cached_steps}};
    j["cache_bytes"] = res.cache_bytes_planned;
    j["timeline"] = {{"makespan_seconds", res.makespan_s},
                     {"stall_seconds", res.stall_s},
                     {"simulated", res.simulated}};
    j["video"] = {{"frames", res.video.shape().t},
                  {"channels", res.video.shape().c},
                  {"height", res.video.shape().h},
                  {"width", res.video.shape().w}};
    return j.dump(2);
}

void write_run_artifacts(const RunResult& res, const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);
    const auto p = [&](const std::string& name) { return out_dir + "/" + name; };
    {
        std::ofstream os(p("report.json"));
        if (!os) throw Error("cannot write " + p("report.json"));
        os << run_report_json(res) << "\n";
    }
    nlohmann::json extras;
    extras["makespan_seconds"] = res.makespan_s;
    extras["stall_seconds"] = res.stall_s;
    extras["denoiser_macs"] = res.denoiser_macs;
    write_ledger_json(*res.ledger, p("ledger.json"), extras.dump());
    write_ledger_csv(*res.ledger, p("ledger.csv"));
    write_video_raw(p("video.raw"), res.video);
}

CompareRow compare(const RunConfig& baseline_cfg, const RunConfig& variant_cfg) {
    require_comparable(baseline_cfg, variant_cfg);
    RunResult base = run_pipeline(baseline_cfg);
    RunResult var = run_pipeline(variant_cfg);

    CompareRow row;
    row.speed_up = base.wall.total / var.wall.total;
    row.psnr_series = video_series(&psnr, base.video, var.video, 1.0);
    row.ssim_series = video_series(&ssim, base.video, var.video, 1.0);
    row.psnr_mean = row.psnr_series.mean;
    row.ssim_mean = row.ssim_series.mean;
    row.variant_macs = var.denoiser_macs;
    row.baseline_macs = base.denoiser_macs;
    for (int s = 0; s < 4; ++s)
        row.peak_delta_fast[s] = var.mem.peak[s][0] - base.mem.peak[s][0];
    row.identical_video = bytes_equal(base.video, var.video);
    return row;
}

AblationTable ablate(const RunConfig& base) {
    if (!base.cache_enabled || !base.chunk_enabled || !base.slice_decode ||
        !base.swap.enabled())
        throw ConfigError("ablate: base config must enable cache, swap, chunk and slicing");

    RunResult baseline = run_pipeline(base.baseline());

    AblationTable table;
    auto add_row = [&](const std::string& label, const RunConfig& cfg) {
        RunResult r = run_pipeline(cfg);
        AblationRow row;
        row.label = label;
        row.wall_total = r.wall.total;
        row.psnr_mean = video_series(&psnr, baseline.video, r.video, 1.0).mean;
        row.ssim_mean = video_series(&ssim, baseline.video, r.video, 1.0).mean;
        for (int s = 0; s < 4; ++s) row.peak_fast[s] = r.mem.peak[s][0];
        table.rows.push_back(std::move(row));
    };

    add_row("all-on", base);
    RunConfig no_swap = base;
    no_swap.swap.mode = SwapConfig::Mode::Off;
    add_row("-swapping", no_swap);
    RunConfig no_slice = base;
    no_slice.slice_decode = false;
    add_row("-slicing", no_slice);
    RunConfig no_chunk = base;
    no_chunk.chunk_enabled = false;
    add_row("-chunk", no_chunk);
    RunConfig cache_only = base;
    cache_only.swap.mode = SwapConfig::Mode::Off;
    cache_only.slice_decode = false;
    cache_only.chunk_enabled = false;
    add_row("cache-only", cache_only);
    return table;
}

SweepTable sweep_n(const RunConfig& cfg, const std::vector<int64_t>& ns) {
    for (size_t i = 1; i < ns.size(); ++i)
        if (ns[i] <= ns[i - 1]) throw ConfigError("sweep-n: N values must be ascending");

    RunResult baseline = run_pipeline(cfg.baseline());

    SweepTable table;
    for (int64_t n : ns) {
        RunConfig c = cfg;
        c.cache_enabled = true;
        c.cache_interval = n;
        RunResult r = run_pipeline(c);
        SweepRow row;
        row.n = n;
        row.speed_up = baseline.wall.total / r.wall.total;
        row.psnr_mean = video_series(&psnr, baseline.video, r.video, 1.0).mean;
        row.ssim_mean = video_series(&ssim, baseline.video, r.video, 1.0).mean;
        row.macs = r.denoiser_macs;
        table.rows.push_back(row);
    }
    for (size_t i = 1; i < table.rows.size(); ++i) {
        if (table.rows[i].speed_up < table.rows[i - 1].speed_up) table.speed_monotone = false;
        if (table.rows[i].psnr_mean > table.rows[i - 1].psnr_mean ||
            table.rows[i].ssim_mean > table.rows[i - 1].ssim_mean)
            table.quality_monotone = false;
    }
    return table;
}

void export_plots(const RunConfig& cfg, const std::vector<int64_t>& ns,
                  const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);
    RunResult baseline = run_pipeline(cfg.baseline());
    for (int64_t n : ns) {
        RunConfig c = cfg;
        c.cache_enabled = true;
        c.cache_interval = n;
        RunResult r = run_pipeline(c);
        const MetricSeries ps = video_series(&psnr, baseline.video, r.video, 1.0);
        const MetricSeries ss = video_series(&ssim, baseline.video, r.video, 1.0);
        write_metrics_csv(out_dir + "/metrics_n" + std::to_string(n) + ".csv", ps, ss);
    }
}

std::string compare_row_json(const CompareRow& row) {
    nlohmann::json j;
    j["speed_up"] = row.speed_up;
    j["psnr_mean"] = row.psnr_mean;
    j["ssim_mean"] = row.ssim_mean;
    j["psnr_per_frame"] = row.psnr_series.per_frame;
    j["ssim_per_frame"] = row.ssim_series.per_frame;
    j["variant_macs"] = row.variant_macs;
    j["baseline_macs"] = row.baseline_macs;
    j["identical_video"] = row.identical_video;
    for (int s = 0; s < 4; ++s)
        j["peak_delta_fast"][to_string(static_cast<StageTag>(s))] = row.peak_delta_fast[s];
    return j.dump(2);
}

std::string ablation_table_json(const AblationTable& table) {
    nlohmann::json j = nlohmann::json::array();
    for (const AblationRow& r : table.rows) {
        nlohmann::json row;
        row["label"] = r.label;
        row["wall_total"] = r.wall_total;
        row["psnr_mean"] = r.psnr_mean;
        row["ssim_mean"] = r.ssim_mean;
        for (int s = 0; s < 4; ++s)
            row["peak_fast"][to_string(static_cast<StageTag>(s))] = r.peak_fast[s];
        j.push_back(row);
    }
    return j.dump(2);
}

std::string sweep_table_json(const SweepTable& table) {
    nlohmann::json j;
    j["rows"] = nlohmann::json::array();
    for (const SweepRow& r : table.rows)
        j["rows"].push_back({{"n", r.n},
                             {"speed_up", r.speed_up},
                             {"psnr_mean", r.psnr_mean},
                             {"ssim_mean", r.ssim_mean},
                             {"macs", r.macs}});
    j["speed_monotone"] = table.speed_monotone;
    j["quality_monotone"] = table.quality_monotone;
    return j.dump(2);
}

}  // namespace stagecache
