#pragma once

#include <memory>
#include <string>

#include "stagecache/config.hpp"
#include "stagecache/metrics.hpp"

namespace stagecache {

struct StageWall {
    double setup = 0, encode = 0, denoise = 0, decode = 0, total = 0;
};

/// Everything a run produces. The ledger is kept alive alongside the video
/// (the video frees itself against it) and every reported number is
/// recomputable from the exported artifacts.
struct RunResult {
    std::shared_ptr<MemLedger> ledger;  // must outlive `video`
    Tensor5 video;                      // decoded video, b = 1
    RunConfig config;

    StageWall wall;
    StageReport mem;
    std::vector<TimelineEvent> timeline;

    int64_t denoiser_macs = 0;
    int64_t macs_per_full_step = 0;
    int64_t macs_per_cached_step = 0;
    int64_t full_steps = 0;
    int64_t cached_steps = 0;
    int64_t cache_bytes_planned = 0;

    double makespan_s = 0;
    double stall_s = 0;
    bool simulated = false;

    int64_t stage_peak(StageTag s, Tier t) const { return mem.stage_peak(s, t); }
};

/// Execute the three-stage pipeline described by the config.
RunResult run_pipeline(const RunConfig& cfg);

/// Write report.json, ledger.json, ledger.csv and video.raw under out_dir.
void write_run_artifacts(const RunResult& result, const std::string& out_dir);

std::string run_report_json(const RunResult& result);

struct CompareRow {
    double speed_up = 0;
    double psnr_mean = 0;
    double ssim_mean = 0;
    MetricSeries psnr_series;
    MetricSeries ssim_series;
    int64_t variant_macs = 0;
    int64_t baseline_macs = 0;
    std::array<int64_t, 4> peak_delta_fast{};  // variant - baseline, per stage
    bool identical_video = false;
};

/// Run baseline and variant (same seed; may differ only in acceleration
/// knobs) and compare wall time, quality and peaks.
CompareRow compare(const RunConfig& baseline_cfg, const RunConfig& variant_cfg);

struct AblationRow {
    std::string label;
    double wall_total = 0;
    double psnr_mean = 0;
    double ssim_mean = 0;
    std::array<int64_t, 4> peak_fast{};  // per stage
};

struct AblationTable {
    std::vector<AblationRow> rows;
};

/// Rows {all-on, -swap, -slice, -chunk, cache-only}; quality is measured
/// against the cache-off baseline. `base` must have all three optimizations
/// enabled.
AblationTable ablate(const RunConfig& base);

struct SweepRow {
    int64_t n = 1;
    double speed_up = 0;
    double psnr_mean = 0;
    double ssim_mean = 0;
    int64_t macs = 0;
};

struct SweepTable {
    std::vector<SweepRow> rows;
    bool speed_monotone = true;
    bool quality_monotone = true;
};

SweepTable sweep_n(const RunConfig& cfg, const std::vector<int64_t>& ns);

/// Per-frame metric CSVs (one per N) against the cache-off baseline.
void export_plots(const RunConfig& cfg, const std::vector<int64_t>& ns,
                  const std::string& out_dir);

std::string compare_row_json(const CompareRow& row);
std::string ablation_table_json(const AblationTable& table);
std::string sweep_table_json(const SweepTable& table);

}  // namespace stagecache
