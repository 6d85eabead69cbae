#pragma once

#include <string>
#include <vector>

#include "stagecache/tensor.hpp"

namespace stagecache {

/// Peak signal-to-noise ratio in dB over all elements, computed in double.
/// Identical inputs (and anything above it) return the cap value 99.0 so
/// reports stay finite and sortable.
double psnr(const Tensor5& a, const Tensor5& b, double data_range);

constexpr double kPsnrCap = 99.0;

/// Mean local SSIM with a 7x7 uniform window over valid positions,
/// stability constants C1 = (0.01 L)^2 and C2 = (0.03 L)^2, averaged over
/// channels (and batch/frame axes if present). Range (-1, 1].
double ssim(const Tensor5& a, const Tensor5& b, double data_range);

constexpr int64_t kSsimWindow = 7;

struct MetricSeries {
    std::vector<double> per_frame;
    double mean = 0.0;
    double min = 0.0;
    double max = 0.0;
};

using FrameMetric = double (*)(const Tensor5&, const Tensor5&, double);

/// Apply a frame metric along the t axis of two b=1 videos.
MetricSeries video_series(FrameMetric metric, const Tensor5& a, const Tensor5& b,
                          double data_range);

/// CSV with columns frame_index, psnr, ssim.
void write_metrics_csv(const std::string& path, const MetricSeries& psnr_series,
                       const MetricSeries& ssim_series);

}  // namespace stagecache
