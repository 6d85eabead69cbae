#include "stagecache/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

namespace stagecache {

double psnr(const Tensor5& a, const Tensor5& b, double data_range) {
    if (!(a.shape() == b.shape())) throw ShapeError("psnr: shape mismatch");
    if (!(data_range > 0.0)) throw ConfigError("psnr: data_range must be positive");
    const float* pa = a.data();
    const float* pb = b.data();
    double sq = 0.0;
    const int64_t n = a.elems();
    for (int64_t i = 0; i < n; ++i) {
        const double d = static_cast<double>(pa[i]) - static_cast<double>(pb[i]);
        sq += d * d;
    }
    const double mse = sq / static_cast<double>(n);
    if (mse == 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(data_range * data_range / mse));
}

double ssim(const Tensor5& a, const Tensor5& b, double data_range) {
    if (!(a.shape() == b.shape())) throw ShapeError("ssim: shape mismatch");
    if (!(data_range > 0.0)) throw ConfigError("ssim: data_range must be positive");
    const Shape5& s = a.shape();
    const int64_t win = kSsimWindow;
    if (s.h < win || s.w < win)
        throw ShapeError("ssim: frame smaller than the " + std::to_string(win) + "x" +
                         std::to_string(win) + " window");
    const double c1 = (0.01 * data_range) * (0.01 * data_range);
    const double c2 = (0.03 * data_range) * (0.03 * data_range);
    const double inv_n = 1.0 / static_cast<double>(win * win);

    double total = 0.0;
    int64_t windows = 0;
    for (int64_t bi = 0; bi < s.b; ++bi)
        for (int64_t ti = 0; ti < s.t; ++ti)
            for (int64_t ci = 0; ci < s.c; ++ci)
                for (int64_t y = 0; y + win <= s.h; ++y)
                    for (int64_t x = 0; x + win <= s.w; ++x) {
                        double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
                        for (int64_t dy = 0; dy < win; ++dy) {
                            const float* ra = a.data() + a.index(bi, ti, ci, y + dy, x);
                            const float* rb = b.data() + b.index(bi, ti, ci, y + dy, x);
                            for (int64_t dx = 0; dx < win; ++dx) {
                                const double va = ra[dx];
                                const double vb = rb[dx];
                                sa += va;
                                sb += vb;
                                saa += va * va;
                                sbb += vb * vb;
                                sab += va * vb;
                            }
                        }
                        const double mu_a = sa * inv_n;
                        const double mu_b = sb * inv_n;
                        const double var_a = saa * inv_n - mu_a * mu_a;
                        const double var_b = sbb * inv_n - mu_b * mu_b;
                        const double cov = sab * inv_n - mu_a * mu_b;
                        const double num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2);
                        const double den =
                            (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2);
                        total += num / den;
                        windows++;
                    }
    return total / static_cast<double>(windows);
}

namespace {

Tensor5 frame_of(const Tensor5& video, int64_t t) {
    const Shape5& s = video.shape();
    Tensor5 f = Tensor5::uninit({1, 1, s.c, s.h, s.w});
    std::copy_n(video.data() + video.index(0, t, 0, 0, 0), f.elems(), f.data());
    return f;
}

}  // namespace

MetricSeries video_series(FrameMetric metric, const Tensor5& a, const Tensor5& b,
                          double data_range) {
    const Shape5& sa = a.shape();
    if (sa.b != 1 || b.shape().b != 1) throw ShapeError("video_series expects b == 1 videos");
    if (sa.t != b.shape().t) throw ShapeError("video_series: frame counts differ");
    MetricSeries out;
    out.per_frame.resize(static_cast<size_t>(sa.t));
    out.min = std::numeric_limits<double>::infinity();
    out.max = -std::numeric_limits<double>::infinity();
    double sum = 0.0;
    for (int64_t t = 0; t < sa.t; ++t) {
        Tensor5 fa = frame_of(a, t);
        Tensor5 fb = frame_of(b, t);
        const double v = metric(fa, fb, data_range);
        out.per_frame[static_cast<size_t>(t)] = v;
        sum += v;
        out.min = std::min(out.min, v);
        out.max = std::max(out.max, v);
    }
    out.mean = sum / static_cast<double>(sa.t);
    return out;
}

void write_metrics_csv(const std::string& path, const MetricSeries& psnr_series,
                       const MetricSeries& ssim_series) {
    if (psnr_series.per_frame.size() != ssim_series.per_frame.size())
        throw ShapeError("metric series length mismatch");
    std::ofstream os(path);
    if (!os) throw Error("cannot write " + path);
    os << "frame_index,psnr,ssim\n";
    os.precision(10);
    for (size_t i = 0; i < psnr_series.per_frame.size(); ++i)
        os << i << ',' << psnr_series.per_frame[i] << ',' << ssim_series.per_frame[i] << "\n";
}

}  // namespace stagecache
