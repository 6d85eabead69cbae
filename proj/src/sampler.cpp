#include "stagecache/sampler.hpp"

#include <cmath>

#include "stagecache/rng.hpp"

namespace stagecache {

void NoiseSchedule::validate() const {
    const int64_t T = steps();
    if (T < 1) throw ConfigError("schedule needs at least one step");
    if (alphas.size() != T || alpha_bars.size() != T)
        throw ConfigError("schedule arrays disagree in length");
    double prod = 1.0;
    for (int64_t t = 0; t < T; ++t) {
        if (!(betas[t] > 0.0 && betas[t] < 1.0))
            throw ConfigError("beta out of (0,1) at t=" + std::to_string(t));
        prod *= alphas[t];
        if (std::abs(alpha_bars[t] - prod) > 1e-6)
            throw ConfigError("alpha_bar inconsistent at t=" + std::to_string(t));
        if (t > 0 && !(alpha_bars[t] < alpha_bars[t - 1]))
            throw ConfigError("alpha_bar not strictly decreasing");
    }
}

NoiseSchedule make_linear_schedule(int64_t train_steps, double beta_min, double beta_max) {
    if (train_steps < 1) throw ConfigError("train_steps must be >= 1");
    if (!(beta_min > 0.0) || !(beta_min <= beta_max) || !(beta_max < 1.0))
        throw ConfigError("need 0 < beta_min <= beta_max < 1");
    NoiseSchedule s;
    if (train_steps == 1) s.betas = Eigen::ArrayXd::Constant(1, beta_min);
    else s.betas = Eigen::ArrayXd::LinSpaced(train_steps, beta_min, beta_max);
    s.alphas = 1.0 - s.betas;
    s.alpha_bars.resize(train_steps);
    double prod = 1.0;
    for (int64_t t = 0; t < train_steps; ++t) {
        prod *= s.alphas[t];
        s.alpha_bars[t] = prod;
    }
    s.validate();
    return s;
}

SampledSchedule spaced_schedule(const NoiseSchedule& full, int64_t steps) {
    const int64_t T = full.steps();
    if (steps < 1 || steps > T)
        throw ConfigError("inference steps must lie in [1, train_steps]");
    SampledSchedule out;
    out.source_timestep.resize(steps);
    if (steps == T) {
        out.schedule = full;
        for (int64_t i = 0; i < T; ++i) out.source_timestep[i] = i;
        return out;
    }
    NoiseSchedule s;
    s.betas.resize(steps);
    s.alphas.resize(steps);
    s.alpha_bars.resize(steps);
    double prev_bar = 1.0;
    for (int64_t i = 0; i < steps; ++i) {
        const int64_t src =
            steps == 1 ? T - 1
                       : static_cast<int64_t>(std::llround(static_cast<double>(i) *
                                                           static_cast<double>(T - 1) /
                                                           static_cast<double>(steps - 1)));
        out.source_timestep[i] = src;
        s.alpha_bars[i] = full.alpha_bars[src];
        s.alphas[i] = s.alpha_bars[i] / prev_bar;
        s.betas[i] = 1.0 - s.alphas[i];
        prev_bar = s.alpha_bars[i];
    }
    s.validate();
    out.schedule = std::move(s);
    return out;
}

namespace {

void check_t(int64_t t, const NoiseSchedule& s, const char* what) {
    if (t < 0 || t >= s.steps())
        throw ConfigError(std::string(what) + ": t=" + std::to_string(t) + " outside [0, " +
                          std::to_string(s.steps()) + ")");
}

}  // namespace

Tensor5 forward_noise(const Tensor5& x0, int64_t t, const Tensor5& eps,
                      const NoiseSchedule& schedule) {
    check_t(t, schedule, "forward_noise");
    const double abar = schedule.alpha_bars[t];
    return linear(static_cast<float>(std::sqrt(abar)), x0,
                  static_cast<float>(std::sqrt(1.0 - abar)), eps);
}

Tensor5 reverse_step_ancestral(const Tensor5& x_t, int64_t t, const Tensor5& eps_pred,
                               const NoiseSchedule& schedule, uint64_t noise_seed) {
    check_t(t, schedule, "reverse_step_ancestral");
    const double alpha = schedule.alphas[t];
    const double abar = schedule.alpha_bars[t];
    const double mean_x = 1.0 / std::sqrt(alpha);
    const double mean_e = -mean_x * (1.0 - alpha) / std::sqrt(1.0 - abar);
    Tensor5 mean = linear(static_cast<float>(mean_x), x_t, static_cast<float>(mean_e), eps_pred);
    if (t == 0) return mean;
    Tensor5 z = randn(x_t.shape(), noise_seed);
    return linear(1.0f, mean, static_cast<float>(std::sqrt(schedule.betas[t])), z);
}

Tensor5 reverse_step_ddim(const Tensor5& x_t, int64_t t, const Tensor5& eps_pred,
                          const NoiseSchedule& schedule) {
    check_t(t, schedule, "reverse_step_ddim");
    const double abar = schedule.alpha_bars[t];
    const double abar_prev = t > 0 ? schedule.alpha_bars[t - 1] : 1.0;
    // x0_hat = (x_t - sqrt(1-abar) eps) / sqrt(abar), then renoise to t-1.
    const double a = std::sqrt(abar_prev / abar);
    const double b = std::sqrt(1.0 - abar_prev) - a * std::sqrt(1.0 - abar);
    return linear(static_cast<float>(a), x_t, static_cast<float>(b), eps_pred);
}

Tensor5 reverse_step_euler(const Tensor5& x_t, int64_t t, const Tensor5& eps_pred,
                           const NoiseSchedule& schedule) {
    check_t(t, schedule, "reverse_step_euler");
    const double drift = 2.0 - std::sqrt(schedule.alphas[t]);
    const double diff = -0.5 * schedule.betas[t] / std::sqrt(1.0 - schedule.alpha_bars[t]);
    return linear(static_cast<float>(drift), x_t, static_cast<float>(diff), eps_pred);
}

Tensor5 cfg_combine(const GuidancePair& pair) {
    if (!(pair.eps_uncond.shape() == pair.eps_cond.shape()))
        throw ShapeError("cfg_combine: operand shapes differ");
    if (pair.scale < 0.0) throw ConfigError("cfg_combine: guidance scale must be >= 0");
    const float g = static_cast<float>(pair.scale);
    return linear(1.0f - g, pair.eps_uncond, g, pair.eps_cond);
}

const char* to_string(SamplerKind k) {
    switch (k) {
        case SamplerKind::Ancestral: return "ancestral";
        case SamplerKind::Ddim: return "ddim";
        case SamplerKind::Euler: return "euler";
    }
    return "?";
}

SamplerKind sampler_from_string(const std::string& s) {
    if (s == "ancestral") return SamplerKind::Ancestral;
    if (s == "ddim") return SamplerKind::Ddim;
    if (s == "euler") return SamplerKind::Euler;
    throw ConfigError("unknown sampler '" + s + "'");
}

}  // namespace stagecache
