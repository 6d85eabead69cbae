#pragma once

#include <Eigen/Core>

#include "stagecache/tensor.hpp"

namespace stagecache {

/// Variance schedule. alpha_bars[t] is the running product of alphas up to
/// and including t, so it is strictly decreasing.
struct NoiseSchedule {
    Eigen::ArrayXd betas;
    Eigen::ArrayXd alphas;
    Eigen::ArrayXd alpha_bars;

    int64_t steps() const { return betas.size(); }
    void validate() const;
};

/// Linearly spaced betas over [beta_min, beta_max]; T == 1 collapses to
/// beta_min.
NoiseSchedule make_linear_schedule(int64_t train_steps, double beta_min, double beta_max);

/// Sub-schedule for running fewer inference steps than the training
/// schedule: picks `steps` evenly spaced timesteps and re-derives betas from
/// the alpha_bar ratios. Also reports which original timestep each index
/// maps to (used for timestep conditioning).
struct SampledSchedule {
    NoiseSchedule schedule;
    std::vector<int64_t> source_timestep;  // per index, original t
};
SampledSchedule spaced_schedule(const NoiseSchedule& full, int64_t steps);

/// Closed-form forward noising x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.
Tensor5 forward_noise(const Tensor5& x0, int64_t t, const Tensor5& eps,
                      const NoiseSchedule& schedule);

/// Stochastic ancestral step: posterior mean plus sqrt(beta_t) noise drawn
/// from noise_seed; the t == 0 step adds no noise.
Tensor5 reverse_step_ancestral(const Tensor5& x_t, int64_t t, const Tensor5& eps_pred,
                               const NoiseSchedule& schedule, uint64_t noise_seed);

/// Deterministic DDIM step (eta = 0).
Tensor5 reverse_step_ddim(const Tensor5& x_t, int64_t t, const Tensor5& eps_pred,
                          const NoiseSchedule& schedule);

/// Deterministic Euler step on the epsilon-parameterized probability-flow
/// update:
///   x_{t-1} = (2 - sqrt(alpha_t)) * x_t - (beta_t / 2) / sqrt(1 - abar_t) * eps.
/// With eps == 0 only the drift term (2 - sqrt(alpha_t)) remains.
Tensor5 reverse_step_euler(const Tensor5& x_t, int64_t t, const Tensor5& eps_pred,
                           const NoiseSchedule& schedule);

/// Classifier-free guidance operands.
struct GuidancePair {
    const Tensor5& eps_uncond;
    const Tensor5& eps_cond;
    double scale;
};

/// eps_uncond + g * (eps_cond - eps_uncond).
Tensor5 cfg_combine(const GuidancePair& pair);

enum class SamplerKind { Ancestral, Ddim, Euler };

const char* to_string(SamplerKind k);
SamplerKind sampler_from_string(const std::string& s);

}  // namespace stagecache
