#pragma once

#include "drpo/types.hpp"

namespace drpo {

enum class ScheduleKind { linear };

/// Precomputed DDPM noise schedule.
///
/// Arrays are indexed by timestep 0..T-1. alpha_bar(t) is the running
/// product of alpha(0..t), so alpha_bar(0) = alpha(0) rather than 1.
/// sigma(t) is the standard deviation of the reverse transition into step
/// t-1, sigma(t)^2 = (1 - alpha_bar(t-1)) / (1 - alpha_bar(t)) * beta(t);
/// sigma(0) is unused and stored as 0.
class DiffusionSchedule {
 public:
  DiffusionSchedule(int steps, double beta_start, double beta_end, ScheduleKind kind);

  int steps() const noexcept { return steps_; }
  double beta_start() const noexcept { return beta_start_; }
  double beta_end() const noexcept { return beta_end_; }
  ScheduleKind kind() const noexcept { return kind_; }

  std::span<const double> betas() const noexcept { return betas_; }
  std::span<const double> alphas() const noexcept { return alphas_; }
  std::span<const double> alpha_bars() const noexcept { return alpha_bars_; }
  std::span<const double> sigmas() const noexcept { return sigmas_; }

  double beta(int t) const { return betas_.at(static_cast<std::size_t>(t)); }
  double alpha(int t) const { return alphas_.at(static_cast<std::size_t>(t)); }
  double alpha_bar(int t) const { return alpha_bars_.at(static_cast<std::size_t>(t)); }
  double sigma(int t) const { return sigmas_.at(static_cast<std::size_t>(t)); }

 private:
  int steps_;
  double beta_start_;
  double beta_end_;
  ScheduleKind kind_;
  Vec betas_;
  Vec alphas_;
  Vec alpha_bars_;
  Vec sigmas_;
};

struct NoisySample {
  Vec value;
  int timestep = 0;
};

DiffusionSchedule build_schedule(int steps, double beta_start, double beta_end,
                                 ScheduleKind kind = ScheduleKind::linear);

/// Closed-form forward draw of y_{t+1} from y0 with caller-supplied noise:
/// sqrt(abar_{t+1}) * y0 + sqrt(1 - abar_{t+1}) * eps. Requires 0 <= t < T-1.
NoisySample marginal_sample(const DiffusionSchedule& s, ConstSpan y0, int t, ConstSpan eps);

/// sqrt(alpha_t / alpha_{t+1}) * (y_next - beta_{t+1} / sqrt(1 - abar_{t+1}) * eps_next).
/// This is the mean structure the per-step log-probability is built on.
Vec posterior_mean(const DiffusionSchedule& s, ConstSpan y_next, ConstSpan eps_next, int t);

/// DDPM ancestral mean 1/sqrt(alpha_{t+1}) * (y_next - beta_{t+1} / sqrt(1 - abar_{t+1}) * eps_next),
/// used by the reverse sampler.
Vec ancestral_mean(const DiffusionSchedule& s, ConstSpan y_next, ConstSpan eps_next, int t);

/// 0.5 * beta_{t+1} * alpha_t / ((1 - abar_t) * alpha_{t+1}): the factor in front of the
/// squared noise-prediction error in log pi(y_t | y_{t+1}). Requires 1 <= t < T-1.
double logprob_coefficient(const DiffusionSchedule& s, int t);

/// Uniform draw from {1, ..., T-2} (both ends inclusive) so that t and t+1 are
/// valid indices for every per-step quantity. Requires T >= 3.
int sample_timestep(Rng& rng, int steps);

}  // namespace drpo
