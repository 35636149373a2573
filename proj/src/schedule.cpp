#include "drpo/schedule.hpp"

#include <cmath>
#include <sstream>

#include "drpo/error.hpp"

namespace drpo {

namespace {

void check_dims(ConstSpan a, ConstSpan b, const char* what) {
  if (a.size() != b.size()) {
    std::ostringstream msg;
    msg << what << ": " << a.size() << " vs " << b.size();
    throw Error(ErrorCode::dimension_mismatch, msg.str());
  }
}

void check_step(int t, int lo, int hi_exclusive, const char* what) {
  if (t < lo || t >= hi_exclusive) {
    std::ostringstream msg;
    msg << what << ": t=" << t << " outside [" << lo << ", " << hi_exclusive << ")";
    throw Error(ErrorCode::timestep_out_of_range, msg.str());
  }
}

Vec denoised_direction(const DiffusionSchedule& s, ConstSpan y_next, ConstSpan eps_next, int t,
                       double scale) {
  const double noise_coef = s.beta(t + 1) / std::sqrt(1.0 - s.alpha_bar(t + 1));
  Vec out(y_next.size());
  for (std::size_t k = 0; k < out.size(); ++k) {
    out[k] = scale * (y_next[k] - noise_coef * eps_next[k]);
  }
  return out;
}

}  // namespace

DiffusionSchedule::DiffusionSchedule(int steps, double beta_start, double beta_end,
                                     ScheduleKind kind)
    : steps_(steps), beta_start_(beta_start), beta_end_(beta_end), kind_(kind) {
  if (steps < 2) {
    throw Error(ErrorCode::invalid_range, "schedule needs at least 2 steps");
  }
  if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0)) {
    throw Error(ErrorCode::invalid_range, "betas must satisfy 0 < beta_start <= beta_end < 1");
  }
  const auto n = static_cast<std::size_t>(steps);
  betas_.resize(n);
  alphas_.resize(n);
  alpha_bars_.resize(n);
  sigmas_.assign(n, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    const double frac = static_cast<double>(k) / static_cast<double>(n - 1);
    betas_[k] = beta_start + (beta_end - beta_start) * frac;
    alphas_[k] = 1.0 - betas_[k];
    alpha_bars_[k] = k == 0 ? alphas_[0] : alpha_bars_[k - 1] * alphas_[k];
  }
  for (std::size_t k = 1; k < n; ++k) {
    sigmas_[k] = std::sqrt((1.0 - alpha_bars_[k - 1]) / (1.0 - alpha_bars_[k]) * betas_[k]);
  }
}

DiffusionSchedule build_schedule(int steps, double beta_start, double beta_end,
                                 ScheduleKind kind) {
  return DiffusionSchedule(steps, beta_start, beta_end, kind);
}

NoisySample marginal_sample(const DiffusionSchedule& s, ConstSpan y0, int t, ConstSpan eps) {
  check_dims(y0, eps, "marginal_sample");
  check_step(t, 0, s.steps() - 1, "marginal_sample");
  const double abar = s.alpha_bar(t + 1);
  const double signal = std::sqrt(abar);
  const double noise = std::sqrt(1.0 - abar);
  NoisySample out{Vec(y0.size()), t + 1};
  for (std::size_t k = 0; k < y0.size(); ++k) {
    out.value[k] = signal * y0[k] + noise * eps[k];
  }
  return out;
}

Vec posterior_mean(const DiffusionSchedule& s, ConstSpan y_next, ConstSpan eps_next, int t) {
  check_dims(y_next, eps_next, "posterior_mean");
  check_step(t, 0, s.steps() - 1, "posterior_mean");
  return denoised_direction(s, y_next, eps_next, t, std::sqrt(s.alpha(t) / s.alpha(t + 1)));
}

Vec ancestral_mean(const DiffusionSchedule& s, ConstSpan y_next, ConstSpan eps_next, int t) {
  check_dims(y_next, eps_next, "ancestral_mean");
  check_step(t, 0, s.steps() - 1, "ancestral_mean");
  return denoised_direction(s, y_next, eps_next, t, 1.0 / std::sqrt(s.alpha(t + 1)));
}

double logprob_coefficient(const DiffusionSchedule& s, int t) {
  check_step(t, 1, s.steps() - 1, "logprob_coefficient");
  return 0.5 * s.beta(t + 1) * s.alpha(t) / ((1.0 - s.alpha_bar(t)) * s.alpha(t + 1));
}

int sample_timestep(Rng& rng, int steps) {
  if (steps < 3) {
    throw Error(ErrorCode::invalid_range, "timestep sampling needs T >= 3");
  }
  std::uniform_int_distribution<int> dist(1, steps - 2);
  return dist(rng);
}

}  // namespace drpo
