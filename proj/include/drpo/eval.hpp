#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "drpo/checkpoint.hpp"
#include "drpo/config.hpp"
#include "drpo/data.hpp"

namespace drpo {

struct GaussianStats {
  Vec mean;
  Vec cov;  ///< dim x dim, row-major

  std::size_t dim() const { return mean.size(); }
};

/// Sample mean and unbiased covariance; needs at least dim + 1 samples.
GaussianStats fit_gaussian(std::span<const Vec> samples);

/// ||mu_a - mu_b||^2 + tr(S_a + S_b - 2 (S_a S_b)^{1/2}), computed through the
/// symmetric form tr((S_a^{1/2} S_b S_a^{1/2})^{1/2}) with eigenvalues clamped at 0.
double frechet_distance(const GaussianStats& a, const GaussianStats& b);

/// (S_a S_b)^{1/2} as S_a^{1/2} (S_a^{1/2} S_b S_a^{1/2})^{1/2} S_a^{-1/2}. S_a must be
/// positive definite.
Vec covariance_product_sqrt(const GaussianStats& a, const GaussianStats& b);

/// Higher is better: the negative squared Mahalanobis distance to the nearest
/// styled component (of one prompt, or of all prompts).
class ToyReward {
 public:
  ToyReward(const BaseConfig& base, const StyleTransform& style);

  double score(ConstSpan sample, int prompt_id) const;
  double score(ConstSpan sample) const;
  Vec score_batch(std::span<const Vec> samples, int prompt_id) const;

  /// Exact moments of the styled target for one prompt (single Gaussian or mixture).
  GaussianStats target_moments(int prompt_id) const;

 private:
  double component_score(ConstSpan sample, std::size_t prompt, std::size_t comp) const;

  std::size_t dim_;
  std::vector<std::vector<MixtureComponent>> styled_;
  std::vector<std::vector<Vec>> precision_;
};

double toy_reward(ConstSpan sample, const StyleTransform& style, const BaseConfig& base);

/// Receives the timestep index t being produced and the multiplier applied to
/// the injected standard-normal noise.
using SamplerObserver = std::function<void(int t, double noise_scale)>;

/// Ancestral sampling from y_{T-1} ~ N(0, I) down to y_0, injecting
/// sigma_{t+1} * z at each step; deterministic in seed.
std::vector<Vec> reverse_sample(const Checkpoint& ckpt, ConstSpan prompt_features,
                                std::size_t n, std::uint64_t seed,
                                const SamplerObserver& observer = {});

struct WinRateRow {
  int prompt_id = 0;
  double median_a = 0.0;
  double median_b = 0.0;
  double outcome = 0.0;  ///< 1 win for a, 0 loss, 0.5 tie
};

struct WinRateResult {
  double rate = 0.0;
  std::vector<WinRateRow> rows;
};

/// Median-of-k comparison per prompt. Both models sample prompt q with the same
/// seed; ties count half.
WinRateResult win_rate(const Checkpoint& a, const Checkpoint& b, std::span<const int> prompts,
                       const BaseConfig& base, std::size_t k, const SampleScorer& scorer,
                       std::uint64_t seed);

struct StyleScore {
  Vec per_prompt_fd;
  double mean_fd = 0.0;
  double mean_reward = 0.0;
};

/// Per-prompt Frechet distance between generated samples and the exact styled
/// target moments, plus the mean toy reward of those samples.
StyleScore style_alignment(const Checkpoint& ckpt, const ExperimentConfig& cfg,
                           std::size_t samples_per_prompt, std::uint64_t seed);

struct AblationRow {
  double tau = 0.0;
  double final_loss = 0.0;
  double frechet_distance = 0.0;
  double mean_reward = 0.0;
};

/// Runs the preference stage once per tau from the same init and seeds.
std::vector<AblationRow> ablation_sweep(const ExperimentConfig& cfg,
                                        std::span<const PreferencePair> dataset,
                                        const Checkpoint& init, std::span<const double> tau_grid);

std::string ablation_csv(std::span<const AblationRow> rows);
std::string win_rate_csv(const WinRateResult& result);

/// One JSON object per line: {"prompt_id": p, "y": [...]}.
std::string samples_jsonl(std::span<const Vec> samples, int prompt_id);

}  // namespace drpo
