#pragma once

#include <string_view>
#include <utility>

#include "drpo/data.hpp"
#include "drpo/embed.hpp"
#include "drpo/losses.hpp"
#include "drpo/schedule.hpp"
#include "drpo/types.hpp"

namespace drpo {

inline constexpr std::size_t kTimeFeatureDim = 8;

enum class Activation { tanh, relu };

std::string_view to_string(Activation a);
Activation parse_activation(std::string_view name);

/// Flat parameter vector of a fully connected noise predictor.
///
/// Layout per layer: weights (out x in, row-major) followed by biases (out).
/// The last layer is linear; every other layer applies `activation`.
struct DenoiserParams {
  std::vector<std::size_t> arch;
  Activation activation = Activation::tanh;
  Vec theta;

  std::size_t input_dim() const { return arch.front(); }
  std::size_t output_dim() const { return arch.back(); }

  /// Throws invalid-arch / shape-mismatch when theta does not match arch.
  void validate() const;

  bool operator==(const DenoiserParams&) const = default;
};

std::size_t parameter_count(std::span<const std::size_t> arch);

/// Architecture for sample dimension d and prompt features of size p:
/// {d + 8 + p, hidden..., d}.
std::vector<std::size_t> denoiser_arch(std::size_t sample_dim, std::size_t prompt_dim,
                                       std::span<const std::size_t> hidden);

/// Weights U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero.
DenoiserParams init_params(std::vector<std::size_t> arch, std::uint64_t seed,
                           Activation activation = Activation::tanh);

/// Sinusoidal features of the integer timestep, kTimeFeatureDim wide.
Vec time_features(int t);

/// eps_theta(y, t, prompt): forward pass on concat(y, time_features(t), prompt).
Vec denoise(const DenoiserParams& p, ConstSpan y, int t, ConstSpan prompt_embed,
            const DiffusionSchedule& s);

enum class LogProbVariant {
  posterior_mean,  ///< y_t replaced by its posterior mean (noise-free errors)
  sampled,         ///< y_t sampled; errors carry the extra + sigma_{t+1} * eps_t term
};

std::string_view to_string(LogProbVariant v);
LogProbVariant parse_logprob_variant(std::string_view name);

struct GradientOptions {
  bool per_pair_timestep = false;
  LogProbVariant variant = LogProbVariant::posterior_mean;
};

struct BatchStats {
  double mean_winner_mse = 0.0;
  double mean_loser_mse = 0.0;
  /// Fraction of the batch's own (i, i) pairs with a positive rpo_inner.
  double implicit_accuracy = 0.0;
};

struct LossGradient {
  double loss = 0.0;
  Vec grad;
  BatchStats stats;
};

/// Records the noise targets each error term was computed against.
struct NoiseTrace {
  std::vector<int> winner_steps;
  std::vector<int> loser_steps;
  std::vector<Vec> theta_targets_w;
  std::vector<Vec> ref_targets_w;
  std::vector<Vec> theta_targets_l;
  std::vector<Vec> ref_targets_l;
};

/// Loss and exact gradient with respect to p.theta for one minibatch.
///
/// Draw order from `rng`: the shared timestep (or one per winner, then one per
/// loser), the winner noises, the loser noises, then for the sampled variant
/// the extra reverse-step noises of winners and losers. Winner i uses one noise
/// for every column j and loser j one noise for every row i; the same noise
/// feeds the policy and the reference error.
LossGradient loss_gradient(const DenoiserParams& p, const DenoiserParams& p_ref,
                           std::span<const PreferencePair> minibatch, const WeightMatrix& w,
                           const DiffusionSchedule& s, const LossConfig& cfg, LossKind kind,
                           Rng& rng, const GradientOptions& options = {},
                           NoiseTrace* trace = nullptr);

struct OptimizerState {
  Vec first_moment;
  Vec second_moment;
  std::uint64_t step_count = 0;
  double lr = 1e-3;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static OptimizerState zeros(std::size_t n, double lr, double weight_decay);
};

/// One AdamW step: bias-corrected adaptive moments plus decoupled weight decay.
std::pair<DenoiserParams, OptimizerState> optimizer_step(DenoiserParams p, ConstSpan grad,
                                                         OptimizerState st);

}  // namespace drpo
