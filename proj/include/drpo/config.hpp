#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "drpo/data.hpp"
#include "drpo/losses.hpp"
#include "drpo/model.hpp"
#include "drpo/schedule.hpp"

namespace drpo {

/// Flat `key = value` document. Values are numbers, bare words, quoted
/// strings or bracketed lists; `#` starts a comment.
class ConfigMap {
 public:
  static ConfigMap parse(const std::string& text);
  static ConfigMap load(const std::filesystem::path& path);

  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }
  /// Applies a `key=value` override.
  void apply_override(const std::string& assignment);
  bool contains(const std::string& key) const { return values_.count(key) != 0; }
  const std::map<std::string, std::string>& values() const noexcept { return values_; }

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  std::vector<double> get_list(const std::string& key, const std::vector<double>& fallback) const;

  /// Canonical text: sorted keys, one per line.
  std::string to_text() const;

 private:
  std::map<std::string, std::string> values_;
};

std::string format_double(double v);
std::string format_list(std::span<const double> values);

enum class TrainingStage { one_stage, two_stage };
enum class WeightingMode { automatic, contrastive, diagonal };
enum class DatasetKind { style, reward };

struct ScheduleSpec {
  int steps = 50;
  double beta_start = 1e-4;
  double beta_end = 0.1;

  DiffusionSchedule build() const { return build_schedule(steps, beta_start, beta_end); }
};

struct TrainConfig {
  LossKind loss_kind = LossKind::rpo;
  LossConfig loss;  // beta, tau, lambda_orpo, weight placement
  std::size_t batch_size = 64;
  std::size_t steps = 2000;
  double base_lr = 1e-3;   ///< preference runs use (2000 / beta) * base_lr
  double sft_lr = 2e-3;
  double weight_decay = 0.0;
  std::size_t grad_accum = 1;
  TrainingStage stage = TrainingStage::two_stage;
  GradientOptions gradient;  // timestep mode, log-probability variant
  WeightingMode weighting = WeightingMode::automatic;
  std::size_t pretrain_steps = 3000;
  std::size_t sft_steps = 100;
  std::uint64_t seed = 2024;
  bool record_wall_time = false;

  double preference_lr() const { return 2000.0 / loss.beta * base_lr; }
  void validate() const;
};

struct EvalSpec {
  std::size_t samples_per_prompt = 500;
  std::size_t win_prompts = 200;
  std::size_t win_k = 5;
  std::vector<double> tau_grid{0.01, 0.1, 1.0, 2.0, 5.0};
};

struct ExperimentConfig {
  ScheduleSpec schedule;
  std::vector<std::size_t> hidden{64, 64};
  Activation activation = Activation::tanh;
  BaseConfig base = BaseConfig::toy();
  double component_std = 0.3;
  double style_rotation = 0.7853981633974483;
  double style_scale = 1.2;
  Vec style_shift{1.0, -1.0};
  DatasetKind dataset_kind = DatasetKind::style;
  std::size_t n_pairs = 2000;
  std::size_t codebook_dim = 8;
  std::uint64_t codebook_seed = 7;
  TrainConfig train;
  EvalSpec eval;

  StyleTransform transform() const { return {style_rotation, style_scale, style_shift}; }
  std::vector<std::size_t> arch() const {
    return denoiser_arch(base.dim, base.feature_dim(), hidden);
  }
  Codebook codebook() const {
    return Codebook::random(base.dim + base.feature_dim(), codebook_dim, codebook_seed);
  }
  /// Seeds for independent random streams, all derived from train.seed.
  std::uint64_t seed_for(std::string_view stream) const;

  /// Built-in defaults overlaid by `map`. Unknown keys are a config error.
  static ExperimentConfig from_map(const ConfigMap& map);
  /// Inverse of from_map: every key with its resolved value.
  ConfigMap to_map() const;
};

}  // namespace drpo
