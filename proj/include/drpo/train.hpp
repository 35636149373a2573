#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "drpo/checkpoint.hpp"
#include "drpo/config.hpp"
#include "drpo/data.hpp"

namespace drpo {

struct MetricsRow {
  std::size_t step = 0;
  double loss = 0.0;
  double mean_winner_mse = 0.0;
  double mean_loser_mse = 0.0;
  double implicit_accuracy = 0.0;
  double wall_ms = 0.0;
};

struct TrainResult {
  Checkpoint checkpoint;
  /// Frozen reference the run compared against (a copy of its starting point).
  DenoiserParams reference;
  std::vector<MetricsRow> metrics;
};

enum class SftTarget { winners, losers };

/// Denoising fine-tuning on one side of the pairs. `losers` fits the base
/// (unstyled) distribution and is used to pretrain the starting model.
/// Starts from `init` when given, else from fresh parameters.
TrainResult run_sft(const ExperimentConfig& cfg, std::span<const PreferencePair> dataset,
                    std::size_t steps, SftTarget target = SftTarget::winners,
                    const Checkpoint* init = nullptr);

/// Preference fine-tuning with cfg.train.loss_kind for cfg.train.steps steps.
/// The reference model is a frozen copy of init.
TrainResult run_preference(const ExperimentConfig& cfg, std::span<const PreferencePair> dataset,
                           const Checkpoint& init);

/// True when the configured loss couples pairs through the contrastive matrix.
bool uses_contrastive_weights(const TrainConfig& t);

/// The weights a preference step uses for a given minibatch.
WeightMatrix batch_weights(const ExperimentConfig& cfg, std::span<const PreferencePair> batch);

/// Header `step,loss,mean_winner_mse,mean_loser_mse,implicit_accuracy,wall_ms`
/// plus one row per step.
std::string metrics_csv(std::span<const MetricsRow> rows);
void write_metrics_csv(std::span<const MetricsRow> rows, const std::filesystem::path& path);

/// Dataset described by the config (style or reward kind), seeded from cfg.
std::vector<PreferencePair> make_dataset(const ExperimentConfig& cfg);

/// Writes text to a file, raising io-error on failure.
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace drpo

namespace drpo {

/// Base pretraining (SFT on the rejected/unstyled samples), optional SFT stage
/// on the preferred samples, then the configured preference stage.
struct StagedRun {
  TrainResult base;  ///< metrics empty when a base checkpoint was supplied
  std::optional<TrainResult> sft;
  TrainResult final;
};

StagedRun run_staged(const ExperimentConfig& cfg, std::span<const PreferencePair> dataset,
                     const Checkpoint* base_init = nullptr);

}  // namespace drpo
