#include "drpo/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include "drpo/error.hpp"
#include "drpo/eval.hpp"

namespace drpo {

namespace {

constexpr int kMaxNonFiniteSteps = 3;

std::vector<PreferencePair> draw_minibatch(std::span<const PreferencePair> dataset,
                                           std::size_t batch_size, Rng& rng) {
  const std::size_t m = std::min(batch_size, dataset.size());
  std::vector<PreferencePair> batch;
  batch.reserve(m);
  std::sample(dataset.begin(), dataset.end(), std::back_inserter(batch), m, rng);
  return batch;
}

struct StepTotals {
  double loss = 0.0;
  Vec grad;
  BatchStats stats;
};

/// Averages `grad_accum` microbatch gradients into one update direction.
StepTotals accumulate(const ExperimentConfig& cfg, const DenoiserParams& p,
                      const DenoiserParams& ref, std::span<const PreferencePair> dataset,
                      const DiffusionSchedule& schedule, LossKind kind, Rng& rng,
                      bool contrastive) {
  const auto& t = cfg.train;
  StepTotals totals;
  totals.grad.assign(p.theta.size(), 0.0);
  const double inv = 1.0 / static_cast<double>(t.grad_accum);
  for (std::size_t micro = 0; micro < t.grad_accum; ++micro) {
    const auto batch = draw_minibatch(dataset, t.batch_size, rng);
    const WeightMatrix w =
        contrastive ? batch_weights(cfg, batch) : WeightMatrix::identity(batch.size());
    const LossGradient lg =
        loss_gradient(p, ref, batch, w, schedule, t.loss, kind, rng, t.gradient);
    totals.loss += inv * lg.loss;
    for (std::size_t k = 0; k < totals.grad.size(); ++k) totals.grad[k] += inv * lg.grad[k];
    totals.stats.mean_winner_mse += inv * lg.stats.mean_winner_mse;
    totals.stats.mean_loser_mse += inv * lg.stats.mean_loser_mse;
    totals.stats.implicit_accuracy += inv * lg.stats.implicit_accuracy;
  }
  return totals;
}

struct LoopSpec {
  LossKind kind;
  std::size_t steps;
  double lr;
  bool contrastive;
  std::uint64_t seed;
};

TrainResult train_loop(const ExperimentConfig& cfg, std::span<const PreferencePair> dataset,
                       DenoiserParams start, const LoopSpec& spec) {
  if (dataset.empty()) throw Error(ErrorCode::empty_batch, "training dataset is empty");
  const DiffusionSchedule schedule = cfg.schedule.build();
  TrainResult result;
  result.reference = start;
  const DenoiserParams& ref = result.reference;
  DenoiserParams params = std::move(start);
  OptimizerState opt = OptimizerState::zeros(params.theta.size(), spec.lr, cfg.train.weight_decay);
  Rng rng(spec.seed);
  int non_finite = 0;
  result.metrics.reserve(spec.steps);
  for (std::size_t step = 0; step < spec.steps; ++step) {
    const auto started = std::chrono::steady_clock::now();
    StepTotals totals =
        accumulate(cfg, params, ref, dataset, schedule, spec.kind, rng, spec.contrastive);
    const bool finite = std::isfinite(totals.loss) &&
                        std::all_of(totals.grad.begin(), totals.grad.end(),
                                    [](double g) { return std::isfinite(g); });
    if (finite) {
      non_finite = 0;
      std::tie(params, opt) = optimizer_step(std::move(params), totals.grad, std::move(opt));
    } else if (++non_finite >= kMaxNonFiniteSteps) {
      throw Error(ErrorCode::divergence,
                  "loss non-finite for 3 consecutive steps (step " + std::to_string(step) + ")");
    }
    MetricsRow row{step, totals.loss, totals.stats.mean_winner_mse, totals.stats.mean_loser_mse,
                   totals.stats.implicit_accuracy, 0.0};
    if (cfg.train.record_wall_time) {
      row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                              started)
                        .count();
    }
    result.metrics.push_back(row);
  }
  result.checkpoint = Checkpoint{std::move(params), cfg.schedule, cfg.to_map()};
  return result;
}

}  // namespace

bool uses_contrastive_weights(const TrainConfig& t) {
  const bool relative = t.loss_kind == LossKind::rpo || t.loss_kind == LossKind::orrpo;
  return relative && t.weighting != WeightingMode::diagonal;
}

WeightMatrix batch_weights(const ExperimentConfig& cfg, std::span<const PreferencePair> batch) {
  if (batch.empty()) throw Error(ErrorCode::empty_batch, "weight matrix of an empty batch");
  if (!uses_contrastive_weights(cfg.train)) return WeightMatrix::identity(batch.size());
  const Codebook codebook = cfg.codebook();
  std::vector<JointEmbedding> winners, losers;
  winners.reserve(batch.size());
  losers.reserve(batch.size());
  for (const auto& pair : batch) {
    winners.push_back(embed_pair(pair.y_w, pair.prompt_features, codebook));
    losers.push_back(embed_pair(pair.y_l, pair.prompt_features, codebook));
  }
  return weight_matrix(winners, losers, cfg.train.loss.tau);
}

TrainResult run_sft(const ExperimentConfig& cfg, std::span<const PreferencePair> dataset,
                    std::size_t steps, SftTarget target, const Checkpoint* init) {
  if (steps < 1) throw Error(ErrorCode::config_error, "sft needs at least one step");
  std::vector<PreferencePair> view(dataset.begin(), dataset.end());
  if (target == SftTarget::losers) {
    for (auto& pair : view) pair.y_w = pair.y_l;
  }
  DenoiserParams start = init != nullptr
                             ? init->params
                             : init_params(cfg.arch(), cfg.seed_for("init"), cfg.activation);
  if (start.arch != cfg.arch()) {
    throw Error(ErrorCode::shape_mismatch, "initial checkpoint architecture differs from config");
  }
  const LoopSpec spec{LossKind::sft, steps, cfg.train.sft_lr, false,
                      cfg.seed_for(target == SftTarget::losers ? "pretrain" : "sft")};
  return train_loop(cfg, view, std::move(start), spec);
}

TrainResult run_preference(const ExperimentConfig& cfg, std::span<const PreferencePair> dataset,
                           const Checkpoint& init) {
  cfg.train.validate();
  init.params.validate();
  if (init.params.arch != cfg.arch()) {
    throw Error(ErrorCode::shape_mismatch, "initial checkpoint architecture differs from config");
  }
  const LossKind kind = cfg.train.loss_kind;
  const bool contrastive = uses_contrastive_weights(cfg.train);
  const double lr = kind == LossKind::sft ? cfg.train.sft_lr : cfg.train.preference_lr();
  const LoopSpec spec{kind, cfg.train.steps, lr, contrastive, cfg.seed_for("preference")};
  return train_loop(cfg, dataset, init.params, spec);
}

std::string metrics_csv(std::span<const MetricsRow> rows) {
  std::string out = "step,loss,mean_winner_mse,mean_loser_mse,implicit_accuracy,wall_ms\n";
  for (const auto& r : rows) {
    out += std::to_string(r.step) + "," + format_double(r.loss) + "," +
           format_double(r.mean_winner_mse) + "," + format_double(r.mean_loser_mse) + "," +
           format_double(r.implicit_accuracy) + "," + format_double(r.wall_ms) + "\n";
  }
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::io_error, "cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw Error(ErrorCode::io_error, "write failed for " + path.string());
}

void write_metrics_csv(std::span<const MetricsRow> rows, const std::filesystem::path& path) {
  write_text(path, metrics_csv(rows));
}

std::vector<PreferencePair> make_dataset(const ExperimentConfig& cfg) {
  const StyleTransform transform = cfg.transform();
  if (cfg.dataset_kind == DatasetKind::style) {
    return build_style_dataset(cfg.base, transform, cfg.n_pairs, cfg.seed_for("data"));
  }
  const ToyReward reward(cfg.base, transform);
  return build_reward_dataset(
      cfg.base, transform, [&](ConstSpan y, int prompt) { return reward.score(y, prompt); },
      cfg.n_pairs, cfg.seed_for("data"));
}

}  // namespace drpo

namespace drpo {

StagedRun run_staged(const ExperimentConfig& cfg, std::span<const PreferencePair> dataset,
                     const Checkpoint* base_init) {
  StagedRun run;
  if (base_init != nullptr) {
    run.base.checkpoint = *base_init;
    run.base.reference = base_init->params;
  } else {
    run.base = run_sft(cfg, dataset, cfg.train.pretrain_steps, SftTarget::losers);
  }
  const Checkpoint* start = &run.base.checkpoint;
  if (cfg.train.stage == TrainingStage::two_stage) {
    run.sft = run_sft(cfg, dataset, cfg.train.sft_steps, SftTarget::winners, start);
    start = &run.sft->checkpoint;
  }
  run.final = run_preference(cfg, dataset, *start);
  return run;
}

}  // namespace drpo
