#pragma once

#include <string_view>

#include "drpo/embed.hpp"
#include "drpo/types.hpp"

namespace drpo {

/// Squared noise-prediction errors for one (winner, loser) pairing under the
/// trained policy and the frozen reference.
struct PairErrors {
  double mse_theta_w = 0.0;
  double mse_ref_w = 0.0;
  double mse_theta_l = 0.0;
  double mse_ref_l = 0.0;

  bool operator==(const PairErrors&) const = default;
};

enum class LossKind { rpo, dpo, sft, orpo, orrpo };
enum class WeightPlacement { outside_logsigmoid, inside_logsigmoid };

std::string_view to_string(LossKind kind);
LossKind parse_loss_kind(std::string_view name);
std::string_view to_string(WeightPlacement placement);
WeightPlacement parse_weight_placement(std::string_view name);

struct LossConfig {
  double beta = 5000.0;
  double tau = 0.01;
  double lambda_orpo = 0.2;
  WeightPlacement weight_placement = WeightPlacement::outside_logsigmoid;

  void validate() const;
};

/// M x M table of PairErrors, entry (i, j) = winner i against loser j.
class ErrorGrid {
 public:
  explicit ErrorGrid(std::size_t size) : size_(size), cells_(size * size) {}
  ErrorGrid(std::size_t size, std::vector<PairErrors> cells);

  /// Builds the grid from per-sample errors: winner i and loser j each carry a
  /// single noise draw, so cell (i, j) combines winner row i with loser column j.
  static ErrorGrid from_samples(ConstSpan theta_w, ConstSpan ref_w, ConstSpan theta_l,
                                ConstSpan ref_l);

  std::size_t size() const noexcept { return size_; }
  PairErrors& at(std::size_t i, std::size_t j) { return cells_[i * size_ + j]; }
  const PairErrors& at(std::size_t i, std::size_t j) const { return cells_[i * size_ + j]; }
  std::span<const PairErrors> cells() const noexcept { return cells_; }
  std::vector<PairErrors> diagonal() const;

 private:
  std::size_t size_;
  std::vector<PairErrors> cells_;
};

/// A loss value together with its partial derivatives with respect to every
/// PairErrors field of every input cell (same layout as the input).
struct LossEval {
  double value = 0.0;
  std::vector<PairErrors> partials;
};

/// -(beta / 2) * [(mse_theta_w - mse_ref_w) - (mse_theta_l - mse_ref_l)]
double rpo_inner(const PairErrors& e, double beta);

double log_sigmoid(double x);

double diffusion_rpo_loss(const ErrorGrid& grid, const WeightMatrix& w, const LossConfig& cfg);
LossEval diffusion_rpo_loss_eval(const ErrorGrid& grid, const WeightMatrix& w,
                                 const LossConfig& cfg);

double diffusion_dpo_loss(std::span<const PairErrors> pairs, const LossConfig& cfg);
LossEval diffusion_dpo_loss_eval(std::span<const PairErrors> pairs, const LossConfig& cfg);

double sft_loss(ConstSpan mse_theta_w);

double orrpo_loss(const ErrorGrid& grid, const WeightMatrix& w, const LossConfig& cfg);
LossEval orrpo_loss_eval(const ErrorGrid& grid, const WeightMatrix& w, const LossConfig& cfg);

double orpo_loss(std::span<const PairErrors> pairs, const LossConfig& cfg);
LossEval orpo_loss_eval(std::span<const PairErrors> pairs, const LossConfig& cfg);

/// log(1 - exp(-mse / 2)) with mse clamped below at 1e-8; throws degenerate-mse
/// for mse < 1e-12 or non-finite input.
double log_one_minus_density(double mse);

}  // namespace drpo
