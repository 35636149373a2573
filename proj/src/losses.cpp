#include "drpo/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "drpo/error.hpp"

namespace drpo {

namespace {

constexpr double kMseFloor = 1e-8;
constexpr double kMseDegenerate = 1e-12;

/// sigma(-x) = d/dx log sigma(x)
double sigmoid_neg(double x) {
  if (x >= 0.0) {
    const double z = std::exp(-x);
    return z / (1.0 + z);
  }
  return 1.0 / (1.0 + std::exp(x));
}

void check_errors(const PairErrors& e) {
  for (double v : {e.mse_theta_w, e.mse_ref_w, e.mse_theta_l, e.mse_ref_l}) {
    if (!std::isfinite(v) || v < 0.0) {
      throw Error(ErrorCode::invalid_range, "pair errors must be finite and non-negative");
    }
  }
}

void check_grid(const ErrorGrid& grid, const WeightMatrix& w) {
  if (grid.size() == 0) throw Error(ErrorCode::empty_batch, "empty error grid");
  if (grid.size() != w.size()) {
    throw Error(ErrorCode::dimension_mismatch,
                "error grid is " + std::to_string(grid.size()) + "x" + std::to_string(grid.size()) +
                    " but weights are " + std::to_string(w.size()) + "x" + std::to_string(w.size()));
  }
}

double clamp_mse(double mse) {
  if (!std::isfinite(mse) || mse < kMseDegenerate) {
    throw Error(ErrorCode::degenerate_mse, "mse " + std::to_string(mse) + " below 1e-12");
  }
  return std::max(mse, kMseFloor);
}

/// d/dm log(1 - exp(-m/2)) = 0.5 / expm1(m/2); zero where the clamp is active.
double d_log_one_minus_density(double mse) {
  if (mse < kMseFloor) return 0.0;
  return 0.5 / std::expm1(0.5 * mse);
}

/// Odds-ratio contrast for one pairing. Larger is better for the winner.
double odds_argument(double mse_w, double mse_l) {
  return (mse_l - mse_w) + log_one_minus_density(mse_w) - log_one_minus_density(mse_l);
}

/// One weighted cell of the odds-ratio loss: weight * (mse_w - lambda * log sigma(z)).
/// Writes the partials into `partial` and returns the cell's contribution.
double odds_ratio_cell(const PairErrors& e, double weight, double lambda, PairErrors& partial) {
  check_errors(e);
  partial = PairErrors{};
  if (weight == 0.0) return 0.0;
  // SFT part: rows of W sum to one, so summed over j this is the mean winner error.
  double value = weight * e.mse_theta_w;
  partial.mse_theta_w = weight;
  if (lambda == 0.0) return value;
  const double z = odds_argument(e.mse_theta_w, e.mse_theta_l);
  value -= weight * lambda * log_sigmoid(z);
  const double d_z = -weight * lambda * sigmoid_neg(z);
  partial.mse_theta_w += d_z * (-1.0 + d_log_one_minus_density(e.mse_theta_w));
  partial.mse_theta_l += d_z * (1.0 - d_log_one_minus_density(e.mse_theta_l));
  return value;
}

}  // namespace

std::string_view to_string(LossKind kind) {
  switch (kind) {
    case LossKind::rpo: return "rpo";
    case LossKind::dpo: return "dpo";
    case LossKind::sft: return "sft";
    case LossKind::orpo: return "orpo";
    case LossKind::orrpo: return "orrpo";
  }
  return "unknown";
}

LossKind parse_loss_kind(std::string_view name) {
  for (auto k : {LossKind::rpo, LossKind::dpo, LossKind::sft, LossKind::orpo, LossKind::orrpo}) {
    if (name == to_string(k)) return k;
  }
  throw Error(ErrorCode::unknown_loss_kind, "unknown loss kind '" + std::string(name) + "'");
}

std::string_view to_string(WeightPlacement placement) {
  return placement == WeightPlacement::outside_logsigmoid ? "outside" : "inside";
}

WeightPlacement parse_weight_placement(std::string_view name) {
  if (name == "outside" || name == "outside_logsigmoid") return WeightPlacement::outside_logsigmoid;
  if (name == "inside" || name == "inside_logsigmoid") return WeightPlacement::inside_logsigmoid;
  throw Error(ErrorCode::config_error, "unknown weight placement '" + std::string(name) + "'");
}

void LossConfig::validate() const {
  if (!(beta > 0.0)) throw Error(ErrorCode::invalid_range, "beta must be positive");
  if (!(tau > 0.0)) throw Error(ErrorCode::non_positive_temperature, "tau must be positive");
  if (!(lambda_orpo >= 0.0)) throw Error(ErrorCode::invalid_range, "lambda must be non-negative");
}

ErrorGrid::ErrorGrid(std::size_t size, std::vector<PairErrors> cells)
    : size_(size), cells_(std::move(cells)) {
  if (cells_.size() != size * size) {
    throw Error(ErrorCode::dimension_mismatch, "error grid cells do not form an M x M table");
  }
}

ErrorGrid ErrorGrid::from_samples(ConstSpan theta_w, ConstSpan ref_w, ConstSpan theta_l,
                                  ConstSpan ref_l) {
  const std::size_t m = theta_w.size();
  if (ref_w.size() != m || theta_l.size() != m || ref_l.size() != m) {
    throw Error(ErrorCode::dimension_mismatch, "per-sample error lists differ in length");
  }
  ErrorGrid grid(m);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      grid.at(i, j) = PairErrors{theta_w[i], ref_w[i], theta_l[j], ref_l[j]};
    }
  }
  return grid;
}

std::vector<PairErrors> ErrorGrid::diagonal() const {
  std::vector<PairErrors> out;
  out.reserve(size_);
  for (std::size_t i = 0; i < size_; ++i) out.push_back(at(i, i));
  return out;
}

double log_sigmoid(double x) {
  // log sigma(x) = -softplus(-x)
  return -(std::max(-x, 0.0) + std::log1p(std::exp(-std::abs(x))));
}

double rpo_inner(const PairErrors& e, double beta) {
  return -0.5 * beta * ((e.mse_theta_w - e.mse_ref_w) - (e.mse_theta_l - e.mse_ref_l));
}

double log_one_minus_density(double mse) {
  return std::log(-std::expm1(-0.5 * clamp_mse(mse)));
}

LossEval diffusion_rpo_loss_eval(const ErrorGrid& grid, const WeightMatrix& w,
                                 const LossConfig& cfg) {
  check_grid(grid, w);
  cfg.validate();
  const std::size_t m = grid.size();
  const auto inv_m = 1.0 / static_cast<double>(m);
  const bool inside = cfg.weight_placement == WeightPlacement::inside_logsigmoid;
  // Inside placement averages over all M*M cells, as in the paired-prompt RPO loss.
  const double norm = inside ? inv_m * inv_m : inv_m;
  const double half_beta = 0.5 * cfg.beta;

  LossEval out;
  out.partials.resize(m * m);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      const PairErrors& e = grid.at(i, j);
      check_errors(e);
      const double omega = w(i, j);
      const double inner = rpo_inner(e, cfg.beta);
      double d_inner = 0.0;  // dL / d inner
      if (inside) {
        out.value -= norm * log_sigmoid(omega * inner);
        d_inner = -norm * omega * sigmoid_neg(omega * inner);
      } else {
        out.value -= norm * omega * log_sigmoid(inner);
        d_inner = -norm * omega * sigmoid_neg(inner);
      }
      PairErrors& p = out.partials[i * m + j];
      p.mse_theta_w = -half_beta * d_inner;
      p.mse_ref_w = half_beta * d_inner;
      p.mse_theta_l = half_beta * d_inner;
      p.mse_ref_l = -half_beta * d_inner;
    }
  }
  return out;
}

double diffusion_rpo_loss(const ErrorGrid& grid, const WeightMatrix& w, const LossConfig& cfg) {
  return diffusion_rpo_loss_eval(grid, w, cfg).value;
}

LossEval diffusion_dpo_loss_eval(std::span<const PairErrors> pairs, const LossConfig& cfg) {
  if (pairs.empty()) throw Error(ErrorCode::empty_batch, "dpo loss of an empty batch");
  cfg.validate();
  const double inv_m = 1.0 / static_cast<double>(pairs.size());
  const double half_beta = 0.5 * cfg.beta;
  LossEval out;
  out.partials.resize(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    check_errors(pairs[i]);
    const double inner = rpo_inner(pairs[i], cfg.beta);
    out.value -= inv_m * log_sigmoid(inner);
    const double d_inner = -inv_m * sigmoid_neg(inner);
    PairErrors& p = out.partials[i];
    p.mse_theta_w = -half_beta * d_inner;
    p.mse_ref_w = half_beta * d_inner;
    p.mse_theta_l = half_beta * d_inner;
    p.mse_ref_l = -half_beta * d_inner;
  }
  return out;
}

double diffusion_dpo_loss(std::span<const PairErrors> pairs, const LossConfig& cfg) {
  return diffusion_dpo_loss_eval(pairs, cfg).value;
}

double sft_loss(ConstSpan mse_theta_w) {
  if (mse_theta_w.empty()) throw Error(ErrorCode::empty_batch, "sft loss of an empty batch");
  double total = 0.0;
  for (double v : mse_theta_w) total += v;
  return total / static_cast<double>(mse_theta_w.size());
}

LossEval orrpo_loss_eval(const ErrorGrid& grid, const WeightMatrix& w, const LossConfig& cfg) {
  check_grid(grid, w);
  cfg.validate();
  const std::size_t m = grid.size();
  const double inv_m = 1.0 / static_cast<double>(m);
  LossEval out;
  out.partials.resize(m * m);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      out.value += odds_ratio_cell(grid.at(i, j), inv_m * w(i, j), cfg.lambda_orpo,
                                   out.partials[i * m + j]);
    }
  }
  return out;
}

double orrpo_loss(const ErrorGrid& grid, const WeightMatrix& w, const LossConfig& cfg) {
  return orrpo_loss_eval(grid, w, cfg).value;
}

LossEval orpo_loss_eval(std::span<const PairErrors> pairs, const LossConfig& cfg) {
  if (pairs.empty()) throw Error(ErrorCode::empty_batch, "orpo loss of an empty batch");
  cfg.validate();
  const double inv_m = 1.0 / static_cast<double>(pairs.size());
  LossEval out;
  out.partials.resize(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    out.value += odds_ratio_cell(pairs[i], inv_m, cfg.lambda_orpo, out.partials[i]);
  }
  return out;
}

double orpo_loss(std::span<const PairErrors> pairs, const LossConfig& cfg) {
  return orpo_loss_eval(pairs, cfg).value;
}

}  // namespace drpo
