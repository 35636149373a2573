#include "drpo/eval.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

#include <json.hpp>

#include "drpo/error.hpp"
#include "drpo/train.hpp"

namespace drpo {

namespace {

using Matrix = Eigen::MatrixXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Matrix to_matrix(ConstSpan flat, std::size_t d) {
  const auto n = static_cast<Eigen::Index>(d);
  return Eigen::Map<const RowMatrix>(flat.data(), n, n);
}

Vec to_flat(const Matrix& m) {
  Vec out(static_cast<std::size_t>(m.size()));
  Eigen::Map<RowMatrix>(out.data(), m.rows(), m.cols()) = m;
  return out;
}

/// Eigen-decomposition square root of a symmetric PSD matrix; rejects
/// eigenvalues below -tol and clamps the rest at zero.
Matrix psd_sqrt(const Matrix& m, double tol) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (m + m.transpose()));
  Eigen::VectorXd values = eig.eigenvalues();
  if (values.size() > 0 && values.minCoeff() < -tol) {
    throw Error(ErrorCode::non_psd, "matrix has eigenvalue " + std::to_string(values.minCoeff()));
  }
  values = values.cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * values.asDiagonal() * eig.eigenvectors().transpose();
}

void check_stats(const GaussianStats& g) {
  const std::size_t d = g.dim();
  if (g.cov.size() != d * d) throw Error(ErrorCode::dimension_mismatch, "covariance shape");
  const Matrix c = to_matrix(g.cov, d);
  if ((c - c.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, c.cwiseAbs().maxCoeff())) {
    throw Error(ErrorCode::non_psd, "covariance is not symmetric");
  }
}

double psd_tolerance(const Matrix& m) { return 1e-10 * std::max(1.0, m.cwiseAbs().maxCoeff()); }

double median(Vec values) {
  const auto mid = values.begin() + static_cast<std::ptrdiff_t>(values.size() / 2);
  std::nth_element(values.begin(), mid, values.end());
  return *mid;
}

}  // namespace

GaussianStats fit_gaussian(std::span<const Vec> samples) {
  if (samples.empty()) throw Error(ErrorCode::insufficient_samples, "no samples");
  const std::size_t d = samples.front().size();
  if (samples.size() < d + 1) {
    throw Error(ErrorCode::insufficient_samples, "need at least dim + 1 samples");
  }
  GaussianStats g{Vec(d, 0.0), Vec(d * d, 0.0)};
  for (const auto& s : samples) {
    if (s.size() != d) throw Error(ErrorCode::dimension_mismatch, "samples differ in dimension");
    for (std::size_t i = 0; i < d; ++i) g.mean[i] += s[i];
  }
  const double n = static_cast<double>(samples.size());
  for (auto& m : g.mean) m /= n;
  for (const auto& s : samples) {
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = 0; j < d; ++j) {
        g.cov[i * d + j] += (s[i] - g.mean[i]) * (s[j] - g.mean[j]);
      }
    }
  }
  for (auto& c : g.cov) c /= n - 1.0;
  return g;
}

double frechet_distance(const GaussianStats& a, const GaussianStats& b) {
  if (a.dim() != b.dim()) throw Error(ErrorCode::dimension_mismatch, "stats differ in dimension");
  check_stats(a);
  check_stats(b);
  const std::size_t d = a.dim();
  const Matrix ca = to_matrix(a.cov, d);
  const Matrix cb = to_matrix(b.cov, d);
  const Matrix sqrt_a = psd_sqrt(ca, psd_tolerance(ca));
  (void)psd_sqrt(cb, psd_tolerance(cb));  // PSD check on b
  const Matrix inner = sqrt_a * cb * sqrt_a;
  Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (inner + inner.transpose()),
                                            Eigen::EigenvaluesOnly);
  const double trace_sqrt = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  double mean_term = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    const double diff = a.mean[i] - b.mean[i];
    mean_term += diff * diff;
  }
  const double fd = mean_term + ca.trace() + cb.trace() - 2.0 * trace_sqrt;
  return std::max(fd, 0.0);
}

Vec covariance_product_sqrt(const GaussianStats& a, const GaussianStats& b) {
  if (a.dim() != b.dim()) throw Error(ErrorCode::dimension_mismatch, "stats differ in dimension");
  const std::size_t d = a.dim();
  const Matrix ca = to_matrix(a.cov, d);
  const Matrix cb = to_matrix(b.cov, d);
  const Matrix sqrt_a = psd_sqrt(ca, psd_tolerance(ca));
  const Matrix inner = sqrt_a * cb * sqrt_a;
  const Matrix middle = psd_sqrt(inner, psd_tolerance(inner));
  Eigen::LDLT<Matrix> solver(sqrt_a);
  if (solver.info() != Eigen::Success || !solver.isPositive()) {
    throw Error(ErrorCode::non_psd, "first covariance is singular");
  }
  const Matrix left = sqrt_a * middle;
  // left * sqrt_a^{-1} = (sqrt_a^{-1} left^T)^T since sqrt_a is symmetric.
  return to_flat(solver.solve(left.transpose()).transpose());
}

ToyReward::ToyReward(const BaseConfig& base, const StyleTransform& style) : dim_(base.dim) {
  base.validate();
  for (const auto& prompt : base.components) {
    styled_.emplace_back();
    precision_.emplace_back();
    for (const auto& comp : prompt) {
      MixtureComponent s = style.apply(comp);
      precision_.back().push_back(to_flat(to_matrix(s.cov, dim_).inverse()));
      styled_.back().push_back(std::move(s));
    }
  }
}

double ToyReward::component_score(ConstSpan sample, std::size_t prompt, std::size_t comp) const {
  const auto& mean = styled_[prompt][comp].mean;
  const auto& prec = precision_[prompt][comp];
  double acc = 0.0;
  for (std::size_t i = 0; i < dim_; ++i) {
    for (std::size_t j = 0; j < dim_; ++j) {
      acc += (sample[i] - mean[i]) * prec[i * dim_ + j] * (sample[j] - mean[j]);
    }
  }
  return -acc;
}

double ToyReward::score(ConstSpan sample, int prompt_id) const {
  if (prompt_id < 0 || static_cast<std::size_t>(prompt_id) >= styled_.size()) {
    throw Error(ErrorCode::unknown_prompt, "prompt id " + std::to_string(prompt_id));
  }
  if (sample.size() != dim_) throw Error(ErrorCode::dimension_mismatch, "reward sample dimension");
  const auto p = static_cast<std::size_t>(prompt_id);
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < styled_[p].size(); ++c) best = std::max(best, component_score(sample, p, c));
  return best;
}

double ToyReward::score(ConstSpan sample) const {
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t p = 0; p < styled_.size(); ++p) {
    best = std::max(best, score(sample, static_cast<int>(p)));
  }
  return best;
}

Vec ToyReward::score_batch(std::span<const Vec> samples, int prompt_id) const {
  if (prompt_id < 0 || static_cast<std::size_t>(prompt_id) >= styled_.size()) {
    throw Error(ErrorCode::unknown_prompt, "prompt id " + std::to_string(prompt_id));
  }
  const auto& comps = styled_[static_cast<std::size_t>(prompt_id)];
  Eigen::MatrixXd points(static_cast<Eigen::Index>(dim_), static_cast<Eigen::Index>(samples.size()));
  for (std::size_t k = 0; k < samples.size(); ++k) {
    if (samples[k].size() != dim_) throw Error(ErrorCode::dimension_mismatch, "reward sample dimension");
    points.col(static_cast<Eigen::Index>(k)) = Eigen::Map<const Eigen::VectorXd>(samples[k].data(), static_cast<Eigen::Index>(dim_));
  }
  Eigen::VectorXd best = Eigen::VectorXd::Constant(points.cols(), -std::numeric_limits<double>::infinity());
  for (std::size_t c = 0; c < comps.size(); ++c) {
    const Eigen::VectorXd mean = Eigen::Map<const Eigen::VectorXd>(comps[c].mean.data(), static_cast<Eigen::Index>(dim_));
    const Matrix prec = to_matrix(precision_[static_cast<std::size_t>(prompt_id)][c], dim_);
    const Matrix centered = points.colwise() - mean;
    const Eigen::VectorXd quad = (centered.array() * (prec * centered).array()).colwise().sum();
    best = best.cwiseMax(-quad);
  }
  return Vec(best.data(), best.data() + best.size());
}

GaussianStats ToyReward::target_moments(int prompt_id) const {
  if (prompt_id < 0 || static_cast<std::size_t>(prompt_id) >= styled_.size()) {
    throw Error(ErrorCode::unknown_prompt, "prompt id " + std::to_string(prompt_id));
  }
  const auto& comps = styled_[static_cast<std::size_t>(prompt_id)];
  const double w = 1.0 / static_cast<double>(comps.size());
  GaussianStats g{Vec(dim_, 0.0), Vec(dim_ * dim_, 0.0)};
  for (const auto& c : comps) {
    for (std::size_t i = 0; i < dim_; ++i) g.mean[i] += w * c.mean[i];
  }
  // Mixture covariance: E[cov + mean mean^T] - mu mu^T.
  for (const auto& c : comps) {
    for (std::size_t i = 0; i < dim_; ++i) {
      for (std::size_t j = 0; j < dim_; ++j) {
        g.cov[i * dim_ + j] += w * (c.cov[i * dim_ + j] + (c.mean[i] - g.mean[i]) * (c.mean[j] - g.mean[j]));
      }
    }
  }
  return g;
}

double toy_reward(ConstSpan sample, const StyleTransform& style, const BaseConfig& base) {
  return ToyReward(base, style).score(sample);
}

std::vector<Vec> reverse_sample(const Checkpoint& ckpt, ConstSpan prompt_features,
                                std::size_t n, std::uint64_t seed,
                                const SamplerObserver& observer) {
  ckpt.params.validate();
  const DiffusionSchedule s = ckpt.schedule.build();
  const std::size_t d = ckpt.params.output_dim();
  if (ckpt.params.input_dim() != d + kTimeFeatureDim + prompt_features.size()) {
    throw Error(ErrorCode::dimension_mismatch, "prompt features do not match the checkpoint");
  }
  Rng rng(seed);
  std::vector<Vec> ys;
  ys.reserve(n);
  for (std::size_t k = 0; k < n; ++k) ys.push_back(standard_normal(rng, d));
  if (n == 0) return ys;
  for (int t = s.steps() - 2; t >= 0; --t) {
    const double noise_scale = s.sigma(t + 1);
    if (observer) observer(t, noise_scale);
    for (auto& y : ys) {
      const Vec eps = denoise(ckpt.params, y, t + 1, prompt_features, s);
      Vec next = ancestral_mean(s, y, eps, t);
      const Vec z = standard_normal(rng, d);
      for (std::size_t i = 0; i < d; ++i) next[i] += noise_scale * z[i];
      y = std::move(next);
    }
  }
  return ys;
}

WinRateResult win_rate(const Checkpoint& a, const Checkpoint& b, std::span<const int> prompts,
                       const BaseConfig& base, std::size_t k, const SampleScorer& scorer,
                       std::uint64_t seed) {
  if (k == 0 || k % 2 == 0) throw Error(ErrorCode::invalid_k, "k must be odd, got " + std::to_string(k));
  if (prompts.empty()) throw Error(ErrorCode::empty_batch, "win rate needs at least one prompt");
  WinRateResult result;
  double wins = 0.0;
  for (std::size_t q = 0; q < prompts.size(); ++q) {
    const int prompt = prompts[q];
    const Vec features = base.prompt_features(prompt);
    const std::uint64_t prompt_seed = derive_seed(seed, q);
    auto median_score = [&](const Checkpoint& ckpt) {
      Vec scores;
      for (const auto& y : reverse_sample(ckpt, features, k, prompt_seed)) {
        scores.push_back(scorer(y, prompt));
      }
      return median(std::move(scores));
    };
    WinRateRow row{prompt, median_score(a), median_score(b), 0.5};
    if (row.median_a > row.median_b) row.outcome = 1.0;
    else if (row.median_a < row.median_b) row.outcome = 0.0;
    wins += row.outcome;
    result.rows.push_back(row);
  }
  result.rate = wins / static_cast<double>(prompts.size());
  return result;
}

StyleScore style_alignment(const Checkpoint& ckpt, const ExperimentConfig& cfg,
                           std::size_t samples_per_prompt, std::uint64_t seed) {
  const ToyReward reward(cfg.base, cfg.transform());
  StyleScore score;
  double reward_total = 0.0;
  std::size_t reward_count = 0;
  for (std::size_t p = 0; p < cfg.base.num_prompts(); ++p) {
    const int prompt = static_cast<int>(p);
    const auto samples = reverse_sample(ckpt, cfg.base.prompt_features(prompt),
                                        samples_per_prompt, derive_seed(seed, p));
    score.per_prompt_fd.push_back(
        frechet_distance(fit_gaussian(samples), reward.target_moments(prompt)));
    for (double r : reward.score_batch(samples, prompt)) {
      reward_total += r;
      ++reward_count;
    }
  }
  double fd_total = 0.0;
  for (double fd : score.per_prompt_fd) fd_total += fd;
  score.mean_fd = fd_total / static_cast<double>(score.per_prompt_fd.size());
  score.mean_reward = reward_total / static_cast<double>(reward_count);
  return score;
}

std::vector<AblationRow> ablation_sweep(const ExperimentConfig& cfg,
                                        std::span<const PreferencePair> dataset,
                                        const Checkpoint& init, std::span<const double> tau_grid) {
  if (tau_grid.empty()) throw Error(ErrorCode::invalid_range, "tau grid is empty");
  std::vector<AblationRow> rows;
  for (double tau : tau_grid) {
    ExperimentConfig run = cfg;
    run.train.loss.tau = tau;
    const TrainResult trained = run_preference(run, dataset, init);
    const StyleScore score = style_alignment(trained.checkpoint, run, cfg.eval.samples_per_prompt,
                                             cfg.seed_for("eval"));
    rows.push_back({tau, trained.metrics.back().loss, score.mean_fd, score.mean_reward});
  }
  return rows;
}

std::string ablation_csv(std::span<const AblationRow> rows) {
  std::string out = "tau,final_loss,frechet_distance,mean_reward\n";
  for (const auto& r : rows) {
    out += format_double(r.tau) + "," + format_double(r.final_loss) + "," +
           format_double(r.frechet_distance) + "," + format_double(r.mean_reward) + "\n";
  }
  return out;
}

std::string win_rate_csv(const WinRateResult& result) {
  std::string out = "prompt_id,median_a,median_b,outcome\n";
  for (const auto& r : result.rows) {
    out += std::to_string(r.prompt_id) + "," + format_double(r.median_a) + "," +
           format_double(r.median_b) + "," + format_double(r.outcome) + "\n";
  }
  return out;
}

std::string samples_jsonl(std::span<const Vec> samples, int prompt_id) {
  std::string out;
  for (const auto& y : samples) {
    nlohmann::ordered_json j;
    j["prompt_id"] = prompt_id;
    j["y"] = y;
    out += j.dump() + "\n";
  }
  return out;
}

}  // namespace drpo
