// Acceptance checks. One PASS/FAIL line per criterion; exit status is nonzero
// when any criterion fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "drpo/checkpoint.hpp"
#include "drpo/cli.hpp"
#include "drpo/eval.hpp"
#include "drpo/losses.hpp"
#include "drpo/model.hpp"
#include "drpo/schedule.hpp"
#include "drpo/train.hpp"

using namespace drpo;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

// Random pair-error grid with strictly positive errors.
ErrorGrid random_grid(Rng& rng, std::size_t m) {
  std::uniform_real_distribution<double> u(0.05, 3.0);
  ErrorGrid g(m);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < m; ++j) g.at(i, j) = {u(rng), u(rng), u(rng), u(rng)};
  }
  return g;
}

WeightMatrix random_weights(Rng& rng, std::size_t m, double tau) {
  std::uniform_real_distribution<double> u(0.0, 2.0);
  Vec d(m * m);
  for (double& v : d) v = u(rng);
  return WeightMatrix::from_distances(d, m, tau);
}

struct Problem {
  DenoiserParams policy;
  DenoiserParams reference;
  std::vector<PreferencePair> batch;
  WeightMatrix weights = WeightMatrix::identity(1);
};

// Small random network (10 to 100 parameters) and batch.
Problem random_problem(std::uint64_t seed, std::size_t m, double perturb) {
  Rng rng(seed);
  std::uniform_int_distribution<std::size_t> hidden(1, 6);
  const std::size_t d = 2;
  const std::size_t p = 1 + seed % 2;
  Problem prob;
  prob.reference = init_params(denoiser_arch(d, p, std::vector<std::size_t>{hidden(rng)}), seed * 3 + 1);
  prob.policy = prob.reference;
  std::normal_distribution<double> n01;
  for (double& v : prob.policy.theta) v += perturb * n01(rng);
  for (std::size_t i = 0; i < m; ++i) {
    prob.batch.push_back({static_cast<int>(i), standard_normal(rng, p), standard_normal(rng, d),
                          standard_normal(rng, d)});
  }
  prob.weights = random_weights(rng, m, 0.5);
  return prob;
}

double batch_loss(const Problem& prob, const DenoiserParams& policy, const WeightMatrix& w,
                  const DiffusionSchedule& s, const LossConfig& cfg, LossKind kind, std::uint64_t seed) {
  Rng rng(seed);
  return loss_gradient(policy, prob.reference, prob.batch, w, s, cfg, kind, rng).loss;
}

Verdict reference_identity() {
  const double log2 = std::log(2.0);
  const auto s = build_schedule(20, 1e-3, 0.05);
  LossConfig cfg;
  double worst = 0.0;
  Rng rng(101);
  for (std::uint64_t b = 0; b < 100; ++b) {
    const std::size_t m = 1 + b % 6;
    // Loss level: policy errors equal reference errors.
    ErrorGrid g = random_grid(rng, m);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < m; ++j) {
        g.at(i, j).mse_ref_w = g.at(i, j).mse_theta_w;
        g.at(i, j).mse_ref_l = g.at(i, j).mse_theta_l;
      }
    }
    const WeightMatrix w = random_weights(rng, m, 0.3);
    worst = std::max(worst, std::abs(diffusion_rpo_loss(g, w, cfg) - log2));
    worst = std::max(worst, std::abs(diffusion_dpo_loss(g.diagonal(), cfg) - log2));
    // Network level: policy parameters equal the reference parameters.
    const Problem prob = random_problem(1000 + b, m, 0.0);
    worst = std::max(worst, std::abs(batch_loss(prob, prob.policy, prob.weights, s, cfg, LossKind::rpo, b) - log2));
    worst = std::max(worst, std::abs(batch_loss(prob, prob.policy, WeightMatrix::identity(m), s, cfg,
                                                LossKind::dpo, b) - log2));
  }
  return {worst <= 1e-9, "max |loss - log 2| = " + fmt(worst)};
}

Verdict rpo_dpo_reduction() {
  const auto s = build_schedule(20, 1e-3, 0.05);
  Rng rng(202);
  double worst = 0.0;
  for (std::uint64_t b = 0; b < 100; ++b) {
    const std::size_t m = 1 + b % 8;
    LossConfig cfg;
    cfg.beta = std::pow(10.0, -1.0 + 4.0 * static_cast<double>(b) / 99.0);
    const ErrorGrid g = random_grid(rng, m);
    const WeightMatrix eye = WeightMatrix::identity(m);
    const double rpo = diffusion_rpo_loss(g, eye, cfg);
    const double dpo = diffusion_dpo_loss(g.diagonal(), cfg);
    worst = std::max(worst, std::abs(rpo - dpo) / std::abs(dpo));
    const Problem prob = random_problem(2000 + b, m, 0.3);
    const double nr = batch_loss(prob, prob.policy, eye, s, cfg, LossKind::rpo, b);
    const double nd = batch_loss(prob, prob.policy, eye, s, cfg, LossKind::dpo, b);
    worst = std::max(worst, std::abs(nr - nd) / std::abs(nd));
  }
  return {worst <= 1e-12, "max relative gap = " + fmt(worst)};
}

Verdict weight_matrix_suite() {
  Rng rng(303);
  std::uniform_real_distribution<double> u(0.0, 2.0);
  double row_err = 0.0, flat_err = 0.0, min_mass = 1.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t m = 2 + trial % 7;
    Vec d(m * m);
    for (double& v : d) v = u(rng);
    for (double tau : {1e-3, 0.01, 0.1, 1.0, 5.0}) {
      const WeightMatrix w = WeightMatrix::from_distances(d, m, tau);
      for (std::size_t i = 0; i < m; ++i) {
        double total = 0.0;
        for (std::size_t j = 0; j < m; ++j) total += w(i, j);
        row_err = std::max(row_err, std::abs(total - 1.0));
      }
    }
    const WeightMatrix hot = WeightMatrix::from_distances(d, m, 1e9);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < m; ++j) {
        flat_err = std::max(flat_err, std::abs(hot(i, j) - 1.0 / static_cast<double>(m)));
      }
    }
    // Distances on a 1e-3 lattice, shuffled per row, so the argmin is separated by >= 1e-3.
    Vec sep(m * m);
    std::vector<std::size_t> argmin(m);
    for (std::size_t i = 0; i < m; ++i) {
      std::vector<double> row(m);
      for (std::size_t j = 0; j < m; ++j) row[j] = 0.3 + 1e-3 * static_cast<double>(j);
      std::shuffle(row.begin(), row.end(), rng);
      for (std::size_t j = 0; j < m; ++j) sep[i * m + j] = row[j];
      argmin[i] = static_cast<std::size_t>(std::min_element(row.begin(), row.end()) - row.begin());
    }
    const WeightMatrix cold = WeightMatrix::from_distances(sep, m, 1e-6);
    for (std::size_t i = 0; i < m; ++i) min_mass = std::min(min_mass, cold(i, argmin[i]));
  }
  // Embedding path with real cosine distances.
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t m = 2 + trial % 5;
    std::vector<JointEmbedding> win, lose;
    for (std::size_t k = 0; k < m; ++k) {
      win.emplace_back(standard_normal(rng, 6));
      lose.emplace_back(standard_normal(rng, 6));
    }
    const WeightMatrix w = weight_matrix(win, lose, 0.05);
    for (std::size_t i = 0; i < m; ++i) {
      double total = 0.0;
      for (std::size_t j = 0; j < m; ++j) total += w(i, j);
      row_err = std::max(row_err, std::abs(total - 1.0));
    }
  }
  const double s = std::sqrt(2.0) / 2.0;
  const std::vector<JointEmbedding> win{JointEmbedding(Vec{1.0, 0.0}), JointEmbedding(Vec{0.0, 1.0})};
  const std::vector<JointEmbedding> lose{JointEmbedding(Vec{1.0, 0.0}), JointEmbedding(Vec{s, s})};
  const WeightMatrix ex = weight_matrix(win, lose, 1.0);
  const double oracle[4] = {0.57270429279553685252, 0.42729570720446314748,
                            0.33023845067334307438, 0.66976154932665692562};
  double ex_err = 0.0;
  for (std::size_t k = 0; k < 4; ++k) ex_err = std::max(ex_err, std::abs(ex(k / 2, k % 2) - oracle[k]));
  const bool pass = row_err <= 1e-9 && flat_err < 1e-6 && min_mass > 0.999 && ex_err <= 1e-10;
  return {pass, "row-sum err " + fmt(row_err) + ", tau=1e9 dev " + fmt(flat_err) +
                    ", tau=1e-6 argmin mass " + fmt(min_mass) + ", worked example err " + fmt(ex_err)};
}

Verdict gradient_correctness() {
  const auto s = build_schedule(20, 1e-3, 0.05);
  LossConfig cfg;
  cfg.beta = 10.0;
  cfg.lambda_orpo = 0.5;
  const double h = 1e-5;
  double worst = 0.0;
  std::size_t min_params = 1000, max_params = 0;
  for (LossKind kind : {LossKind::rpo, LossKind::dpo, LossKind::sft, LossKind::orpo, LossKind::orrpo}) {
    for (std::uint64_t c = 0; c < 20; ++c) {
      const Problem prob = random_problem(4000 + c, 3, 0.3);
      const std::size_t n = prob.policy.theta.size();
      min_params = std::min(min_params, n);
      max_params = std::max(max_params, n);
      const bool coupled = kind == LossKind::rpo || kind == LossKind::orrpo;
      const WeightMatrix w = coupled ? prob.weights : WeightMatrix::identity(3);
      Rng rng(c);
      const LossGradient lg = loss_gradient(prob.policy, prob.reference, prob.batch, w, s, cfg, kind, rng);
      for (std::size_t k = 0; k < n; ++k) {
        DenoiserParams plus = prob.policy, minus = prob.policy;
        plus.theta[k] += h;
        minus.theta[k] -= h;
        const double fd = (batch_loss(prob, plus, w, s, cfg, kind, c) -
                           batch_loss(prob, minus, w, s, cfg, kind, c)) / (2 * h);
        // Relative error, with an absolute floor of 1e-7 for vanishing coordinates.
        const double scale = std::max({std::abs(fd), std::abs(lg.grad[k]), 1e-7});
        worst = std::max(worst, std::abs(fd - lg.grad[k]) / scale);
      }
    }
  }
  const bool sizes_ok = min_params >= 10 && max_params <= 100;
  return {worst <= 1e-4 && sizes_ok, "max relative error " + fmt(worst) + " over 5 x 20 configs of " +
                                         std::to_string(min_params) + "-" + std::to_string(max_params) +
                                         " parameters"};
}

Verdict schedule_consistency() {
  const auto s = build_schedule(1000, 1e-4, 0.02);
  std::ifstream in(DRPO_ORACLE_DIR "/logprob_coefficients_T1000.txt");
  if (!in) return {false, "oracle file missing"};
  int t = 0, rows = 0;
  double expected = 0.0, worst = 0.0;
  while (in >> t >> expected) {
    worst = std::max(worst, std::abs(logprob_coefficient(s, t) - expected) / expected);
    ++rows;
  }
  return {rows == 998 && worst <= 1e-12,
          std::to_string(rows) + " steps, max relative error " + fmt(worst)};
}

// Shared toy pipeline for the style-alignment, ablation and win-rate checks.
struct Pipeline {
  ExperimentConfig cfg;
  std::vector<PreferencePair> data;
  Checkpoint base;
  Checkpoint sft;
  std::optional<Checkpoint> rpo;

  Pipeline() {
    cfg.train.loss.tau = 5.0;
    data = make_dataset(cfg);
    base = run_sft(cfg, data, cfg.train.pretrain_steps, SftTarget::losers).checkpoint;
    sft = run_sft(cfg, data, cfg.train.sft_steps, SftTarget::winners, &base).checkpoint;
  }

  double fd(const Checkpoint& c) const {
    return style_alignment(c, cfg, cfg.eval.samples_per_prompt, cfg.seed_for("eval")).mean_fd;
  }
};

Pipeline& pipeline() {
  static Pipeline p;
  return p;
}

Verdict style_alignment_check() {
  Pipeline& p = pipeline();
  const double fd_base = p.fd(p.base);
  const double fd_sft = p.fd(p.sft);

  ExperimentConfig rpo_cfg = p.cfg;
  rpo_cfg.train.loss_kind = LossKind::rpo;
  p.rpo = run_preference(rpo_cfg, p.data, p.sft).checkpoint;
  ExperimentConfig dpo_cfg = p.cfg;
  dpo_cfg.train.loss_kind = LossKind::dpo;
  const Checkpoint dpo = run_preference(dpo_cfg, p.data, p.sft).checkpoint;
  const Checkpoint sft2 =
      run_sft(p.cfg, p.data, p.cfg.train.steps, SftTarget::winners, &p.sft).checkpoint;

  const double fd_rpo = p.fd(*p.rpo);
  const double fd_dpo = p.fd(dpo);
  const double fd_sft2 = p.fd(sft2);
  std::cout << "  two-stage comparison, tau=5, " << p.cfg.train.steps << " second-stage steps, shared seeds\n"
            << "    checkpoint      frechet_distance\n"
            << "    base            " << fmt(fd_base) << "\n"
            << "    SFT (stage 1)   " << fmt(fd_sft) << "\n"
            << "    SFT+SFT         " << fmt(fd_sft2) << "\n"
            << "    SFT+DPO         " << fmt(fd_dpo) << "\n"
            << "    SFT+RPO         " << fmt(fd_rpo) << "\n"
            << "    SFT+RPO best of the three: " << (fd_rpo <= std::min(fd_dpo, fd_sft2) ? "yes" : "no")
            << "\n    SFT+RPO / base: " << fmt(fd_rpo / fd_base) << "\n";
  const double ratio = fd_rpo / fd_sft;
  return {ratio <= 0.5, "FD " + fmt(fd_sft) + " -> " + fmt(fd_rpo) + ", ratio to the SFT checkpoint " +
                            fmt(ratio) + " (needs <= 0.5)"};
}

Verdict ablation_check() {
  Pipeline& p = pipeline();
  const auto rows = ablation_sweep(p.cfg, p.data, p.sft, p.cfg.eval.tau_grid);
  std::istringstream table(ablation_csv(rows));
  for (std::string line; std::getline(table, line);) std::cout << "    " << line << "\n";
  const std::vector<double> grid{0.01, 0.1, 1.0, 2.0, 5.0};
  bool grid_ok = rows.size() == grid.size();
  for (std::size_t k = 0; grid_ok && k < rows.size(); ++k) grid_ok = rows[k].tau == grid[k];
  if (!grid_ok) return {false, "unexpected tau grid"};
  const double lo = rows.front().frechet_distance, hi = rows.back().frechet_distance;
  return {hi <= lo, "FD(tau=5) " + fmt(hi) + " vs FD(tau=0.01) " + fmt(lo)};
}

Verdict win_rate_check() {
  Pipeline& p = pipeline();
  if (!p.rpo) {
    ExperimentConfig rpo_cfg = p.cfg;
    p.rpo = run_preference(rpo_cfg, p.data, p.sft).checkpoint;
  }
  const ToyReward reward(p.cfg.base, p.cfg.transform());
  const SampleScorer scorer = [&](ConstSpan y, int q) { return reward.score(y, q); };
  std::vector<int> prompts(200);
  for (std::size_t q = 0; q < prompts.size(); ++q) prompts[q] = static_cast<int>(q % p.cfg.base.num_prompts());
  const std::uint64_t seed = p.cfg.seed_for("win_rate");
  const double self = win_rate(*p.rpo, *p.rpo, prompts, p.cfg.base, 5, scorer, seed).rate;
  const double vs_base = win_rate(*p.rpo, p.base, prompts, p.cfg.base, 5, scorer, seed).rate;
  return {self == 0.5 && vs_base > 0.9,
          "self-play " + fmt(self) + ", trained vs base " + fmt(vs_base) + " over 200 prompts"};
}

Verdict determinism_check() {
  const fs::path root = fs::temp_directory_path() / "drpo-acceptance";
  fs::remove_all(root);
  const std::string conf = std::string(DRPO_CONFIG_DIR) + "/toy.conf";
  std::ostringstream sink;
  for (const char* run : {"a", "b"}) {
    const int code = dispatch({"train", "-c", conf, "--tau", "5", "-o", (root / run).string()}, sink, sink);
    if (code != 0) return {false, "train exited " + std::to_string(code) + ": " + sink.str()};
  }
  std::size_t compared = 0;
  for (const char* f : {"metrics_base.csv", "metrics_sft.csv", "metrics.csv", "base.ckpt", "sft.ckpt",
                        "final.ckpt"}) {
    if (slurp(root / "a" / f) != slurp(root / "b" / f)) return {false, std::string(f) + " differs"};
    ++compared;
  }

  const ExperimentConfig cfg;
  const auto pairs = make_dataset(cfg);
  save_dataset(pairs, root / "d1.jsonl");
  const auto loaded = load_dataset(root / "d1.jsonl");
  save_dataset(loaded, root / "d2.jsonl");
  bool data_ok = loaded.size() == pairs.size();
  for (std::size_t k = 0; data_ok && k < pairs.size(); ++k) {
    data_ok = loaded[k].prompt_id == pairs[k].prompt_id && loaded[k].y_w == pairs[k].y_w &&
              loaded[k].y_l == pairs[k].y_l && loaded[k].prompt_features == pairs[k].prompt_features;
  }
  data_ok = data_ok && slurp(root / "d1.jsonl") == slurp(root / "d2.jsonl");

  const Checkpoint ck = load_checkpoint(root / "a" / "final.ckpt");
  save_checkpoint(ck, root / "again.ckpt");
  const Checkpoint ck2 = load_checkpoint(root / "again.ckpt");
  const bool ckpt_ok = ck2.params.theta == ck.params.theta && ck2.params.arch == ck.params.arch &&
                       slurp(root / "again.ckpt") == slurp(root / "a" / "final.ckpt");
  fs::remove_all(root);
  return {data_ok && ckpt_ok, std::to_string(compared) + " run artifacts identical; dataset round-trip " +
                                  (data_ok ? "exact" : "differs") + "; checkpoint round-trip " +
                                  (ckpt_ok ? "exact" : "differs")};
}

struct Criterion {
  int id;
  const char* name;
  double budget_s;
  std::function<Verdict()> check;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {1, "reference identity", 1.0, reference_identity},
      {2, "rpo reduces to dpo under a diagonal weight matrix", 1.0, rpo_dpo_reduction},
      {3, "weight matrix", 1.0, weight_matrix_suite},
      {4, "gradient correctness", 30.0, gradient_correctness},
      {5, "log-probability coefficient", 1.0, schedule_consistency},
      {6, "toy style alignment", 600.0, style_alignment_check},
      {7, "temperature ablation", 1800.0, ablation_check},
      {8, "win rate", 120.0, win_rate_check},
      {9, "determinism and persistence", 120.0, determinism_check},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = c.check();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = secs < c.budget_s;
    const bool pass = v.pass && in_time;
    if (!pass) ++failures;
    std::cout << (pass ? "PASS" : "FAIL") << " criterion " << c.id << ": " << c.name << " [" << fmt(secs)
              << " s, budget " << fmt(c.budget_s) << " s" << (in_time ? "" : ", over budget") << "] "
              << v.detail << std::endl;
  }
  std::cout << (criteria.size() - static_cast<std::size_t>(failures)) << "/" << criteria.size()
            << " criteria passed\n";
  return failures == 0 ? 0 : 1;
}
