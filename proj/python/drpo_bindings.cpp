#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <array>
#include <cmath>
#include <limits>
#include <sstream>

#include "drpo/checkpoint.hpp"
#include "drpo/cli.hpp"
#include "drpo/config.hpp"
#include "drpo/embed.hpp"
#include "drpo/error.hpp"
#include "drpo/eval.hpp"
#include "drpo/losses.hpp"
#include "drpo/schedule.hpp"
#include "drpo/train.hpp"

namespace py = pybind11;
using namespace drpo;

namespace {

using Matrix = std::vector<Vec>;

Vec span_to_vec(std::span<const double> s) { return Vec(s.begin(), s.end()); }

Matrix weights_to_rows(const WeightMatrix& w) {
  Matrix rows;
  for (std::size_t i = 0; i < w.size(); ++i) rows.push_back(span_to_vec(w.row(i)));
  return rows;
}

Vec flatten_square(const Matrix& m) {
  Vec flat;
  for (const auto& row : m) {
    if (row.size() != m.size()) throw Error(ErrorCode::dimension_mismatch, "matrix is not square");
    flat.insert(flat.end(), row.begin(), row.end());
  }
  return flat;
}

GaussianStats make_stats(const Vec& mean, const Matrix& cov) { return {mean, flatten_square(cov)}; }

// errors[i][j] = (theta_w, ref_w, theta_l, ref_l) for winner i against loser j.
ErrorGrid make_grid(const std::vector<std::vector<std::array<double, 4>>>& errors) {
  ErrorGrid g(errors.size());
  for (std::size_t i = 0; i < errors.size(); ++i) {
    if (errors[i].size() != errors.size()) throw Error(ErrorCode::dimension_mismatch, "grid is not M x M");
    for (std::size_t j = 0; j < errors.size(); ++j) {
      const auto& e = errors[i][j];
      g.at(i, j) = {e[0], e[1], e[2], e[3]};
    }
  }
  return g;
}

WeightMatrix make_weights(const Matrix& w, std::size_t m) {
  if (w.empty()) return WeightMatrix::identity(m);
  // exp(-(-log w)) at tau 1 reproduces w with each row renormalized.
  Vec d;
  for (const auto& row : w) {
    for (double v : row) d.push_back(v > 0.0 ? -std::log(v) : std::numeric_limits<double>::infinity());
  }
  return WeightMatrix::from_distances(d, m, 1.0);
}

LossConfig loss_config(double beta, double lambda_orpo, const std::string& placement) {
  LossConfig c;
  c.beta = beta;
  c.lambda_orpo = lambda_orpo;
  c.weight_placement = parse_weight_placement(placement);
  c.validate();
  return c;
}

ExperimentConfig config_from(const std::map<std::string, std::string>& overrides) {
  ConfigMap map;
  for (const auto& [k, v] : overrides) map.set(k, v);
  return ExperimentConfig::from_map(map);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Relative preference optimization for toy diffusion models";

  // Messages carry the error code as a prefix, e.g. "io-error: ...".
  py::register_exception<Error>(m, "DrpoError", PyExc_RuntimeError);

  py::class_<DiffusionSchedule>(m, "DiffusionSchedule")
      .def_property_readonly("steps", &DiffusionSchedule::steps)
      .def_property_readonly("betas", [](const DiffusionSchedule& s) { return span_to_vec(s.betas()); })
      .def_property_readonly("alphas", [](const DiffusionSchedule& s) { return span_to_vec(s.alphas()); })
      .def_property_readonly("alpha_bars", [](const DiffusionSchedule& s) { return span_to_vec(s.alpha_bars()); })
      .def_property_readonly("sigmas", [](const DiffusionSchedule& s) { return span_to_vec(s.sigmas()); });

  m.def("build_schedule", [](int steps, double b0, double b1) { return build_schedule(steps, b0, b1); },
        py::arg("steps"), py::arg("beta_start"), py::arg("beta_end"));
  m.def("marginal_sample",
        [](const DiffusionSchedule& s, const Vec& y0, int t, const Vec& eps) {
          return marginal_sample(s, y0, t, eps).value;
        },
        py::arg("schedule"), py::arg("y0"), py::arg("t"), py::arg("eps"));
  m.def("posterior_mean", [](const DiffusionSchedule& s, const Vec& y, const Vec& eps, int t) {
    return posterior_mean(s, y, eps, t);
  });
  m.def("logprob_coefficient", &logprob_coefficient, py::arg("schedule"), py::arg("t"));

  m.def("weight_matrix",
        [](const Matrix& winners, const Matrix& losers, double tau) {
          std::vector<JointEmbedding> w, l;
          for (const auto& v : winners) w.emplace_back(v);
          for (const auto& v : losers) l.emplace_back(v);
          return weights_to_rows(weight_matrix(w, l, tau));
        },
        py::arg("winners"), py::arg("losers"), py::arg("tau"),
        "Row-stochastic contrastive weights from winner and loser embeddings.");
  m.def("weights_from_distances",
        [](const Matrix& distances, double tau) {
          return weights_to_rows(WeightMatrix::from_distances(flatten_square(distances), distances.size(), tau));
        },
        py::arg("distances"), py::arg("tau"));

  m.def("rpo_loss",
        [](const std::vector<std::vector<std::array<double, 4>>>& errors, const Matrix& weights, double beta,
           const std::string& placement) {
          return diffusion_rpo_loss(make_grid(errors), make_weights(weights, errors.size()),
                                    loss_config(beta, 0.2, placement));
        },
        py::arg("errors"), py::arg("weights") = Matrix{}, py::arg("beta") = 5000.0,
        py::arg("placement") = "outside",
        "errors[i][j] = (theta_w, ref_w, theta_l, ref_l); empty weights means the identity.");
  m.def("dpo_loss",
        [](const std::vector<std::array<double, 4>>& pairs, double beta) {
          std::vector<PairErrors> p;
          for (const auto& e : pairs) p.push_back({e[0], e[1], e[2], e[3]});
          return diffusion_dpo_loss(p, loss_config(beta, 0.2, "outside"));
        },
        py::arg("pairs"), py::arg("beta") = 5000.0);
  m.def("orrpo_loss",
        [](const std::vector<std::vector<std::array<double, 4>>>& errors, const Matrix& weights,
           double lambda_orpo) {
          return orrpo_loss(make_grid(errors), make_weights(weights, errors.size()),
                            loss_config(5000.0, lambda_orpo, "outside"));
        },
        py::arg("errors"), py::arg("weights") = Matrix{}, py::arg("lambda_orpo") = 0.2);

  m.def("fit_gaussian",
        [](const Matrix& samples) {
          const GaussianStats g = fit_gaussian(samples);
          Matrix cov(g.dim());
          for (std::size_t i = 0; i < g.dim(); ++i) cov[i] = Vec(g.cov.begin() + i * g.dim(), g.cov.begin() + (i + 1) * g.dim());
          return std::make_pair(g.mean, cov);
        },
        py::arg("samples"), "Sample mean and unbiased covariance.");
  m.def("frechet_distance",
        [](const Vec& mean_a, const Matrix& cov_a, const Vec& mean_b, const Matrix& cov_b) {
          return frechet_distance(make_stats(mean_a, cov_a), make_stats(mean_b, cov_b));
        },
        py::arg("mean_a"), py::arg("cov_a"), py::arg("mean_b"), py::arg("cov_b"));

  py::class_<ExperimentConfig>(m, "ExperimentConfig")
      .def(py::init(&config_from), py::arg("overrides") = std::map<std::string, std::string>{},
           "Built-in defaults overlaid by string key/value overrides.")
      .def("to_dict", [](const ExperimentConfig& c) { return c.to_map().values(); });

  py::class_<PreferencePair>(m, "PreferencePair")
      .def_readonly("prompt_id", &PreferencePair::prompt_id)
      .def_readonly("prompt_features", &PreferencePair::prompt_features)
      .def_readonly("y_w", &PreferencePair::y_w)
      .def_readonly("y_l", &PreferencePair::y_l);

  py::class_<Checkpoint>(m, "Checkpoint")
      .def_property_readonly("theta", [](const Checkpoint& c) { return c.params.theta; })
      .def_property_readonly("arch", [](const Checkpoint& c) { return c.params.arch; });

  py::class_<MetricsRow>(m, "MetricsRow")
      .def_readonly("step", &MetricsRow::step)
      .def_readonly("loss", &MetricsRow::loss)
      .def_readonly("mean_winner_mse", &MetricsRow::mean_winner_mse)
      .def_readonly("mean_loser_mse", &MetricsRow::mean_loser_mse)
      .def_readonly("implicit_accuracy", &MetricsRow::implicit_accuracy);

  py::class_<TrainResult>(m, "TrainResult")
      .def_readonly("checkpoint", &TrainResult::checkpoint)
      .def_readonly("metrics", &TrainResult::metrics);

  m.def("make_dataset", &make_dataset, py::arg("config"));
  m.def("save_dataset", [](const std::vector<PreferencePair>& d, const std::filesystem::path& p) { save_dataset(d, p); });
  m.def("load_dataset", &load_dataset);
  m.def("pretrain",
        [](const ExperimentConfig& cfg, const std::vector<PreferencePair>& data) {
          return run_sft(cfg, data, cfg.train.pretrain_steps, SftTarget::losers);
        },
        py::arg("config"), py::arg("dataset"), "Fit the unstyled base distribution from scratch.");
  m.def("sft",
        [](const ExperimentConfig& cfg, const std::vector<PreferencePair>& data, std::size_t steps,
           const Checkpoint& init) { return run_sft(cfg, data, steps, SftTarget::winners, &init); },
        py::arg("config"), py::arg("dataset"), py::arg("steps"), py::arg("init"));
  m.def("run_preference",
        [](const ExperimentConfig& cfg, const std::vector<PreferencePair>& data, const Checkpoint& init) {
          return run_preference(cfg, data, init);
        },
        py::arg("config"), py::arg("dataset"), py::arg("init"));
  m.def("save_checkpoint", [](const Checkpoint& c, const std::filesystem::path& p) { save_checkpoint(c, p); });
  m.def("load_checkpoint", &load_checkpoint);

  m.def("reverse_sample",
        [](const Checkpoint& c, const ExperimentConfig& cfg, int prompt_id, std::size_t n, std::uint64_t seed) {
          return reverse_sample(c, cfg.base.prompt_features(prompt_id), n, seed);
        },
        py::arg("checkpoint"), py::arg("config"), py::arg("prompt_id"), py::arg("n"), py::arg("seed"));
  m.def("style_frechet_distance",
        [](const Checkpoint& c, const ExperimentConfig& cfg, std::size_t samples_per_prompt, std::uint64_t seed) {
          return style_alignment(c, cfg, samples_per_prompt, seed).mean_fd;
        },
        py::arg("checkpoint"), py::arg("config"), py::arg("samples_per_prompt") = 500, py::arg("seed") = 0,
        "Mean per-prompt Frechet distance to the exact styled target.");
  m.def("win_rate",
        [](const Checkpoint& a, const Checkpoint& b, const ExperimentConfig& cfg, const std::vector<int>& prompts,
           std::size_t k, std::uint64_t seed) {
          const ToyReward reward(cfg.base, cfg.transform());
          return win_rate(a, b, prompts, cfg.base, k,
                          [&](ConstSpan y, int p) { return reward.score(y, p); }, seed)
              .rate;
        },
        py::arg("a"), py::arg("b"), py::arg("config"), py::arg("prompts"), py::arg("k") = 5,
        py::arg("seed") = 0, "Median-of-k win rate of a over b under the toy reward.");

  m.def("run_cli",
        [](const std::vector<std::string>& args) {
          std::ostringstream out, err;
          const int code = dispatch(args, out, err);
          return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"), "Runs the command line tool in-process; returns (exit_code, stdout, stderr).");
}
