#include "drpo/data.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <string>

#include <json.hpp>

#include "drpo/error.hpp"

namespace drpo {

namespace {

/// Lower Cholesky factor of a small SPD matrix (row-major).
Vec cholesky(ConstSpan cov, std::size_t d) {
  Vec l(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double sum = cov[i * d + j];
      for (std::size_t k = 0; k < j; ++k) sum -= l[i * d + k] * l[j * d + k];
      if (i == j) {
        if (!(sum > 0.0)) throw Error(ErrorCode::invalid_range, "component covariance not SPD");
        l[i * d + i] = std::sqrt(sum);
      } else {
        l[i * d + j] = sum / l[j * d + j];
      }
    }
  }
  return l;
}

Vec draw_component(const MixtureComponent& c, ConstSpan chol, Rng& rng) {
  const std::size_t d = c.mean.size();
  const Vec z = standard_normal(rng, d);
  Vec y = c.mean;
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t k = 0; k <= i; ++k) y[i] += chol[i * d + k] * z[k];
  }
  return y;
}

/// Rotation-and-scale matrix of the transform in d dimensions.
Vec linear_part(double rotation, double scale, std::size_t d) {
  Vec a(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i) a[i * d + i] = scale;
  if (d >= 2) {
    const double c = std::cos(rotation) * scale;
    const double s = std::sin(rotation) * scale;
    a[0] = c;
    a[1] = -s;
    a[d] = s;
    a[d + 1] = c;
  }
  return a;
}

Vec json_vec(const nlohmann::json& j, const char* key) {
  const auto& v = j.at(key);
  if (!v.is_array()) throw std::runtime_error(std::string(key) + " is not an array");
  Vec out;
  out.reserve(v.size());
  for (const auto& x : v) out.push_back(x.get<double>());
  return out;
}

}  // namespace

Vec BaseConfig::prompt_features(int prompt_id) const {
  if (prompt_id < 0 || static_cast<std::size_t>(prompt_id) >= num_prompts()) {
    throw Error(ErrorCode::unknown_prompt, "prompt id " + std::to_string(prompt_id));
  }
  Vec f(num_prompts(), 0.0);
  f[static_cast<std::size_t>(prompt_id)] = 1.0;
  Rng rng(derive_seed(feature_seed, static_cast<std::uint64_t>(prompt_id)));
  const Vec extra = standard_normal(rng, random_feature_dim);
  for (double x : extra) f.push_back(0.5 * x);
  return f;
}

void BaseConfig::validate() const {
  if (dim == 0) throw Error(ErrorCode::config_error, "sample dimension must be positive");
  if (components.empty()) throw Error(ErrorCode::config_error, "no prompts configured");
  for (const auto& prompt : components) {
    if (prompt.empty()) throw Error(ErrorCode::config_error, "prompt without mixture components");
    for (const auto& c : prompt) {
      if (c.mean.size() != dim || c.cov.size() != dim * dim) {
        throw Error(ErrorCode::dimension_mismatch, "mixture component does not match dim");
      }
    }
  }
}

BaseConfig BaseConfig::toy(double component_std) {
  BaseConfig cfg;
  const double var = component_std * component_std;
  for (int k = 0; k < 4; ++k) {
    const double angle = std::numbers::pi / 2.0 * k;
    cfg.components.push_back(
        {MixtureComponent{{2.0 * std::cos(angle), 2.0 * std::sin(angle)}, {var, 0.0, 0.0, var}}});
  }
  return cfg;
}

StyleTransform::StyleTransform(double rotation, double scale, Vec shift)
    : rotation_(rotation), scale_(scale), shift_(std::move(shift)) {
  if (!(scale > 0.0) || !std::isfinite(scale) || !std::isfinite(rotation)) {
    throw Error(ErrorCode::invalid_range, "style scale must be positive and finite");
  }
  const double wrapped = std::remainder(rotation, 2.0 * std::numbers::pi);
  bool zero_shift = true;
  for (double x : shift_) zero_shift = zero_shift && x == 0.0;
  if (std::abs(wrapped) < 1e-12 && scale == 1.0 && zero_shift) {
    throw Error(ErrorCode::degenerate_transform, "style transform is the identity");
  }
}

Vec StyleTransform::apply(ConstSpan y) const {
  const std::size_t d = y.size();
  if (shift_.size() != d) throw Error(ErrorCode::dimension_mismatch, "style shift dimension");
  const Vec a = linear_part(rotation_, scale_, d);
  Vec out(shift_);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t k = 0; k < d; ++k) out[i] += a[i * d + k] * y[k];
  }
  return out;
}

Vec StyleTransform::inverse(ConstSpan y) const {
  const std::size_t d = y.size();
  if (shift_.size() != d) throw Error(ErrorCode::dimension_mismatch, "style shift dimension");
  const Vec a = linear_part(-rotation_, 1.0 / scale_, d);
  Vec out(d, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t k = 0; k < d; ++k) out[i] += a[i * d + k] * (y[k] - shift_[k]);
  }
  return out;
}

MixtureComponent StyleTransform::apply(const MixtureComponent& c) const {
  const std::size_t d = c.mean.size();
  const Vec a = linear_part(rotation_, scale_, d);
  MixtureComponent out{apply(c.mean), Vec(d * d, 0.0)};
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        for (std::size_t l = 0; l < d; ++l) acc += a[i * d + k] * c.cov[k * d + l] * a[j * d + l];
      }
      out.cov[i * d + j] = acc;
    }
  }
  return out;
}

std::vector<Vec> sample_base(const BaseConfig& cfg, int prompt_id, std::size_t n,
                             std::uint64_t seed) {
  if (prompt_id < 0 || static_cast<std::size_t>(prompt_id) >= cfg.num_prompts()) {
    throw Error(ErrorCode::unknown_prompt, "prompt id " + std::to_string(prompt_id));
  }
  const auto& comps = cfg.components[static_cast<std::size_t>(prompt_id)];
  std::vector<Vec> chol;
  for (const auto& c : comps) chol.push_back(cholesky(c.cov, cfg.dim));
  Rng rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, comps.size() - 1);
  std::vector<Vec> out;
  out.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t c = comps.size() == 1 ? 0 : pick(rng);
    out.push_back(draw_component(comps[c], chol[c], rng));
  }
  return out;
}

std::vector<PreferencePair> build_style_dataset(const BaseConfig& cfg,
                                                const StyleTransform& transform,
                                                std::size_t n_pairs, std::uint64_t seed) {
  cfg.validate();
  if (n_pairs == 0) throw Error(ErrorCode::invalid_range, "n_pairs must be >= 1");
  Rng rng(seed);
  std::uniform_int_distribution<int> prompt_dist(0, static_cast<int>(cfg.num_prompts()) - 1);
  std::vector<Vec> features;
  for (std::size_t p = 0; p < cfg.num_prompts(); ++p) {
    features.push_back(cfg.prompt_features(static_cast<int>(p)));
  }
  std::vector<PreferencePair> pairs;
  pairs.reserve(n_pairs);
  while (pairs.size() < n_pairs) {
    const int prompt = prompt_dist(rng);
    // Every pair gets its own base draw; no base sample is reused.
    Vec y_l = sample_base(cfg, prompt, 1, rng()).front();
    Vec y_w = transform.apply(y_l);
    if (y_w == y_l) continue;  // fixed point of the map
    pairs.push_back({prompt, features[static_cast<std::size_t>(prompt)], std::move(y_w),
                     std::move(y_l)});
  }
  return pairs;
}

std::vector<PreferencePair> build_reward_dataset(const BaseConfig& cfg,
                                                 const StyleTransform& transform,
                                                 const SampleScorer& scorer, std::size_t n_pairs,
                                                 std::uint64_t seed) {
  cfg.validate();
  if (n_pairs == 0) throw Error(ErrorCode::invalid_range, "n_pairs must be >= 1");
  Rng rng(seed);
  std::uniform_int_distribution<int> prompt_dist(0, static_cast<int>(cfg.num_prompts()) - 1);
  std::bernoulli_distribution styled(0.5);
  std::vector<PreferencePair> pairs;
  pairs.reserve(n_pairs);
  while (pairs.size() < n_pairs) {
    const int prompt = prompt_dist(rng);
    auto candidate = [&] {
      Vec y = sample_base(cfg, prompt, 1, rng()).front();
      return styled(rng) ? transform.apply(y) : y;
    };
    Vec a = candidate();
    Vec b = candidate();
    const double sa = scorer(a, prompt);
    const double sb = scorer(b, prompt);
    if (sa == sb) continue;
    if (sa < sb) std::swap(a, b);
    pairs.push_back({prompt, cfg.prompt_features(prompt), std::move(a), std::move(b)});
  }
  return pairs;
}

void save_dataset(std::span<const PreferencePair> pairs, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::io_error, "cannot open " + path.string() + " for writing");
  for (const auto& pair : pairs) {
    nlohmann::ordered_json j;
    j["prompt_id"] = pair.prompt_id;
    j["prompt_features"] = pair.prompt_features;
    j["y_w"] = pair.y_w;
    j["y_l"] = pair.y_l;
    out << j.dump() << '\n';
  }
  if (!out) throw Error(ErrorCode::io_error, "write failed for " + path.string());
}

std::vector<PreferencePair> load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io_error, "cannot open " + path.string());
  std::vector<PreferencePair> pairs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      PreferencePair pair;
      pair.prompt_id = j.at("prompt_id").get<int>();
      pair.prompt_features = json_vec(j, "prompt_features");
      pair.y_w = json_vec(j, "y_w");
      pair.y_l = json_vec(j, "y_l");
      if (pair.y_w.size() != pair.y_l.size()) throw std::runtime_error("y_w and y_l differ in size");
      if (!pairs.empty() && (pair.y_w.size() != pairs.front().y_w.size() ||
                             pair.prompt_features.size() != pairs.front().prompt_features.size())) {
        throw std::runtime_error("dimensions differ from the first pair");
      }
      pairs.push_back(std::move(pair));
    } catch (const std::exception& e) {
      throw Error(ErrorCode::parse_error,
                  path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return pairs;
}

}  // namespace drpo
