#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "drpo/types.hpp"

namespace drpo {

/// One preference triplet: preferred sample, rejected sample, prompt.
struct PreferencePair {
  int prompt_id = 0;
  Vec prompt_features;
  Vec y_w;
  Vec y_l;

  bool operator==(const PreferencePair&) const = default;
};

struct MixtureComponent {
  Vec mean;
  Vec cov;  ///< dim x dim, row-major
};

/// Prompt-conditional Gaussian mixtures. Prompt p draws uniformly from
/// components[p]; its features are one-hot(p) followed by `random_feature_dim`
/// seeded Gaussian features, so prompts are graded rather than orthogonal.
struct BaseConfig {
  std::size_t dim = 2;
  std::vector<std::vector<MixtureComponent>> components;
  std::size_t random_feature_dim = 4;
  std::uint64_t feature_seed = 11;

  std::size_t num_prompts() const { return components.size(); }
  std::size_t feature_dim() const { return num_prompts() + random_feature_dim; }
  Vec prompt_features(int prompt_id) const;
  void validate() const;

  /// Four isotropic prompt clusters on a ring of radius 2 in the plane.
  static BaseConfig toy(double component_std = 0.3);
};

/// Affine "style" map: scale * R(rotation) * y + shift, rotating the first two
/// coordinates. Identity-like maps are rejected because they produce y_w == y_l.
class StyleTransform {
 public:
  StyleTransform(double rotation, double scale, Vec shift);

  double rotation() const noexcept { return rotation_; }
  double scale() const noexcept { return scale_; }
  std::span<const double> shift() const noexcept { return shift_; }

  Vec apply(ConstSpan y) const;
  Vec inverse(ConstSpan y) const;
  /// Pushes a Gaussian through the map: (A mean + shift, A cov A^T).
  MixtureComponent apply(const MixtureComponent& c) const;

 private:
  double rotation_;
  double scale_;
  Vec shift_;
};

/// n draws from prompt `prompt_id`'s mixture; deterministic in seed.
std::vector<Vec> sample_base(const BaseConfig& cfg, int prompt_id, std::size_t n,
                             std::uint64_t seed);

/// Rejected = base draw for a uniformly chosen prompt, preferred = its styled image.
std::vector<PreferencePair> build_style_dataset(const BaseConfig& cfg,
                                                const StyleTransform& transform,
                                                std::size_t n_pairs, std::uint64_t seed);

using SampleScorer = std::function<double(ConstSpan sample, int prompt_id)>;

/// Human-preference analogue: two candidates per prompt, each drawn from the
/// base or styled component with equal odds, labelled by `scorer`.
std::vector<PreferencePair> build_reward_dataset(const BaseConfig& cfg,
                                                 const StyleTransform& transform,
                                                 const SampleScorer& scorer, std::size_t n_pairs,
                                                 std::uint64_t seed);

/// JSON lines, one pair per line, keys in the order prompt_id, prompt_features, y_w, y_l.
void save_dataset(std::span<const PreferencePair> pairs, const std::filesystem::path& path);
std::vector<PreferencePair> load_dataset(const std::filesystem::path& path);

}  // namespace drpo
