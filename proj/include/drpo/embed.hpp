#pragma once

#include <cstdint>

#include "drpo/types.hpp"

namespace drpo {

/// Frozen linear projection from concat(image, prompt) features to the joint
/// embedding space. Stands in for a pretrained image-text encoder; it is
/// reconstructed from (seed, dims) and never trained.
class Codebook {
 public:
  Codebook(std::size_t input_dim, std::size_t embed_dim, Vec weights);

  /// Entries drawn i.i.d. N(0, 1/embed_dim) from a seeded generator.
  static Codebook random(std::size_t input_dim, std::size_t embed_dim, std::uint64_t seed);
  static Codebook identity(std::size_t dim);

  std::size_t input_dim() const noexcept { return input_dim_; }
  std::size_t embed_dim() const noexcept { return embed_dim_; }
  /// Row-major embed_dim x input_dim.
  std::span<const double> weights() const noexcept { return weights_; }

  Vec project(ConstSpan input) const;

 private:
  std::size_t input_dim_;
  std::size_t embed_dim_;
  Vec weights_;
};

class JointEmbedding {
 public:
  /// Throws zero-projection when the vector norm is below 1e-12.
  explicit JointEmbedding(Vec vector);

  std::span<const double> vector() const noexcept { return vector_; }
  std::size_t dim() const noexcept { return vector_.size(); }

 private:
  Vec vector_;
};

JointEmbedding embed_pair(ConstSpan image, ConstSpan prompt, const Codebook& codebook);

/// 1 - cos(a, b), in [0, 2].
double cosine_distance(const JointEmbedding& a, const JointEmbedding& b);

/// Row-stochastic M x M contrastive weights. Rows index winners, columns losers.
class WeightMatrix {
 public:
  /// Row-wise softmax of -distance / tau over a row-major M x M distance table.
  static WeightMatrix from_distances(ConstSpan distances, std::size_t size, double tau);
  /// One-hot diagonal; turns the relative losses into their paired counterparts.
  static WeightMatrix identity(std::size_t size);

  std::size_t size() const noexcept { return size_; }
  double tau() const noexcept { return tau_; }
  double operator()(std::size_t i, std::size_t j) const { return entries_[i * size_ + j]; }
  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(entries_).subspan(i * size_, size_);
  }
  std::span<const double> entries() const noexcept { return entries_; }
  bool is_diagonal() const;

 private:
  WeightMatrix(std::size_t size, double tau, Vec entries)
      : size_(size), tau_(tau), entries_(std::move(entries)) {}

  std::size_t size_;
  double tau_;
  Vec entries_;
};

WeightMatrix weight_matrix(std::span<const JointEmbedding> winners,
                           std::span<const JointEmbedding> losers, double tau);

}  // namespace drpo
