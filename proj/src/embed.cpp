#include "drpo/embed.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "drpo/error.hpp"

namespace drpo {

namespace {

double norm(ConstSpan v) {
  return std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
}

}  // namespace

Codebook::Codebook(std::size_t input_dim, std::size_t embed_dim, Vec weights)
    : input_dim_(input_dim), embed_dim_(embed_dim), weights_(std::move(weights)) {
  if (input_dim == 0 || embed_dim == 0 || weights_.size() != input_dim * embed_dim) {
    throw Error(ErrorCode::dimension_mismatch, "codebook weights do not match its shape");
  }
}

Codebook Codebook::random(std::size_t input_dim, std::size_t embed_dim, std::uint64_t seed) {
  Rng rng(seed);
  Vec w = standard_normal(rng, input_dim * embed_dim);
  const double scale = 1.0 / std::sqrt(static_cast<double>(embed_dim));
  for (auto& x : w) x *= scale;
  return Codebook(input_dim, embed_dim, std::move(w));
}

Codebook Codebook::identity(std::size_t dim) {
  Vec w(dim * dim, 0.0);
  for (std::size_t k = 0; k < dim; ++k) w[k * dim + k] = 1.0;
  return Codebook(dim, dim, std::move(w));
}

Vec Codebook::project(ConstSpan input) const {
  if (input.size() != input_dim_) {
    throw Error(ErrorCode::dimension_mismatch, "codebook input has wrong dimension");
  }
  Vec out(embed_dim_, 0.0);
  for (std::size_t r = 0; r < embed_dim_; ++r) {
    const double* row = weights_.data() + r * input_dim_;
    double acc = 0.0;
    for (std::size_t c = 0; c < input_dim_; ++c) acc += row[c] * input[c];
    out[r] = acc;
  }
  return out;
}

JointEmbedding::JointEmbedding(Vec vector) : vector_(std::move(vector)) {
  const double n = norm(vector_);
  if (!(n >= 1e-12)) {
    throw Error(ErrorCode::zero_projection, "embedding norm below 1e-12");
  }
}

JointEmbedding embed_pair(ConstSpan image, ConstSpan prompt, const Codebook& codebook) {
  if (image.size() + prompt.size() != codebook.input_dim()) {
    throw Error(ErrorCode::dimension_mismatch, "image + prompt features do not match codebook");
  }
  Vec joint(image.begin(), image.end());
  joint.insert(joint.end(), prompt.begin(), prompt.end());
  for (double x : joint) {
    if (!std::isfinite(x)) throw Error(ErrorCode::invalid_range, "non-finite embedding input");
  }
  Vec projected = codebook.project(joint);
  const double n = norm(projected);
  if (!(n >= 1e-12)) {
    throw Error(ErrorCode::zero_projection, "projected embedding norm below 1e-12");
  }
  for (auto& x : projected) x /= n;
  return JointEmbedding(std::move(projected));
}

double cosine_distance(const JointEmbedding& a, const JointEmbedding& b) {
  if (a.dim() != b.dim()) {
    throw Error(ErrorCode::dimension_mismatch, "cosine distance of unequal dimensions");
  }
  const auto va = a.vector();
  const auto vb = b.vector();
  const double dot = std::inner_product(va.begin(), va.end(), vb.begin(), 0.0);
  const double cos = std::clamp(dot / (norm(va) * norm(vb)), -1.0, 1.0);
  return 1.0 - cos;
}

WeightMatrix WeightMatrix::from_distances(ConstSpan distances, std::size_t size, double tau) {
  if (size == 0) throw Error(ErrorCode::empty_batch, "weight matrix of an empty batch");
  if (!(tau > 0.0)) throw Error(ErrorCode::non_positive_temperature, "tau must be positive");
  if (distances.size() != size * size) {
    throw Error(ErrorCode::dimension_mismatch, "distance table is not M x M");
  }
  Vec entries(size * size);
  for (std::size_t i = 0; i < size; ++i) {
    const auto row = distances.subspan(i * size, size);
    // Shift by the row minimum so the largest logit is exactly 0.
    const double d_min = *std::min_element(row.begin(), row.end());
    double total = 0.0;
    for (std::size_t j = 0; j < size; ++j) {
      const double w = std::exp(-(row[j] - d_min) / tau);
      entries[i * size + j] = w;
      total += w;
    }
    for (std::size_t j = 0; j < size; ++j) entries[i * size + j] /= total;
  }
  return WeightMatrix(size, tau, std::move(entries));
}

WeightMatrix WeightMatrix::identity(std::size_t size) {
  if (size == 0) throw Error(ErrorCode::empty_batch, "weight matrix of an empty batch");
  Vec entries(size * size, 0.0);
  for (std::size_t i = 0; i < size; ++i) entries[i * size + i] = 1.0;
  return WeightMatrix(size, 0.0, std::move(entries));
}

bool WeightMatrix::is_diagonal() const {
  for (std::size_t i = 0; i < size_; ++i) {
    for (std::size_t j = 0; j < size_; ++j) {
      if (i != j && entries_[i * size_ + j] != 0.0) return false;
    }
  }
  return true;
}

WeightMatrix weight_matrix(std::span<const JointEmbedding> winners,
                           std::span<const JointEmbedding> losers, double tau) {
  if (winners.empty() || losers.empty()) {
    throw Error(ErrorCode::empty_batch, "weight matrix of an empty batch");
  }
  if (winners.size() != losers.size()) {
    throw Error(ErrorCode::dimension_mismatch, "winner and loser batches differ in size");
  }
  if (!(tau > 0.0)) throw Error(ErrorCode::non_positive_temperature, "tau must be positive");
  const std::size_t m = winners.size();
  Vec distances(m * m);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      distances[i * m + j] = cosine_distance(winners[i], losers[j]);
    }
  }
  return WeightMatrix::from_distances(distances, m, tau);
}

}  // namespace drpo
