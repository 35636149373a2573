#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace drpo {

using Vec = std::vector<double>;
using ConstSpan = std::span<const double>;
using Rng = std::mt19937_64;

/// Fills a vector with independent standard normal draws.
Vec standard_normal(Rng& rng, std::size_t n);

/// Derives an independent seed from a base seed and a stream index (splitmix64).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

}  // namespace drpo
