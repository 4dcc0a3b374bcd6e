#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace oatlab {

/// Derives an independent stream seed from a base seed; splitmix64 step.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

/// Uniform double in [0,1) with 53 random bits. Hand-rolled so results do
/// not depend on the standard library's distribution implementations.
double rand_uniform(std::mt19937_64& rng);

/// Uniform double in [lo, hi).
double rand_uniform(std::mt19937_64& rng, double lo, double hi);

/// Standard normal via Box-Muller.
double rand_normal(std::mt19937_64& rng);

/// Unbiased integer in [0, n).
std::uint64_t rand_below(std::mt19937_64& rng, std::uint64_t n);

/// In-place Fisher-Yates shuffle.
template <typename T>
void shuffle(std::vector<T>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rand_below(rng, i));
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace oatlab
