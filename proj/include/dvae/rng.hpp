#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string_view>

#include "dvae/tensor.hpp"

namespace dvae {

using Rng = std::mt19937_64;

/// Derives independent generators from one seed. Each consumer asks for its own
/// named stream, so adding a consumer never shifts the draws of another.
class RngStreams {
 public:
  explicit RngStreams(std::uint64_t seed) : seed_(seed) {}

  Rng stream(std::string_view name) const;
  Rng stream(std::string_view name, std::uint64_t index) const;
  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
};

Tensor standard_normal(std::size_t rows, std::size_t cols, Rng& rng);

/// Number of workers for embarrassingly parallel sweeps; DVAE_THREADS caps it.
std::size_t worker_count();

/// Runs body(i) for i in [0, n). Each index must be independent; callers write
/// into preallocated per-index slots so the result is order independent.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace dvae
