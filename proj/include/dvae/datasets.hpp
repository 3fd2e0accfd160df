#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dvae/rng.hpp"
#include "dvae/tensor.hpp"

namespace dvae {

struct Dataset {
  Tensor observations;                   // n x P
  std::vector<std::uint32_t> factors;    // n x K, row-major; empty when unlabelled
  std::vector<std::size_t> cardinalities;  // K entries
  std::string provenance;

  std::size_t size() const { return observations.rows(); }
  std::size_t dim() const { return observations.cols(); }
  std::size_t num_factors() const { return cardinalities.size(); }
  std::uint32_t factor(std::size_t row, std::size_t k) const { return factors[row * num_factors() + k]; }

  void validate() const;
  Dataset subset(std::span<const std::size_t> rows) const;
};

struct PinwheelOptions {
  std::size_t num_classes = 4;
  std::size_t per_class = 100;
  double radial_std = 0.1;
  double tangential_std = 0.30;
  double rate = 0.25;
};

Dataset gen_pinwheel(const PinwheelOptions& options, Rng& rng);

struct FactorImageOptions {
  std::size_t xpos = 8;
  std::size_t ypos = 8;
  std::size_t scale = 4;
  std::size_t shape = 2;
  std::size_t canvas = 16;
};

/// Factor order in the output: xpos, ypos, scale, shape. Glyph side = 3 + 2 * scale index;
/// shape 0 is a filled square, shape 1 a plus.
Dataset gen_factor_images(const FactorImageOptions& options = {});

}  // namespace dvae
