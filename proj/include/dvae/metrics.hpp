#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "dvae/datasets.hpp"
#include "dvae/models.hpp"
#include "dvae/rng.hpp"
#include "dvae/tensor.hpp"

namespace dvae {

/// (sqrt(d) - |y|_1 / |y|_2) / (sqrt(d) - 1).
double hoyer(std::span<const double> y);

struct SparsityResult {
  double score = 0.0;
  std::vector<std::size_t> excluded_dims;  // aggregate std below 1e-8
};

/// Mean Hoyer over rows of an n x D encoding matrix after dividing each column by its
/// aggregate standard deviation.
SparsityResult sparsity_score(const Tensor& encodings);

/// Maps observations (n x P) to codes (n x D).
using CodeFn = std::function<Tensor(const Tensor&)>;

/// Posterior means of a model.
CodeFn posterior_mean_code(const VaeModel& model);

struct DisentanglementOptions {
  std::size_t batch = 64;    // L
  std::size_t votes = 800;   // M
  double collapse_threshold = 0.05;
};

struct DisentanglementResult {
  double score = 0.0;
  std::vector<std::size_t> collapsed_dims;
  std::size_t votes = 0;
};

DisentanglementResult disentanglement_score(const CodeFn& code, const Dataset& data, const DisentanglementOptions& options,
                                            Rng& rng);

}  // namespace dvae
