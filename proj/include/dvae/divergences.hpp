#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "dvae/autodiff.hpp"
#include "dvae/distributions.hpp"
#include "dvae/models.hpp"
#include "dvae/rng.hpp"
#include "dvae/tensor.hpp"

namespace dvae {

struct DivergenceEstimate {
  double value = 0.0;
  double std_error = 0.0;
  std::size_t samples = 0;     // outer Monte-Carlo draws
  std::size_t components = 0;  // mixture size entering the aggregate density
};

/// Diagonal Gaussian encodings of a whole dataset: the components of q(z).
struct PosteriorSet {
  Tensor mean;          // n x D
  Tensor log_variance;  // n x D

  std::size_t size() const { return mean.rows(); }
  std::size_t dim() const { return mean.cols(); }
};

/// Encodes every row; requires a model whose posteriors stay diagonal.
PosteriorSet encode_dataset(const VaeModel& model, const Tensor& data);

inline constexpr std::size_t kOracleMaxComponents = 4096;
/// Length scales of the dimension-wise Cauchy kernel.
inline const std::vector<double> kCauchyScales{0.2, 0.4, 1.0, 2.0, 4.0, 10.0};

/// KL(p || q) with q the n-component aggregate encoding and z_j ~ p.
DivergenceEstimate inclusive_kl_estimate(const PosteriorSet& posteriors, const PriorSpec& prior, std::size_t prior_samples,
                                         Rng& rng);

/// Biased (V-statistic) MMD^2 under k(x, y) = sum_d sum_l s_l / (s_l + (x_d - y_d)^2).
double mmd_dimwise_cauchy(const Tensor& z, const Tensor& w, std::span<const double> scales = kCauchyScales);

/// Minibatch entropy estimator of the aggregate posterior:
///   H = -(1/B) sum_b log q_hat(z_b),
///   q_hat(z_b) = q(z_b|x_b)/n + (n-1)/(n(B-1)) sum_{b' != b} q(z_b|x_b'),
/// with z_b = mean_b + sigma_b * eps_b. `batch` indexes rows of `posteriors`.
double naive_aggregate_entropy(const PosteriorSet& posteriors, std::span<const std::size_t> batch, const Tensor& eps,
                               std::size_t dataset_size);
/// Same estimator with a uniformly drawn minibatch (without replacement) and fresh noise.
double naive_aggregate_entropy(const PosteriorSet& posteriors, std::size_t batch_size, Rng& rng);

/// Brute-force H[q(z)] by sampling the n-component mixture.
DivergenceEstimate oracle_aggregate_entropy(const PosteriorSet& posteriors, std::size_t samples, Rng& rng);

/// KL(q(z) || p(z)) = -H[q(z)] - E_q(z)[log p(z)].
DivergenceEstimate exclusive_kl_from_entropy(const PosteriorSet& posteriors, const PriorSpec& prior, std::size_t samples,
                                             Rng& rng);

// ---------------------------------------------------------------------------
// Recorded forms

/// out(j, i) = log N(z_j; mean_i, diag(exp(log_variance_i))); J x n.
ad::Var pairwise_diag_gaussian_log_density(ad::Var z, ad::Var mean, ad::Var log_variance);

/// (1/J) sum_j [log p(z_j) - log((1/n) sum_i q(z_j | x_i))].
ad::Var inclusive_kl(ad::Var mean, ad::Var log_variance, const Tensor& prior_samples, const Tensor& prior_log_density);

ad::Var mmd_dimwise_cauchy(ad::Var z, ad::Var w, std::span<const double> scales = kCauchyScales);

}  // namespace dvae
