#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "dvae/autodiff.hpp"
#include "dvae/rng.hpp"
#include "dvae/tensor.hpp"

namespace dvae {

// ---------------------------------------------------------------------------
// Prior families

struct IsotropicGaussian {
  double variance = 1.0;
};

enum class DiagInit { Ones, PcaSoftmax };

struct DiagGaussian {
  std::vector<double> log_variance;  // one entry per latent dimension
  bool learnable = false;
  DiagInit init = DiagInit::Ones;
};

/// Product of unit-scale, zero-location Student-t marginals.
struct StudentTProduct {
  double nu = 5.0;
};

struct GaussianMixture {
  std::vector<double> weights;
  std::vector<std::vector<double>> means;      // C x D
  std::vector<std::vector<double>> variances;  // C x D, diagonal covariances
};

/// Per dimension: (1 - gamma) N(0, 1) + gamma N(0, slab_off_variance).
struct SpikeSlab {
  double gamma = 0.8;
  double slab_off_variance = 0.05;
};

using PriorFamily = std::variant<IsotropicGaussian, DiagGaussian, StudentTProduct, GaussianMixture, SpikeSlab>;

struct PriorSpec {
  PriorFamily family;
  std::size_t dim = 0;

  bool is_gaussian() const;
  bool is_isotropic() const { return std::holds_alternative<IsotropicGaussian>(family); }
  std::string family_name() const;
};

/// Throws ValidationError when a parameter is outside its documented range.
void validate(const PriorSpec& prior);

PriorSpec isotropic_prior(std::size_t dim, double variance = 1.0);
PriorSpec diagonal_prior(std::vector<double> variances, bool learnable = false);
PriorSpec student_t_prior(std::size_t dim, double nu);
PriorSpec spike_slab_prior(std::size_t dim, double gamma, double slab_off_variance = 0.05);
/// Four equally weighted components at the corners of the unit square, variance 0.03,
/// in the order (0,0), (0,1), (1,0), (1,1).
PriorSpec unit_square_mixture_prior(double variance = 0.03);

/// Diagonal variances of a Gaussian prior.
std::vector<double> gaussian_variances(const PriorSpec& prior);

double prior_log_prob(const PriorSpec& prior, std::span<const double> z);
std::vector<double> prior_sample(const PriorSpec& prior, Rng& rng);
/// n x D matrix of independent draws.
Tensor prior_sample(const PriorSpec& prior, std::size_t n, Rng& rng);

/// Gaussian prior with covariance divided by beta.
PriorSpec anneal_gaussian(const PriorSpec& prior, double beta);

struct NormConstant {
  double log_value = 0.0;
  double std_error = 0.0;  // zero for closed forms and quadrature
};

struct NormConstantOptions {
  double quadrature_tolerance = 1e-8;
  std::size_t mixture_samples = 100000;
  Rng* rng = nullptr;  // required only for mixture priors with beta != 1
};

/// log of the integral of p(z)^beta over R^D.
NormConstant log_norm_const_F(const PriorSpec& prior, double beta, const NormConstantOptions& options = {});

/// Log standard deviations from the top singular values of the centred data, passed through
/// a softmax and multiplied by D; returned as log variances.
std::vector<double> pca_softmax_log_variance(const Tensor& data, std::size_t dim);

// ---------------------------------------------------------------------------
// Encoder distributions

/// N(mean, S) with S either diagonal (log_variance) or factor * factor^T.
struct GaussianPosterior {
  std::vector<double> mean;
  std::vector<double> log_variance;
  Tensor factor;
  bool full = false;

  static GaussianPosterior diagonal(std::vector<double> mean, std::vector<double> log_variance);
  static GaussianPosterior with_factor(std::vector<double> mean, Tensor factor);

  std::size_t dim() const { return mean.size(); }
  /// Square factor A with S = A A^T (diag(sigma) for the diagonal form).
  Tensor factor_matrix() const;
  Tensor covariance() const;
  double log_det_covariance() const;
  double log_prob(std::span<const double> z) const;
};

double gaussian_entropy(const GaussianPosterior& q);

/// Closed-form KL(q || p) for a Gaussian prior.
double kl_gaussian_gaussian(const GaussianPosterior& q, const PriorSpec& prior);

struct McEstimate {
  double value = 0.0;
  double std_error = 0.0;
  std::size_t samples = 0;
};

/// (1/K) sum_k [log q(z_k) - log p(z_k)], z_k = mean + A eps_k.
McEstimate kl_q_prior_mc(const GaussianPosterior& q, const PriorSpec& prior, std::size_t samples, Rng& rng);

// ---------------------------------------------------------------------------
// Likelihoods

struct BernoulliMean {};
struct LaplaceFixedScale {
  double scale = 0.1;
};
struct GaussianFixedScale {
  double variance = 1.0;
};

using LikelihoodSpec = std::variant<BernoulliMean, LaplaceFixedScale, GaussianFixedScale>;

inline constexpr double kBernoulliClamp = 1e-7;

void validate(const LikelihoodSpec& likelihood);
std::string likelihood_name(const LikelihoodSpec& likelihood);

/// Sum over pixels of log p(x | mean).
double likelihood_log_prob(const LikelihoodSpec& likelihood, std::span<const double> x, std::span<const double> mean);

// ---------------------------------------------------------------------------
// Recorded (differentiable) versions. Rows are independent points.

/// Z: N x D -> N x 1. `prior_log_variance` (1 x D) must be supplied for learnable
/// diagonal priors and is ignored otherwise.
ad::Var prior_log_prob(const PriorSpec& prior, ad::Var z, ad::Var prior_log_variance = {});

/// x: N x P constant targets, mean: N x P -> N x 1.
ad::Var likelihood_log_prob(const LikelihoodSpec& likelihood, ad::Var x, ad::Var mean);

}  // namespace dvae
