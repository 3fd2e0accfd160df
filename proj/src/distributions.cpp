#include "dvae/distributions.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "dvae/error.hpp"
#include "dvae/quadrature.hpp"

namespace dvae {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;  // log(2 pi)

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

double normal_log_pdf(double z, double mean, double variance) {
  const double d = z - mean;
  return -0.5 * (kLog2Pi + std::log(variance) + d * d / variance);
}

double student_t_log_norm(double nu) {
  return std::lgamma(0.5 * (nu + 1.0)) - std::lgamma(0.5 * nu) - 0.5 * std::log(nu * std::numbers::pi);
}

double student_t_log_pdf(double z, double nu) {
  return student_t_log_norm(nu) - 0.5 * (nu + 1.0) * std::log1p(z * z / nu);
}

double spike_slab_log_pdf(double z, const SpikeSlab& s) {
  const double on = s.gamma < 1.0 ? std::log1p(-s.gamma) + normal_log_pdf(z, 0.0, 1.0) : -INFINITY;
  const double off = s.gamma > 0.0 ? std::log(s.gamma) + normal_log_pdf(z, 0.0, s.slab_off_variance) : -INFINITY;
  const double terms[2] = {on, off};
  return log_sum_exp(terms);
}

double mixture_log_pdf(std::span<const double> z, const GaussianMixture& m) {
  std::vector<double> terms(m.weights.size());
  for (std::size_t c = 0; c < m.weights.size(); ++c) {
    double acc = m.weights[c] > 0.0 ? std::log(m.weights[c]) : -INFINITY;
    for (std::size_t d = 0; d < z.size(); ++d) acc += normal_log_pdf(z[d], m.means[c][d], m.variances[c][d]);
    terms[c] = acc;
  }
  return log_sum_exp(terms);
}

void require_dim(const PriorSpec& prior, std::size_t n, const char* op) {
  if (n != prior.dim) {
    throw ShapeError(std::string(op) + ": latent vector of length " + std::to_string(n) + " for a " +
                     std::to_string(prior.dim) + "-dimensional prior");
  }
}

}  // namespace

bool PriorSpec::is_gaussian() const {
  return std::holds_alternative<IsotropicGaussian>(family) || std::holds_alternative<DiagGaussian>(family);
}

std::string PriorSpec::family_name() const {
  return std::visit(Overloaded{[](const IsotropicGaussian&) { return std::string("isotropic-gaussian"); },
                               [](const DiagGaussian&) { return std::string("diag-gaussian"); },
                               [](const StudentTProduct&) { return std::string("student-t"); },
                               [](const GaussianMixture&) { return std::string("gaussian-mixture"); },
                               [](const SpikeSlab&) { return std::string("spike-slab"); }},
                    family);
}

void validate(const PriorSpec& prior) {
  if (prior.dim == 0) throw ValidationError("prior: latent dimension must be positive");
  std::visit(Overloaded{
                 [](const IsotropicGaussian& p) {
                   if (!(p.variance > 0.0)) throw ValidationError("prior: isotropic variance must be > 0");
                 },
                 [&](const DiagGaussian& p) {
                   if (p.log_variance.size() != prior.dim)
                     throw ValidationError("prior: diagonal log-variance length differs from latent dimension");
                   for (double lv : p.log_variance)
                     if (!std::isfinite(lv)) throw ValidationError("prior: diagonal variances must be finite and > 0");
                 },
                 [](const StudentTProduct& p) {
                   if (!(p.nu > 0.0)) throw ValidationError("prior: Student-t degrees of freedom must be > 0");
                 },
                 [&](const GaussianMixture& p) {
                   const std::size_t c = p.weights.size();
                   if (c == 0) throw ValidationError("prior: mixture needs at least one component");
                   if (p.means.size() != c || p.variances.size() != c)
                     throw ValidationError("prior: mixture weights, means and variances disagree on component count");
                   double total = 0.0;
                   for (std::size_t k = 0; k < c; ++k) {
                     if (p.weights[k] < 0.0) throw ValidationError("prior: mixture weights must be >= 0");
                     total += p.weights[k];
                     if (p.means[k].size() != prior.dim || p.variances[k].size() != prior.dim)
                       throw ValidationError("prior: mixture component dimension differs from latent dimension");
                     for (double v : p.variances[k])
                       if (!(v > 0.0)) throw ValidationError("prior: mixture variances must be > 0");
                   }
                   if (std::abs(total - 1.0) > 1e-12) throw ValidationError("prior: mixture weights must sum to 1");
                 },
                 [](const SpikeSlab& p) {
                   if (!(p.gamma >= 0.0 && p.gamma <= 1.0)) throw ValidationError("prior: spike-slab gamma must lie in [0, 1]");
                   if (!(p.slab_off_variance > 0.0)) throw ValidationError("prior: spike-slab off variance must be > 0");
                 }},
             prior.family);
}

PriorSpec isotropic_prior(std::size_t dim, double variance) { return PriorSpec{IsotropicGaussian{variance}, dim}; }

PriorSpec diagonal_prior(std::vector<double> variances, bool learnable) {
  DiagGaussian d;
  for (double v : variances) d.log_variance.push_back(std::log(v));
  d.learnable = learnable;
  const std::size_t dim = variances.size();
  return PriorSpec{std::move(d), dim};
}

PriorSpec student_t_prior(std::size_t dim, double nu) { return PriorSpec{StudentTProduct{nu}, dim}; }

PriorSpec spike_slab_prior(std::size_t dim, double gamma, double slab_off_variance) {
  return PriorSpec{SpikeSlab{gamma, slab_off_variance}, dim};
}

PriorSpec unit_square_mixture_prior(double variance) {
  GaussianMixture m;
  m.weights.assign(4, 0.25);
  m.means = {{0.0, 0.0}, {0.0, 1.0}, {1.0, 0.0}, {1.0, 1.0}};
  m.variances.assign(4, {variance, variance});
  return PriorSpec{std::move(m), 2};
}

std::vector<double> gaussian_variances(const PriorSpec& prior) {
  if (const auto* iso = std::get_if<IsotropicGaussian>(&prior.family)) return std::vector<double>(prior.dim, iso->variance);
  if (const auto* diag = std::get_if<DiagGaussian>(&prior.family)) {
    std::vector<double> v;
    for (double lv : diag->log_variance) v.push_back(std::exp(lv));
    return v;
  }
  throw ValidationError("prior: " + prior.family_name() + " is not Gaussian");
}

double prior_log_prob(const PriorSpec& prior, std::span<const double> z) {
  require_dim(prior, z.size(), "prior_log_prob");
  return std::visit(Overloaded{
                        [&](const IsotropicGaussian& p) {
                          double acc = 0.0;
                          for (double v : z) acc += normal_log_pdf(v, 0.0, p.variance);
                          return acc;
                        },
                        [&](const DiagGaussian& p) {
                          double acc = 0.0;
                          for (std::size_t d = 0; d < z.size(); ++d)
                            acc += -0.5 * (kLog2Pi + p.log_variance[d] + z[d] * z[d] * std::exp(-p.log_variance[d]));
                          return acc;
                        },
                        [&](const StudentTProduct& p) {
                          double acc = 0.0;
                          for (double v : z) acc += student_t_log_pdf(v, p.nu);
                          return acc;
                        },
                        [&](const GaussianMixture& p) { return mixture_log_pdf(z, p); },
                        [&](const SpikeSlab& p) {
                          double acc = 0.0;
                          for (double v : z) acc += spike_slab_log_pdf(v, p);
                          return acc;
                        }},
                    prior.family);
}

std::vector<double> prior_sample(const PriorSpec& prior, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> z(prior.dim);
  std::visit(Overloaded{
                 [&](const IsotropicGaussian& p) {
                   const double sd = std::sqrt(p.variance);
                   for (double& v : z) v = sd * normal(rng);
                 },
                 [&](const DiagGaussian& p) {
                   for (std::size_t d = 0; d < z.size(); ++d) z[d] = std::exp(0.5 * p.log_variance[d]) * normal(rng);
                 },
                 [&](const StudentTProduct& p) {
                   std::chi_squared_distribution<double> chi2(p.nu);
                   for (double& v : z) {
                     const double g = normal(rng);
                     v = g / std::sqrt(chi2(rng) / p.nu);
                   }
                 },
                 [&](const GaussianMixture& p) {
                   std::discrete_distribution<std::size_t> pick(p.weights.begin(), p.weights.end());
                   const std::size_t c = pick(rng);
                   for (std::size_t d = 0; d < z.size(); ++d)
                     z[d] = p.means[c][d] + std::sqrt(p.variances[c][d]) * normal(rng);
                 },
                 [&](const SpikeSlab& p) {
                   std::bernoulli_distribution off(p.gamma);
                   const double off_sd = std::sqrt(p.slab_off_variance);
                   for (double& v : z) {
                     const bool is_off = off(rng);
                     v = (is_off ? off_sd : 1.0) * normal(rng);
                   }
                 }},
             prior.family);
  return z;
}

Tensor prior_sample(const PriorSpec& prior, std::size_t n, Rng& rng) {
  Tensor out(Shape{n, prior.dim});
  for (std::size_t i = 0; i < n; ++i) {
    auto z = prior_sample(prior, rng);
    std::copy(z.begin(), z.end(), out.row_span(i).begin());
  }
  return out;
}

PriorSpec anneal_gaussian(const PriorSpec& prior, double beta) {
  if (!(beta > 0.0)) throw ValidationError("anneal_gaussian: beta must be > 0");
  if (const auto* iso = std::get_if<IsotropicGaussian>(&prior.family)) {
    return PriorSpec{IsotropicGaussian{iso->variance / beta}, prior.dim};
  }
  if (const auto* diag = std::get_if<DiagGaussian>(&prior.family)) {
    DiagGaussian out = *diag;
    for (double& lv : out.log_variance) lv -= std::log(beta);
    return PriorSpec{std::move(out), prior.dim};
  }
  throw ValidationError("anneal_gaussian: " + prior.family_name() +
                        " prior has no closed-form annealed density; it is evaluated implicitly");
}

NormConstant log_norm_const_F(const PriorSpec& prior, double beta, const NormConstantOptions& options) {
  if (!(beta > 0.0)) throw ValidationError("log_norm_const_F: beta must be > 0");
  validate(prior);
  if (beta == 1.0) return {0.0, 0.0};
  const double dim = static_cast<double>(prior.dim);

  if (prior.is_gaussian()) {
    double log_det = 0.0;
    for (double v : gaussian_variances(prior)) log_det += std::log(v);
    return {0.5 * dim * (1.0 - beta) * kLog2Pi + 0.5 * (1.0 - beta) * log_det - 0.5 * dim * std::log(beta), 0.0};
  }

  if (const auto* t = std::get_if<StudentTProduct>(&prior.family)) {
    if (!(beta * (t->nu + 1.0) > 1.0)) {
      throw NumericError("log_norm_const_F: integral of the Student-t power diverges (beta * (nu + 1) = " +
                         std::to_string(beta * (t->nu + 1.0)) + " <= 1)");
    }
    const double nu = t->nu;
    auto r = integrate_real_line([&](double z) { return std::exp(beta * student_t_log_pdf(z, nu)); },
                                 options.quadrature_tolerance);
    return {dim * std::log(r.value), 0.0};
  }

  if (const auto* s = std::get_if<SpikeSlab>(&prior.family)) {
    const SpikeSlab spec = *s;
    auto r = integrate_real_line([&](double z) { return std::exp(beta * spike_slab_log_pdf(z, spec)); },
                                 options.quadrature_tolerance);
    return {dim * std::log(r.value), 0.0};
  }

  // Mixture: F = E_p[p(z)^(beta - 1)], sampled from the mixture itself.
  if (!options.rng) throw ValidationError("log_norm_const_F: mixture prior needs an rng for importance sampling");
  const std::size_t n = std::max<std::size_t>(options.mixture_samples, 2);
  std::vector<double> log_w(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto z = prior_sample(prior, *options.rng);
    log_w[i] = (beta - 1.0) * prior_log_prob(prior, z);
  }
  const double log_mean = log_sum_exp(log_w) - std::log(double(n));
  double var = 0.0;
  for (double lw : log_w) {
    const double r = std::exp(lw - log_mean) - 1.0;
    var += r * r;
  }
  var /= double(n - 1);
  // Delta method: se(log F) = sd(w) / (sqrt(n) mean(w)).
  return {log_mean, std::sqrt(var / double(n))};
}

std::vector<double> pca_softmax_log_variance(const Tensor& data, std::size_t dim) {
  const std::size_t n = data.rows(), p = data.cols();
  if (n < 2) throw ValidationError("pca_softmax_log_variance: need at least two rows");
  Eigen::MatrixXd x(n, p);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < p; ++j) x(i, j) = data(i, j);
  x.rowwise() -= x.colwise().mean();
  const Eigen::MatrixXd gram = (x.transpose() * x) / double(n - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram, Eigen::EigenvaluesOnly);
  std::vector<double> sv(dim, 0.0);
  const Eigen::VectorXd& ev = eig.eigenvalues();  // ascending
  for (std::size_t d = 0; d < dim && d < p; ++d) sv[d] = std::sqrt(std::max(0.0, ev(p - 1 - d)));
  const double mx = *std::max_element(sv.begin(), sv.end());
  double z = 0.0;
  for (double s : sv) z += std::exp(s - mx);
  std::vector<double> out(dim);
  for (std::size_t d = 0; d < dim; ++d) {
    const double sd = std::max(double(dim) * std::exp(sv[d] - mx) / z, 1e-3);
    out[d] = 2.0 * std::log(sd);
  }
  return out;
}

// ---------------------------------------------------------------------------

GaussianPosterior GaussianPosterior::diagonal(std::vector<double> mean, std::vector<double> log_variance) {
  if (mean.size() != log_variance.size()) throw ShapeError("posterior: mean and log-variance lengths differ");
  GaussianPosterior q;
  q.mean = std::move(mean);
  q.log_variance = std::move(log_variance);
  return q;
}

GaussianPosterior GaussianPosterior::with_factor(std::vector<double> mean, Tensor factor) {
  if (factor.rank() != 2 || factor.rows() != mean.size() || factor.cols() != mean.size()) {
    throw ShapeError("posterior: factor must be D x D");
  }
  GaussianPosterior q;
  q.mean = std::move(mean);
  q.factor = std::move(factor);
  q.full = true;
  if (determinant(q.factor) == 0.0) throw NumericError("posterior: singular covariance factor");
  return q;
}

Tensor GaussianPosterior::factor_matrix() const {
  if (full) return factor;
  Tensor a(Shape{dim(), dim()});
  for (std::size_t d = 0; d < dim(); ++d) a(d, d) = std::exp(0.5 * log_variance[d]);
  return a;
}

Tensor GaussianPosterior::covariance() const {
  const Tensor a = factor_matrix();
  return dvae::matmul_nt(a, a);
}

double GaussianPosterior::log_det_covariance() const {
  if (!full) {
    double acc = 0.0;
    for (double lv : log_variance) acc += lv;
    return acc;
  }
  const double det = determinant(factor);
  if (det == 0.0) throw NumericError("posterior: singular covariance factor");
  return 2.0 * std::log(std::abs(det));
}

double GaussianPosterior::log_prob(std::span<const double> z) const {
  if (z.size() != dim()) throw ShapeError("posterior log_prob: dimension mismatch");
  const double d = double(dim());
  std::vector<double> diff(dim());
  for (std::size_t i = 0; i < dim(); ++i) diff[i] = z[i] - mean[i];
  double quad = 0.0;
  if (full) {
    auto y = solve(factor, diff);
    for (double v : y) quad += v * v;
  } else {
    for (std::size_t i = 0; i < dim(); ++i) quad += diff[i] * diff[i] * std::exp(-log_variance[i]);
  }
  return -0.5 * (d * kLog2Pi + log_det_covariance() + quad);
}

double gaussian_entropy(const GaussianPosterior& q) {
  return 0.5 * double(q.dim()) * (1.0 + kLog2Pi) + 0.5 * q.log_det_covariance();
}

double kl_gaussian_gaussian(const GaussianPosterior& q, const PriorSpec& prior) {
  require_dim(prior, q.dim(), "kl_gaussian_gaussian");
  const auto var = gaussian_variances(prior);
  const Tensor a = q.factor_matrix();
  const std::size_t dim = q.dim();
  double trace = 0.0, maha = 0.0, log_det_p = 0.0;
  for (std::size_t i = 0; i < dim; ++i) {
    for (std::size_t k = 0; k < dim; ++k) trace += a(i, k) * a(i, k) / var[i];
    maha += q.mean[i] * q.mean[i] / var[i];
    log_det_p += std::log(var[i]);
  }
  return 0.5 * (trace + maha - double(dim) + log_det_p - q.log_det_covariance());
}

McEstimate kl_q_prior_mc(const GaussianPosterior& q, const PriorSpec& prior, std::size_t samples, Rng& rng) {
  if (samples == 0) throw ValidationError("kl_q_prior_mc: need at least one sample");
  require_dim(prior, q.dim(), "kl_q_prior_mc");
  std::normal_distribution<double> normal(0.0, 1.0);
  const Tensor a = q.factor_matrix();
  const std::size_t dim = q.dim();
  std::vector<double> eps(dim), z(dim);
  double sum = 0.0, sum_sq = 0.0;
  for (std::size_t k = 0; k < samples; ++k) {
    for (double& e : eps) e = normal(rng);
    for (std::size_t i = 0; i < dim; ++i) {
      double acc = q.mean[i];
      for (std::size_t j = 0; j < dim; ++j) acc += a(i, j) * eps[j];
      z[i] = acc;
    }
    const double term = q.log_prob(z) - prior_log_prob(prior, z);
    if (!std::isfinite(term)) throw NumericError("kl_q_prior_mc: non-finite log density");
    sum += term;
    sum_sq += term * term;
  }
  const double n = double(samples);
  const double m = sum / n;
  const double var = samples > 1 ? std::max(0.0, (sum_sq - n * m * m) / (n - 1.0)) : 0.0;
  return {m, std::sqrt(var / n), samples};
}

// ---------------------------------------------------------------------------

void validate(const LikelihoodSpec& likelihood) {
  std::visit(Overloaded{[](const BernoulliMean&) {},
                        [](const LaplaceFixedScale& l) {
                          if (!(l.scale > 0.0)) throw ValidationError("likelihood: Laplace scale must be > 0");
                        },
                        [](const GaussianFixedScale& l) {
                          if (!(l.variance > 0.0)) throw ValidationError("likelihood: Gaussian variance must be > 0");
                        }},
             likelihood);
}

std::string likelihood_name(const LikelihoodSpec& likelihood) {
  return std::visit(Overloaded{[](const BernoulliMean&) { return std::string("bernoulli"); },
                               [](const LaplaceFixedScale&) { return std::string("laplace"); },
                               [](const GaussianFixedScale&) { return std::string("gaussian"); }},
                    likelihood);
}

double likelihood_log_prob(const LikelihoodSpec& likelihood, std::span<const double> x, std::span<const double> mean) {
  if (x.size() != mean.size()) throw ShapeError("likelihood_log_prob: target and mean lengths differ");
  return std::visit(Overloaded{
                        [&](const BernoulliMean&) {
                          double acc = 0.0;
                          for (std::size_t i = 0; i < x.size(); ++i) {
                            if (!(x[i] >= 0.0 && x[i] <= 1.0))
                              throw ValidationError("likelihood: Bernoulli target " + std::to_string(x[i]) + " outside [0, 1]");
                            const double m = std::clamp(mean[i], kBernoulliClamp, 1.0 - kBernoulliClamp);
                            acc += x[i] * std::log(m) + (1.0 - x[i]) * std::log(1.0 - m);
                          }
                          return acc;
                        },
                        [&](const LaplaceFixedScale& l) {
                          double acc = 0.0;
                          for (std::size_t i = 0; i < x.size(); ++i) acc += -std::abs(x[i] - mean[i]) / l.scale;
                          return acc - double(x.size()) * std::log(2.0 * l.scale);
                        },
                        [&](const GaussianFixedScale& l) {
                          double acc = 0.0;
                          for (std::size_t i = 0; i < x.size(); ++i) acc += normal_log_pdf(x[i], mean[i], l.variance);
                          return acc;
                        }},
                    likelihood);
}

// ---------------------------------------------------------------------------

ad::Var prior_log_prob(const PriorSpec& prior, ad::Var z, ad::Var prior_log_variance) {
  const Tensor& zv = z.value();
  if (zv.rank() != 2 || zv.cols() != prior.dim) {
    throw ShapeError("prior_log_prob: expected N x " + std::to_string(prior.dim) + ", got " + shape_string(zv.shape()));
  }
  const std::size_t n = zv.rows(), dim = prior.dim;
  Tensor out(Shape{n, 1});
  Tensor dz(Shape{n, dim});  // d log p / dz, cached for the backward pass
  Tensor dlv;                // d log p / d log-variance (learnable diagonal prior only)

  const auto* diag = std::get_if<DiagGaussian>(&prior.family);
  const bool learnable = diag && prior_log_variance.valid();
  std::vector<double> lv;
  if (diag) lv = learnable ? std::vector<double>(prior_log_variance.value().data().begin(),
                                                 prior_log_variance.value().data().end())
                           : diag->log_variance;
  if (learnable) {
    if (lv.size() != dim) throw ShapeError("prior_log_prob: prior log-variance must have D entries");
    dlv = Tensor(Shape{n, dim});
  }

  for (std::size_t i = 0; i < n; ++i) {
    auto row = zv.row_span(i);
    double acc = 0.0;
    std::visit(Overloaded{
                   [&](const IsotropicGaussian& p) {
                     for (std::size_t d = 0; d < dim; ++d) {
                       acc += normal_log_pdf(row[d], 0.0, p.variance);
                       dz(i, d) = -row[d] / p.variance;
                     }
                   },
                   [&](const DiagGaussian&) {
                     for (std::size_t d = 0; d < dim; ++d) {
                       const double prec = std::exp(-lv[d]);
                       acc += -0.5 * (kLog2Pi + lv[d] + row[d] * row[d] * prec);
                       dz(i, d) = -row[d] * prec;
                       if (learnable) dlv(i, d) = -0.5 * (1.0 - row[d] * row[d] * prec);
                     }
                   },
                   [&](const StudentTProduct& p) {
                     for (std::size_t d = 0; d < dim; ++d) {
                       acc += student_t_log_pdf(row[d], p.nu);
                       dz(i, d) = -(p.nu + 1.0) * row[d] / (p.nu + row[d] * row[d]);
                     }
                   },
                   [&](const GaussianMixture& p) {
                     const std::size_t c = p.weights.size();
                     std::vector<double> comp(c);
                     for (std::size_t k = 0; k < c; ++k) {
                       double a = p.weights[k] > 0.0 ? std::log(p.weights[k]) : -INFINITY;
                       for (std::size_t d = 0; d < dim; ++d) a += normal_log_pdf(row[d], p.means[k][d], p.variances[k][d]);
                       comp[k] = a;
                     }
                     const double total = log_sum_exp(comp);
                     acc = total;
                     for (std::size_t d = 0; d < dim; ++d) {
                       double g = 0.0;
                       for (std::size_t k = 0; k < c; ++k)
                         g += std::exp(comp[k] - total) * (-(row[d] - p.means[k][d]) / p.variances[k][d]);
                       dz(i, d) = g;
                     }
                   },
                   [&](const SpikeSlab& p) {
                     for (std::size_t d = 0; d < dim; ++d) {
                       const double on = p.gamma < 1.0 ? std::log1p(-p.gamma) + normal_log_pdf(row[d], 0.0, 1.0) : -INFINITY;
                       const double off =
                           p.gamma > 0.0 ? std::log(p.gamma) + normal_log_pdf(row[d], 0.0, p.slab_off_variance) : -INFINITY;
                       const double terms[2] = {on, off};
                       const double total = log_sum_exp(terms);
                       acc += total;
                       dz(i, d) = -row[d] * (std::exp(on - total) + std::exp(off - total) / p.slab_off_variance);
                     }
                   }},
               prior.family);
    out[i] = acc;
  }

  std::vector<ad::Var> inputs{z};
  if (learnable) inputs.push_back(prior_log_variance);
  return z.tape().record(
      ad::OpKind::Custom, std::move(inputs), std::move(out),
      [dz = std::move(dz), dlv = std::move(dlv), n, dim](const Tensor& g, const Tensor&, auto, auto grads) {
        if (grads[0])
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t d = 0; d < dim; ++d) (*grads[0])[i * dim + d] += g[i] * dz[i * dim + d];
        if (grads.size() > 1 && grads[1])
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t d = 0; d < dim; ++d) (*grads[1])[d] += g[i] * dlv[i * dim + d];
      },
      "prior_log_prob[" + prior.family_name() + "]");
}

ad::Var likelihood_log_prob(const LikelihoodSpec& likelihood, ad::Var x, ad::Var mean) {
  if (x.shape() != mean.shape() || x.shape().size() != 2) {
    throw ShapeError("likelihood_log_prob: target " + shape_string(x.shape()) + " vs mean " + shape_string(mean.shape()));
  }
  ad::Tape& tape = x.tape();
  const double pixels = double(x.shape()[1]);
  return std::visit(
      Overloaded{
          [&](const BernoulliMean&) {
            for (double v : x.value().data())
              if (!(v >= 0.0 && v <= 1.0))
                throw ValidationError("likelihood: Bernoulli target " + std::to_string(v) + " outside [0, 1]");
            Tensor one_minus = x.value();
            for (double& v : one_minus.data()) v = 1.0 - v;
            ad::Var xc = tape.constant(one_minus);
            ad::Var m = ad::clamp(mean, kBernoulliClamp, 1.0 - kBernoulliClamp);
            return ad::row_sum(x * ad::log(m) + xc * ad::log(1.0 - m));
          },
          [&](const LaplaceFixedScale& l) {
            return ad::add_scalar(ad::row_sum(ad::abs(x - mean)) * (-1.0 / l.scale), -pixels * std::log(2.0 * l.scale));
          },
          [&](const GaussianFixedScale& l) {
            return ad::add_scalar(ad::row_sum(ad::square(x - mean)) * (-0.5 / l.variance),
                                  -0.5 * pixels * (kLog2Pi + std::log(l.variance)));
          }},
      likelihood);
}

}  // namespace dvae
