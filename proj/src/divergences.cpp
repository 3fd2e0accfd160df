#include "dvae/divergences.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "dvae/error.hpp"

namespace dvae {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

double diag_log_density(std::span<const double> z, std::span<const double> mean, std::span<const double> log_var) {
  double acc = 0.0;
  for (std::size_t d = 0; d < z.size(); ++d) {
    const double diff = z[d] - mean[d];
    acc += kLog2Pi + log_var[d] + diff * diff * std::exp(-log_var[d]);
  }
  return -0.5 * acc;
}

struct RunningMoments {
  double sum = 0.0, sum_sq = 0.0;
  std::size_t n = 0;
  void add(double v) {
    sum += v;
    sum_sq += v * v;
    ++n;
  }
  double mean() const { return sum / double(n); }
  double std_error() const {
    if (n < 2) return 0.0;
    const double m = mean();
    const double var = std::max(0.0, (sum_sq - double(n) * m * m) / double(n - 1));
    return std::sqrt(var / double(n));
  }
};

void require_set(const PosteriorSet& set, const char* op) {
  if (set.mean.rank() != 2 || set.mean.shape() != set.log_variance.shape() || set.size() == 0) {
    throw ShapeError(std::string(op) + ": posterior set must be non-empty n x D mean/log-variance pairs");
  }
}

/// log (1/n) sum_i q(z | x_i), the aggregate log density.
double aggregate_log_density(const PosteriorSet& set, std::span<const double> z, std::vector<double>& scratch) {
  const std::size_t n = set.size();
  scratch.resize(n);
  for (std::size_t i = 0; i < n; ++i) scratch[i] = diag_log_density(z, set.mean.row_span(i), set.log_variance.row_span(i));
  return log_sum_exp(scratch) - std::log(double(n));
}

double cauchy_kernel_mean(const Tensor& a, const Tensor& b, std::span<const double> scales) {
  const std::size_t na = a.rows(), nb = b.rows(), dim = a.cols();
  std::vector<double> sq(dim);
  double acc = 0.0;
  for (std::size_t i = 0; i < na; ++i) {
    const double* ai = a.data().data() + i * dim;
    for (std::size_t j = 0; j < nb; ++j) {
      const double* bj = b.data().data() + j * dim;
      for (std::size_t d = 0; d < dim; ++d) sq[d] = (ai[d] - bj[d]) * (ai[d] - bj[d]);
      double k = 0.0;
      for (double s : scales)
        for (std::size_t d = 0; d < dim; ++d) k += s / (s + sq[d]);
      acc += k;
    }
  }
  return acc / (double(na) * double(nb));
}

/// d/da of mean_{ij} k(a_i, b_j), accumulated with weight `w` into `grad` (same shape as a).
void cauchy_kernel_mean_grad(const Tensor& a, const Tensor& b, std::span<const double> scales, double w, Tensor& grad) {
  const std::size_t na = a.rows(), nb = b.rows(), dim = a.cols();
  const double norm = w / (double(na) * double(nb));
  std::vector<double> diff(dim), sq(dim), dk(dim);
  for (std::size_t i = 0; i < na; ++i) {
    const double* ai = a.data().data() + i * dim;
    double* gi = grad.data().data() + i * dim;
    for (std::size_t j = 0; j < nb; ++j) {
      const double* bj = b.data().data() + j * dim;
      for (std::size_t d = 0; d < dim; ++d) {
        diff[d] = ai[d] - bj[d];
        sq[d] = diff[d] * diff[d];
        dk[d] = 0.0;
      }
      for (double s : scales)
        for (std::size_t d = 0; d < dim; ++d) {
          const double den = s + sq[d];
          dk[d] += s / (den * den);
        }
      for (std::size_t d = 0; d < dim; ++d) gi[d] += norm * (-2.0 * diff[d] * dk[d]);
    }
  }
}

void check_mmd_inputs(const Tensor& z, const Tensor& w, std::span<const double> scales) {
  if (z.rank() != 2 || w.rank() != 2 || z.rows() == 0 || w.rows() == 0) {
    throw ValidationError("mmd_dimwise_cauchy: empty sample set");
  }
  if (z.cols() != w.cols()) throw ShapeError("mmd_dimwise_cauchy: sample dimensions differ");
  if (scales.empty()) throw ValidationError("mmd_dimwise_cauchy: no length scales");
  for (double s : scales)
    if (!(s > 0.0)) throw ValidationError("mmd_dimwise_cauchy: length scales must be > 0");
}

}  // namespace

PosteriorSet encode_dataset(const VaeModel& model, const Tensor& data) {
  const std::size_t n = data.rows(), dim = model.latent_dim;
  PosteriorSet set{Tensor(Shape{n, dim}), Tensor(Shape{n, dim})};
  for (std::size_t i = 0; i < n; ++i) {
    const GaussianPosterior q = encode(model, data.row_span(i));
    if (q.full) throw ValidationError("encode_dataset: posterior set requires diagonal encoders");
    std::copy(q.mean.begin(), q.mean.end(), set.mean.row_span(i).begin());
    std::copy(q.log_variance.begin(), q.log_variance.end(), set.log_variance.row_span(i).begin());
  }
  return set;
}

DivergenceEstimate inclusive_kl_estimate(const PosteriorSet& posteriors, const PriorSpec& prior, std::size_t prior_samples,
                                         Rng& rng) {
  require_set(posteriors, "inclusive_kl_estimate");
  if (prior_samples == 0) throw ValidationError("inclusive_kl_estimate: need at least one prior sample");
  if (prior.dim != posteriors.dim()) throw ShapeError("inclusive_kl_estimate: prior and posterior dimensions differ");
  RunningMoments acc;
  std::vector<double> scratch;
  for (std::size_t j = 0; j < prior_samples; ++j) {
    const auto z = prior_sample(prior, rng);
    const double log_q = aggregate_log_density(posteriors, z, scratch);
    if (!std::isfinite(log_q)) throw NumericError("inclusive_kl_estimate: aggregate density underflowed for every component");
    acc.add(prior_log_prob(prior, z) - log_q);
  }
  return {acc.mean(), acc.std_error(), prior_samples, posteriors.size()};
}

double mmd_dimwise_cauchy(const Tensor& z, const Tensor& w, std::span<const double> scales) {
  check_mmd_inputs(z, w, scales);
  return cauchy_kernel_mean(z, z, scales) + cauchy_kernel_mean(w, w, scales) - 2.0 * cauchy_kernel_mean(z, w, scales);
}

double naive_aggregate_entropy(const PosteriorSet& posteriors, std::span<const std::size_t> batch, const Tensor& eps,
                               std::size_t dataset_size) {
  require_set(posteriors, "naive_aggregate_entropy");
  const std::size_t b_size = batch.size(), dim = posteriors.dim();
  if (b_size < 2) throw ValidationError("naive_aggregate_entropy: minibatch size must be >= 2");
  if (dataset_size < b_size) throw ValidationError("naive_aggregate_entropy: dataset size must be >= minibatch size");
  if (eps.rows() != b_size || eps.cols() != dim) throw ShapeError("naive_aggregate_entropy: noise must be B x D");
  for (std::size_t idx : batch)
    if (idx >= posteriors.size()) throw ValidationError("naive_aggregate_entropy: batch index out of range");

  const double n = double(dataset_size), bm1 = double(b_size - 1);
  const double log_self = -std::log(n);
  const double log_other = std::log((n - 1.0) / (n * bm1));
  std::vector<double> z(dim), others;
  double total = 0.0;
  for (std::size_t b = 0; b < b_size; ++b) {
    const std::size_t i = batch[b];
    auto mu = posteriors.mean.row_span(i);
    auto lv = posteriors.log_variance.row_span(i);
    for (std::size_t d = 0; d < dim; ++d) z[d] = mu[d] + std::exp(0.5 * lv[d]) * eps(b, d);
    others.clear();
    for (std::size_t c = 0; c < b_size; ++c) {
      if (c == b) continue;
      const std::size_t k = batch[c];
      others.push_back(diag_log_density(z, posteriors.mean.row_span(k), posteriors.log_variance.row_span(k)));
    }
    const double terms[2] = {log_self + diag_log_density(z, mu, lv), log_other + log_sum_exp(others)};
    total += log_sum_exp(terms);
  }
  return -total / double(b_size);
}

double naive_aggregate_entropy(const PosteriorSet& posteriors, std::size_t batch_size, Rng& rng) {
  require_set(posteriors, "naive_aggregate_entropy");
  const std::size_t n = posteriors.size();
  if (batch_size > n) throw ValidationError("naive_aggregate_entropy: minibatch larger than dataset");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  // Partial Fisher-Yates: the first batch_size entries are a uniform subset.
  for (std::size_t i = 0; i < batch_size; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(order[i], order[pick(rng)]);
  }
  order.resize(batch_size);
  const Tensor eps = standard_normal(batch_size, posteriors.dim(), rng);
  return naive_aggregate_entropy(posteriors, order, eps, n);
}

namespace {

template <class F>
DivergenceEstimate sample_aggregate(const PosteriorSet& posteriors, std::size_t samples, Rng& rng, const char* op, F term) {
  require_set(posteriors, op);
  if (posteriors.size() > kOracleMaxComponents) {
    throw ValidationError(std::string(op) + ": " + std::to_string(posteriors.size()) + " components exceed the cap of " +
                          std::to_string(kOracleMaxComponents));
  }
  if (samples == 0) throw ValidationError(std::string(op) + ": need at least one sample");
  const std::size_t n = posteriors.size(), dim = posteriors.dim();
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::normal_distribution<double> normal(0.0, 1.0);
  RunningMoments acc;
  std::vector<double> z(dim), scratch;
  for (std::size_t m = 0; m < samples; ++m) {
    const std::size_t i = pick(rng);
    auto mu = posteriors.mean.row_span(i);
    auto lv = posteriors.log_variance.row_span(i);
    for (std::size_t d = 0; d < dim; ++d) z[d] = mu[d] + std::exp(0.5 * lv[d]) * normal(rng);
    acc.add(term(z, aggregate_log_density(posteriors, z, scratch)));
  }
  return {acc.mean(), acc.std_error(), samples, n};
}

}  // namespace

DivergenceEstimate oracle_aggregate_entropy(const PosteriorSet& posteriors, std::size_t samples, Rng& rng) {
  return sample_aggregate(posteriors, samples, rng, "oracle_aggregate_entropy",
                          [](std::span<const double>, double log_q) { return -log_q; });
}

DivergenceEstimate exclusive_kl_from_entropy(const PosteriorSet& posteriors, const PriorSpec& prior, std::size_t samples,
                                             Rng& rng) {
  if (prior.dim != posteriors.dim()) throw ShapeError("exclusive_kl_from_entropy: prior and posterior dimensions differ");
  return sample_aggregate(posteriors, samples, rng, "exclusive_kl_from_entropy",
                          [&](std::span<const double> z, double log_q) { return log_q - prior_log_prob(prior, z); });
}

// ---------------------------------------------------------------------------

ad::Var pairwise_diag_gaussian_log_density(ad::Var z, ad::Var mean, ad::Var log_variance) {
  const Tensor& zv = z.value();
  const Tensor& mv = mean.value();
  const Tensor& lv = log_variance.value();
  if (zv.rank() != 2 || mv.rank() != 2 || mv.shape() != lv.shape() || zv.cols() != mv.cols()) {
    throw ShapeError("pairwise_diag_gaussian_log_density: z " + shape_string(zv.shape()) + ", mean " +
                     shape_string(mv.shape()) + ", log-variance " + shape_string(lv.shape()));
  }
  const std::size_t nj = zv.rows(), ni = mv.rows(), dim = zv.cols();
  Tensor prec(lv.shape());
  for (std::size_t k = 0; k < lv.size(); ++k) prec[k] = std::exp(-lv[k]);
  Tensor out(Shape{nj, ni});
  for (std::size_t j = 0; j < nj; ++j)
    for (std::size_t i = 0; i < ni; ++i) {
      double acc = 0.0;
      for (std::size_t d = 0; d < dim; ++d) {
        const double diff = zv[j * dim + d] - mv[i * dim + d];
        acc += kLog2Pi + lv[i * dim + d] + diff * diff * prec[i * dim + d];
      }
      out[j * ni + i] = -0.5 * acc;
    }
  return z.tape().record(
      ad::OpKind::Custom, {z, mean, log_variance}, std::move(out),
      [prec = std::move(prec), nj, ni, dim](const Tensor& g, const Tensor&, auto in, auto grads) {
        const Tensor& zv = *in[0];
        const Tensor& mv = *in[1];
        for (std::size_t j = 0; j < nj; ++j)
          for (std::size_t i = 0; i < ni; ++i) {
            const double gji = g[j * ni + i];
            if (gji == 0.0) continue;
            for (std::size_t d = 0; d < dim; ++d) {
              const double diff = zv[j * dim + d] - mv[i * dim + d];
              const double p = prec[i * dim + d];
              if (grads[0]) (*grads[0])[j * dim + d] -= gji * diff * p;
              if (grads[1]) (*grads[1])[i * dim + d] += gji * diff * p;
              if (grads[2]) (*grads[2])[i * dim + d] += gji * 0.5 * (diff * diff * p - 1.0);
            }
          }
      },
      "pairwise_diag_gaussian_log_density");
}

ad::Var inclusive_kl(ad::Var mean, ad::Var log_variance, const Tensor& prior_samples, const Tensor& prior_log_density) {
  ad::Tape& tape = mean.tape();
  const std::size_t j = prior_samples.rows();
  if (prior_log_density.size() != j) throw ShapeError("inclusive_kl: one prior log density per prior sample");
  ad::Var z = tape.constant(prior_samples);
  ad::Var log_q = ad::logsumexp_rows(pairwise_diag_gaussian_log_density(z, mean, log_variance));
  ad::Var log_p = tape.constant(prior_log_density.reshaped(Shape{j, 1}));
  const double log_n = std::log(double(mean.shape()[0]));
  return ad::mean(log_p - ad::add_scalar(log_q, -log_n));
}

ad::Var mmd_dimwise_cauchy(ad::Var z, ad::Var w, std::span<const double> scales) {
  check_mmd_inputs(z.value(), w.value(), scales);
  std::vector<double> s(scales.begin(), scales.end());
  const double value = mmd_dimwise_cauchy(z.value(), w.value(), s);
  return z.tape().record(
      ad::OpKind::Custom, {z, w}, Tensor::scalar(value),
      [s](const Tensor& g, const Tensor&, auto in, auto grads) {
        const Tensor& zv = *in[0];
        const Tensor& wv = *in[1];
        const double gv = g[0];
        // d/dz [mean k(z,z)] counts each pair twice; the cross term carries weight -2.
        if (grads[0]) {
          cauchy_kernel_mean_grad(zv, zv, s, 2.0 * gv, *grads[0]);
          cauchy_kernel_mean_grad(zv, wv, s, -2.0 * gv, *grads[0]);
        }
        if (grads[1]) {
          cauchy_kernel_mean_grad(wv, wv, s, 2.0 * gv, *grads[1]);
          cauchy_kernel_mean_grad(wv, zv, s, -2.0 * gv, *grads[1]);
        }
      },
      "mmd_dimwise_cauchy");
}

}  // namespace dvae
