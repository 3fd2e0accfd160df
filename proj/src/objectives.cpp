#include "dvae/objectives.hpp"

#include <cmath>
#include <vector>

#include "dvae/divergences.hpp"
#include "dvae/error.hpp"

namespace dvae {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

bool is_diagonal(const Tensor& m) {
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j)
      if (i != j && m(i, j) != 0.0) return false;
  return true;
}

ad::Var repeat_rows(ad::Var x, std::size_t times) {
  if (times == 1) return x;
  std::vector<ad::Var> parts(times, x);
  return ad::concat(parts, 0);
}

/// Log variances of the (diagonal) mapped posterior, for the aggregate divergences.
ad::Var mapped_log_variance(const VaeModel& m, const EncodedBatch& enc) {
  if (!m.post_encoder_map) return enc.log_variance;
  const Tensor& map = *m.post_encoder_map;
  if (!is_diagonal(map)) throw ValidationError("decomp objective: aggregate divergences need a diagonal posterior");
  Tensor shift(Shape{1, m.latent_dim});
  for (std::size_t d = 0; d < m.latent_dim; ++d) shift[d] = 2.0 * std::log(std::abs(map(d, d)));
  return ad::broadcast_add_rowvec(enc.log_variance, enc.log_variance.tape().constant(shift));
}

/// Closed-form batch-mean KL(N(M mu + b, M diag(s) M^T) || N(0, Sigma)).
ad::Var gaussian_kl(const BoundModel& bound, const EncodedBatch& enc, double log_det_map) {
  const VaeModel& m = *bound.model;
  ad::Tape& tape = *bound.tape;
  const std::size_t dim = m.latent_dim;
  ad::Var inv_sigma, log_det_sigma;
  if (bound.prior_log_variance.valid()) {
    ad::Var plv = ad::reshape(bound.prior_log_variance, Shape{1, dim});
    inv_sigma = ad::exp(-plv);
    log_det_sigma = ad::sum(plv);
  } else {
    const auto var = gaussian_variances(m.prior);
    Tensor inv(Shape{1, dim});
    double ld = 0.0;
    for (std::size_t d = 0; d < dim; ++d) {
      inv[d] = 1.0 / var[d];
      ld += std::log(var[d]);
    }
    inv_sigma = tape.constant(inv);
    log_det_sigma = tape.constant(Tensor::scalar(ld));
  }
  ad::Var weight = inv_sigma;
  if (m.post_encoder_map) {
    Tensor sq = *m.post_encoder_map;
    for (double& v : sq.data()) v *= v;
    weight = ad::matmul(inv_sigma, tape.constant(sq));
  }
  ad::Var trace = ad::row_sum(ad::broadcast_mul_rowvec(ad::exp(enc.log_variance), weight));
  ad::Var maha = ad::row_sum(ad::broadcast_mul_rowvec(ad::square(enc.mean), inv_sigma));
  ad::Var per_row = trace + maha - ad::row_sum(enc.log_variance);
  return 0.5 * (ad::mean(per_row) + log_det_sigma - double(dim) - 2.0 * log_det_map);
}

}  // namespace

std::string objective_name(ObjectiveKind kind) {
  switch (kind) {
    case ObjectiveKind::Elbo: return "elbo";
    case ObjectiveKind::BetaVae: return "beta-vae";
    case ObjectiveKind::EntropyRegElbo: return "entropy-reg-elbo";
    case ObjectiveKind::Decomp: return "decomp";
  }
  return "?";
}

ObjectiveKind parse_objective(const std::string& name) {
  for (auto k : {ObjectiveKind::Elbo, ObjectiveKind::BetaVae, ObjectiveKind::EntropyRegElbo, ObjectiveKind::Decomp})
    if (objective_name(k) == name) return k;
  throw ValidationError("unknown objective '" + name + "'");
}

std::string divergence_name(DivergenceKind kind) {
  return kind == DivergenceKind::InclusiveKl ? "inclusive-kl" : "mmd-dimwise";
}

DivergenceKind parse_divergence(const std::string& name) {
  if (name == "inclusive-kl") return DivergenceKind::InclusiveKl;
  if (name == "mmd-dimwise") return DivergenceKind::MmdDimwise;
  throw ValidationError("unknown divergence tag '" + name + "'");
}

void ObjectiveSpec::validate() const {
  if (recon_samples < 1) throw ValidationError("objective: recon_samples must be >= 1");
  if (!std::isfinite(alpha) || !std::isfinite(beta)) throw ValidationError("objective: alpha and beta must be finite");
  switch (kind) {
    case ObjectiveKind::Elbo: break;
    case ObjectiveKind::BetaVae:
      if (beta < 0.0) throw ValidationError("objective: beta must be >= 0");
      break;
    case ObjectiveKind::EntropyRegElbo:
      if (!(beta > 0.0)) throw ValidationError("objective: beta must be > 0");
      break;
    case ObjectiveKind::Decomp:
      if (alpha < 0.0 || beta < 0.0) throw ValidationError("objective: decomp needs alpha >= 0 and beta >= 0");
      break;
  }
}

Noise Noise::draw(std::size_t batch, std::size_t dim, std::size_t samples, Rng& rng) {
  return {standard_normal(batch * samples, dim, rng), samples};
}

Noise Noise::zeros(std::size_t batch, std::size_t dim, std::size_t samples) {
  return {Tensor(Shape{batch * samples, dim}), samples};
}

ObjectiveNodes record_objective(const BoundModel& bound, ad::Var x, const ObjectiveSpec& spec, const Noise& noise,
                                const DivergenceSamples* divergence) {
  spec.validate();
  const VaeModel& m = *bound.model;
  ad::Tape& tape = *bound.tape;
  const std::size_t batch = x.shape()[0], dim = m.latent_dim, k = noise.samples;
  if (k != spec.recon_samples) throw ValidationError("objective: noise sample count differs from recon_samples");
  if (noise.eps.rows() != batch * k || noise.eps.cols() != dim) {
    throw ShapeError("objective: noise must be (K*B) x D = " + std::to_string(batch * k) + " x " + std::to_string(dim) +
                     ", got " + shape_string(noise.eps.shape()));
  }
  const bool gaussian_prior = m.prior.is_gaussian();
  if (spec.kind == ObjectiveKind::EntropyRegElbo && !gaussian_prior) {
    throw ValidationError("entropy-reg-elbo requires a Gaussian prior");
  }

  EncodedBatch enc = encode(bound, x);
  const double log_det_map = post_map_log_abs_det(m);
  EncodedBatch rep{repeat_rows(enc.raw_mean, k), repeat_rows(enc.log_variance, k), {}};
  ad::Var eps = tape.constant(noise.eps);
  ad::Var z = reparam_sample(bound, rep, eps);
  ad::Var xs = repeat_rows(x, k);

  ObjectiveNodes out;
  out.reconstruction = ad::mean(decode_log_prob(bound, z, xs));
  out.log_det_cov = ad::mean(ad::row_sum(enc.log_variance)) + 2.0 * log_det_map;
  out.entropy = 0.5 * (out.log_det_cov + double(dim) * (1.0 + kLog2Pi));

  if (gaussian_prior) {
    out.kl = gaussian_kl(bound, enc, log_det_map);
  } else {
    // log q(z) from the base noise: the Jacobian of z = mu + A eps is |det A|.
    ad::Var log_q = -0.5 * (ad::row_sum(rep.log_variance) + ad::row_sum(ad::square(eps))) -
                    (0.5 * double(dim) * kLog2Pi + log_det_map);
    ad::Var log_p = prior_log_prob(m.prior, z, bound.prior_log_variance);
    out.kl = ad::mean(log_q - log_p);
  }

  double beta = 1.0;
  if (spec.kind == ObjectiveKind::BetaVae || spec.kind == ObjectiveKind::Decomp) beta = spec.beta;
  ad::Var core = out.reconstruction - out.kl * beta;
  if (spec.kind == ObjectiveKind::EntropyRegElbo) core = core + out.log_det_cov * (0.5 * (spec.beta - 1.0));

  if (spec.kind == ObjectiveKind::Decomp && spec.alpha > 0.0) {
    if (!divergence) throw ValidationError("decomp objective: prior samples for the divergence are required");
    if (bound.prior_log_variance.valid()) throw ValidationError("decomp objective: requires a fixed prior");
    const Tensor& w = divergence->prior;
    if (w.rank() != 2 || w.cols() != dim || w.rows() == 0) throw ShapeError("decomp objective: prior samples must be J x D");
    if (spec.divergence == DivergenceKind::InclusiveKl) {
      Tensor log_p(Shape{w.rows(), 1});
      for (std::size_t j = 0; j < w.rows(); ++j) log_p[j] = prior_log_prob(m.prior, w.row_span(j));
      out.divergence = inclusive_kl(enc.mean, mapped_log_variance(m, enc), w, log_p);
    } else {
      ad::Var z_first = k == 1 ? z : ad::slice(z, 0, batch, 0, dim);
      out.divergence = mmd_dimwise_cauchy(z_first, tape.constant(w));
    }
    out.value = core - out.divergence * spec.alpha;
  } else {
    out.value = core;
  }
  return out;
}

namespace {

ObjectiveTerms read_terms(const ObjectiveNodes& n) {
  ObjectiveTerms t;
  t.value = n.value.item();
  t.reconstruction = n.reconstruction.item();
  t.kl = n.kl.item();
  t.divergence = n.divergence.valid() ? n.divergence.item() : 0.0;
  t.entropy = n.entropy.item();
  t.log_det_cov = n.log_det_cov.item();
  return t;
}

}  // namespace

ObjectiveTerms evaluate_objective(const VaeModel& model, const Tensor& x, const ObjectiveSpec& spec, const Noise& noise,
                                  const DivergenceSamples* divergence) {
  ad::Tape tape;
  BoundModel bound = bind(tape, model);
  return read_terms(record_objective(bound, tape.constant(x), spec, noise, divergence));
}

ObjectiveGradient objective_gradient(const VaeModel& model, const Tensor& x, const ObjectiveSpec& spec,
                                     const Noise& noise, const DivergenceSamples* divergence) {
  ad::Tape tape;
  BoundModel bound = bind(tape, model);
  ObjectiveNodes nodes = record_objective(bound, tape.constant(x), spec, noise, divergence);
  ObjectiveGradient out{read_terms(nodes), {}};
  const ad::Gradients g = tape.backward(nodes.value);
  out.grads.reserve(bound.params.size());
  for (ad::Var p : bound.params) out.grads.push_back(g.of(p));
  return out;
}

ObjectiveTerms elbo(const VaeModel& model, const Tensor& x, const Noise& noise) {
  ObjectiveSpec spec;
  spec.recon_samples = noise.samples;
  return evaluate_objective(model, x, spec, noise);
}

ObjectiveTerms beta_vae(const VaeModel& model, const Tensor& x, double beta, const Noise& noise) {
  ObjectiveSpec spec{ObjectiveKind::BetaVae, 0.0, beta, DivergenceKind::InclusiveKl, noise.samples};
  return evaluate_objective(model, x, spec, noise);
}

ObjectiveTerms entropy_reg_elbo(const VaeModel& model, const Tensor& x, double beta, const Noise& noise) {
  ObjectiveSpec spec{ObjectiveKind::EntropyRegElbo, 0.0, beta, DivergenceKind::InclusiveKl, noise.samples};
  return evaluate_objective(model, x, spec, noise);
}

ObjectiveTerms decomp_objective(const VaeModel& model, const Tensor& x, double alpha, double beta,
                                DivergenceKind divergence, const Noise& noise, const DivergenceSamples& samples) {
  ObjectiveSpec spec{ObjectiveKind::Decomp, alpha, beta, divergence, noise.samples};
  return evaluate_objective(model, x, spec, noise, &samples);
}

}  // namespace dvae
