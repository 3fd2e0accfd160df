#include "dvae/verification.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <nlohmann/json.hpp>
#include <numbers>
#include <sstream>

#include "dvae/divergences.hpp"
#include "dvae/error.hpp"

namespace dvae {


Theorem1Report verify_theorem1(const VaeModel& model, const Tensor& x, double beta, const Noise& noise, Rng* norm_rng) {
  if (!(beta > 0.0)) throw ValidationError("verify_theorem1: beta must be > 0");
  const std::size_t batch = x.rows(), dim = model.latent_dim, k = noise.samples;
  if (noise.eps.rows() != batch * k || noise.eps.cols() != dim) throw ShapeError("verify_theorem1: noise must be (K*B) x D");
  const PriorSpec prior = model.effective_prior();
  Theorem1Report r;
  r.monte_carlo = !prior.is_gaussian();
  NormConstantOptions norm;
  norm.rng = norm_rng;
  r.log_F = log_norm_const_F(prior, beta, norm).log_value;
  const PriorSpec annealed = r.monte_carlo ? prior : anneal_gaussian(prior, beta);

  double lhs = 0.0, rhs = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    const GaussianPosterior q = encode(model, x.row_span(b));
    double recon = 0.0, log_q = 0.0, log_p = 0.0;
    for (std::size_t s = 0; s < k; ++s) {
      const auto z = reparam_sample(q, noise.eps.row_span(s * batch + b));
      recon += decode_log_prob(model, z, x.row_span(b));
      if (r.monte_carlo) {
        log_q += q.log_prob(z);
        log_p += prior_log_prob(prior, z);
      }
    }
    recon /= double(k);
    double kl, annealed_kl, entropy;
    if (r.monte_carlo) {
      log_q /= double(k);
      log_p /= double(k);
      entropy = -log_q;
      kl = log_q - log_p;
      annealed_kl = -entropy - beta * log_p + r.log_F;
    } else {
      entropy = gaussian_entropy(q);
      kl = kl_gaussian_gaussian(q, prior);
      annealed_kl = kl_gaussian_gaussian(q, annealed);
    }
    lhs += recon - beta * kl;
    rhs += (recon - annealed_kl) + (beta - 1.0) * entropy + r.log_F;
    r.reconstruction += recon;
    r.kl += kl;
    r.annealed_kl += annealed_kl;
    r.entropy += entropy;
  }
  const double inv = 1.0 / double(batch);
  r.lhs = lhs * inv;
  r.rhs = rhs * inv;
  r.reconstruction *= inv;
  r.kl *= inv;
  r.annealed_kl *= inv;
  r.entropy *= inv;
  r.residual = std::abs(r.lhs - r.rhs);
  return r;
}

Theorem1Report verify_theorem1(const VaeModel& model, const Tensor& x, double beta, std::size_t samples, Rng& rng) {
  const Noise noise = Noise::draw(x.rows(), model.latent_dim, samples, rng);
  return verify_theorem1(model, x, beta, noise, &rng);
}

double corollary_constant(const PriorSpec& prior, double beta) {
  const double dim = double(prior.dim);
  return 0.5 * dim * (beta - 1.0) * (1.0 + std::log(2.0 * std::numbers::pi / beta)) +
         log_norm_const_F(prior, beta).log_value;
}

CorollaryReport verify_corollary_gauss(const VaeModel& model, const Tensor& x, double beta, const Noise& noise) {
  if (!model.prior.is_gaussian()) throw ValidationError("verify_corollary_gauss: requires a Gaussian prior");
  if (model.prior_log_variance) throw ValidationError("verify_corollary_gauss: requires a fixed prior");
  const VaeModel rescaled = rescale_networks(model, beta);
  CorollaryReport r;
  r.c = corollary_constant(model.prior, beta);

  ObjectiveSpec lhs_spec{ObjectiveKind::BetaVae, 0.0, beta, DivergenceKind::InclusiveKl, noise.samples};
  ObjectiveSpec rhs_spec{ObjectiveKind::EntropyRegElbo, 0.0, beta, DivergenceKind::InclusiveKl, noise.samples};
  // The rescaled model shares the original parameters; only its fixed maps differ, so both
  // gradients are taken with respect to the same leaves.
  const ObjectiveGradient lhs = objective_gradient(model, x, lhs_spec, noise);
  const ObjectiveGradient rhs = objective_gradient(rescaled, x, rhs_spec, noise);
  r.lhs = lhs.terms.value;
  r.rhs = rhs.terms.value + r.c;
  r.value_residual = std::abs(r.lhs - r.rhs);
  for (std::size_t p = 0; p < lhs.grads.size(); ++p) {
    const Tensor& a = lhs.grads[p];
    const Tensor& b = rhs.grads[p];
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double rel = std::abs(a[i] - b[i]) / (std::abs(b[i]) + 1e-8);
      if (rel > r.grad_residual) {
        r.grad_residual = rel;
        r.worst_parameter = p;
      }
    }
  }
  return r;
}

RotationReport verify_rotation_invariance(const VaeModel& model, const Tensor& x, double beta, const Tensor& rotation,
                                          const Noise& noise) {
  if (!model.prior.is_gaussian()) throw ValidationError("verify_rotation_invariance: requires a Gaussian prior");
  const VaeModel rotated = rotate_networks(model, rotation);
  const PriorSpec prior = model.effective_prior();
  const std::size_t batch = x.rows(), k = noise.samples;
  if (noise.eps.rows() != batch * k || noise.eps.cols() != model.latent_dim)
    throw ShapeError("verify_rotation_invariance: noise must be (K*B) x D");
  RotationReport r;
  r.expected_to_differ = !prior.is_isotropic();
  double recon_a = 0.0, recon_b = 0.0, kl_a = 0.0, kl_b = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    const GaussianPosterior qa = encode(model, x.row_span(b));
    const GaussianPosterior qb = encode(rotated, x.row_span(b));
    for (std::size_t s = 0; s < k; ++s) {
      const auto eps = noise.eps.row_span(s * batch + b);
      recon_a += decode_log_prob(model, reparam_sample(qa, eps), x.row_span(b));
      recon_b += decode_log_prob(rotated, reparam_sample(qb, eps), x.row_span(b));
    }
    kl_a += kl_gaussian_gaussian(qa, prior);
    kl_b += kl_gaussian_gaussian(qb, prior);
  }
  const double nb = double(batch), nk = double(batch * k);
  recon_a /= nk;
  recon_b /= nk;
  kl_a /= nb;
  kl_b /= nb;
  r.lhs = recon_a - beta * kl_a;
  r.rhs = recon_b - beta * kl_b;
  r.residual = std::abs(r.lhs - r.rhs);
  r.reconstruction_residual = std::abs(recon_a - recon_b);
  r.kl_residual = std::abs(kl_a - kl_b);
  return r;
}

Tensor lattice_means(std::size_t n, std::size_t dim, double spacing) {
  if (dim == 0) throw ValidationError("lattice_means: dimension must be positive");
  std::size_t side = 1;
  while (std::pow(double(side), double(dim)) < double(n)) ++side;
  Tensor out(Shape{n, dim});
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t rest = i;
    for (std::size_t d = dim; d-- > 0;) {
      out(i, d) = spacing * double(rest % side);
      rest /= side;
    }
  }
  return out;
}

BiasStudyRow bias_study_row(const BiasStudyConfig& config, double separation) {
  if (config.n > kOracleMaxComponents) throw ValidationError("bias_study: n exceeds the oracle cap");
  if (config.batch < 2 || config.batch > config.n) throw ValidationError("bias_study: need 2 <= B <= n");
  if (config.trials < 2) throw ValidationError("bias_study: need at least 2 trials");
  PosteriorSet set{lattice_means(config.n, config.dim, separation), Tensor(Shape{config.n, config.dim})};
  RngStreams streams(config.seed);
  BiasStudyRow r;
  r.n = config.n;
  r.batch = config.batch;
  r.dim = config.dim;
  r.trials = config.trials;
  r.separation = separation;
  std::vector<double> est(config.trials);
  parallel_for(config.trials, [&](std::size_t t) {
    Rng rng = streams.stream("bias-trial", t);
    est[t] = naive_aggregate_entropy(set, config.batch, rng);
  });
  double sum = 0.0, sq = 0.0;
  for (double e : est) sum += e;
  r.mean_estimate = sum / double(config.trials);
  for (double e : est) sq += (e - r.mean_estimate) * (e - r.mean_estimate);
  r.estimate_se = std::sqrt(sq / double(config.trials - 1) / double(config.trials));
  r.predicted = std::log(double(config.n)) + 0.5 * double(config.dim) * (1.0 + std::log(2.0 * std::numbers::pi));
  Rng oracle_rng = streams.stream("bias-oracle");
  const DivergenceEstimate oracle = oracle_aggregate_entropy(set, config.oracle_samples, oracle_rng);
  r.oracle = oracle.value;
  r.oracle_se = oracle.std_error;
  r.gap_predicted = r.mean_estimate - r.predicted;
  r.gap_oracle = r.mean_estimate - r.oracle;
  return r;
}

std::vector<BiasStudyRow> bias_study(const BiasStudyConfig& config) {
  std::vector<BiasStudyRow> rows;
  for (double s : config.separations) rows.push_back(bias_study_row(config, s));
  return rows;
}

// ---------------------------------------------------------------------------

namespace {

struct Trial {
  VaeModel model;
  Tensor x;
  double beta = 1.0;
  Noise noise;
  Tensor rotation;
};

double log_uniform(Rng& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(std::log(lo), std::log(hi));
  return std::exp(u(rng));
}

/// Random MLP VAE with O(1) posterior means and log variances.
VaeModel random_model(const VerifyConfig& config, std::size_t dim, PriorSpec prior, LikelihoodSpec lik, Rng& rng) {
  const std::size_t hidden[] = {config.hidden};
  VaeModel m = VaeModel::create(hidden, hidden, config.input_dim, dim, Activation::Tanh, Activation::Identity, lik,
                                std::move(prior), rng);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (double& b : m.encoder.layers.back().bias.data()) b = normal(rng);
  for (double& w : m.encoder.layers.back().weight.data()) w *= 2.0;
  return m;
}

PriorSpec random_gaussian_prior(std::size_t dim, Rng& rng) {
  std::uniform_int_distribution<int> coin(0, 1);
  if (coin(rng) == 0) return isotropic_prior(dim, log_uniform(rng, 0.5, 2.0));
  std::vector<double> var(dim);
  for (double& v : var) v = log_uniform(rng, 0.25, 4.0);
  return diagonal_prior(var);
}

LikelihoodSpec random_likelihood(Rng& rng) {
  std::uniform_int_distribution<int> pick(0, 1);
  if (pick(rng) == 0) return GaussianFixedScale{1.0};
  return LaplaceFixedScale{0.5};
}

template <class MakeTrial, class Check>
SweepResult run_sweep(const std::string& name, const VerifyConfig& config, double tolerance, bool must_exceed,
                      const char* stream, MakeTrial make, Check check) {
  SweepResult res;
  res.name = name;
  res.trials = config.trials;
  res.tolerance = tolerance;
  std::vector<double> values(config.trials);
  std::vector<std::string> notes(config.trials);
  RngStreams streams(config.seed);
  parallel_for(config.trials, [&](std::size_t t) {
    Rng rng = streams.stream(stream, t);
    Trial trial = make(rng, t);
    values[t] = check(trial, notes[t]);
  });
  res.worst = must_exceed ? *std::min_element(values.begin(), values.end())
                          : *std::max_element(values.begin(), values.end());
  for (std::size_t t = 0; t < config.trials; ++t) {
    const bool ok = must_exceed ? values[t] > tolerance : values[t] <= tolerance;
    if (!ok) res.failures.push_back("trial " + std::to_string(t) + ": " + notes[t]);
  }
  res.passed = res.failures.empty();
  return res;
}

std::string theorem1_note(const Theorem1Report& r, double beta) {
  std::ostringstream os;
  os.precision(17);
  os << "beta=" << beta << " lhs=" << r.lhs << " rhs=" << r.rhs << " recon=" << r.reconstruction << " kl=" << r.kl
     << " annealed_kl=" << r.annealed_kl << " entropy=" << r.entropy << " logF=" << r.log_F;
  return os.str();
}

}  // namespace

SweepResult sweep_theorem1_gaussian(const VerifyConfig& config) {
  return run_sweep(
      "theorem1-gaussian", config, 1e-8, false, "theorem1-gaussian",
      [&](Rng& rng, std::size_t t) {
        const std::size_t dim = t % 2 == 0 ? 2 : 8;
        Trial tr;
        tr.model = random_model(config, dim, random_gaussian_prior(dim, rng), random_likelihood(rng), rng);
        tr.x = standard_normal(config.batch, config.input_dim, rng);
        tr.beta = log_uniform(rng, 0.1, 10.0);
        tr.noise = Noise::draw(config.batch, dim, 1, rng);
        return tr;
      },
      [](const Trial& tr, std::string& note) {
        const auto r = verify_theorem1(tr.model, tr.x, tr.beta, tr.noise);
        note = theorem1_note(r, tr.beta);
        return r.residual;
      });
}

SweepResult sweep_theorem1_student_t(const VerifyConfig& config) {
  const double nu = config.student_t_nu;
  // F_beta is finite only for beta (nu + 1) > 1; keep a margin so the tails stay integrable.
  const double beta_lo = std::max(0.1, 2.0 / (nu + 1.0));
  return run_sweep(
      "theorem1-student-t", config, 1e-8, false, "theorem1-student-t",
      [&](Rng& rng, std::size_t t) {
        const std::size_t dim = t % 2 == 0 ? 2 : 8;
        Trial tr;
        tr.model = random_model(config, dim, student_t_prior(dim, nu), random_likelihood(rng), rng);
        tr.x = standard_normal(config.batch, config.input_dim, rng);
        tr.beta = log_uniform(rng, beta_lo, 10.0);
        tr.noise = Noise::draw(config.batch, dim, config.mc_samples, rng);
        return tr;
      },
      [](const Trial& tr, std::string& note) {
        const auto r = verify_theorem1(tr.model, tr.x, tr.beta, tr.noise);
        note = theorem1_note(r, tr.beta);
        return r.residual;
      });
}

namespace {

Trial corollary_trial(const VerifyConfig& config, Rng& rng, std::size_t t) {
  static constexpr double kBetas[] = {0.25, 2.0, 8.0};
  const std::size_t dim = (t / 3) % 2 == 0 ? 2 : 8;
  Trial tr;
  tr.model = random_model(config, dim, random_gaussian_prior(dim, rng), random_likelihood(rng), rng);
  tr.x = standard_normal(config.batch, config.input_dim, rng);
  tr.beta = kBetas[t % 3];
  tr.noise = Noise::draw(config.batch, dim, 1, rng);
  return tr;
}

std::string corollary_note(const CorollaryReport& r, double beta) {
  std::ostringstream os;
  os.precision(17);
  os << "beta=" << beta << " lhs=" << r.lhs << " rhs=" << r.rhs << " c=" << r.c << " value_residual=" << r.value_residual
     << " grad_residual=" << r.grad_residual << " worst_parameter=" << r.worst_parameter;
  return os.str();
}

}  // namespace

SweepResult sweep_corollary_value(const VerifyConfig& config) {
  return run_sweep(
      "corollary-value", config, 1e-8, false, "corollary",
      [&](Rng& rng, std::size_t t) { return corollary_trial(config, rng, t); },
      [](const Trial& tr, std::string& note) {
        const auto r = verify_corollary_gauss(tr.model, tr.x, tr.beta, tr.noise);
        note = corollary_note(r, tr.beta);
        return r.value_residual;
      });
}

SweepResult sweep_corollary_gradient(const VerifyConfig& config) {
  return run_sweep(
      "corollary-gradient", config, 1e-6, false, "corollary",
      [&](Rng& rng, std::size_t t) { return corollary_trial(config, rng, t); },
      [](const Trial& tr, std::string& note) {
        const auto r = verify_corollary_gauss(tr.model, tr.x, tr.beta, tr.noise);
        note = corollary_note(r, tr.beta);
        return r.grad_residual;
      });
}

namespace {

std::string rotation_note(const RotationReport& r, double beta) {
  std::ostringstream os;
  os.precision(17);
  os << "beta=" << beta << " lhs=" << r.lhs << " rhs=" << r.rhs << " recon_residual=" << r.reconstruction_residual
     << " kl_residual=" << r.kl_residual << (r.expected_to_differ ? " (expected to differ)" : "");
  return os.str();
}

}  // namespace

SweepResult sweep_rotation_isotropic(const VerifyConfig& config) {
  return run_sweep(
      "rotation-isotropic", config, 1e-10, false, "rotation-isotropic",
      [&](Rng& rng, std::size_t t) {
        const std::size_t dim = t % 2 == 0 ? 2 : 8;
        Trial tr;
        tr.model = random_model(config, dim, isotropic_prior(dim, log_uniform(rng, 0.5, 2.0)), random_likelihood(rng), rng);
        tr.x = standard_normal(config.batch, config.input_dim, rng);
        tr.beta = log_uniform(rng, 0.1, 10.0);
        tr.noise = Noise::draw(config.batch, dim, 1, rng);
        tr.rotation = random_rotation(dim, rng);
        return tr;
      },
      [](const Trial& tr, std::string& note) {
        const auto r = verify_rotation_invariance(tr.model, tr.x, tr.beta, tr.rotation, tr.noise);
        note = rotation_note(r, tr.beta);
        return r.residual;
      });
}

SweepResult sweep_rotation_anisotropic(const VerifyConfig& config) {
  return run_sweep(
      "rotation-anisotropic-kl-gap", config, 1e-3, true, "rotation-anisotropic",
      [&](Rng& rng, std::size_t) {
        Trial tr;
        tr.model = random_model(config, 2, diagonal_prior({2.0, 0.5}), random_likelihood(rng), rng);
        tr.x = standard_normal(config.batch, config.input_dim, rng);
        tr.beta = log_uniform(rng, 0.1, 10.0);
        tr.noise = Noise::draw(config.batch, 2, 1, rng);
        std::uniform_real_distribution<double> angle(std::numbers::pi / 8, 3 * std::numbers::pi / 8);
        tr.rotation = plane_rotation(2, 0, 1, angle(rng));
        return tr;
      },
      [](const Trial& tr, std::string& note) {
        const auto r = verify_rotation_invariance(tr.model, tr.x, tr.beta, tr.rotation, tr.noise);
        note = rotation_note(r, tr.beta);
        return r.kl_residual;
      });
}

std::vector<SweepResult> run_verification(const VerifyConfig& config) {
  return {sweep_theorem1_gaussian(config),  sweep_theorem1_student_t(config), sweep_corollary_value(config),
          sweep_corollary_gradient(config), sweep_rotation_isotropic(config),  sweep_rotation_anisotropic(config)};
}

std::string sweeps_to_json(const std::vector<SweepResult>& sweeps) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& s : sweeps) {
    out.push_back({{"name", s.name},
                   {"trials", s.trials},
                   {"worst", s.worst},
                   {"tolerance", s.tolerance},
                   {"passed", s.passed},
                   {"failures", s.failures}});
  }
  return out.dump(2);
}

std::string sweeps_to_text(const std::vector<SweepResult>& sweeps) {
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof line, "%-30s %7s %14s %12s  %s\n", "check", "trials", "worst", "tolerance", "status");
  os << line;
  for (const auto& s : sweeps) {
    std::snprintf(line, sizeof line, "%-30s %7zu %14.6e %12.3e  %s\n", s.name.c_str(), s.trials, s.worst, s.tolerance,
                  s.passed ? "ok" : "FAILED");
    os << line;
    for (const auto& f : s.failures) os << "    " << f << "\n";
  }
  return os.str();
}

std::string bias_rows_to_json(const std::vector<BiasStudyRow>& rows) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : rows) {
    out.push_back({{"n", r.n},
                   {"batch", r.batch},
                   {"dim", r.dim},
                   {"trials", r.trials},
                   {"separation", r.separation},
                   {"mean_estimate", r.mean_estimate},
                   {"estimate_se", r.estimate_se},
                   {"predicted", r.predicted},
                   {"oracle", r.oracle},
                   {"oracle_se", r.oracle_se},
                   {"gap_predicted", r.gap_predicted},
                   {"gap_oracle", r.gap_oracle}});
  }
  return out.dump(2);
}

std::string bias_rows_to_text(const std::vector<BiasStudyRow>& rows) {
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof line, "%6s %5s %3s %10s %12s %10s %12s %12s %12s\n", "n", "B", "D", "s", "mean(H)", "se",
                "log n + H", "oracle", "H - oracle");
  os << line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%6zu %5zu %3zu %10.3f %12.6f %10.2e %12.6f %12.6f %12.6f\n", r.n, r.batch, r.dim,
                  r.separation, r.mean_estimate, r.estimate_se, r.predicted, r.oracle, r.gap_oracle);
    os << line;
  }
  return os.str();
}

}  // namespace dvae
