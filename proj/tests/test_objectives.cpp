#include <doctest.h>

#include <cmath>

#include "dvae/divergences.hpp"
#include "dvae/error.hpp"
#include "dvae/objectives.hpp"
#include "dvae/trainer.hpp"
#include "oracles.hpp"

using namespace dvae;
namespace {

VaeModel make_model(std::uint64_t seed, std::size_t in = 4, std::size_t d = 2, LikelihoodSpec lik = GaussianFixedScale{1.0},
                    PriorSpec prior = {}) {
  Rng rng(seed);
  const std::size_t hidden[] = {6};
  if (prior.dim == 0) prior = isotropic_prior(d);
  return VaeModel::create(hidden, hidden, in, d, Activation::Tanh, Activation::Identity, lik, prior, rng);
}

Tensor batch(std::uint64_t seed, std::size_t rows = 4, std::size_t cols = 4) {
  Rng rng(seed);
  return standard_normal(rows, cols, rng);
}

ObjectiveSpec spec_of(ObjectiveKind kind, double alpha, double beta, DivergenceKind div = DivergenceKind::InclusiveKl) {
  ObjectiveSpec s;
  s.kind = kind;
  s.alpha = alpha;
  s.beta = beta;
  s.divergence = div;
  return s;
}

}  // namespace

TEST_CASE("elbo reduces to reconstruction when the encoder equals the prior") {
  VaeModel m = make_model(1);
  for (auto& l : m.encoder.layers) {
    l.weight = Tensor(l.weight.shape());
    l.bias = Tensor(l.bias.shape());
  }
  m.decoder.layers[0].weight = Tensor(m.decoder.layers[0].weight.shape());
  Rng rng(2);
  const Tensor x = batch(3);
  const auto noise = Noise::draw(4, 2, 1, rng);
  const auto t = elbo(m, x, noise);
  CHECK(t.kl == 0.0);
  CHECK(t.value == t.reconstruction);
}

TEST_CASE("property: shared noise makes elbo, beta_vae(1) and decomp(0,1) bit-identical") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const VaeModel m = make_model(10 + seed);
    const Tensor x = batch(20 + seed);
    Rng rng(30 + seed);
    const auto noise = Noise::draw(4, 2, 2, rng);
    DivergenceSamples ds{prior_sample(m.prior, 8, rng)};
    const double e = elbo(m, x, noise).value;
    CHECK(beta_vae(m, x, 1.0, noise).value == e);
    CHECK(entropy_reg_elbo(m, x, 1.0, noise).value == e);
    CHECK(decomp_objective(m, x, 0.0, 1.0, DivergenceKind::InclusiveKl, noise, ds).value == e);
    CHECK(decomp_objective(m, x, 0.0, 1.0, DivergenceKind::MmdDimwise, noise, ds).value == e);
    const double b = beta_vae(m, x, 2.5, noise).value;
    CHECK(decomp_objective(m, x, 0.0, 2.5, DivergenceKind::MmdDimwise, noise, ds).value == b);
  }
}

TEST_CASE("elbo lower-bounds an importance-sampled evidence") {
  const VaeModel m = make_model(40, 3, 1);
  const Tensor x = batch(41, 1, 3);
  Rng rng(42);
  ObjectiveSpec s;
  s.recon_samples = 2000;
  const double bound = evaluate_objective(m, x, s, Noise::draw(1, 1, 2000, rng)).value;

  const auto q = encode(m, x.row_span(0));
  std::normal_distribution<double> nd;
  const std::size_t n = 10000;
  std::vector<double> logw(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::vector<double> eps{nd(rng)};
    const auto z = reparam_sample(q, eps);
    logw[i] = decode_log_prob(m, z, x.row_span(0)) + prior_log_prob(m.prior, z) - q.log_prob(z);
  }
  const double lmax = *std::max_element(logw.begin(), logw.end());
  double s1 = 0, s2 = 0;
  for (double l : logw) {
    const double w = std::exp(l - lmax);
    s1 += w;
    s2 += w * w;
  }
  const double mean = s1 / n, var = s2 / n - mean * mean;
  const double log_evidence = lmax + std::log(mean);
  const double se = std::sqrt(var / n) / mean;
  CHECK(bound <= log_evidence + 3 * se);
}

TEST_CASE("beta_vae at zero is the reconstruction term") {
  const VaeModel m = make_model(50);
  const Tensor x = batch(51);
  Rng rng(52);
  const auto noise = Noise::draw(4, 2, 1, rng);
  const auto t = beta_vae(m, x, 0.0, noise);
  CHECK(t.value == t.reconstruction);
  CHECK(t.kl > 0);
}

TEST_CASE("derivative of beta_vae in beta is minus the KL") {
  const VaeModel m = make_model(60);
  const Tensor x = batch(61);
  Rng rng(62);
  const auto noise = Noise::draw(4, 2, 1, rng);
  const double beta = 1.7, h = 1e-4;
  const double fd = (beta_vae(m, x, beta + h, noise).value - beta_vae(m, x, beta - h, noise).value) / (2 * h);
  CHECK(std::abs(fd + beta_vae(m, x, beta, noise).kl) < 1e-6);
}

TEST_CASE("entropy regulariser vanishes for unit posterior covariance") {
  VaeModel m = make_model(70);
  auto& head = m.encoder.layers.back();
  for (std::size_t r = 0; r < head.weight.rows(); ++r)
    for (std::size_t c = 2; c < 4; ++c) head.weight(r, c) = 0.0;
  head.bias(0, 2) = head.bias(0, 3) = 0.0;
  const Tensor x = batch(71);
  Rng rng(72);
  const auto noise = Noise::draw(4, 2, 1, rng);
  const double e = elbo(m, x, noise).value;
  for (double beta : {0.3, 2.0, 9.0}) CHECK(entropy_reg_elbo(m, x, beta, noise).value == doctest::Approx(e).epsilon(1e-15));
}

TEST_CASE("entropy-regularised elbo adds the scaled log determinant") {
  const VaeModel m = make_model(73);
  const Tensor x = batch(74);
  Rng rng(75);
  const auto noise = Noise::draw(4, 2, 1, rng);
  const auto e = elbo(m, x, noise);
  const auto r = entropy_reg_elbo(m, x, 3.0, noise);
  CHECK(r.value == doctest::Approx(e.value + r.log_det_cov).epsilon(1e-13));
}

TEST_CASE("objective validation") {
  CHECK_THROWS_AS(spec_of(ObjectiveKind::EntropyRegElbo, 0, 0).validate(), ValidationError);
  CHECK_THROWS_AS(spec_of(ObjectiveKind::BetaVae, 0, -1).validate(), ValidationError);
  CHECK_THROWS_AS(spec_of(ObjectiveKind::Decomp, -1, 1).validate(), ValidationError);
  ObjectiveSpec k0;
  k0.recon_samples = 0;
  CHECK_THROWS_AS(k0.validate(), ValidationError);
  CHECK_THROWS_AS(parse_divergence("wasserstein"), ValidationError);
  CHECK_THROWS_AS(parse_objective("iwae"), ValidationError);
  CHECK(parse_divergence("mmd-dimwise") == DivergenceKind::MmdDimwise);
  CHECK(objective_name(parse_objective("entropy-reg-elbo")) == "entropy-reg-elbo");

  const VaeModel st = make_model(76, 4, 2, GaussianFixedScale{}, student_t_prior(2, 5.0));
  Rng rng(77);
  CHECK_THROWS_AS(entropy_reg_elbo(st, batch(78), 2.0, Noise::draw(4, 2, 1, rng)), ValidationError);
}

TEST_CASE("decomp objective gradient matches finite differences") {
  for (DivergenceKind div : {DivergenceKind::InclusiveKl, DivergenceKind::MmdDimwise}) {
    CAPTURE(divergence_name(div));
    VaeModel m = make_model(80);
    const Tensor x = batch(81);
    Rng rng(82);
    const auto noise = Noise::draw(4, 2, 1, rng);
    DivergenceSamples ds{prior_sample(m.prior, 16, rng)};
    const auto spec = spec_of(ObjectiveKind::Decomp, 5.0, 0.5, div);
    const auto g = objective_gradient(m, x, spec, noise, &ds);
    const auto params = m.parameters();
    const std::size_t encoder_tensors = 2 * m.encoder.layers.size();
    double worst = 0;
    for (std::size_t p = 0; p < encoder_tensors; ++p) {
      for (std::size_t i = 0; i < params[p]->size(); ++i) {
        auto f = [&](const std::vector<double>& v) {
          const double keep = (*params[p])[i];
          (*params[p])[i] = v[0];
          const double r = evaluate_objective(m, x, spec, noise, &ds).value;
          (*params[p])[i] = keep;
          return r;
        };
        const double fd = oracle::central_difference(f, {(*params[p])[i]}, 0);
        worst = std::max(worst, std::abs(g.grads[p][i] - fd) / (std::abs(fd) + 1e-8));
      }
    }
    CHECK(worst <= 1e-4);
  }
}

TEST_CASE("Monte-Carlo KL path and gradients for non-Gaussian priors") {
  VaeModel m = make_model(90, 4, 2, GaussianFixedScale{}, spike_slab_prior(2, 0.8));
  const Tensor x = batch(91);
  Rng rng(92);
  const auto noise = Noise::draw(4, 2, 1, rng);
  const auto spec = spec_of(ObjectiveKind::BetaVae, 0, 2.0);
  const auto g = objective_gradient(m, x, spec, noise);
  auto params = m.parameters();
  double worst = 0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (std::size_t i = 0; i < params[p]->size(); i += 3) {
      auto f = [&](const std::vector<double>& v) {
        const double keep = (*params[p])[i];
        (*params[p])[i] = v[0];
        const double r = evaluate_objective(m, x, spec, noise).value;
        (*params[p])[i] = keep;
        return r;
      };
      const double fd = oracle::central_difference(f, {(*params[p])[i]}, 0);
      worst = std::max(worst, std::abs(g.grads[p][i] - fd) / (std::abs(fd) + 1e-8));
    }
  }
  CHECK(worst <= 1e-4);
}

TEST_CASE("decomp divergence term equals the stand-alone estimator") {
  const VaeModel m = make_model(95);
  const Tensor x = batch(96, 6);
  Rng rng(97);
  const auto noise = Noise::draw(6, 2, 1, rng);
  DivergenceSamples ds{prior_sample(m.prior, 10, rng)};
  const auto t = decomp_objective(m, x, 2.0, 1.0, DivergenceKind::MmdDimwise, noise, ds);
  Tensor z(Shape{6, 2});
  for (std::size_t i = 0; i < 6; ++i) {
    const auto zi = reparam_sample(encode(m, x.row_span(i)), noise.eps.row_span(i));
    z(i, 0) = zi[0];
    z(i, 1) = zi[1];
  }
  CHECK(t.divergence == doctest::Approx(mmd_dimwise_cauchy(z, ds.prior)).epsilon(1e-12));
  CHECK(t.value == doctest::Approx(t.reconstruction - t.kl - 2.0 * t.divergence).epsilon(1e-12));
}

TEST_CASE("property: KL term is non-negative and Bernoulli reconstruction is non-positive") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(100 + seed);
    const VaeModel m = make_model(200 + seed, 4, 2, BernoulliMean{});
    Tensor x(Shape{5, 4});
    std::uniform_real_distribution<double> u(0, 1);
    for (auto& v : x.storage()) v = u(rng);
    const auto t = beta_vae(m, x, 1.5, Noise::draw(5, 2, 1, rng));
    CHECK(t.kl >= 0);
    CHECK(t.reconstruction <= 0);
  }
}

TEST_CASE("property: encoder entropy after training is non-decreasing in beta") {
  const double betas[] = {0.5, 1.0, 2.0, 4.0};
  double mean_entropy[4] = {};
  const std::size_t models = 32, steps = 200;
  for (std::size_t j = 0; j < models; ++j) {
    const Tensor data = batch(500 + j, 16, 5);
    for (std::size_t b = 0; b < 4; ++b) {
      VaeModel m = make_model(600 + j, 5, 2);
      AdamState adam;
      adam.lr = 1e-2;
      Rng rng(700 + j);
      const auto spec = spec_of(ObjectiveKind::BetaVae, 0, betas[b]);
      for (std::size_t s = 0; s < steps; ++s) {
        auto g = objective_gradient(m, data, spec, Noise::draw(16, 2, 1, rng));
        for (auto& t : g.grads)
          for (auto& v : t.storage()) v = -v;
        adam_step(adam, m.parameters(), g.grads);
      }
      mean_entropy[b] += evaluate_objective(m, data, spec, Noise::zeros(16, 2)).entropy / double(models);
    }
  }
  for (std::size_t b = 1; b < 4; ++b) {
    CAPTURE(b);
    CHECK(mean_entropy[b] >= mean_entropy[b - 1]);
  }
}
