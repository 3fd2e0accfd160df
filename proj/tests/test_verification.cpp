#include <doctest.h>

#include <cmath>
#include <numbers>

#include "dvae/divergences.hpp"
#include "dvae/error.hpp"
#include "dvae/verification.hpp"

using namespace dvae;
namespace {

VaeModel make_model(std::uint64_t seed, PriorSpec prior, std::size_t d = 2) {
  Rng rng(seed);
  const std::size_t hidden[] = {6};
  return VaeModel::create(hidden, hidden, 4, d, Activation::Tanh, Activation::Identity, GaussianFixedScale{1.0}, prior, rng);
}

Tensor batch(std::uint64_t seed) {
  Rng rng(seed);
  return standard_normal(4, 4, rng);
}

}  // namespace

TEST_CASE("theorem 1 at beta one reduces to the elbo") {
  for (const PriorSpec& p : {isotropic_prior(2), student_t_prior(2, 5.0)}) {
    const VaeModel m = make_model(1, p);
    Rng rng(2);
    const auto noise = Noise::draw(4, 2, 8, rng);
    const auto r = verify_theorem1(m, batch(3), 1.0, noise);
    CHECK(r.residual <= 1e-12);
    ObjectiveSpec s;
    s.recon_samples = 8;
    CHECK(std::abs(r.lhs - evaluate_objective(m, batch(3), s, noise).value) <= 1e-12);
  }
}

TEST_CASE("theorem 1 holds for Gaussian, Student-t, spike-slab and mixture priors") {
  Rng rng(4);
  std::uniform_real_distribution<double> lb(std::log(0.4), std::log(10.0));
  for (int trial = 0; trial < 10; ++trial) {
    const double beta = std::exp(lb(rng));
    for (const PriorSpec& p : {isotropic_prior(2, 1.5), diagonal_prior({2.0, 0.5}), student_t_prior(2, 5.0), spike_slab_prior(2, 0.8),
                               unit_square_mixture_prior()}) {
      CAPTURE(p.family_name());
      CAPTURE(beta);
      const VaeModel m = make_model(10 + trial, p);
      const auto r = verify_theorem1(m, batch(20 + trial), beta, 16, rng);
      CHECK(r.residual <= 1e-8);
      CHECK(r.monte_carlo == !p.is_gaussian());
    }
  }
}

TEST_CASE("corollary constant vanishes at beta one and matches its closed form") {
  CHECK(std::abs(corollary_constant(isotropic_prior(3, 2.0), 1.0)) < 1e-15);
  const auto p = diagonal_prior({2.0, 0.5, 1.3});
  const double beta = 2.5, d = 3;
  const double expected =
      d * (beta - 1) / 2 * (1 + std::log(2 * std::numbers::pi / beta)) + log_norm_const_F(p, beta).log_value;
  CHECK(corollary_constant(p, beta) == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("corollary identity in value and gradient") {
  for (double beta : {1.0, 0.25, 2.0, 8.0}) {
    CAPTURE(beta);
    const VaeModel m = make_model(30, diagonal_prior({1.4, 0.6}));
    Rng rng(31);
    const auto r = verify_corollary_gauss(m, batch(32), beta, Noise::draw(4, 2, 1, rng));
    CHECK(r.value_residual <= (beta == 1.0 ? 1e-12 : 1e-8));
    CHECK(r.grad_residual <= 1e-6);
  }
  Rng rng(33);
  CHECK_THROWS_AS(verify_corollary_gauss(make_model(34, student_t_prior(2, 5)), batch(35), 2.0, Noise::draw(4, 2, 1, rng)),
                  ValidationError);
}

TEST_CASE("rotation invariance") {
  Rng rng(40);
  const VaeModel m = make_model(41, isotropic_prior(3), 3);
  const Tensor x = batch(42);
  const auto noise = Noise::draw(4, 3, 2, rng);
  const auto same = verify_rotation_invariance(m, x, 1.5, Tensor::identity(3), noise);
  CHECK(same.residual == 0.0);
  for (int i = 0; i < 10; ++i) {
    const auto r = verify_rotation_invariance(m, x, 1.5, random_rotation(3, rng), noise);
    CHECK(r.residual <= 1e-10);
    CHECK_FALSE(r.expected_to_differ);
  }
}

TEST_CASE("anisotropic prior breaks rotation invariance") {
  Rng rng(43);
  const VaeModel m = make_model(44, diagonal_prior({2.0, 0.5}));
  const auto r = verify_rotation_invariance(m, batch(45), 1.0, plane_rotation(2, 0, 1, 0.7), Noise::draw(4, 2, 1, rng));
  CHECK(r.expected_to_differ);
  CHECK(r.kl_residual > 1e-3);
  CHECK(r.reconstruction_residual <= 1e-10);
}

TEST_CASE("all randomised sweeps pass") {
  VerifyConfig c;
  c.trials = 30;
  for (const auto& s : run_verification(c)) {
    CAPTURE(s.name);
    CHECK(s.passed);
    CHECK(s.trials == 30);
  }
}

TEST_CASE("lattice means") {
  const Tensor l = lattice_means(5, 2, 3.0);
  CHECK(l.rows() == 5);
  std::vector<double> dists;
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = i + 1; j < 5; ++j) dists.push_back(std::hypot(l(i, 0) - l(j, 0), l(i, 1) - l(j, 1)));
  CHECK(*std::min_element(dists.begin(), dists.end()) == doctest::Approx(3.0));
}

TEST_CASE("bias study: separated encoders and identical encoders") {
  BiasStudyConfig c;
  c.seed = 7;
  const auto far = bias_study_row(c, 100.0);
  CHECK(std::abs(far.mean_estimate - far.predicted) <= 0.1);
  CHECK(far.predicted == doctest::Approx(std::log(1024.0) + 0.5 * (1 + std::log(2 * std::numbers::pi))));
  const auto zero = bias_study_row(c, 0.0);
  CHECK(std::abs(zero.gap_oracle) <= 3 * std::hypot(zero.estimate_se, zero.oracle_se));
}

TEST_CASE("bias study: full batch is consistent at every separation") {
  BiasStudyConfig c;
  c.n = 64;
  c.batch = 64;
  c.trials = 200;
  c.seed = 8;
  for (const auto& row : bias_study(c)) {
    CAPTURE(row.separation);
    CHECK(std::abs(row.gap_oracle) <= 3 * std::hypot(row.estimate_se, row.oracle_se));
  }
}

TEST_CASE("property: bias gap against the oracle peaks at intermediate overlap") {
  BiasStudyConfig c;
  c.trials = 100;
  c.seed = 9;
  const auto rows = bias_study(c);
  REQUIRE(rows.size() == 4);
  const double g0 = std::abs(rows[0].gap_oracle), g2 = std::abs(rows[1].gap_oracle), g100 = std::abs(rows[3].gap_oracle);
  CHECK(g2 > g0);
  CHECK(g2 > g100);
  CHECK(g2 > 0.1);
}

TEST_CASE("reports serialise") {
  VerifyConfig c;
  c.trials = 2;
  const auto sweeps = run_verification(c);
  CHECK(sweeps_to_json(sweeps).find("theorem1-gaussian") != std::string::npos);
  CHECK(sweeps_to_text(sweeps).find("rotation-anisotropic") != std::string::npos);
  BiasStudyConfig b;
  b.n = 16;
  b.batch = 4;
  b.trials = 3;
  b.oracle_samples = 100;
  const auto rows = bias_study(b);
  CHECK(bias_rows_to_json(rows).find("gap_oracle") != std::string::npos);
  CHECK_THROWS_AS(([] {
                    BiasStudyConfig big;
                    big.n = kOracleMaxComponents + 1;
                    bias_study(big);
                  }()),
                  ValidationError);
}
