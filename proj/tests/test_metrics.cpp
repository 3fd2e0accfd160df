#include <doctest.h>

#include <cmath>
#include <numbers>

#include "dvae/error.hpp"
#include "dvae/metrics.hpp"
#include "oracles.hpp"

using namespace dvae;
namespace {

// Every combination of two factors with the given cardinalities, repeated; observations are the factor values.
Dataset grid(std::size_t c0, std::size_t c1, std::size_t repeat) {
  Dataset d;
  d.cardinalities = {c0, c1};
  d.observations = Tensor(Shape{c0 * c1 * repeat, 2});
  std::size_t r = 0;
  for (std::size_t k = 0; k < repeat; ++k)
    for (std::size_t a = 0; a < c0; ++a)
      for (std::size_t b = 0; b < c1; ++b, ++r) {
        d.factors.push_back(std::uint32_t(a));
        d.factors.push_back(std::uint32_t(b));
        d.observations(r, 0) = double(a);
        d.observations(r, 1) = double(b);
      }
  return d;
}

CodeFn linear_code(Tensor map) {
  return [map](const Tensor& x) { return matmul(x, map); };
}

}  // namespace

TEST_CASE("hoyer hand cases") {
  CHECK(hoyer(std::vector<double>{1, 0, 0, 0}) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(std::abs(hoyer(std::vector<double>{1, 1, 1, 1})) < 1e-15);
  const double expected = 2.0 - 4.0 / std::sqrt(10.0);
  CHECK(hoyer(std::vector<double>{3, 1, 0, 0}) == doctest::Approx(expected).epsilon(1e-14));
  CHECK(expected == doctest::Approx(0.735089).epsilon(1e-6));
  CHECK_THROWS_AS(hoyer(std::vector<double>{0, 0, 0}), NumericError);
  CHECK_THROWS_AS(hoyer(std::vector<double>{2}), ValidationError);
}

TEST_CASE("property: hoyer is scale invariant") {
  Rng rng(1);
  std::normal_distribution<double> nd;
  for (int i = 0; i < 100; ++i) {
    std::vector<double> y(2 + i % 7), cy;
    for (auto& v : y) v = nd(rng);
    const double c = (i % 2 ? -1 : 1) * std::exp(nd(rng) * 3);
    for (double v : y) cy.push_back(c * v);
    CHECK(std::abs(hoyer(y) - hoyer(cy)) < 1e-12);
    CHECK(std::abs(hoyer(y) - oracle::hoyer(y)) < 1e-12);
  }
}

TEST_CASE("sparsity of one-hot and dense encodings") {
  const Tensor onehot = Tensor::from_rows({{2, 0, 0}, {0, 2, 0}, {0, 0, 2}, {2, 0, 0}, {0, 2, 0}, {0, 0, 2}});
  CHECK(sparsity_score(onehot).score == doctest::Approx(1.0).epsilon(1e-12));
  const Tensor dense = Tensor::from_rows({{1, 1, -1}, {-1, 1, 1}, {1, -1, 1}, {-1, -1, -1}});
  CHECK(std::abs(sparsity_score(dense).score) < 1e-12);
}

TEST_CASE("sparsity of the two-row example against the two-step formula") {
  const Tensor e = Tensor::from_rows({{2, 0, 0, 0}, {1, 1, 1, 1}});
  std::vector<double> sd(4);
  for (std::size_t d = 0; d < 4; ++d) {
    const double m = (e(0, d) + e(1, d)) / 2;
    sd[d] = std::sqrt((std::pow(e(0, d) - m, 2) + std::pow(e(1, d) - m, 2)) / 2);
  }
  double expected = 0;
  for (std::size_t r = 0; r < 2; ++r) {
    std::vector<double> z(4);
    for (std::size_t d = 0; d < 4; ++d) z[d] = e(r, d) / sd[d];
    expected += oracle::hoyer(z) / 2;
  }
  CHECK(sparsity_score(e).score == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("sparsity excludes constant dimensions and rejects degenerate input") {
  const Tensor e = Tensor::from_rows({{1, 0, 5}, {0, 1, 5}, {1, 1, 5}});
  const auto r = sparsity_score(e);
  CHECK(r.excluded_dims == std::vector<std::size_t>{2});
  CHECK_THROWS_AS(sparsity_score(Tensor::from_rows({{1, 3}, {2, 3}})), ValidationError);
}

TEST_CASE("property: sparsity is invariant to per-dimension rescaling") {
  Rng rng(2);
  std::normal_distribution<double> nd;
  Tensor e = standard_normal(50, 5, rng);
  Tensor scaled = e;
  for (std::size_t d = 0; d < 5; ++d) {
    const double c = std::exp(2 * nd(rng));
    for (std::size_t i = 0; i < 50; ++i) scaled(i, d) *= c;
  }
  CHECK(std::abs(sparsity_score(e).score - sparsity_score(scaled).score) < 1e-10);
}

TEST_CASE("axis-aligned oracle code scores one") {
  const Dataset d = grid(6, 6, 4);
  Rng rng(3);
  const auto r = disentanglement_score(linear_code(Tensor::identity(2)), d, {}, rng);
  CHECK(r.score == 1.0);
  CHECK(r.votes == 800);
  CHECK(r.collapsed_dims.empty());
}

TEST_CASE("rotated code scores lower than the aligned one") {
  const Dataset d = grid(6, 6, 4);
  const double c = std::cos(std::numbers::pi / 4), s = std::sin(std::numbers::pi / 4);
  const Tensor scales = Tensor::from_rows({{1, 0}, {0, 3}});
  const Tensor rot = Tensor::from_rows({{c, s}, {-s, c}});
  Rng r1(4), r2(4);
  const double aligned = disentanglement_score(linear_code(scales), d, {}, r1).score;
  const double rotated = disentanglement_score(linear_code(matmul(scales, rot)), d, {}, r2).score;
  CHECK(rotated < aligned);
}

TEST_CASE("code independent of the factors scores at chance") {
  const Dataset d = grid(8, 8, 8);
  Rng noise(5);
  const Tensor fixed = standard_normal(d.size(), 2, noise);
  CodeFn code = [fixed](const Tensor&) { return fixed; };
  Rng rng(6);
  const auto r = disentanglement_score(code, d, {}, rng);
  const double band = 2.576 * std::sqrt(0.25 / 800.0);
  CHECK(std::abs(r.score - 0.5) <= band);
}

TEST_CASE("collapsed dimensions are reported and excluded") {
  const Dataset d = grid(5, 5, 4);
  CodeFn code = [](const Tensor& x) {
    Tensor z(Shape{x.rows(), 3});
    for (std::size_t i = 0; i < x.rows(); ++i) {
      z(i, 0) = x(i, 0);
      z(i, 1) = 0.001 * x(i, 1);
      z(i, 2) = x(i, 1);
    }
    return z;
  };
  Rng rng(7);
  const auto r = disentanglement_score(code, d, {}, rng);
  CHECK(r.collapsed_dims == std::vector<std::size_t>{1});
  CHECK(r.score == 1.0);
  CodeFn flat = [](const Tensor& x) { return Tensor(Shape{x.rows(), 2}); };
  CHECK_THROWS_AS(disentanglement_score(flat, d, {}, rng), ValidationError);
  DisentanglementOptions small;
  small.batch = 1;
  CHECK_THROWS_AS(disentanglement_score(linear_code(Tensor::identity(2)), d, small, rng), ValidationError);
}

TEST_CASE("property: disentanglement is invariant under latent permutation") {
  const Dataset d = grid(6, 5, 4);
  Rng mix(8);
  const Tensor a = standard_normal(2, 3, mix);
  Tensor jitter = standard_normal(d.size(), 3, mix);
  for (auto& v : jitter.storage()) v *= 0.3;
  CodeFn base = [a, jitter](const Tensor& x) {
    Tensor z = matmul(x, a);
    for (std::size_t i = 0; i < z.size(); ++i) z[i] += jitter[i];
    return z;
  };
  CodeFn permuted = [base](const Tensor& x) {
    const Tensor z = base(x);
    Tensor p(z.shape());
    for (std::size_t i = 0; i < z.rows(); ++i) {
      p(i, 0) = z(i, 2);
      p(i, 1) = z(i, 0);
      p(i, 2) = z(i, 1);
    }
    return p;
  };
  Rng r1(9), r2(9);
  CHECK(disentanglement_score(base, d, {}, r1).score == disentanglement_score(permuted, d, {}, r2).score);
}
