#include <doctest.h>

#include <cmath>

#include "dvae/autodiff.hpp"
#include "dvae/error.hpp"
#include "dvae/models.hpp"
#include "dvae/rng.hpp"
#include "oracles.hpp"
#include "random_graph.hpp"

using namespace dvae;

TEST_CASE("matmul of a 2x2 by a column of ones sums rows") {
  ad::Tape t;
  auto a = t.constant(Tensor::from_rows({{1, 2}, {3, 4}}));
  auto b = t.constant(Tensor::from_rows({{1}, {1}}));
  auto r = ad::matmul(a, b);
  CHECK(r.value() == Tensor::from_rows({{3}, {7}}));
}

TEST_CASE("log undoes exp") {
  ad::Tape t;
  auto x = t.constant(Tensor::vector({0.5, -1.2}));
  auto r = ad::log(ad::exp(x));
  CHECK(r.value()[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(r.value()[1] == doctest::Approx(-1.2).epsilon(1e-15));
}

TEST_CASE("sum of sigmoid at zero") {
  ad::Tape t;
  auto r = ad::sum(ad::sigmoid(t.constant(Tensor::vector({0, 0, 0}))));
  CHECK(r.item() == 1.5);
}

TEST_CASE("forward ops match their definitions elementwise") {
  ad::Tape t;
  const Tensor xv = Tensor::row({-1.5, -0.2, 0.3, 2.0});
  auto x = t.constant(xv);
  auto check = [&](ad::Var r, auto f) {
    for (std::size_t i = 0; i < xv.size(); ++i) CHECK(r.value()[i] == doctest::Approx(f(xv[i])).epsilon(1e-14));
  };
  check(ad::tanh(x), [](double v) { return std::tanh(v); });
  check(ad::relu(x), [](double v) { return v > 0 ? v : 0.0; });
  check(ad::leaky_relu(x), [](double v) { return v > 0 ? v : 0.2 * v; });
  check(ad::softplus(x), [](double v) { return std::log1p(std::exp(v)); });
  check(ad::square(x), [](double v) { return v * v; });
  check(ad::negate(x), [](double v) { return -v; });
  check(ad::exp(x), [](double v) { return std::exp(v); });
  CHECK(ad::mean(x).item() == doctest::Approx(0.15));
  auto tr = ad::transpose(t.constant(Tensor::from_rows({{1, 2, 3}, {4, 5, 6}})));
  CHECK(tr.value() == Tensor::from_rows({{1, 4}, {2, 5}, {3, 6}}));
  auto sl = ad::slice(t.constant(Tensor::from_rows({{1, 2, 3}, {4, 5, 6}})), 1, 2, 1, 3);
  CHECK(sl.value() == Tensor::from_rows({{5, 6}}));
  auto ba = ad::broadcast_add_rowvec(t.constant(Tensor::from_rows({{1, 2}, {3, 4}})), t.constant(Tensor::row({10, 20})));
  CHECK(ba.value() == Tensor::from_rows({{11, 22}, {13, 24}}));
  ad::Var parts[] = {t.constant(Tensor::from_rows({{1, 2}})), t.constant(Tensor::from_rows({{3, 4}}))};
  CHECK(ad::concat(parts, 0).value() == Tensor::from_rows({{1, 2}, {3, 4}}));
  CHECK(ad::concat(parts, 1).value() == Tensor::from_rows({{1, 2, 3, 4}}));
  CHECK(ad::reshape(t.constant(Tensor::from_rows({{1, 2}, {3, 4}})), Shape{4}).value() == Tensor::vector({1, 2, 3, 4}));
}

TEST_CASE("domain and shape violations raise distinct errors naming the op") {
  ad::Tape t;
  auto a = t.constant(Tensor::from_rows({{1, 2}, {3, 4}}));
  auto b = t.constant(Tensor::from_rows({{1, 2, 3}}));
  auto check_message = [](auto&& f, const char* needle) {
    try {
      f();
      FAIL("expected an exception");
    } catch (const Error& e) {
      CHECK(std::string(e.what()).find(needle) != std::string::npos);
    }
  };
  CHECK_THROWS_AS(ad::add(a, b), ShapeError);
  CHECK_THROWS_AS(ad::matmul(b, a), ShapeError);
  check_message([&] { ad::add(a, b); }, "add");
  auto neg = t.constant(Tensor::vector({1.0, -1.0}));
  CHECK_THROWS_AS(ad::log(neg), NumericError);
  check_message([&] { ad::log(neg); }, "log");
  CHECK_THROWS_AS(ad::sqrt(neg), NumericError);
  check_message([&] { ad::sqrt(neg); }, "sqrt");
  auto zero = t.constant(Tensor::vector({1.0, 0.0}));
  CHECK_THROWS_AS(ad::div(neg, zero), NumericError);
  check_message([&] { ad::div(neg, zero); }, "div");
}

TEST_CASE("gradient of sum of squares") {
  ad::Tape t;
  auto x = t.parameter(Tensor::vector({1, 2, 3}));
  auto g = t.backward(ad::sum(x * x));
  CHECK(g.of(x) == Tensor::vector({2, 4, 6}));
}

TEST_CASE("gradient of summed matmul is a broadcast of the fixed operand") {
  ad::Tape t;
  auto w = t.parameter(Tensor::from_rows({{0.3, -1.0, 2.0}, {1.0, 0.5, -0.5}}));
  auto x = t.constant(Tensor::from_rows({{1.5}, {-2.0}, {0.25}}));
  auto g = t.backward(ad::sum(ad::matmul(w, x)));
  CHECK(g.of(w) == Tensor::from_rows({{1.5, -2.0, 0.25}, {1.5, -2.0, 0.25}}));
}

TEST_CASE("backward rejects non-scalar roots and consumed tapes") {
  ad::Tape t;
  auto x = t.parameter(Tensor::vector({1, 2}));
  CHECK_THROWS_AS(t.backward(x * x), ShapeError);
  t.backward(ad::sum(x));
  CHECK(t.consumed());
  CHECK_THROWS_AS(t.backward(ad::sum(x)), Error);
}

TEST_CASE("random two-layer MLP loss matches central finite differences") {
  Rng rng(7);
  const std::size_t widths[] = {3, 5, 2};
  const Mlp mlp = Mlp::random(widths, Activation::Tanh, Activation::Identity, rng);
  const Tensor x = standard_normal(4, 3, rng);
  auto loss = [&](const Mlp& m, std::vector<ad::Var>* leaves, ad::Tape& t) {
    std::vector<ad::Var> params;
    for (const auto& l : m.layers) {
      params.push_back(t.parameter(l.weight));
      params.push_back(t.parameter(l.bias));
    }
    if (leaves) *leaves = params;
    return ad::sum(ad::square(mlp_forward(m, params, t.constant(x))));
  };
  ad::Tape t;
  std::vector<ad::Var> leaves;
  auto g = t.backward(loss(mlp, &leaves, t));
  double worst = 0.0;
  for (std::size_t p = 0; p < leaves.size(); ++p) {
    for (std::size_t i = 0; i < leaves[p].value().size(); ++i) {
      auto f = [&](const std::vector<double>& v) {
        Mlp m = mlp;
        Tensor& target = p % 2 == 0 ? m.layers[p / 2].weight : m.layers[p / 2].bias;
        target[i] = v[0];
        ad::Tape tt;
        return loss(m, nullptr, tt).item();
      };
      const double fd = oracle::central_difference(f, {leaves[p].value()[i]}, 0);
      worst = std::max(worst, std::abs(g.of(leaves[p])[i] - fd) / (std::abs(fd) + 1e-8));
    }
  }
  CHECK(worst <= 1e-4);
}

TEST_CASE("property: random composite graphs pass the finite-difference check") {
  for (std::uint64_t seed = 100; seed < 120; ++seed) {
    CAPTURE(seed);
    CHECK(graphs::gradient_check(seed) <= 1e-4);
  }
}

TEST_CASE("property: identical inputs give bit-identical values and gradients") {
  Rng rng(3);
  const auto in = graphs::draw_inputs(rng);
  const auto script = graphs::draw_script(rng, 15);
  ad::Tape t1, t2;
  std::vector<ad::Var> l1, l2;
  auto r1 = graphs::build(t1, in, script, l1);
  auto r2 = graphs::build(t2, in, script, l2);
  CHECK(r1.item() == r2.item());
  const auto g1 = t1.backward(r1);
  const auto g2 = t2.backward(r2);
  for (std::size_t i = 0; i < l1.size(); ++i) CHECK(g1.of(l1[i]) == g2.of(l2[i]));
}

TEST_CASE("property: backward is linear in the root") {
  Rng rng(11);
  const auto in = graphs::draw_inputs(rng);
  const double a = 1.7, b = -0.6;
  auto f = [](ad::Var x) { return ad::sum(ad::tanh(x) * x); };
  auto g = [](ad::Var x) { return ad::mean(ad::logsumexp_rows(ad::exp(x * 0.5))); };
  ad::Tape th, tf, tg;
  auto xh = th.parameter(in.a), xf = tf.parameter(in.a), xg = tg.parameter(in.a);
  const auto gh = th.backward(f(xh) * a + g(xh) * b);
  const Tensor df = tf.backward(f(xf)).of(xf);
  const Tensor dg = tg.backward(g(xg)).of(xg);
  for (std::size_t i = 0; i < df.size(); ++i) CHECK(std::abs(gh.of(xh)[i] - (a * df[i] + b * dg[i])) <= 1e-12);
}
