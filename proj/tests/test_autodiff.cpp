#include "helpers.hpp"
#include "isr/autodiff.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>

using namespace isr;
using isr::testing::normal_matrix;
using isr::testing::scalar;

TEST_CASE("forward values of small graphs") {
  Tape t;
  Var w = t.parameter(scalar(3));
  Var sq = t.square(w);
  Var a = t.parameter(scalar(2));
  Var b = t.parameter(scalar(5));
  Var prod = t.mul(a, b);
  Var q = t.parameter(scalar(0.25));
  Var s = t.sin_scaled(q);
  t.forward({});
  CHECK(t.value(sq)(0, 0) == 9.0);
  CHECK(t.value(prod)(0, 0) == 10.0);
  CHECK(t.value(s)(0, 0) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("backward of small graphs") {
  {
    Tape t;
    Var w = t.parameter(scalar(3));
    Var loss = t.sum(t.square(w));
    t.forward({});
    CHECK(t.backward(loss)[0](0, 0) == doctest::Approx(6.0));
  }
  {
    Tape t;
    Var a = t.parameter(scalar(2));
    Var b = t.parameter(scalar(5));
    Var loss = t.sum(t.mul(a, b));
    t.forward({});
    auto g = t.backward(loss);
    CHECK(g[0](0, 0) == doctest::Approx(5.0));
    CHECK(g[1](0, 0) == doctest::Approx(2.0));
  }
  {
    Tape t;
    Var w = t.parameter(scalar(0));
    Var loss = t.sum(t.sin_scaled(w));
    t.forward({});
    CHECK(t.backward(loss)[0](0, 0) == doctest::Approx(2 * std::numbers::pi));
  }
}

TEST_CASE("unreachable parameters get zero gradient") {
  Tape t;
  Var a = t.parameter(scalar(2));
  t.parameter(Eigen::MatrixXd::Constant(2, 3, 1.0));
  Var loss = t.sum(t.square(a));
  t.forward({});
  auto g = t.backward(loss);
  REQUIRE(g.size() == 2);
  CHECK(g[1].rows() == 2);
  CHECK(g[1].cols() == 3);
  CHECK(g[1].isZero(0));
}

TEST_CASE("finite difference check on simple losses") {
  SUBCASE("linear loss is exact") {
    Tape t;
    Var w = t.parameter(Eigen::MatrixXd::Constant(1, 3, 0.7));
    Var loss = t.sum(t.scale(w, 2.5));
    t.forward({});
    CHECK(finite_difference_check(t, loss, 1e-5) < 1e-10);
  }
  SUBCASE("clamped exp at an interior point") {
    Tape t;
    Var w = t.parameter(scalar(0.3));
    Var loss = t.sum(t.exp(t.clamp(t.scale(w, 3.0), 2.0)));
    t.forward({});
    CHECK(finite_difference_check(t, loss, 1e-5) < 1e-4);
  }
  SUBCASE("clamp has zero derivative outside its band") {
    Tape t;
    Var w = t.parameter(scalar(5.0));
    Var loss = t.sum(t.exp(t.clamp(w, 2.0)));
    t.forward({});
    CHECK(t.value(loss)(0, 0) == doctest::Approx(std::exp(2.0)));
    CHECK(t.backward(loss)[0](0, 0) == 0.0);
  }
}

namespace {

// A graph touching every op; returns the scalar loss.
Var composite(Tape& t, Rng& rng, Var x) {
  const auto layout = std::make_shared<const ActivationLayout>(ActivationLayout::from_library(
      {{ActivationKind::Constant1, 1},
       {ActivationKind::Identity, 1},
       {ActivationKind::Square, 1},
       {ActivationKind::SineScaled, 1},
       {ActivationKind::Sigmoid, 1},
       {ActivationKind::Exp, 1},
       {ActivationKind::PairProduct, 1}}));
  Var w1 = t.parameter(normal_matrix(layout->pre_width, 4, rng, 0.5));
  Var h = t.activation(t.affine(x, w1), layout);
  Var w2 = t.parameter(normal_matrix(3, layout->out_width() + 1, rng, 0.5));
  Var g = t.affine(h, w2);
  Var a = t.slice_cols(g, 0, 2);
  Var b = t.permute_cols(t.pad_cols(t.slice_cols(g, 2, 1), 1), {1, 0});
  Var c = t.concat_cols(t.mul(a, b), t.sigmoid(a));
  Var d = t.add(t.exp(t.clamp(c, 2.0)), t.soft_clamp(c, 1.5));
  Var e = t.log(t.add_scalar(t.square(t.sub(d, t.sin_scaled(c))), 1.0));
  Var p = t.parameter(normal_matrix(1, 1, rng));
  Var pen = t.sum(t.smoothed_sqrt_abs(t.concat_cols(w2, t.scale(w2, 3.0)), 0.05));
  return t.add(t.mean(t.row_sum(e)), t.add(t.scale(pen, 0.01), t.sum(t.square(p))));
}

}  // namespace

TEST_CASE("gradients of random compositions match central differences") {
  Rng rng = make_rng(7);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    Tape t;
    Var x = t.input("x", 3);
    Var loss = composite(t, rng, x);
    t.forward({{"x", normal_matrix(5, 3, rng)}});
    worst = std::max(worst, finite_difference_check(t, loss, 1e-5));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("backward is linear in the loss") {
  Rng rng = make_rng(8);
  Tape t;
  Var x = t.input("x", 3);
  Var l1 = composite(t, rng, x);
  Var wq = t.parameter(normal_matrix(2, 4, rng));
  Var l2 = t.sum(t.square(t.affine(x, wq)));
  const double a = 0.37, b = -1.9;
  Var combo = t.add(t.scale(l1, a), t.scale(l2, b));
  t.forward({{"x", normal_matrix(6, 3, rng)}});
  auto g1 = t.backward(l1);
  auto g2 = t.backward(l2);
  auto g = t.backward(combo);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const Eigen::MatrixXd expected = a * g1[i] + b * g2[i];
    CHECK((g[i] - expected).cwiseAbs().maxCoeff() <= 1e-12 * std::max(1.0, expected.cwiseAbs().maxCoeff()));
  }
}

TEST_CASE("repeated backward is bitwise identical") {
  Rng rng = make_rng(9);
  Tape t;
  Var x = t.input("x", 3);
  Var loss = composite(t, rng, x);
  t.forward({{"x", normal_matrix(4, 3, rng)}});
  auto g1 = t.backward(loss);
  auto g2 = t.backward(loss);
  for (std::size_t i = 0; i < g1.size(); ++i) CHECK(g1[i] == g2[i]);
}

TEST_CASE("tape errors") {
  SUBCASE("backward before forward") {
    Tape t;
    Var w = t.parameter(scalar(1));
    Var loss = t.sum(w);
    CHECK_THROWS_AS(t.backward(loss), std::logic_error);
  }
  SUBCASE("non-scalar loss") {
    Tape t;
    Var w = t.parameter(Eigen::MatrixXd::Ones(2, 2));
    t.forward({});
    CHECK_THROWS_AS(t.backward(w), std::invalid_argument);
  }
  SUBCASE("unbound input") {
    Tape t;
    Var x = t.input("x", 2);
    t.sum(x);
    CHECK_THROWS_AS(t.forward({}), std::invalid_argument);
  }
  SUBCASE("non-finite intermediate names the node") {
    Tape t;
    Var w = t.parameter(scalar(-1));
    Var bad = t.log(w);
    t.sum(bad);
    try {
      t.forward({});
      FAIL("expected NonFiniteError");
    } catch (const NonFiniteError& e) {
      CHECK(e.node() == bad.id);
    }
  }
}

TEST_CASE("tape re-runs with new parameter values") {
  Tape t;
  Var w = t.parameter(scalar(2));
  Var loss = t.sum(t.square(w));
  t.forward({});
  CHECK(t.value(loss)(0, 0) == 4.0);
  t.set_parameter(0, scalar(5));
  t.forward();
  CHECK(t.value(loss)(0, 0) == 25.0);
}

TEST_CASE("smoothed sqrt abs") {
  const double a = 0.05;
  CHECK(smoothed_sqrt_abs(1.0, a) == doctest::Approx(1.0));
  CHECK(smoothed_sqrt_abs(0.0, a) == doctest::Approx(std::sqrt(3 * a / 8)));
  CHECK(std::abs(smoothed_sqrt_abs(a - 1e-15, a) - std::sqrt(a)) < 1e-12);
  CHECK(std::abs(smoothed_sqrt_abs_derivative(a - 1e-12, a) - smoothed_sqrt_abs_derivative(a + 1e-12, a)) < 1e-8);
}
