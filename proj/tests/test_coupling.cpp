#include "helpers.hpp"
#include "isr/coupling.hpp"

#include <doctest.h>

#include <cmath>

using namespace isr;
using isr::testing::normal_matrix;

namespace {

EqlNetwork constant_net(Index in, double value) {
  EqlNetwork net = EqlNetwork::zeros(in, 1, 2, default_library());
  auto& w = net.layers().back().weights;
  w(0, w.cols() - 1) = value;
  return net;
}

CouplingBlock gaussian_block() {
  return CouplingBlock(constant_net(1, 1.16), constant_net(1, 0.0), constant_net(1, 1.14), constant_net(1, -9.39), 2, 0,
                       2.0, ClampMode::Hard);
}

SubnetSpec live_spec(double scale = 1.0, int hidden = 2) {
  SubnetSpec spec;
  spec.hidden_layers = hidden;
  spec.output_init_scale = scale;
  return spec;
}

// Five-point stencil.
template <class Map>
Matrix numeric_jacobian(const Map& f, const Matrix& row, double h = 1e-5) {
  const Index d = row.cols();
  Matrix jac(d, d);
  for (Index c = 0; c < d; ++c) {
    auto at = [&](double k) {
      Matrix p = row;
      p(0, c) += k * h;
      return Matrix(f(p));
    };
    jac.col(c) = ((at(-2) - 8 * at(-1) + 8 * at(1) - at(2)) / (12 * h)).transpose();
  }
  return jac;
}

double relative_error(const Matrix& a, const Matrix& b) {
  return (a - b).cwiseAbs().maxCoeff() / std::max(1.0, b.cwiseAbs().maxCoeff());
}

}  // namespace

TEST_CASE("identity block") {
  CouplingBlock b = CouplingBlock::identity(3, 0, SubnetSpec{});
  Rng rng = make_rng(31);
  const Matrix u = normal_matrix(10, 3, rng);
  const MapResult r = block_forward(b, u);
  CHECK(r.out == u);
  CHECK(r.logdet.isZero(0));
  CHECK(block_inverse(b, u) == u);
}

TEST_CASE("constant Gaussian block") {
  const CouplingBlock b = gaussian_block();
  Matrix u(1, 2);
  u << 0, 3;
  const MapResult r = block_forward(b, u);
  CHECK(r.out(0, 0) == 0.0);
  CHECK(r.out(0, 1) == doctest::Approx(3 * std::exp(1.14) - 9.39).epsilon(1e-14));
  CHECK(r.out(0, 1) == doctest::Approx(-0.0097).epsilon(0.05));
  CHECK(r.logdet(0) == doctest::Approx(2.30).epsilon(1e-12));

  const Matrix back = block_inverse(b, Matrix::Zero(1, 2));
  CHECK(back(0, 0) == 0.0);
  CHECK(back(0, 1) == doctest::Approx(9.39 * std::exp(-1.14)).epsilon(1e-14));
  CHECK(back(0, 1) == doctest::Approx(3.003).epsilon(1e-3));
}

TEST_CASE("block logdet matches a numeric Jacobian") {
  Rng rng = make_rng(32);
  for (int trial = 0; trial < 50; ++trial) {
    const CouplingBlock b = CouplingBlock::random(2, 0, live_spec(), rng);
    const Matrix u = normal_matrix(1, 2, rng);
    const Matrix jac = numeric_jacobian([&](const Matrix& x) { return block_forward(b, x).out; }, u);
    CHECK(std::abs(std::log(std::abs(jac.determinant())) - block_forward(b, u).logdet(0)) < 1e-5);
  }
}

TEST_CASE("block round trip") {
  Rng rng = make_rng(33);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const Index width = 2 + trial % 5;
    const CouplingBlock b = CouplingBlock::random(width, 0, live_spec(), rng);
    const Matrix u = normal_matrix(1, width, rng);
    worst = std::max(worst, relative_error(block_inverse(b, block_forward(b, u).out), u));
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("split sizes and conditioning widths") {
  Rng rng = make_rng(34);
  const CouplingBlock b = CouplingBlock::random(5, 2, live_spec(), rng);
  CHECK(b.split() == 2);
  CHECK(b.s1().input_width() == 3 + 2);
  CHECK(b.s1().output_width() == 2);
  CHECK(b.t1().input_width() == 3 + 2);
  CHECK(b.s2().input_width() == 2 + 2);
  CHECK(b.s2().output_width() == 3);
  const Matrix u = normal_matrix(7, 5, rng);
  const Matrix y = normal_matrix(7, 2, rng);
  CHECK(relative_error(block_inverse(b, block_forward(b, u, &y).out, &y), u) < 1e-9);
  CHECK_THROWS(block_forward(b, normal_matrix(3, 4, rng), &y));
}

TEST_CASE("hard clamp bounds the log-determinant") {
  Rng rng = make_rng(35);
  for (int trial = 0; trial < 20; ++trial) {
    const Index width = 2 + trial % 4;
    const CouplingBlock b = CouplingBlock::random(width, 0, live_spec(40.0), rng);
    const MapResult r = block_forward(b, normal_matrix(20, width, rng, 3.0));
    CHECK(r.logdet.cwiseAbs().maxCoeff() <= 2.0 * static_cast<double>(width) + 1e-12);
  }
  CHECK(clamp_log_scale(5.0, 2.0, ClampMode::Hard) == 2.0);
  CHECK(clamp_log_scale(-5.0, 2.0, ClampMode::Hard) == -2.0);
  CHECK(clamp_log_scale(1.0, 2.0, ClampMode::Soft) == doctest::Approx(2.0 * std::tanh(0.5)));
}

TEST_CASE("soft clamp blocks invert too") {
  Rng rng = make_rng(36);
  SubnetSpec spec = live_spec();
  spec.clamp_mode = ClampMode::Soft;
  const CouplingBlock b = CouplingBlock::random(4, 0, spec, rng);
  const Matrix u = normal_matrix(30, 4, rng);
  CHECK(relative_error(block_inverse(b, block_forward(b, u).out), u) < 1e-9);
  const Matrix jac = numeric_jacobian([&](const Matrix& x) { return block_forward(b, x).out; }, u.topRows(1));
  CHECK(std::abs(std::log(std::abs(jac.determinant())) - block_forward(b, u.topRows(1)).logdet(0)) < 1e-5);
}

TEST_CASE("forward and inverse evaluate the subnetworks equally often") {
  Rng rng = make_rng(37);
  const InvertibleStack stack = InvertibleStack::random(4, 0, 3, live_spec(), 38);
  Tape ft;
  Var x = ft.input("x", 4);
  BoundStack fb = bind(ft, stack);
  stack_forward(ft, fb, x);
  Tape it;
  Var o = it.input("o", 4);
  BoundStack ib = bind(it, stack);
  stack_inverse(it, ib, o);
  CHECK(ft.op_count(Op::Affine) == it.op_count(Op::Affine));
  CHECK(ft.op_count(Op::Activation) == it.op_count(Op::Activation));
  CHECK(ft.op_count(Op::Affine) == 3 * 4 * 3);
}

TEST_CASE("permutations") {
  PermutationLayer p({2, 0, 3, 1});
  CHECK(p.inverse() == std::vector<Index>{1, 3, 0, 2});
  CHECK_THROWS(PermutationLayer({0, 0, 1}));
  const PermutationLayer a = PermutationLayer::from_seed(6, 99);
  const PermutationLayer b = PermutationLayer::from_seed(6, 99);
  CHECK(a.forward() == b.forward());

  SUBCASE("permutation-only stack") {
    InvertibleStack stack(4, 0, {PermutationLayer({2, 0, 3, 1})});
    Matrix x(1, 4);
    x << 10, 11, 12, 13;
    const MapResult r = stack_forward(stack, x);
    Matrix expected(1, 4);
    expected << 12, 10, 13, 11;
    CHECK(r.out == expected);
    CHECK(r.logdet(0) == 0.0);
    CHECK(stack_inverse(stack, expected) == x);
  }
}

TEST_CASE("stack construction") {
  const InvertibleStack a = InvertibleStack::random(5, 0, 4, live_spec(), 40);
  const InvertibleStack b = InvertibleStack::random(5, 0, 4, live_spec(), 40);
  CHECK(a.block_count() == 4);
  CHECK(a.layers().size() == 7);
  for (std::size_t i = 0; i < a.layers().size(); ++i) {
    if (const auto* p = std::get_if<PermutationLayer>(&a.layers()[i])) {
      CHECK(p->forward() == std::get<PermutationLayer>(b.layers()[i]).forward());
    }
  }
  const auto pa = a.parameters();
  const auto pb = b.parameters();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(*pa[i] == *pb[i]);
}

TEST_CASE("empty and single-block stacks") {
  Rng rng = make_rng(41);
  const Matrix x = normal_matrix(5, 3, rng);
  InvertibleStack empty(3, 0, {});
  CHECK(stack_forward(empty, x).out == x);
  CHECK(stack_forward(empty, x).logdet.isZero(0));

  const CouplingBlock b = CouplingBlock::random(3, 0, live_spec(), rng);
  InvertibleStack one(3, 0, {b});
  const MapResult s = stack_forward(one, x);
  const MapResult d = block_forward(b, x);
  CHECK(s.out == d.out);
  CHECK(s.logdet == d.logdet);
}

TEST_CASE("stack logdet matches numeric Jacobians") {
  Rng rng = make_rng(42);
  double worst = 0.0;
  for (int trial = 0; trial < 60; ++trial) {
    const Index width = 2 + trial % 5;
    const int blocks = 1 + trial % 3;
    const InvertibleStack stack =
        InvertibleStack::random(width, 0, blocks, live_spec(0.5), derive_seed(43, static_cast<std::uint64_t>(trial)));
    const Matrix x = normal_matrix(1, width, rng, 0.7);
    const Matrix jac = numeric_jacobian([&](const Matrix& v) { return stack_forward(stack, v).out; }, x);
    worst = std::max(worst, std::abs(std::log(std::abs(jac.determinant())) - stack_forward(stack, x).logdet(0)));
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("six block round trip") {
  Rng rng = make_rng(44);
  const InvertibleStack stack = InvertibleStack::random(6, 0, 6, live_spec(0.1), 45);
  const Matrix x = normal_matrix(100, 6, rng, 0.5);
  CHECK(relative_error(stack_inverse(stack, stack_forward(stack, x).out), x) < 1e-9);
}

TEST_CASE("taped and plain stack evaluation agree") {
  Rng rng = make_rng(46);
  const InvertibleStack stack = InvertibleStack::random(3, 1, 2, live_spec(), 47);
  const Matrix x = normal_matrix(8, 3, rng);
  const Matrix y = normal_matrix(8, 1, rng);
  Tape t;
  Var xv = t.input("x", 3);
  Var yv = t.input("y", 1);
  BoundStack b = bind(t, stack);
  Coupled c = stack_forward(t, b, xv, yv);
  t.forward({{"x", x}, {"y", y}});
  const MapResult plain = stack_forward(stack, x, &y);
  CHECK((t.value(c.out) - plain.out).cwiseAbs().maxCoeff() < 1e-13);
  CHECK((t.value(c.logdet) - Matrix(plain.logdet)).cwiseAbs().maxCoeff() < 1e-13);
}

TEST_CASE("padding") {
  Matrix x(2, 1);
  x << 1.5, -2;
  CHECK(pad_input(x, 0) == x);
  const Matrix p = pad_input(x, 1);
  CHECK(p.cols() == 2);
  CHECK(p.col(0) == x.col(0));
  CHECK(p.col(1).isZero(0));
  CHECK(pad_penalty(p, 1) == 0.0);
  Matrix out(2, 3);
  out << 0, 1, 2, 0, 3, 4;
  CHECK(pad_penalty(out, 2) == doctest::Approx((1 + 4 + 9 + 16) / 4.0));
  CHECK(pad_penalty(out, 0) == 0.0);
}
