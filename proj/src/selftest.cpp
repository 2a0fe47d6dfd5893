#include "isr/selftest.hpp"

#include "isr/io.hpp"

#include <cmath>
#include <sstream>

namespace isr {
namespace {

Matrix gaussian_matrix(Index rows, Index cols, Rng& rng, double sd = 1.0) {
  std::normal_distribution<double> normal(0.0, sd);
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) m(i, j) = normal(rng);
  }
  return m;
}

SubnetSpec random_spec() {
  SubnetSpec spec;
  spec.output_init_scale = 1.0;
  return spec;
}

CheckResult check(std::string name, double value, double limit) {
  std::ostringstream o;
  o << "value " << value << ", limit " << limit;
  return {std::move(name), std::isfinite(value) && value <= limit, o.str()};
}

CheckResult gradient_check() {
  Rng rng = make_rng(101);
  const EqlNetwork net = EqlNetwork::random(3, 2, 2, default_library(), rng);
  Tape tape;
  const Var x = tape.input("x", 3);
  const BoundEql bound = net.bind(tape);
  const Var loss = tape.mean(tape.square(bound.apply(tape, x)));
  tape.forward({{"x", gaussian_matrix(8, 3, rng, 0.5)}});
  return check("eql gradient vs central differences", finite_difference_check(tape, loss, 1e-5), 1e-4);
}

CheckResult logdet_check() {
  Rng rng = make_rng(102);
  const CouplingBlock block = CouplingBlock::random(2, 0, random_spec(), rng);
  const Matrix u = gaussian_matrix(5, 2, rng);
  const MapResult fwd = block_forward(block, u);
  const double h = 1e-6;
  double worst = 0.0;
  for (Index r = 0; r < u.rows(); ++r) {
    Eigen::Matrix2d jac;
    for (Index c = 0; c < 2; ++c) {
      Matrix plus = u.row(r), minus = u.row(r);
      plus(0, c) += h;
      minus(0, c) -= h;
      jac.col(c) = ((block_forward(block, plus).out - block_forward(block, minus).out) / (2 * h)).transpose();
    }
    worst = std::max(worst, std::abs(std::log(std::abs(jac.determinant())) - fwd.logdet(r)));
  }
  return check("block logdet vs numeric Jacobian", worst, 1e-5);
}

CheckResult round_trip_check() {
  Rng rng = make_rng(103);
  SubnetSpec spec = random_spec();
  spec.output_init_scale = 0.5;
  const InvertibleStack stack = InvertibleStack::random(4, 0, 3, spec, 104);
  const Matrix x = gaussian_matrix(50, 4, rng, 0.5);
  const Matrix back = stack_inverse(stack, stack_forward(stack, x).out);
  return check("stack inverse(forward(x)) = x", (back - x).cwiseAbs().maxCoeff(), 1e-9);
}

CheckResult conditional_round_trip_check() {
  ModelShape shape;
  shape.kind = ModelKind::Cisr;
  shape.dx = 4;
  shape.dy = 2;
  shape.blocks = 2;
  shape.subnet = random_spec();
  const Model m = make_model(shape, 105);
  Rng rng = make_rng(106);
  const Matrix x = gaussian_matrix(20, 4, rng);
  const Matrix y = gaussian_matrix(20, 2, rng);
  const Matrix back = model_inverse(m, model_forward(m, x, &y).out, &y);
  return check("conditional inverse(forward(x)) = x", (back - x).cwiseAbs().maxCoeff(), 1e-9);
}

CheckResult extraction_check() {
  Rng rng = make_rng(107);
  const EqlNetwork net = EqlNetwork::random(2, 1, 2, default_library(), rng);
  const sym::Expr e = sym::extract(net, {"a", "b"}, 0);
  const Matrix x = gaussian_matrix(100, 2, rng, 0.5);
  const Matrix ref = net.forward(x);
  double worst = 0.0;
  for (Index r = 0; r < x.rows(); ++r) {
    worst = std::max(worst, std::abs(sym::eval(e, {{"a", x(r, 0)}, {"b", x(r, 1)}}) - ref(r, 0)));
  }
  return check("extracted expression vs network", worst, 1e-9);
}

CheckResult model_json_check() {
  ModelShape shape;
  shape.kind = ModelKind::Isr;
  shape.dx = 4;
  shape.dy = 2;
  shape.blocks = 2;
  shape.subnet = random_spec();
  const Model m = make_model(shape, 108);
  const Model back = model_from_json(Json::parse(model_to_json(m).dump()));
  const auto a = m.stack.parameters();
  const auto b = back.stack.parameters();
  bool same = a.size() == b.size();
  for (std::size_t i = 0; same && i < a.size(); ++i) same = *a[i] == *b[i];
  return {"model JSON round trip is exact", same, same ? "identical weights" : "weights differ"};
}

CheckResult config_check() {
  RunConfig cfg;
  cfg.experiment = ExperimentKind::Inverse;
  cfg.benchmark = "kinematics";
  cfg.train.lr_start = 1.0 / 3.0;
  const RunConfig back = parse_config(format_config(cfg));
  const bool same = format_config(back) == format_config(cfg);
  return {"config text round trip", same, same ? "identical" : "differs"};
}

CheckResult mmd_check() {
  Rng rng = make_rng(109);
  const Matrix a = gaussian_matrix(1000, 2, rng);
  return check("mmd(A, A) = 0", std::abs(mmd(a, a)), 1e-6);
}

CheckResult oracle_check() {
  const Eigen::Vector2d y_star(0.0, 1.5);
  const double eps = 0.02;
  const RejectionResult r = rejection_sample(y_star, eps, 20, 110);
  return check("oracle resim error <= eps^2", resim_error(r.samples, y_star), eps * eps);
}

}  // namespace

std::vector<CheckResult> run_selftest() {
  std::vector<CheckResult> out;
  for (auto fn : {gradient_check, logdet_check, round_trip_check, conditional_round_trip_check, extraction_check,
                  model_json_check, config_check, mmd_check, oracle_check}) {
    try {
      out.push_back(fn());
    } catch (const std::exception& e) {
      out.push_back({"check threw", false, e.what()});
    }
  }
  return out;
}

}  // namespace isr
