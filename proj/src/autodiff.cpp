#include "isr/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace isr {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

const char* op_name(Op op) {
  switch (op) {
    case Op::Input: return "input";
    case Op::Parameter: return "parameter";
    case Op::Constant: return "constant";
    case Op::Affine: return "affine";
    case Op::Activation: return "activation";
    case Op::SliceCols: return "slice_cols";
    case Op::ConcatCols: return "concat_cols";
    case Op::PermuteCols: return "permute_cols";
    case Op::PadCols: return "pad_cols";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Scale: return "scale";
    case Op::AddScalar: return "add_scalar";
    case Op::Square: return "square";
    case Op::SinScaled: return "sin_scaled";
    case Op::Sigmoid: return "sigmoid";
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::Clamp: return "clamp";
    case Op::SoftClamp: return "soft_clamp";
    case Op::SmoothedSqrtAbs: return "smoothed_sqrt_abs";
    case Op::RowSum: return "row_sum";
    case Op::Sum: return "sum";
    case Op::Mean: return "mean";
  }
  return "?";
}

std::string non_finite_message(std::size_t node, Op op) {
  std::ostringstream out;
  out << "non-finite value at node " << node << " (" << op_name(op) << ")";
  return out.str();
}

double sigmoid_scalar(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

double smoothed_sqrt_abs(double w, double a) {
  double aw = std::abs(w);
  if (aw >= a) return std::sqrt(aw);
  double w2 = w * w;
  return std::sqrt(-w2 * w2 / (8.0 * a * a * a) + 3.0 * w2 / (4.0 * a) + 3.0 * a / 8.0);
}

double smoothed_sqrt_abs_derivative(double w, double a) {
  double aw = std::abs(w);
  if (aw >= a) return (w > 0 ? 1.0 : -1.0) / (2.0 * std::sqrt(aw));
  double w2 = w * w;
  double p = -w2 * w2 / (8.0 * a * a * a) + 3.0 * w2 / (4.0 * a) + 3.0 * a / 8.0;
  double dp = -w2 * w / (2.0 * a * a * a) + 3.0 * w / (2.0 * a);
  return dp / (2.0 * std::sqrt(p));
}

namespace {

void check_same_cols(Index a, Index b, const char* what) {
  if (a != b) {
    std::ostringstream out;
    out << what << ": width mismatch (" << a << " vs " << b << ")";
    throw std::invalid_argument(out.str());
  }
}

void check_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    std::ostringstream out;
    out << what << ": shape mismatch (" << a.rows() << "x" << a.cols() << " vs " << b.rows()
        << "x" << b.cols() << ")";
    throw std::invalid_argument(out.str());
  }
}

}  // namespace

NonFiniteError::NonFiniteError(std::size_t node, Op op)
    : std::runtime_error(non_finite_message(node, op)), node_(node) {}

Var Tape::push(Node node) {
  evaluated_ = false;
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

void Tape::require(Var v) const {
  if (v.id >= nodes_.size()) throw std::out_of_range("variable does not belong to this tape");
}

Var Tape::input(std::string name, Index cols) {
  Node n{Op::Input};
  n.name = std::move(name);
  n.cols = cols;
  return push(std::move(n));
}

Var Tape::parameter(Matrix value) {
  Node n{Op::Parameter};
  n.i0 = static_cast<Index>(params_.size());
  n.cols = value.cols();
  params_.push_back(std::move(value));
  return push(std::move(n));
}

Var Tape::constant(Matrix value) {
  Node n{Op::Constant};
  n.cols = value.cols();
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::affine(Var x, Var weights) {
  require(x);
  require(weights);
  check_same_cols(nodes_[weights.id].cols - 1, nodes_[x.id].cols, "affine");
  Node n{Op::Affine};
  n.a = x.id;
  n.b = weights.id;
  // Output width equals weight rows; only parameters/constants have known rows here.
  const Node& w = nodes_[weights.id];
  if (w.op == Op::Parameter) {
    n.cols = params_[static_cast<std::size_t>(w.i0)].rows();
  } else if (w.op == Op::Constant) {
    n.cols = w.value.rows();
  } else {
    throw std::invalid_argument("affine weights must be a parameter or constant");
  }
  return push(std::move(n));
}

Var Tape::activation(Var pre, std::shared_ptr<const ActivationLayout> layout) {
  require(pre);
  check_same_cols(nodes_[pre.id].cols, layout->pre_width, "activation");
  Node n{Op::Activation};
  n.a = pre.id;
  n.cols = layout->out_width();
  n.layout = std::move(layout);
  return push(std::move(n));
}

Var Tape::slice_cols(Var a, Index begin, Index count) {
  require(a);
  if (begin < 0 || count < 0 || begin + count > nodes_[a.id].cols) {
    throw std::invalid_argument("slice_cols: range out of bounds");
  }
  Node n{Op::SliceCols};
  n.a = a.id;
  n.i0 = begin;
  n.i1 = count;
  n.cols = count;
  return push(std::move(n));
}

Var Tape::concat_cols(Var a, Var b) {
  require(a);
  require(b);
  Node n{Op::ConcatCols};
  n.a = a.id;
  n.b = b.id;
  n.cols = nodes_[a.id].cols + nodes_[b.id].cols;
  return push(std::move(n));
}

Var Tape::permute_cols(Var a, std::vector<Index> perm) {
  require(a);
  check_same_cols(static_cast<Index>(perm.size()), nodes_[a.id].cols, "permute_cols");
  Node n{Op::PermuteCols};
  n.a = a.id;
  n.cols = nodes_[a.id].cols;
  n.perm = std::make_shared<const std::vector<Index>>(std::move(perm));
  return push(std::move(n));
}

Var Tape::pad_cols(Var a, Index count) {
  require(a);
  if (count < 0) throw std::invalid_argument("pad_cols: negative count");
  Node n{Op::PadCols};
  n.a = a.id;
  n.i0 = count;
  n.cols = nodes_[a.id].cols + count;
  return push(std::move(n));
}

Var Tape::add(Var a, Var b) {
  require(a);
  require(b);
  check_same_cols(nodes_[a.id].cols, nodes_[b.id].cols, "add");
  Node n{Op::Add};
  n.a = a.id;
  n.b = b.id;
  n.cols = nodes_[a.id].cols;
  return push(std::move(n));
}

Var Tape::sub(Var a, Var b) {
  require(a);
  require(b);
  check_same_cols(nodes_[a.id].cols, nodes_[b.id].cols, "sub");
  Node n{Op::Sub};
  n.a = a.id;
  n.b = b.id;
  n.cols = nodes_[a.id].cols;
  return push(std::move(n));
}

Var Tape::mul(Var a, Var b) {
  require(a);
  require(b);
  check_same_cols(nodes_[a.id].cols, nodes_[b.id].cols, "mul");
  Node n{Op::Mul};
  n.a = a.id;
  n.b = b.id;
  n.cols = nodes_[a.id].cols;
  return push(std::move(n));
}

Var Tape::unary(Op op, Var a, double c) {
  require(a);
  Node n{op};
  n.a = a.id;
  n.c = c;
  n.cols = nodes_[a.id].cols;
  return push(std::move(n));
}

Var Tape::scale(Var a, double factor) { return unary(Op::Scale, a, factor); }
Var Tape::add_scalar(Var a, double offset) { return unary(Op::AddScalar, a, offset); }
Var Tape::square(Var a) { return unary(Op::Square, a); }
Var Tape::sin_scaled(Var a) { return unary(Op::SinScaled, a); }
Var Tape::sigmoid(Var a) { return unary(Op::Sigmoid, a); }
Var Tape::exp(Var a) { return unary(Op::Exp, a); }
Var Tape::log(Var a) { return unary(Op::Log, a); }

Var Tape::clamp(Var a, double bound) {
  if (!(bound > 0)) throw std::invalid_argument("clamp bound must be positive");
  return unary(Op::Clamp, a, bound);
}

Var Tape::soft_clamp(Var a, double bound) {
  if (!(bound > 0)) throw std::invalid_argument("clamp bound must be positive");
  return unary(Op::SoftClamp, a, bound);
}

Var Tape::smoothed_sqrt_abs(Var a, double threshold) {
  if (!(threshold > 0)) throw std::invalid_argument("smoothing threshold must be positive");
  return unary(Op::SmoothedSqrtAbs, a, threshold);
}

Var Tape::row_sum(Var a) {
  Var v = unary(Op::RowSum, a);
  nodes_[v.id].cols = 1;
  return v;
}

Var Tape::sum(Var a) {
  Var v = unary(Op::Sum, a);
  nodes_[v.id].cols = 1;
  return v;
}

Var Tape::mean(Var a) {
  Var v = unary(Op::Mean, a);
  nodes_[v.id].cols = 1;
  return v;
}

void Tape::forward(const InputMap& inputs) {
  bound_ = inputs;
  forward();
}

void Tape::forward() {
  evaluated_ = false;
  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    evaluate(id);
    if (!nodes_[id].value.allFinite()) throw NonFiniteError(id, nodes_[id].op);
  }
  evaluated_ = true;
}

void Tape::evaluate(std::size_t id) {
  Node& n = nodes_[id];
  switch (n.op) {
    case Op::Input: {
      auto it = bound_.find(n.name);
      if (it == bound_.end()) throw std::invalid_argument("unbound input '" + n.name + "'");
      if (it->second.cols() != n.cols) {
        throw std::invalid_argument("input '" + n.name + "' has wrong width");
      }
      n.value = it->second;
      break;
    }
    case Op::Parameter:
      n.value = params_[static_cast<std::size_t>(n.i0)];
      break;
    case Op::Constant:
      break;
    case Op::Affine: {
      const Matrix& x = nodes_[n.a].value;
      const Matrix& w = nodes_[n.b].value;
      const Index in = w.cols() - 1;
      n.value.noalias() = x * w.leftCols(in).transpose();
      n.value.rowwise() += w.col(in).transpose();
      break;
    }
    case Op::Activation: {
      const Matrix& g = nodes_[n.a].value;
      const ActivationLayout& layout = *n.layout;
      n.value.resize(g.rows(), layout.out_width());
      for (Index j = 0; j < layout.out_width(); ++j) {
        const Index p = layout.offsets[static_cast<std::size_t>(j)];
        auto out = n.value.col(j);
        switch (layout.units[static_cast<std::size_t>(j)]) {
          case ActivationKind::Constant1: out.setOnes(); break;
          case ActivationKind::Identity: out = g.col(p); break;
          case ActivationKind::Square: out = g.col(p).array().square(); break;
          case ActivationKind::SineScaled: out = (kTwoPi * g.col(p).array()).sin(); break;
          case ActivationKind::Sigmoid:
            out = g.col(p).unaryExpr([](double v) { return sigmoid_scalar(v); });
            break;
          case ActivationKind::Exp:
            out = g.col(p).array().max(-layout.exp_clamp).min(layout.exp_clamp).exp();
            break;
          case ActivationKind::PairProduct:
            out = g.col(p).array() * g.col(p + 1).array();
            break;
        }
      }
      break;
    }
    case Op::SliceCols:
      n.value = nodes_[n.a].value.middleCols(n.i0, n.i1);
      break;
    case Op::ConcatCols: {
      const Matrix& a = nodes_[n.a].value;
      const Matrix& b = nodes_[n.b].value;
      if (a.rows() != b.rows()) throw std::invalid_argument("concat_cols: row mismatch");
      n.value.resize(a.rows(), a.cols() + b.cols());
      n.value << a, b;
      break;
    }
    case Op::PermuteCols: {
      const Matrix& a = nodes_[n.a].value;
      n.value.resize(a.rows(), a.cols());
      for (Index j = 0; j < a.cols(); ++j) n.value.col(j) = a.col((*n.perm)[static_cast<std::size_t>(j)]);
      break;
    }
    case Op::PadCols: {
      const Matrix& a = nodes_[n.a].value;
      n.value = Matrix::Zero(a.rows(), a.cols() + n.i0);
      n.value.leftCols(a.cols()) = a;
      break;
    }
    case Op::Add:
      check_same_shape(nodes_[n.a].value, nodes_[n.b].value, "add");
      n.value = nodes_[n.a].value + nodes_[n.b].value;
      break;
    case Op::Sub:
      check_same_shape(nodes_[n.a].value, nodes_[n.b].value, "sub");
      n.value = nodes_[n.a].value - nodes_[n.b].value;
      break;
    case Op::Mul:
      check_same_shape(nodes_[n.a].value, nodes_[n.b].value, "mul");
      n.value = nodes_[n.a].value.cwiseProduct(nodes_[n.b].value);
      break;
    case Op::Scale:
      n.value = n.c * nodes_[n.a].value;
      break;
    case Op::AddScalar:
      n.value = nodes_[n.a].value.array() + n.c;
      break;
    case Op::Square:
      n.value = nodes_[n.a].value.array().square();
      break;
    case Op::SinScaled:
      n.value = (kTwoPi * nodes_[n.a].value.array()).sin();
      break;
    case Op::Sigmoid:
      n.value = nodes_[n.a].value.unaryExpr([](double v) { return sigmoid_scalar(v); });
      break;
    case Op::Exp:
      n.value = nodes_[n.a].value.array().exp();
      break;
    case Op::Log:
      n.value = nodes_[n.a].value.array().log();
      break;
    case Op::Clamp:
      n.value = nodes_[n.a].value.array().max(-n.c).min(n.c);
      break;
    case Op::SoftClamp:
      n.value = n.c * (nodes_[n.a].value.array() / n.c).tanh();
      break;
    case Op::SmoothedSqrtAbs: {
      const double a = n.c;
      n.value = nodes_[n.a].value.unaryExpr([a](double w) { return isr::smoothed_sqrt_abs(w, a); });
      break;
    }
    case Op::RowSum:
      n.value = nodes_[n.a].value.rowwise().sum();
      break;
    case Op::Sum:
      n.value = Matrix::Constant(1, 1, nodes_[n.a].value.sum());
      break;
    case Op::Mean: {
      const Matrix& a = nodes_[n.a].value;
      if (a.size() == 0) throw std::invalid_argument("mean of empty matrix");
      n.value = Matrix::Constant(1, 1, a.sum() / static_cast<double>(a.size()));
      break;
    }
  }
}

GradientMap Tape::backward(Var loss) const {
  require(loss);
  if (!evaluated_) throw std::logic_error("backward called before forward");
  const Matrix& lv = nodes_[loss.id].value;
  if (lv.rows() != 1 || lv.cols() != 1) throw std::invalid_argument("backward: loss node is not scalar");

  std::vector<Matrix> adj(loss.id + 1);
  std::vector<bool> live(loss.id + 1, false);
  auto accumulate = [&](std::size_t id, const auto& g) {
    if (!live[id]) {
      adj[id] = g;
      live[id] = true;
    } else {
      adj[id] += g;
    }
  };

  GradientMap out;
  out.grads.reserve(params_.size());
  for (const auto& p : params_) out.grads.push_back(Matrix::Zero(p.rows(), p.cols()));

  adj[loss.id] = Matrix::Ones(1, 1);
  live[loss.id] = true;

  for (std::size_t k = loss.id + 1; k-- > 0;) {
    if (!live[k]) continue;
    const Node& n = nodes_[k];
    const Matrix& g = adj[k];
    switch (n.op) {
      case Op::Input:
      case Op::Constant:
        break;
      case Op::Parameter:
        out.grads[static_cast<std::size_t>(n.i0)] += g;
        break;
      case Op::Affine: {
        const Matrix& x = nodes_[n.a].value;
        const Matrix& w = nodes_[n.b].value;
        const Index in = w.cols() - 1;
        Matrix gw(w.rows(), w.cols());
        gw.leftCols(in).noalias() = g.transpose() * x;
        gw.col(in) = g.colwise().sum().transpose();
        Matrix gx;
        gx.noalias() = g * w.leftCols(in);
        accumulate(n.a, gx);
        accumulate(n.b, gw);
        break;
      }
      case Op::Activation: {
        const Matrix& pre = nodes_[n.a].value;
        const ActivationLayout& layout = *n.layout;
        Matrix gp = Matrix::Zero(pre.rows(), pre.cols());
        for (Index j = 0; j < layout.out_width(); ++j) {
          const Index p = layout.offsets[static_cast<std::size_t>(j)];
          auto gj = g.col(j).array();
          auto xp = pre.col(p).array();
          switch (layout.units[static_cast<std::size_t>(j)]) {
            case ActivationKind::Constant1: break;
            case ActivationKind::Identity: gp.col(p).array() += gj; break;
            case ActivationKind::Square: gp.col(p).array() += 2.0 * xp * gj; break;
            case ActivationKind::SineScaled:
              gp.col(p).array() += kTwoPi * (kTwoPi * xp).cos() * gj;
              break;
            case ActivationKind::Sigmoid: {
              Eigen::ArrayXd s = n.value.col(j).array();
              gp.col(p).array() += s * (1.0 - s) * gj;
              break;
            }
            case ActivationKind::Exp: {
              const double c = layout.exp_clamp;
              Eigen::ArrayXd inside = ((xp >= -c) && (xp <= c)).cast<double>();
              gp.col(p).array() += inside * n.value.col(j).array() * gj;
              break;
            }
            case ActivationKind::PairProduct:
              gp.col(p).array() += pre.col(p + 1).array() * gj;
              gp.col(p + 1).array() += xp * gj;
              break;
          }
        }
        accumulate(n.a, gp);
        break;
      }
      case Op::SliceCols: {
        const Matrix& a = nodes_[n.a].value;
        Matrix ga = Matrix::Zero(a.rows(), a.cols());
        ga.middleCols(n.i0, n.i1) = g;
        accumulate(n.a, ga);
        break;
      }
      case Op::ConcatCols: {
        const Index ca = nodes_[n.a].value.cols();
        accumulate(n.a, g.leftCols(ca));
        accumulate(n.b, g.rightCols(g.cols() - ca));
        break;
      }
      case Op::PermuteCols: {
        Matrix ga(g.rows(), g.cols());
        for (Index j = 0; j < g.cols(); ++j) ga.col((*n.perm)[static_cast<std::size_t>(j)]) = g.col(j);
        accumulate(n.a, ga);
        break;
      }
      case Op::PadCols:
        accumulate(n.a, g.leftCols(g.cols() - n.i0));
        break;
      case Op::Add:
        accumulate(n.a, g);
        accumulate(n.b, g);
        break;
      case Op::Sub:
        accumulate(n.a, g);
        accumulate(n.b, -g);
        break;
      case Op::Mul:
        accumulate(n.a, g.cwiseProduct(nodes_[n.b].value));
        accumulate(n.b, g.cwiseProduct(nodes_[n.a].value));
        break;
      case Op::Scale:
        accumulate(n.a, n.c * g);
        break;
      case Op::AddScalar:
        accumulate(n.a, g);
        break;
      case Op::Square:
        accumulate(n.a, 2.0 * nodes_[n.a].value.cwiseProduct(g));
        break;
      case Op::SinScaled: {
        Matrix ga = (kTwoPi * (kTwoPi * nodes_[n.a].value.array()).cos() * g.array()).matrix();
        accumulate(n.a, ga);
        break;
      }
      case Op::Sigmoid: {
        Matrix ga = (n.value.array() * (1.0 - n.value.array()) * g.array()).matrix();
        accumulate(n.a, ga);
        break;
      }
      case Op::Exp:
        accumulate(n.a, n.value.cwiseProduct(g));
        break;
      case Op::Log:
        accumulate(n.a, g.cwiseQuotient(nodes_[n.a].value));
        break;
      case Op::Clamp: {
        const double c = n.c;
        auto x = nodes_[n.a].value.array();
        Matrix ga = (((x >= -c) && (x <= c)).cast<double>() * g.array()).matrix();
        accumulate(n.a, ga);
        break;
      }
      case Op::SoftClamp: {
        Matrix ga = ((1.0 - (n.value.array() / n.c).square()) * g.array()).matrix();
        accumulate(n.a, ga);
        break;
      }
      case Op::SmoothedSqrtAbs: {
        const double a = n.c;
        Matrix d = nodes_[n.a].value.unaryExpr([a](double w) { return isr::smoothed_sqrt_abs_derivative(w, a); });
        accumulate(n.a, d.cwiseProduct(g));
        break;
      }
      case Op::RowSum: {
        const Matrix& a = nodes_[n.a].value;
        Matrix ga = g.replicate(1, a.cols());
        accumulate(n.a, ga);
        break;
      }
      case Op::Sum: {
        const Matrix& a = nodes_[n.a].value;
        accumulate(n.a, Matrix::Constant(a.rows(), a.cols(), g(0, 0)));
        break;
      }
      case Op::Mean: {
        const Matrix& a = nodes_[n.a].value;
        accumulate(n.a, Matrix::Constant(a.rows(), a.cols(), g(0, 0) / static_cast<double>(a.size())));
        break;
      }
    }
  }
  return out;
}

const Matrix& Tape::value(Var v) const {
  require(v);
  if (!evaluated_) throw std::logic_error("tape has not been evaluated");
  return nodes_[v.id].value;
}

void Tape::set_parameter(ParamId id, Matrix value) {
  Matrix& p = params_.at(id);
  if (p.rows() != value.rows() || p.cols() != value.cols()) {
    throw std::invalid_argument("set_parameter: shape mismatch");
  }
  p = std::move(value);
  evaluated_ = false;
}

std::size_t Tape::op_count(Op op) const {
  return static_cast<std::size_t>(
      std::count_if(nodes_.begin(), nodes_.end(), [op](const Node& n) { return n.op == op; }));
}

double finite_difference_check(Tape& tape, Var loss, double step) {
  if (!tape.evaluated()) tape.forward();
  const GradientMap analytic = tape.backward(loss);
  double worst = 0.0;
  for (ParamId id = 0; id < tape.parameter_count(); ++id) {
    const Matrix original = tape.parameter_value(id);
    for (Index k = 0; k < original.size(); ++k) {
      Matrix probe = original;
      probe(k) = original(k) + step;
      tape.set_parameter(id, probe);
      tape.forward();
      const double up = tape.value(loss)(0, 0);
      probe(k) = original(k) - step;
      tape.set_parameter(id, probe);
      tape.forward();
      const double down = tape.value(loss)(0, 0);
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic[id](k);
      worst = std::max(worst, std::abs(a - numeric) / std::max(1.0, std::abs(a)));
    }
    tape.set_parameter(id, original);
  }
  tape.forward();
  return worst;
}

}  // namespace isr
