#pragma once

// Reverse-mode differentiation over batched matrix values.
//
// Every node holds a (batch x width) matrix; scalars are 1x1. The graph is
// recorded first and evaluated by forward(), so a tape can be re-run with new
// parameter values (finite differences) without rebuilding it.

#include "isr/activation.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace isr {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Handle to a node on a Tape.
struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
};

/// Index into a Tape's parameter registry.
using ParamId = std::size_t;

using InputMap = std::unordered_map<std::string, Matrix>;

enum class Op {
  Input,
  Parameter,
  Constant,
  Affine,
  Activation,
  SliceCols,
  ConcatCols,
  PermuteCols,
  PadCols,
  Add,
  Sub,
  Mul,
  Scale,
  AddScalar,
  Square,
  SinScaled,
  Sigmoid,
  Exp,
  Log,
  Clamp,
  SoftClamp,
  SmoothedSqrtAbs,
  RowSum,
  Sum,
  Mean,
};

class NonFiniteError : public std::runtime_error {
 public:
  NonFiniteError(std::size_t node, Op op);
  std::size_t node() const { return node_; }

 private:
  std::size_t node_;
};

/// d loss / d parameter, one matrix per registered parameter.
struct GradientMap {
  std::vector<Matrix> grads;

  const Matrix& operator[](ParamId id) const { return grads.at(id); }
  std::size_t size() const { return grads.size(); }
};

class Tape {
 public:
  Var input(std::string name, Index cols);
  Var parameter(Matrix value);
  Var constant(Matrix value);

  /// x * W[:, :in]^T + W[:, in] where W carries its bias as the last column.
  Var affine(Var x, Var weights);
  Var activation(Var pre, std::shared_ptr<const ActivationLayout> layout);

  Var slice_cols(Var a, Index begin, Index count);
  Var concat_cols(Var a, Var b);
  /// out[:, j] = a[:, perm[j]]
  Var permute_cols(Var a, std::vector<Index> perm);
  /// Appends `count` zero columns.
  Var pad_cols(Var a, Index count);

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double factor);
  Var add_scalar(Var a, double offset);

  Var square(Var a);
  Var sin_scaled(Var a);  // sin(2*pi*a)
  Var sigmoid(Var a);
  Var exp(Var a);
  Var log(Var a);
  /// Hard clamp to [-bound, bound]; zero derivative outside.
  Var clamp(Var a, double bound);
  /// bound * tanh(a / bound)
  Var soft_clamp(Var a, double bound);
  /// Smoothed |a|^(1/2) with polynomial core below `threshold`.
  Var smoothed_sqrt_abs(Var a, double threshold);

  Var row_sum(Var a);
  Var sum(Var a);
  Var mean(Var a);

  /// Evaluates every node in order. Inputs are kept for later re-evaluation.
  void forward(const InputMap& inputs);
  /// Re-runs forward with the most recent inputs.
  void forward();

  GradientMap backward(Var loss) const;

  const Matrix& value(Var v) const;
  Index cols(Var v) const { return nodes_.at(v.id).cols; }
  bool evaluated() const { return evaluated_; }

  std::size_t size() const { return nodes_.size(); }
  std::size_t parameter_count() const { return params_.size(); }
  const Matrix& parameter_value(ParamId id) const { return params_.at(id); }
  void set_parameter(ParamId id, Matrix value);
  std::size_t op_count(Op op) const;

 private:
  struct Node {
    Op op;
    std::size_t a = 0;
    std::size_t b = 0;
    double c = 0.0;
    Index i0 = 0;
    Index i1 = 0;
    Index cols = 0;
    std::shared_ptr<const ActivationLayout> layout;
    std::shared_ptr<const std::vector<Index>> perm;
    std::string name;
    Matrix value;
  };

  Var push(Node node);
  Var unary(Op op, Var a, double c = 0.0);
  void evaluate(std::size_t id);
  void require(Var v) const;

  std::vector<Node> nodes_;
  std::vector<Matrix> params_;
  InputMap bound_;
  bool evaluated_ = false;
};

/// Scalar form of Tape::smoothed_sqrt_abs and its derivative.
double smoothed_sqrt_abs(double w, double threshold);
double smoothed_sqrt_abs_derivative(double w, double threshold);

/// Max over all parameter entries of |analytic - central difference| / max(1, |analytic|).
/// The tape must have been forward-evaluated; parameters are restored afterwards.
double finite_difference_check(Tape& tape, Var loss, double step);

}  // namespace isr
