#pragma once

// Closed-form expressions read off trained EQL subnetworks, and their
// composition into the forward and inverse maps of a whole model.

#include "isr/flows.hpp"

#include <map>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

namespace isr::sym {

enum class Kind { Const, Var, Add, Mul, Square, Sin2Pi, Sigmoid, Exp, Clamp, SoftClamp };

std::string_view to_string(Kind kind);
Kind kind_from_string(std::string_view name);

struct Node;
using Expr = std::shared_ptr<const Node>;

struct Node {
  Kind kind = Kind::Const;
  double value = 0.0;  // Const: the constant; Clamp/SoftClamp: the bound
  std::string name;    // Var
  std::vector<Expr> args;
};

Expr constant(double value);
Expr variable(std::string name);
Expr add(std::vector<Expr> terms);
Expr add(Expr a, Expr b);
Expr mul(std::vector<Expr> factors);
Expr mul(Expr a, Expr b);
Expr neg(Expr a);
Expr square(Expr a);
Expr sin2pi(Expr a);
Expr sigmoid(Expr a);
Expr exp(Expr a);
Expr clamp(Expr a, double bound);
Expr soft_clamp(Expr a, double bound);
Expr log_scale_clamp(Expr a, double bound, ClampMode mode);

bool is_const(const Expr& e);
bool is_zero(const Expr& e);

using Bindings = std::unordered_map<std::string, double>;

/// Evaluates with shared subexpressions computed once. Throws on unbound variables.
double eval(const Expr& e, const Bindings& bindings);

/// Number of nodes when the DAG is expanded as a tree (saturates at SIZE_MAX).
std::size_t tree_size(const Expr& e);
/// Number of distinct nodes.
std::size_t dag_size(const std::vector<Expr>& roots);
std::vector<std::string> free_variables(const std::vector<Expr>& roots);

/// Constant folding, identity elimination, flattening and affine collapse.
/// The result evaluates identically (to rounding) and is never larger.
Expr simplify(const Expr& e);

/// Replaces variables by expressions; unmapped variables are kept.
Expr substitute(const Expr& e, const std::map<std::string, Expr>& replacements);

/// True when e is a polynomial of degree <= 1 in its variables.
bool is_affine(const Expr& e);

/// Text form with constants at `digits` significant figures.
std::string render(const Expr& e, int digits = 3);

/// Several roots compiled for fast repeated evaluation.
class Compiled {
 public:
  Compiled(const std::vector<Expr>& roots, std::vector<std::string> variables);
  const std::vector<std::string>& variables() const { return vars_; }
  std::vector<double> operator()(const std::vector<double>& values) const;

 private:
  struct Op {
    Kind kind;
    double value;
    std::size_t var;
    std::vector<std::size_t> args;
  };
  std::vector<Op> ops_;
  std::vector<std::size_t> roots_;
  std::vector<std::string> vars_;
};

/// Reads the function of a (pruned) network: weights with |w| < prune_tol
/// and biases with |b| < const_tol are dropped.
Expr extract(const EqlNetwork& net, const std::vector<std::string>& inputs, std::size_t output,
             double prune_tol = 0.0, double const_tol = 0.0);
std::vector<Expr> extract_all(const EqlNetwork& net, const std::vector<std::string>& inputs,
                              double prune_tol = 0.0, double const_tol = 0.0);

struct Assignment {
  std::string target;
  Expr expr;
};

/// Straight-line program: assignments run in order, then outputs are read.
struct Chain {
  std::vector<std::string> inputs;
  std::vector<Assignment> steps;
  std::vector<std::string> outputs;
};

std::vector<double> run_chain(const Chain& chain, const std::vector<double>& inputs);
/// Substitutes every step into the next, giving one expression per output.
std::vector<Expr> inline_chain(const Chain& chain);

struct BlockExpressions {
  std::size_t index = 0;  // position among coupling blocks, from 1
  std::vector<std::string> u, v, o;
  std::vector<Expr> s1, t1, s2, t2;  // clamped scale and raw shift, in local names
};

struct PermutationExpression {
  std::vector<Index> forward;
};

/// Every closed-form view of a model.
struct InvertibleExpressionSet {
  ModelKind kind = ModelKind::Flow;
  Index dx = 0;
  Index dy = 0;
  Index width = 0;
  std::vector<std::variant<BlockExpressions, PermutationExpression>> layers;
  Chain forward;  // x (and y for cISR) -> outputs
  Chain inverse;  // outputs (and y for cISR) -> x
  std::vector<Expr> forward_map;
  std::vector<Expr> inverse_map;
};

InvertibleExpressionSet compose_model(const Model& m, double prune_tol = 0.0, double const_tol = 0.0);

/// Table-style report: per-block subnet expressions, coupling equations and,
/// when small enough, the composed forward and inverse maps.
std::string render_model(const InvertibleExpressionSet& set, int digits = 3);

}  // namespace isr::sym
