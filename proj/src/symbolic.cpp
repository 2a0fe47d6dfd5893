#include "isr/symbolic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace isr::sym {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

Expr make(Kind kind, std::vector<Expr> args, double value = 0.0) {
  auto n = std::make_shared<Node>();
  n->kind = kind;
  n->value = value;
  n->args = std::move(args);
  return n;
}

double apply_unary(Kind kind, double a, double c) {
  switch (kind) {
    case Kind::Square: return a * a;
    case Kind::Sin2Pi: return std::sin(kTwoPi * a);
    case Kind::Sigmoid: return 1.0 / (1.0 + std::exp(-a));
    case Kind::Exp: return std::exp(a);
    case Kind::Clamp: return std::clamp(a, -c, c);
    case Kind::SoftClamp: return c * std::tanh(a / c);
    default: throw std::logic_error("not a unary kind");
  }
}

}  // namespace

std::string_view to_string(Kind kind) {
  switch (kind) {
    case Kind::Const: return "const";
    case Kind::Var: return "var";
    case Kind::Add: return "add";
    case Kind::Mul: return "mul";
    case Kind::Square: return "square";
    case Kind::Sin2Pi: return "sin2pi";
    case Kind::Sigmoid: return "sigmoid";
    case Kind::Exp: return "exp";
    case Kind::Clamp: return "clamp";
    case Kind::SoftClamp: return "soft_clamp";
  }
  return "?";
}

Kind kind_from_string(std::string_view name) {
  for (Kind k : {Kind::Const, Kind::Var, Kind::Add, Kind::Mul, Kind::Square, Kind::Sin2Pi, Kind::Sigmoid, Kind::Exp,
                 Kind::Clamp, Kind::SoftClamp}) {
    if (to_string(k) == name) return k;
  }
  throw std::invalid_argument("unknown expression op '" + std::string(name) + "'");
}

Expr constant(double value) {
  if (!std::isfinite(value)) throw std::invalid_argument("expression constants must be finite");
  return make(Kind::Const, {}, value);
}

Expr variable(std::string name) {
  auto n = std::make_shared<Node>();
  n->kind = Kind::Var;
  n->name = std::move(name);
  return n;
}

Expr add(std::vector<Expr> terms) {
  if (terms.empty()) return constant(0.0);
  if (terms.size() == 1) return terms.front();
  return make(Kind::Add, std::move(terms));
}
Expr add(Expr a, Expr b) { return add(std::vector<Expr>{std::move(a), std::move(b)}); }

Expr mul(std::vector<Expr> factors) {
  if (factors.empty()) return constant(1.0);
  if (factors.size() == 1) return factors.front();
  return make(Kind::Mul, std::move(factors));
}
Expr mul(Expr a, Expr b) { return mul(std::vector<Expr>{std::move(a), std::move(b)}); }
Expr neg(Expr a) { return mul(constant(-1.0), std::move(a)); }
Expr square(Expr a) { return make(Kind::Square, {std::move(a)}); }
Expr sin2pi(Expr a) { return make(Kind::Sin2Pi, {std::move(a)}); }
Expr sigmoid(Expr a) { return make(Kind::Sigmoid, {std::move(a)}); }
Expr exp(Expr a) { return make(Kind::Exp, {std::move(a)}); }
Expr clamp(Expr a, double bound) { return make(Kind::Clamp, {std::move(a)}, bound); }
Expr soft_clamp(Expr a, double bound) { return make(Kind::SoftClamp, {std::move(a)}, bound); }

Expr log_scale_clamp(Expr a, double bound, ClampMode mode) {
  return mode == ClampMode::Hard ? clamp(std::move(a), bound) : soft_clamp(std::move(a), bound);
}

bool is_const(const Expr& e) { return e->kind == Kind::Const; }
bool is_zero(const Expr& e) { return is_const(e) && e->value == 0.0; }

namespace {

double eval_memo(const Node* n, const Bindings& b, std::unordered_map<const Node*, double>& memo) {
  if (auto it = memo.find(n); it != memo.end()) return it->second;
  double r = 0.0;
  switch (n->kind) {
    case Kind::Const: r = n->value; break;
    case Kind::Var: {
      auto it = b.find(n->name);
      if (it == b.end()) throw std::invalid_argument("unbound variable '" + n->name + "'");
      r = it->second;
      break;
    }
    case Kind::Add:
      for (const auto& a : n->args) r += eval_memo(a.get(), b, memo);
      break;
    case Kind::Mul:
      r = 1.0;
      for (const auto& a : n->args) r *= eval_memo(a.get(), b, memo);
      break;
    default: r = apply_unary(n->kind, eval_memo(n->args[0].get(), b, memo), n->value);
  }
  memo.emplace(n, r);
  return r;
}

std::size_t sat_add(std::size_t a, std::size_t b) {
  return a > std::numeric_limits<std::size_t>::max() - b ? std::numeric_limits<std::size_t>::max() : a + b;
}

std::size_t tree_size_memo(const Node* n, std::unordered_map<const Node*, std::size_t>& memo) {
  if (auto it = memo.find(n); it != memo.end()) return it->second;
  std::size_t s = 1;
  for (const auto& a : n->args) s = sat_add(s, tree_size_memo(a.get(), memo));
  memo.emplace(n, s);
  return s;
}

void collect(const Node* n, std::unordered_set<const Node*>& seen, std::vector<const Node*>& order) {
  if (!seen.insert(n).second) return;
  for (const auto& a : n->args) collect(a.get(), seen, order);
  order.push_back(n);
}

}  // namespace

double eval(const Expr& e, const Bindings& bindings) {
  std::unordered_map<const Node*, double> memo;
  return eval_memo(e.get(), bindings, memo);
}

std::size_t tree_size(const Expr& e) {
  std::unordered_map<const Node*, std::size_t> memo;
  return tree_size_memo(e.get(), memo);
}

std::size_t dag_size(const std::vector<Expr>& roots) {
  std::unordered_set<const Node*> seen;
  std::vector<const Node*> order;
  for (const auto& r : roots) collect(r.get(), seen, order);
  return order.size();
}

std::vector<std::string> free_variables(const std::vector<Expr>& roots) {
  std::unordered_set<const Node*> seen;
  std::vector<const Node*> order;
  for (const auto& r : roots) collect(r.get(), seen, order);
  std::vector<std::string> names;
  for (const Node* n : order) {
    if (n->kind == Kind::Var && std::find(names.begin(), names.end(), n->name) == names.end()) names.push_back(n->name);
  }
  std::sort(names.begin(), names.end());
  return names;
}

namespace {

bool equal(const Expr& a, const Expr& b, int depth = 0) {
  if (a == b) return true;
  if (a->kind != b->kind || a->args.size() != b->args.size() || depth > 64) return false;
  switch (a->kind) {
    case Kind::Const: return a->value == b->value;
    case Kind::Var: return a->name == b->name;
    default:
      if (a->value != b->value) return false;
      for (std::size_t i = 0; i < a->args.size(); ++i) {
        if (!equal(a->args[i], b->args[i], depth + 1)) return false;
      }
      return true;
  }
}

/// Splits a term into constant coefficient and remaining factor.
std::pair<double, Expr> split_coeff(const Expr& e) {
  if (e->kind == Kind::Mul && is_const(e->args.front())) {
    std::vector<Expr> rest(e->args.begin() + 1, e->args.end());
    return {e->args.front()->value, mul(std::move(rest))};
  }
  return {1.0, e};
}

Expr scaled(double c, const Expr& base) {
  if (c == 1.0) return base;
  if (base->kind == Kind::Mul) {
    std::vector<Expr> f{constant(c)};
    f.insert(f.end(), base->args.begin(), base->args.end());
    return make(Kind::Mul, std::move(f));
  }
  return make(Kind::Mul, {constant(c), base});
}

class Simplifier {
 public:
  Expr run(const Expr& e) {
    if (auto it = memo_.find(e.get()); it != memo_.end()) return it->second;
    Expr r = rewrite(e);
    if (size(r) > size(e)) r = e;
    memo_.emplace(e.get(), r);
    keep_.push_back(e);
    return r;
  }

 private:
  std::size_t size(const Expr& e) {
    keep_.push_back(e);
    return tree_size_memo(e.get(), sizes_);
  }

  Expr rewrite(const Expr& e) {
    switch (e->kind) {
      case Kind::Const:
      case Kind::Var: return e;
      case Kind::Add: return simplify_add(e);
      case Kind::Mul: return simplify_mul(e);
      default: {
        Expr a = run(e->args[0]);
        if (is_const(a)) return constant(apply_unary(e->kind, a->value, e->value));
        if (a == e->args[0]) return e;
        return make(e->kind, {a}, e->value);
      }
    }
  }

  Expr simplify_add(const Expr& e) {
    double c = 0.0;
    std::vector<std::pair<double, Expr>> terms;
    auto push = [&](const Expr& t) {
      if (is_const(t)) {
        c += t->value;
        return;
      }
      auto [k, base] = split_coeff(t);
      for (auto& [k2, b2] : terms) {
        if (equal(b2, base)) {
          k2 += k;
          return;
        }
      }
      terms.emplace_back(k, base);
    };
    for (const auto& a : e->args) {
      Expr s = run(a);
      if (s->kind == Kind::Add) {
        for (const auto& t : s->args) push(t);
      } else {
        push(s);
      }
    }
    std::vector<Expr> out;
    for (auto& [k, base] : terms) {
      if (k != 0.0) out.push_back(scaled(k, base));
    }
    if (c != 0.0 || out.empty()) out.push_back(constant(c));
    return add(std::move(out));
  }

  Expr simplify_mul(const Expr& e) {
    double c = 1.0;
    std::vector<Expr> factors;
    for (const auto& a : e->args) {
      Expr s = run(a);
      const std::vector<Expr> parts = s->kind == Kind::Mul ? s->args : std::vector<Expr>{s};
      for (const auto& p : parts) {
        if (is_const(p)) {
          c *= p->value;
        } else {
          factors.push_back(p);
        }
      }
    }
    if (c == 0.0 || factors.empty()) return constant(c);
    if (factors.size() == 1 && factors.front()->kind == Kind::Add && c != 1.0) {
      // c * (sum k_i r_i + k0) -> sum (c k_i) r_i + c k0
      std::vector<Expr> dist;
      for (const auto& t : factors.front()->args) {
        if (is_const(t)) {
          dist.push_back(constant(c * t->value));
        } else {
          auto [k, base] = split_coeff(t);
          dist.push_back(scaled(c * k, base));
        }
      }
      Expr candidate = add(std::move(dist));
      Expr plain = scaled(c, factors.front());
      if (size(candidate) <= size(plain)) return candidate;
      return plain;
    }
    if (c == 1.0) return mul(std::move(factors));
    factors.insert(factors.begin(), constant(c));
    return make(Kind::Mul, std::move(factors));
  }

  std::unordered_map<const Node*, Expr> memo_;
  std::unordered_map<const Node*, std::size_t> sizes_;
  std::vector<Expr> keep_;  // pins memo keys so addresses are never reused
};

}  // namespace

Expr simplify(const Expr& e) {
  Simplifier s;
  Expr r = s.run(e);
  return tree_size(r) <= tree_size(e) ? r : e;
}

namespace {

std::vector<Expr> simplify_all(const std::vector<Expr>& roots) {
  Simplifier s;
  std::vector<Expr> out;
  for (const auto& r : roots) {
    Expr x = s.run(r);
    out.push_back(tree_size(x) <= tree_size(r) ? x : r);
  }
  return out;
}

Expr substitute_memo(const Expr& e, const std::map<std::string, Expr>& rep,
                     std::unordered_map<const Node*, Expr>& memo) {
  if (auto it = memo.find(e.get()); it != memo.end()) return it->second;
  Expr r = e;
  if (e->kind == Kind::Var) {
    if (auto it = rep.find(e->name); it != rep.end()) r = it->second;
  } else if (!e->args.empty()) {
    std::vector<Expr> args;
    bool changed = false;
    for (const auto& a : e->args) {
      args.push_back(substitute_memo(a, rep, memo));
      changed = changed || args.back() != a;
    }
    if (changed) r = make(e->kind, std::move(args), e->value);
  }
  memo.emplace(e.get(), r);
  return r;
}

}  // namespace

Expr substitute(const Expr& e, const std::map<std::string, Expr>& replacements) {
  std::unordered_map<const Node*, Expr> memo;
  return substitute_memo(e, replacements, memo);
}

namespace {

/// 0: constant, 1: affine, 2: anything else.
int degree(const Expr& e, std::unordered_map<const Node*, int>& memo) {
  if (auto it = memo.find(e.get()); it != memo.end()) return it->second;
  int d = 0;
  switch (e->kind) {
    case Kind::Const: d = 0; break;
    case Kind::Var: d = 1; break;
    case Kind::Add:
      for (const auto& a : e->args) d = std::max(d, degree(a, memo));
      break;
    case Kind::Mul: {
      int sum = 0;
      for (const auto& a : e->args) sum += degree(a, memo);
      d = std::min(sum, 2);
      break;
    }
    default: d = degree(e->args[0], memo) == 0 ? 0 : 2;
  }
  memo.emplace(e.get(), d);
  return d;
}

std::string format_number(double v, int digits) {
  if (v == 0.0) return "0";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

enum Prec { kSum = 1, kProduct = 2, kAtom = 3 };

std::string render_rec(const Expr& e, int digits, int parent);

std::string render_product(const std::vector<Expr>& factors, int digits) {
  std::string out;
  std::size_t start = 0;
  if (!factors.empty() && is_const(factors.front())) {
    const double c = factors.front()->value;
    start = 1;
    if (c == -1.0) {
      out = "-";
    } else if (c != 1.0) {
      out = format_number(c, digits) + "·";
    }
  }
  for (std::size_t i = start; i < factors.size(); ++i) {
    if (i > start) out += "·";
    out += render_rec(factors[i], digits, kProduct);
  }
  return out;
}

std::string wrap(std::string s, bool parens) { return parens ? "(" + s + ")" : s; }

std::string render_rec(const Expr& e, int digits, int parent) {
  switch (e->kind) {
    case Kind::Const: {
      std::string s = format_number(e->value, digits);
      return wrap(s, e->value < 0 && parent >= kProduct);
    }
    case Kind::Var: return e->name;
    case Kind::Add: {
      std::string out;
      for (std::size_t i = 0; i < e->args.size(); ++i) {
        const Expr& t = e->args[i];
        bool negative = false;
        Expr shown = t;
        if (i > 0) {
          if (is_const(t) && t->value < 0) {
            negative = true;
            shown = constant(-t->value);
          } else if (t->kind == Kind::Mul && is_const(t->args.front()) && t->args.front()->value < 0) {
            negative = true;
            std::vector<Expr> f = t->args;
            f.front() = constant(-f.front()->value);
            shown = make(Kind::Mul, std::move(f));
          }
          out += negative ? " - " : " + ";
        }
        out += render_rec(shown, digits, kSum);
      }
      return wrap(out, parent > kSum);
    }
    case Kind::Mul: {
      std::string s = render_product(e->args, digits);
      return wrap(s, parent > kProduct || (parent == kProduct && s.starts_with("-")));
    }
    case Kind::Square: return render_rec(e->args[0], digits, kAtom) + "²";
    case Kind::Sin2Pi: {
      Expr arg = simplify(mul(constant(kTwoPi), e->args[0]));
      return "sin(" + render_rec(arg, digits, 0) + ")";
    }
    case Kind::Sigmoid: return "sigmoid(" + render_rec(e->args[0], digits, 0) + ")";
    case Kind::Exp: return "exp(" + render_rec(e->args[0], digits, 0) + ")";
    case Kind::Clamp:
      return "clamp(" + render_rec(e->args[0], digits, 0) + ", ±" + format_number(e->value, digits) + ")";
    case Kind::SoftClamp:
      return "softclamp(" + render_rec(e->args[0], digits, 0) + ", " + format_number(e->value, digits) + ")";
  }
  return "?";
}

}  // namespace

bool is_affine(const Expr& e) {
  std::unordered_map<const Node*, int> memo;
  return degree(e, memo) <= 1;
}

std::string render(const Expr& e, int digits) { return render_rec(e, digits, 0); }

Compiled::Compiled(const std::vector<Expr>& roots, std::vector<std::string> variables) : vars_(std::move(variables)) {
  std::unordered_set<const Node*> seen;
  std::vector<const Node*> order;
  for (const auto& r : roots) collect(r.get(), seen, order);
  std::unordered_map<const Node*, std::size_t> slot;
  for (const Node* n : order) {
    Op op{n->kind, n->value, 0, {}};
    if (n->kind == Kind::Var) {
      auto it = std::find(vars_.begin(), vars_.end(), n->name);
      if (it == vars_.end()) throw std::invalid_argument("unbound variable '" + n->name + "'");
      op.var = static_cast<std::size_t>(it - vars_.begin());
    }
    for (const auto& a : n->args) op.args.push_back(slot.at(a.get()));
    slot.emplace(n, ops_.size());
    ops_.push_back(std::move(op));
  }
  for (const auto& r : roots) roots_.push_back(slot.at(r.get()));
}

std::vector<double> Compiled::operator()(const std::vector<double>& values) const {
  if (values.size() != vars_.size()) throw std::invalid_argument("compiled expression: wrong variable count");
  std::vector<double> v(ops_.size());
  for (std::size_t i = 0; i < ops_.size(); ++i) {
    const Op& op = ops_[i];
    switch (op.kind) {
      case Kind::Const: v[i] = op.value; break;
      case Kind::Var: v[i] = values[op.var]; break;
      case Kind::Add: {
        double s = 0.0;
        for (auto a : op.args) s += v[a];
        v[i] = s;
        break;
      }
      case Kind::Mul: {
        double p = 1.0;
        for (auto a : op.args) p *= v[a];
        v[i] = p;
        break;
      }
      default: v[i] = apply_unary(op.kind, v[op.args[0]], op.value);
    }
  }
  std::vector<double> out;
  out.reserve(roots_.size());
  for (auto r : roots_) out.push_back(v[r]);
  return out;
}

std::vector<Expr> extract_all(const EqlNetwork& net, const std::vector<std::string>& inputs, double prune_tol,
                              double const_tol) {
  if (static_cast<Index>(inputs.size()) != net.input_width()) {
    throw std::invalid_argument("extract: input name count does not match network input width");
  }
  std::vector<Expr> h;
  for (const auto& name : inputs) h.push_back(variable(name));
  for (const auto& layer : net.layers()) {
    const Matrix& w = layer.weights;
    const Index in = layer.input_width();
    std::vector<Expr> pre;
    for (Index i = 0; i < w.rows(); ++i) {
      std::vector<Expr> terms;
      for (Index j = 0; j < in; ++j) {
        const double wij = w(i, j);
        if (wij == 0.0 || std::abs(wij) < prune_tol) continue;
        terms.push_back(mul(constant(wij), h[static_cast<std::size_t>(j)]));
      }
      const double b = w(i, in);
      if (b != 0.0 && std::abs(b) >= const_tol) terms.push_back(constant(b));
      pre.push_back(add(std::move(terms)));
    }
    if (!layer.activation) {
      h = std::move(pre);
      continue;
    }
    const ActivationLayout& act = *layer.activation;
    std::vector<Expr> out;
    for (std::size_t j = 0; j < act.units.size(); ++j) {
      const Expr& g = pre[static_cast<std::size_t>(act.offsets[j])];
      switch (act.units[j]) {
        case ActivationKind::Constant1: out.push_back(constant(1.0)); break;
        case ActivationKind::Identity: out.push_back(g); break;
        case ActivationKind::Square: out.push_back(square(g)); break;
        case ActivationKind::SineScaled: out.push_back(sin2pi(g)); break;
        case ActivationKind::Sigmoid: out.push_back(sigmoid(g)); break;
        case ActivationKind::Exp: out.push_back(exp(clamp(g, act.exp_clamp))); break;
        case ActivationKind::PairProduct:
          out.push_back(mul(g, pre[static_cast<std::size_t>(act.offsets[j]) + 1]));
          break;
      }
    }
    h = std::move(out);
  }
  return simplify_all(h);
}

Expr extract(const EqlNetwork& net, const std::vector<std::string>& inputs, std::size_t output, double prune_tol,
             double const_tol) {
  auto all = extract_all(net, inputs, prune_tol, const_tol);
  if (output >= all.size()) throw std::out_of_range("extract: output index out of range");
  return all[output];
}

std::vector<double> run_chain(const Chain& chain, const std::vector<double>& inputs) {
  if (inputs.size() != chain.inputs.size()) throw std::invalid_argument("run_chain: wrong input count");
  Bindings env;
  for (std::size_t i = 0; i < inputs.size(); ++i) env[chain.inputs[i]] = inputs[i];
  for (const auto& step : chain.steps) env[step.target] = eval(step.expr, env);
  std::vector<double> out;
  for (const auto& name : chain.outputs) out.push_back(env.at(name));
  return out;
}

std::vector<Expr> inline_chain(const Chain& chain) {
  std::map<std::string, Expr> env;
  for (const auto& name : chain.inputs) env[name] = variable(name);
  std::unordered_map<const Node*, Expr> memo;
  for (const auto& step : chain.steps) {
    memo.clear();
    env[step.target] = substitute_memo(step.expr, env, memo);
  }
  std::vector<Expr> out;
  for (const auto& name : chain.outputs) out.push_back(env.at(name));
  return simplify_all(out);
}

namespace {

std::vector<std::string> names(const std::string& prefix, Index count, Index first = 1) {
  std::vector<std::string> out;
  for (Index i = 0; i < count; ++i) out.push_back(prefix + std::to_string(first + i));
  return out;
}

std::vector<std::string> concat(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

/// Output names in stack order.
std::vector<std::string> output_names(const Model& m) {
  std::vector<std::string> out;
  if (m.kind == ModelKind::Isr) {
    out = concat(names("y", m.dy), names("z", m.dz()));
  } else {
    out = names("z", m.dx);
  }
  return concat(out, names("p", m.pad_count()));
}

}  // namespace

InvertibleExpressionSet compose_model(const Model& m, double prune_tol, double const_tol) {
  InvertibleExpressionSet set;
  set.kind = m.kind;
  set.dx = m.dx;
  set.dy = m.dy;
  set.width = m.width();
  const Index w = m.width();
  const std::vector<std::string> ys = m.kind == ModelKind::Cisr ? names("y", m.dy) : std::vector<std::string>{};
  const std::vector<std::string> outs = output_names(m);

  // Forward chain.
  Chain& f = set.forward;
  f.inputs = concat(names("x", m.dx), ys);
  std::vector<std::string> cur = names("x", m.dx);
  for (Index p = 0; p < m.pad_count(); ++p) {
    const std::string pad = "x_pad" + std::to_string(p + 1);
    f.steps.push_back({pad, constant(0.0)});
    cur.push_back(pad);
  }
  std::size_t block_no = 0;
  for (const auto& layer : m.stack.layers()) {
    if (const auto* perm = std::get_if<PermutationLayer>(&layer)) {
      std::vector<std::string> next;
      for (Index j : perm->forward()) next.push_back(cur[static_cast<std::size_t>(j)]);
      cur = std::move(next);
      set.layers.emplace_back(PermutationExpression{perm->forward()});
      continue;
    }
    const auto& blk = std::get<CouplingBlock>(layer);
    const Index d1 = blk.split();
    const Index d2 = w - d1;
    BlockExpressions be;
    be.index = ++block_no;
    const std::string pre = "b" + std::to_string(be.index) + ".";
    be.u = names(pre + "u", w);
    be.v = names(pre + "v", d1);
    be.o = names(pre + "o", d2, d1 + 1);
    const std::vector<std::string> u2(be.u.begin() + d1, be.u.end());
    const std::vector<std::string> u1(be.u.begin(), be.u.begin() + d1);

    auto s1 = extract_all(blk.s1(), concat(u2, ys), prune_tol, const_tol);
    be.t1 = extract_all(blk.t1(), concat(u2, ys), prune_tol, const_tol);
    auto s2 = extract_all(blk.s2(), concat(be.v, ys), prune_tol, const_tol);
    be.t2 = extract_all(blk.t2(), concat(be.v, ys), prune_tol, const_tol);
    for (auto& s : s1) be.s1.push_back(simplify(log_scale_clamp(s, blk.clamp(), blk.clamp_mode())));
    for (auto& s : s2) be.s2.push_back(simplify(log_scale_clamp(s, blk.clamp(), blk.clamp_mode())));

    for (Index i = 0; i < w; ++i) f.steps.push_back({be.u[static_cast<std::size_t>(i)], variable(cur[static_cast<std::size_t>(i)])});
    for (Index j = 0; j < d1; ++j) {
      const auto k = static_cast<std::size_t>(j);
      const std::string sn = pre + "s1_" + std::to_string(j + 1);
      const std::string tn = pre + "t1_" + std::to_string(j + 1);
      f.steps.push_back({sn, be.s1[k]});
      f.steps.push_back({tn, be.t1[k]});
      f.steps.push_back({be.v[k], add(mul(variable(u1[k]), exp(variable(sn))), variable(tn))});
    }
    for (Index j = 0; j < d2; ++j) {
      const auto k = static_cast<std::size_t>(j);
      const std::string sn = pre + "s2_" + std::to_string(j + 1);
      const std::string tn = pre + "t2_" + std::to_string(j + 1);
      f.steps.push_back({sn, be.s2[k]});
      f.steps.push_back({tn, be.t2[k]});
      f.steps.push_back({be.o[k], add(mul(variable(u2[k]), exp(variable(sn))), variable(tn))});
    }
    cur = concat(be.v, be.o);
    set.layers.emplace_back(std::move(be));
  }
  for (std::size_t i = 0; i < outs.size(); ++i) f.steps.push_back({outs[i], variable(cur[i])});
  f.outputs = outs;

  // Inverse chain, mirroring the forward one with the same subnet expressions.
  Chain& inv = set.inverse;
  inv.inputs = concat(outs, ys);
  cur = outs;
  for (auto it = set.layers.rbegin(); it != set.layers.rend(); ++it) {
    if (const auto* perm = std::get_if<PermutationExpression>(&*it)) {
      std::vector<std::string> next(cur.size());
      for (std::size_t j = 0; j < perm->forward.size(); ++j) next[static_cast<std::size_t>(perm->forward[j])] = cur[j];
      cur = std::move(next);
      continue;
    }
    const auto& be = std::get<BlockExpressions>(*it);
    const std::string pre = "b" + std::to_string(be.index) + ".";
    const Index d1 = static_cast<Index>(be.v.size());
    const Index d2 = w - d1;
    for (Index j = 0; j < d1; ++j) inv.steps.push_back({be.v[static_cast<std::size_t>(j)], variable(cur[static_cast<std::size_t>(j)])});
    for (Index j = 0; j < d2; ++j) inv.steps.push_back({be.o[static_cast<std::size_t>(j)], variable(cur[static_cast<std::size_t>(d1 + j)])});
    for (Index j = 0; j < d2; ++j) {
      const auto k = static_cast<std::size_t>(j);
      const std::string sn = pre + "s2_" + std::to_string(j + 1);
      const std::string tn = pre + "t2_" + std::to_string(j + 1);
      inv.steps.push_back({sn, be.s2[k]});
      inv.steps.push_back({tn, be.t2[k]});
      inv.steps.push_back({be.u[static_cast<std::size_t>(d1 + j)],
                           mul(add(variable(be.o[k]), neg(variable(tn))), exp(neg(variable(sn))))});
    }
    for (Index j = 0; j < d1; ++j) {
      const auto k = static_cast<std::size_t>(j);
      const std::string sn = pre + "s1_" + std::to_string(j + 1);
      const std::string tn = pre + "t1_" + std::to_string(j + 1);
      inv.steps.push_back({sn, be.s1[k]});
      inv.steps.push_back({tn, be.t1[k]});
      inv.steps.push_back({be.u[k], mul(add(variable(be.v[k]), neg(variable(tn))), exp(neg(variable(sn))))});
    }
    cur = be.u;
  }
  const auto xs = names("x", m.dx);
  for (Index i = 0; i < m.dx; ++i) inv.steps.push_back({xs[static_cast<std::size_t>(i)], variable(cur[static_cast<std::size_t>(i)])});
  inv.outputs = xs;

  set.forward_map = inline_chain(set.forward);
  set.inverse_map = inline_chain(set.inverse);
  return set;
}

namespace {

std::string local(const std::string& name, const std::string& prefix) {
  return name.starts_with(prefix) ? name.substr(prefix.size()) : name;
}

/// Renders with the block prefix stripped from variable names.
std::string render_local(const Expr& e, const std::string& prefix, int digits) {
  std::map<std::string, Expr> rep;
  for (const auto& v : free_variables({e})) {
    if (v.starts_with(prefix)) rep[v] = variable(local(v, prefix));
  }
  return render(substitute(e, rep), digits);
}

std::string join(const std::vector<std::string>& parts, const std::string& sep = ", ") {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? sep : "") + parts[i];
  return out;
}

std::string group(const std::vector<std::string>& ns, const std::string& prefix) {
  std::vector<std::string> l;
  for (const auto& n : ns) l.push_back(local(n, prefix));
  return l.size() == 1 ? l.front() : "(" + join(l) + ")";
}

constexpr std::size_t kRenderLimit = 400;

}  // namespace

std::string render_model(const InvertibleExpressionSet& set, int digits) {
  std::ostringstream out;
  std::size_t blocks = 0;
  for (const auto& l : set.layers) blocks += std::holds_alternative<BlockExpressions>(l) ? 1 : 0;
  out << "model " << to_string(set.kind) << ": dx=" << set.dx;
  if (set.dy) out << " dy=" << set.dy;
  out << " width=" << set.width << ", " << blocks << " coupling block" << (blocks == 1 ? "" : "s") << "\n";

  std::vector<std::string> cur = set.forward.inputs;
  cur.resize(static_cast<std::size_t>(set.dx));
  for (Index p = 0; p < set.width - set.dx; ++p) cur.push_back("0");
  for (const auto& layer : set.layers) {
    if (const auto* perm = std::get_if<PermutationExpression>(&layer)) {
      std::vector<std::string> next;
      for (Index j : perm->forward) next.push_back(cur[static_cast<std::size_t>(j)]);
      cur = std::move(next);
      continue;
    }
    const auto& be = std::get<BlockExpressions>(layer);
    const std::string pre = "b" + std::to_string(be.index) + ".";
    const auto d1 = be.v.size();
    const std::vector<std::string> u1(be.u.begin(), be.u.begin() + static_cast<std::ptrdiff_t>(d1));
    const std::vector<std::string> u2(be.u.begin() + static_cast<std::ptrdiff_t>(d1), be.u.end());
    out << "\nblock " << be.index << "\n";
    std::vector<std::string> bind;
    for (std::size_t i = 0; i < be.u.size(); ++i) bind.push_back(local(be.u[i], pre) + " = " + cur[i]);
    out << "  " << join(bind) << "\n";
    const std::string a2 = group(u2, pre);
    const std::string a1 = group(be.v, pre);
    for (std::size_t j = 0; j < d1; ++j) {
      const std::string sfx = d1 > 1 ? "_" + std::to_string(j + 1) : "";
      out << "  s1" << sfx << "(" << a2 << ") = " << render_local(be.s1[j], pre, digits) << "\n";
      out << "  t1" << sfx << "(" << a2 << ") = " << render_local(be.t1[j], pre, digits) << "\n";
    }
    for (std::size_t j = 0; j < be.o.size(); ++j) {
      const std::string sfx = be.o.size() > 1 ? "_" + std::to_string(j + 1) : "";
      out << "  s2" << sfx << "(" << a1 << ") = " << render_local(be.s2[j], pre, digits) << "\n";
      out << "  t2" << sfx << "(" << a1 << ") = " << render_local(be.t2[j], pre, digits) << "\n";
    }
    out << "  forward:\n";
    for (std::size_t j = 0; j < d1; ++j) {
      const std::string sfx = d1 > 1 ? "_" + std::to_string(j + 1) : "";
      out << "    " << local(be.v[j], pre) << " = " << local(u1[j], pre) << "·exp(s1" << sfx << ") + t1" << sfx << "\n";
    }
    for (std::size_t j = 0; j < be.o.size(); ++j) {
      const std::string sfx = be.o.size() > 1 ? "_" + std::to_string(j + 1) : "";
      out << "    " << local(be.o[j], pre) << " = " << local(u2[j], pre) << "·exp(s2" << sfx << ") + t2" << sfx << "\n";
    }
    out << "  inverse:\n";
    for (std::size_t j = 0; j < be.o.size(); ++j) {
      const std::string sfx = be.o.size() > 1 ? "_" + std::to_string(j + 1) : "";
      out << "    " << local(u2[j], pre) << " = (" << local(be.o[j], pre) << " - t2" << sfx << ")·exp(-s2" << sfx << ")\n";
    }
    for (std::size_t j = 0; j < d1; ++j) {
      const std::string sfx = d1 > 1 ? "_" + std::to_string(j + 1) : "";
      out << "    " << local(u1[j], pre) << " = (" << local(be.v[j], pre) << " - t1" << sfx << ")·exp(-s1" << sfx << ")\n";
    }
    cur = be.v;
    cur.insert(cur.end(), be.o.begin(), be.o.end());
  }
  out << "\noutputs: ";
  std::vector<std::string> outs;
  for (std::size_t i = 0; i < set.forward.outputs.size(); ++i) outs.push_back(set.forward.outputs[i] + " = " + cur[i]);
  out << join(outs) << "\n";

  auto section = [&](const char* title, const std::vector<std::string>& lhs, const std::vector<Expr>& rhs) {
    out << "\n" << title << ":\n";
    for (std::size_t i = 0; i < lhs.size(); ++i) {
      if (tree_size(rhs[i]) > kRenderLimit) {
        out << "  " << lhs[i] << " = <" << tree_size(rhs[i]) << " nodes, see block chain>\n";
      } else {
        out << "  " << lhs[i] << " = " << render(rhs[i], digits) << "\n";
      }
    }
  };
  section("forward map", set.forward.outputs, set.forward_map);
  section("inverse map", set.inverse.outputs, set.inverse_map);
  return out.str();
}

}  // namespace isr::sym
