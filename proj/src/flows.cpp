#include "isr/flows.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>

namespace isr {

std::string_view to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::Isr: return "isr";
    case ModelKind::Cisr: return "cisr";
    case ModelKind::Flow: return "flow";
  }
  return "?";
}

ModelKind model_kind_from_string(std::string_view name) {
  if (name == "isr") return ModelKind::Isr;
  if (name == "cisr") return ModelKind::Cisr;
  if (name == "flow") return ModelKind::Flow;
  throw std::invalid_argument("unknown model kind '" + std::string(name) + "'");
}

Index stack_width(Index dx) { return std::max<Index>(dx, 2); }

namespace {

void check_shape(ModelKind kind, Index dx, Index dy, double sigma2) {
  if (dx < 1) throw std::invalid_argument("dx must be >= 1");
  if (kind == ModelKind::Flow && dy != 0) throw std::invalid_argument("flow models take no y");
  if (kind != ModelKind::Flow && dy < 1) throw std::invalid_argument("dy must be >= 1");
  if (kind == ModelKind::Isr && dy > dx) {
    std::ostringstream msg;
    msg << "ISR needs dy <= dx (got dy=" << dy << ", dx=" << dx << ")";
    throw std::invalid_argument(msg.str());
  }
  if (!(sigma2 > 0)) throw std::invalid_argument("sigma2 must be > 0");
}

void check_cols(const Matrix& m, Index cols, const char* what) {
  if (m.cols() != cols) {
    std::ostringstream msg;
    msg << what << ": expected " << cols << " columns, got " << m.cols();
    throw std::invalid_argument(msg.str());
  }
}

Matrix repeat_row(const Vector& v, Index n) {
  Matrix out(n, v.size());
  for (Index i = 0; i < n; ++i) out.row(i) = v.transpose();
  return out;
}

}  // namespace

Model make_model(const ModelShape& s, std::uint64_t seed) {
  check_shape(s.kind, s.dx, s.dy, s.sigma2);
  const Index cond = s.kind == ModelKind::Cisr ? s.dy : 0;
  return wrap_stack(s.kind, s.dx, s.dy, InvertibleStack::random(stack_width(s.dx), cond, s.blocks, s.subnet, seed),
                    s.sigma2, s.pad_weight);
}

Model make_identity_model(const ModelShape& s) {
  check_shape(s.kind, s.dx, s.dy, s.sigma2);
  const Index cond = s.kind == ModelKind::Cisr ? s.dy : 0;
  return wrap_stack(s.kind, s.dx, s.dy, InvertibleStack::identity(stack_width(s.dx), cond, s.blocks, s.subnet),
                    s.sigma2, s.pad_weight);
}

Model wrap_stack(ModelKind kind, Index dx, Index dy, InvertibleStack stack, double sigma2,
                 double pad_weight) {
  check_shape(kind, dx, dy, sigma2);
  if (stack.width() != stack_width(dx)) throw std::invalid_argument("stack width does not match dx");
  const Index cond = kind == ModelKind::Cisr ? dy : 0;
  if (stack.cond_width() != cond) throw std::invalid_argument("stack condition width does not match model");
  if (pad_weight < 0) throw std::invalid_argument("pad weight must be >= 0");
  Model m;
  m.kind = kind;
  m.dx = dx;
  m.dy = dy;
  m.sigma2 = sigma2;
  m.pad_weight = pad_weight;
  m.stack = std::move(stack);
  return m;
}

MapResult model_forward(const Model& m, const Matrix& x, const Matrix* cond) {
  check_cols(x, m.dx, "model_forward x");
  if (m.kind == ModelKind::Cisr) {
    if (!cond) throw std::invalid_argument("cISR forward needs y");
    check_cols(*cond, m.dy, "model_forward y");
    return stack_forward(m.stack, pad_input(x, m.pad_count()), cond);
  }
  return stack_forward(m.stack, pad_input(x, m.pad_count()));
}

Matrix model_inverse(const Model& m, const Matrix& latent, const Matrix* cond) {
  const Index expect = m.kind == ModelKind::Isr ? m.dx : m.dz();
  check_cols(latent, expect, "model_inverse latent");
  Matrix full = pad_input(latent, m.pad_count());
  Matrix x;
  if (m.kind == ModelKind::Cisr) {
    if (!cond) throw std::invalid_argument("cISR inverse needs y");
    check_cols(*cond, m.dy, "model_inverse y");
    x = stack_inverse(m.stack, full, cond);
  } else {
    x = stack_inverse(m.stack, full);
  }
  return x.leftCols(m.dx);
}

IsrOutput isr_forward(const Model& m, const Matrix& x) {
  if (m.kind != ModelKind::Isr) throw std::invalid_argument("isr_forward needs an ISR model");
  auto r = model_forward(m, x);
  return {r.out.leftCols(m.dy), r.out.middleCols(m.dy, m.dz()), r.logdet};
}

Matrix isr_inverse(const Model& m, const Matrix& y, const Matrix& z) {
  if (m.kind != ModelKind::Isr) throw std::invalid_argument("isr_inverse needs an ISR model");
  check_cols(y, m.dy, "isr_inverse y");
  check_cols(z, m.dz(), "isr_inverse z");
  if (y.rows() != z.rows()) throw std::invalid_argument("isr_inverse: y and z row counts differ");
  Matrix latent(y.rows(), m.dx);
  latent << y, z;
  return model_inverse(m, latent);
}

Var model_nll(Tape& tape, const Model& m, const BoundStack& bound, Var x, std::optional<Var> y) {
  if (tape.cols(x) != m.dx) throw std::invalid_argument("model_nll: x width mismatch");
  if (m.kind != ModelKind::Flow && (!y || tape.cols(*y) != m.dy)) {
    throw std::invalid_argument("model_nll: y missing or wrong width");
  }
  Var input = m.pad_count() > 0 ? tape.pad_cols(x, m.pad_count()) : x;
  std::optional<Var> cond;
  if (m.kind == ModelKind::Cisr) cond = y;
  auto fwd = stack_forward(tape, bound, input, cond);

  Var per_row = tape.scale(fwd.logdet, -1.0);
  if (m.kind == ModelKind::Isr) {
    Var fit = tape.sub(tape.slice_cols(fwd.out, 0, m.dy), *y);
    per_row = tape.add(per_row, tape.scale(tape.row_sum(tape.square(fit)), 0.5 / m.sigma2));
    if (m.dz() > 0) {
      Var z = tape.slice_cols(fwd.out, m.dy, m.dz());
      per_row = tape.add(per_row, tape.scale(tape.row_sum(tape.square(z)), 0.5));
    }
  } else {
    Var z = tape.slice_cols(fwd.out, 0, m.dx);
    per_row = tape.add(per_row, tape.scale(tape.row_sum(tape.square(z)), 0.5));
  }
  Var loss = tape.mean(per_row);
  if (m.pad_count() > 0 && m.pad_weight > 0) {
    loss = tape.add(loss, tape.scale(pad_penalty(tape, fwd.out, m.pad_count()), m.pad_weight));
  }
  return loss;
}

namespace {

double evaluate_nll(const Model& m, const Matrix& x, const Matrix* y) {
  if (x.rows() == 0) throw std::invalid_argument("empty batch");
  Tape tape;
  Var xv = tape.input("x", x.cols());
  InputMap inputs{{"x", x}};
  std::optional<Var> yv;
  if (y) {
    if (y->rows() != x.rows()) throw std::invalid_argument("x and y row counts differ");
    yv = tape.input("y", y->cols());
    inputs.emplace("y", *y);
  }
  Var loss = model_nll(tape, m, bind(tape, m.stack), xv, yv);
  tape.forward(inputs);
  return tape.value(loss)(0, 0);
}

}  // namespace

double nll_supervised(const Model& m, const Matrix& x, const Matrix& y) {
  if (m.kind != ModelKind::Isr) throw std::invalid_argument("nll_supervised needs an ISR model");
  return evaluate_nll(m, x, &y);
}

double nll_flow(const Model& m, const Matrix& x) {
  if (m.kind != ModelKind::Flow) throw std::invalid_argument("nll_flow needs a flow model");
  return evaluate_nll(m, x, nullptr);
}

double nll_conditional(const Model& m, const Matrix& x, const Matrix& y) {
  if (m.kind != ModelKind::Cisr) throw std::invalid_argument("nll_conditional needs a cISR model");
  return evaluate_nll(m, x, &y);
}

double model_loss(const Model& m, const Matrix& x, const Matrix& y) {
  switch (m.kind) {
    case ModelKind::Isr: return nll_supervised(m, x, y);
    case ModelKind::Cisr: return nll_conditional(m, x, y);
    case ModelKind::Flow: return nll_flow(m, x);
  }
  return 0.0;
}

void require_finite(const Model& m) {
  for (const Matrix* w : m.stack.parameters()) {
    if (!w->allFinite()) throw std::runtime_error("model has non-finite weights");
  }
}

Matrix sample_posterior(const Model& m, const Vector& y_star, Index n, std::uint64_t seed) {
  if (n < 0) throw std::invalid_argument("sample count must be >= 0");
  require_finite(m);
  if (m.kind != ModelKind::Flow && y_star.size() != m.dy) {
    throw std::invalid_argument("y* width does not match model dy");
  }
  Rng rng = make_rng(seed, 0x5a);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix z(n, m.dz());
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < m.dz(); ++j) z(i, j) = normal(rng);
  }
  if (n == 0) return Matrix(0, m.dx);
  auto invert = [&](const Matrix& zs) -> Matrix {
    switch (m.kind) {
      case ModelKind::Isr: return isr_inverse(m, repeat_row(y_star, zs.rows()), zs);
      case ModelKind::Cisr: {
        Matrix cond = repeat_row(y_star, zs.rows());
        return model_inverse(m, zs, &cond);
      }
      case ModelKind::Flow: return model_inverse(m, zs);
    }
    return {};
  };
  try {
    return invert(z);
  } catch (const NonFiniteError&) {
    Index bad = 0;
    double smallest = std::numeric_limits<double>::infinity();
    for (Index i = 0; i < n; ++i) {
      try {
        invert(z.row(i));
      } catch (const NonFiniteError&) {
        ++bad;
        smallest = std::min(smallest, z.row(i).norm());
      }
    }
    std::ostringstream msg;
    msg << "inverse map overflows for " << bad << " of " << n << " latent draws (smallest |z| " << smallest << ")";
    throw NonFiniteSample(msg.str());
  }
}

Vector model_log_density(const Model& m, const Matrix& x) {
  if (m.kind != ModelKind::Flow) throw std::invalid_argument("model_log_density needs a flow model");
  auto r = model_forward(m, x);
  const double d = static_cast<double>(m.dx);
  const double norm = 0.5 * d * std::log(2.0 * std::numbers::pi);
  Vector out(x.rows());
  for (Index i = 0; i < x.rows(); ++i) {
    out(i) = -0.5 * r.out.row(i).head(m.dx).squaredNorm() - norm + r.logdet(i);
  }
  return out;
}

}  // namespace isr
