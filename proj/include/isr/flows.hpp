#pragma once

#include "isr/coupling.hpp"

#include <optional>
#include <stdexcept>
#include <string_view>

namespace isr {

enum class ModelKind {
  Isr,   // x -> [y | z]
  Cisr,  // x -> z given y
  Flow,  // x -> z
};

std::string_view to_string(ModelKind kind);
ModelKind model_kind_from_string(std::string_view name);

/// An invertible stack plus the bookkeeping of one model variant.
///
/// The stack runs over width() = max(dx, 2); a scalar x is padded with one
/// zero column whose output is held near zero by an L2 penalty.
struct Model {
  ModelKind kind = ModelKind::Flow;
  Index dx = 0;
  Index dy = 0;  // 0 for flows
  double sigma2 = 1e-2;
  double pad_weight = 1.0;
  InvertibleStack stack{2, 0, {}};

  Index width() const { return stack.width(); }
  Index pad_count() const { return width() - dx; }
  Index dz() const { return kind == ModelKind::Isr ? dx - dy : dx; }
  Index cond_width() const { return kind == ModelKind::Cisr ? dy : 0; }
};

struct ModelShape {
  ModelKind kind = ModelKind::Flow;
  Index dx = 2;
  Index dy = 0;
  int blocks = 1;
  SubnetSpec subnet;
  double sigma2 = 1e-2;
  double pad_weight = 1.0;
};

Index stack_width(Index dx);

/// Randomly initialised model; permutations and weights derive from seed.
Model make_model(const ModelShape& shape, std::uint64_t seed);
/// Model whose stack is the identity map.
Model make_identity_model(const ModelShape& shape);

/// Wraps an existing stack, validating widths against the variant.
Model wrap_stack(ModelKind kind, Index dx, Index dy, InvertibleStack stack, double sigma2 = 1e-2,
                 double pad_weight = 1.0);

struct IsrOutput {
  Matrix y;
  Matrix z;
  Vector logdet;
};

IsrOutput isr_forward(const Model& m, const Matrix& x);
Matrix isr_inverse(const Model& m, const Matrix& y, const Matrix& z);

/// Per-row latent code and log-determinant; cond is required for cISR.
MapResult model_forward(const Model& m, const Matrix& x, const Matrix* cond = nullptr);
/// x from latent rows (for ISR: [y | z] rows, for cISR/flow: z rows).
Matrix model_inverse(const Model& m, const Matrix& latent, const Matrix* cond = nullptr);

/// Training objective on a tape: batch mean of the variant's NLL plus the
/// pad penalty. y may be empty for flows.
Var model_nll(Tape& tape, const Model& m, const BoundStack& bound, Var x, std::optional<Var> y);

double nll_supervised(const Model& m, const Matrix& x, const Matrix& y);
double nll_flow(const Model& m, const Matrix& x);
double nll_conditional(const Model& m, const Matrix& x, const Matrix& y);
/// Dispatches on kind; y is ignored for flows.
double model_loss(const Model& m, const Matrix& x, const Matrix& y);

class NonFiniteSample : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// n rows of x drawn from the model's posterior at y_star (ignored for flows).
/// Throws NonFiniteSample when the inverse overflows for any draw.
Matrix sample_posterior(const Model& m, const Vector& y_star, Index n, std::uint64_t seed);

/// log p(x) per row for a flow model, Gaussian normaliser included.
Vector model_log_density(const Model& m, const Matrix& x);

/// Throws if any weight is non-finite.
void require_finite(const Model& m);

}  // namespace isr
