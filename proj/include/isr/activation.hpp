#pragma once

#include <Eigen/Dense>

#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace isr {

/// Primitive activations available to an equation-learner layer.
enum class ActivationKind {
  Constant1,
  Identity,
  Square,
  SineScaled,  // sin(2*pi*g)
  Sigmoid,
  Exp,  // exp(clamp(g)), off by default
  PairProduct,
};

std::string_view to_string(ActivationKind kind);
ActivationKind activation_from_string(std::string_view name);

/// Number of pre-activations a unit consumes.
constexpr int arity(ActivationKind kind) { return kind == ActivationKind::PairProduct ? 2 : 1; }

/// Ordered multiset of activations, e.g. {Square x4, Sigmoid x2}.
using ActivationLibrary = std::vector<std::pair<ActivationKind, int>>;

ActivationLibrary default_library();
ActivationLibrary parse_library(std::string_view text);
std::string format_library(const ActivationLibrary& library);

/// Concrete per-unit activation assignment of one hidden layer.
///
/// Unit j reads pre-activation column offsets[j] (and offsets[j] + 1 for a
/// PairProduct) and writes output column j.
struct ActivationLayout {
  std::vector<ActivationKind> units;
  std::vector<Eigen::Index> offsets;
  Eigen::Index pre_width = 0;
  double exp_clamp = 2.0;

  Eigen::Index out_width() const { return static_cast<Eigen::Index>(units.size()); }

  static ActivationLayout from_library(const ActivationLibrary& library, double exp_clamp = 2.0);
  static ActivationLayout from_units(std::vector<ActivationKind> units, double exp_clamp = 2.0);
};

}  // namespace isr
