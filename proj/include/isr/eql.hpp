#pragma once

#include "isr/activation.hpp"
#include "isr/autodiff.hpp"
#include "isr/random.hpp"

#include <memory>
#include <utility>
#include <vector>

namespace isr {

/// One fully connected layer; the last weight column is the bias.
/// A null activation marks the final linear layer.
struct EqlLayer {
  Matrix weights;
  std::shared_ptr<const ActivationLayout> activation;

  Index input_width() const { return weights.cols() - 1; }
  Index output_width() const {
    return activation ? activation->out_width() : weights.rows();
  }
};

class EqlNetwork;

/// An EqlNetwork whose weights have been registered as tape parameters.
struct BoundEql {
  const EqlNetwork* net = nullptr;
  std::vector<Var> weights;

  Var apply(Tape& tape, Var input) const;
};

/// Equation-learner network: hidden layers of symbolic activations and a
/// final linear read-out.
class EqlNetwork {
 public:
  EqlNetwork() = default;
  explicit EqlNetwork(std::vector<EqlLayer> layers);

  /// Uniform(+-sqrt(6/(fan_in+fan_out))) weights, zero biases.
  static EqlNetwork random(Index input_width, Index output_width, int hidden_layers,
                           const ActivationLibrary& library, Rng& rng, double exp_clamp = 2.0);
  /// Same architecture as random(), every weight and bias zero.
  static EqlNetwork zeros(Index input_width, Index output_width, int hidden_layers,
                          const ActivationLibrary& library, double exp_clamp = 2.0);

  Index input_width() const { return input_width_; }
  Index output_width() const { return output_width_; }
  const std::vector<EqlLayer>& layers() const { return layers_; }
  std::vector<EqlLayer>& layers() { return layers_; }

  /// Batched evaluation, one sample per row.
  Matrix forward(const Matrix& input) const;

  BoundEql bind(Tape& tape) const;

  /// Copy with `extra` zero-weight input columns appended after the existing inputs.
  EqlNetwork with_extra_inputs(Index extra) const;

  std::size_t weight_count() const;

 private:
  void validate() const;

  std::vector<EqlLayer> layers_;
  Index input_width_ = 0;
  Index output_width_ = 0;
};

/// Sum of the smoothed |w|^(1/2) over every non-bias weight.
double l05_penalty(const EqlNetwork& net, double threshold);
Var l05_penalty(Tape& tape, const BoundEql& bound, double threshold);

/// Smoothed |w|^(1/2) of a single weight.
double l05_rho(double w, double threshold);

/// Zeros every non-bias weight with |w| < tol; returns the pruned net and the
/// number of weights that changed.
std::pair<EqlNetwork, std::size_t> threshold_weights(const EqlNetwork& net, double tol);

}  // namespace isr
