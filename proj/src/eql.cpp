#include "isr/eql.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace isr {

namespace {

EqlNetwork build(Index input_width, Index output_width, int hidden_layers,
                 const ActivationLibrary& library, double exp_clamp, Rng* rng) {
  if (input_width < 1 || output_width < 1) throw std::invalid_argument("EQL widths must be >= 1");
  if (hidden_layers < 0) throw std::invalid_argument("hidden layer count must be >= 0");
  auto layout = std::make_shared<const ActivationLayout>(
      ActivationLayout::from_library(library, exp_clamp));

  auto make = [&](Index rows, Index in) {
    Matrix w = Matrix::Zero(rows, in + 1);
    if (rng) {
      const double r = std::sqrt(6.0 / static_cast<double>(in + rows));
      std::uniform_real_distribution<double> dist(-r, r);
      for (Index j = 0; j < in; ++j) {
        for (Index i = 0; i < rows; ++i) w(i, j) = dist(*rng);
      }
    }
    return w;
  };

  std::vector<EqlLayer> layers;
  Index width = input_width;
  for (int l = 0; l < hidden_layers; ++l) {
    layers.push_back({make(layout->pre_width, width), layout});
    width = layout->out_width();
  }
  layers.push_back({make(output_width, width), nullptr});
  return EqlNetwork(std::move(layers));
}

}  // namespace

EqlNetwork::EqlNetwork(std::vector<EqlLayer> layers) : layers_(std::move(layers)) {
  validate();
  input_width_ = layers_.front().input_width();
  output_width_ = layers_.back().output_width();
}

void EqlNetwork::validate() const {
  if (layers_.empty()) throw std::invalid_argument("EQL network needs at least one layer");
  if (layers_.back().activation) throw std::invalid_argument("final EQL layer must be linear");
  Index width = layers_.front().input_width();
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const EqlLayer& layer = layers_[i];
    if (layer.weights.cols() < 2 || layer.input_width() != width) {
      std::ostringstream out;
      out << "EQL layer " << i << ": expects input width " << layer.input_width() << ", got "
          << width;
      throw std::invalid_argument(out.str());
    }
    if (layer.activation && layer.activation->pre_width != layer.weights.rows()) {
      throw std::invalid_argument("EQL layer rows do not match activation pre-width");
    }
    if (i + 1 < layers_.size() && !layer.activation) {
      throw std::invalid_argument("only the final EQL layer may be linear");
    }
    width = layer.output_width();
  }
}

EqlNetwork EqlNetwork::random(Index input_width, Index output_width, int hidden_layers,
                              const ActivationLibrary& library, Rng& rng, double exp_clamp) {
  return build(input_width, output_width, hidden_layers, library, exp_clamp, &rng);
}

EqlNetwork EqlNetwork::zeros(Index input_width, Index output_width, int hidden_layers,
                             const ActivationLibrary& library, double exp_clamp) {
  return build(input_width, output_width, hidden_layers, library, exp_clamp, nullptr);
}

Var BoundEql::apply(Tape& tape, Var input) const {
  if (tape.cols(input) != net->input_width()) {
    std::ostringstream out;
    out << "EQL input width " << tape.cols(input) << " != " << net->input_width();
    throw std::invalid_argument(out.str());
  }
  Var h = input;
  const auto& layers = net->layers();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    Var g = tape.affine(h, weights[i]);
    h = layers[i].activation ? tape.activation(g, layers[i].activation) : g;
  }
  return h;
}

BoundEql EqlNetwork::bind(Tape& tape) const {
  BoundEql bound{this, {}};
  bound.weights.reserve(layers_.size());
  for (const auto& layer : layers_) bound.weights.push_back(tape.parameter(layer.weights));
  return bound;
}

Matrix EqlNetwork::forward(const Matrix& input) const {
  if (input.cols() != input_width_) {
    std::ostringstream out;
    out << "EQL input width " << input.cols() << " != " << input_width_;
    throw std::invalid_argument(out.str());
  }
  Tape tape;
  Var x = tape.input("x", input_width_);
  Var y = bind(tape).apply(tape, x);
  tape.forward({{"x", input}});
  return tape.value(y);
}

EqlNetwork EqlNetwork::with_extra_inputs(Index extra) const {
  std::vector<EqlLayer> layers = layers_;
  Matrix& w = layers.front().weights;
  const Index in = w.cols() - 1;
  Matrix widened = Matrix::Zero(w.rows(), in + extra + 1);
  widened.leftCols(in) = w.leftCols(in);
  widened.col(in + extra) = w.col(in);
  w = std::move(widened);
  return EqlNetwork(std::move(layers));
}

std::size_t EqlNetwork::weight_count() const {
  std::size_t count = 0;
  for (const auto& layer : layers_) count += static_cast<std::size_t>(layer.weights.size());
  return count;
}

double l05_rho(double w, double threshold) { return smoothed_sqrt_abs(w, threshold); }

double l05_penalty(const EqlNetwork& net, double threshold) {
  if (!(threshold > 0)) throw std::invalid_argument("L0.5 smoothing threshold must be > 0");
  double total = 0.0;
  for (const auto& layer : net.layers()) {
    const Index in = layer.input_width();
    for (Index j = 0; j < in; ++j) {
      for (Index i = 0; i < layer.weights.rows(); ++i) total += l05_rho(layer.weights(i, j), threshold);
    }
  }
  return total;
}

Var l05_penalty(Tape& tape, const BoundEql& bound, double threshold) {
  if (!(threshold > 0)) throw std::invalid_argument("L0.5 smoothing threshold must be > 0");
  Var total{};
  bool first = true;
  const auto& layers = bound.net->layers();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    Var w = tape.slice_cols(bound.weights[i], 0, layers[i].input_width());
    Var term = tape.sum(tape.smoothed_sqrt_abs(w, threshold));
    total = first ? term : tape.add(total, term);
    first = false;
  }
  return total;
}

std::pair<EqlNetwork, std::size_t> threshold_weights(const EqlNetwork& net, double tol) {
  if (tol < 0) throw std::invalid_argument("threshold tolerance must be >= 0");
  std::vector<EqlLayer> layers = net.layers();
  std::size_t zeroed = 0;
  for (auto& layer : layers) {
    const Index in = layer.input_width();
    for (Index j = 0; j < in; ++j) {
      for (Index i = 0; i < layer.weights.rows(); ++i) {
        double& w = layer.weights(i, j);
        if (w != 0.0 && std::abs(w) < tol) {
          w = 0.0;
          ++zeroed;
        }
      }
    }
  }
  return {EqlNetwork(std::move(layers)), zeroed};
}

}  // namespace isr
