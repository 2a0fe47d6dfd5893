#include "isr/coupling.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace isr {

std::string_view to_string(ClampMode mode) { return mode == ClampMode::Hard ? "hard" : "soft"; }

ClampMode clamp_mode_from_string(std::string_view name) {
  if (name == "hard") return ClampMode::Hard;
  if (name == "soft") return ClampMode::Soft;
  throw std::invalid_argument("unknown clamp mode '" + std::string(name) + "'");
}

Var clamp_log_scale(Tape& tape, Var s, double bound, ClampMode mode) {
  return mode == ClampMode::Hard ? tape.clamp(s, bound) : tape.soft_clamp(s, bound);
}

double clamp_log_scale(double s, double bound, ClampMode mode) {
  return mode == ClampMode::Hard ? std::clamp(s, -bound, bound) : bound * std::tanh(s / bound);
}

CouplingBlock::CouplingBlock(EqlNetwork s1, EqlNetwork t1, EqlNetwork s2, EqlNetwork t2,
                             Index width, Index cond_width, double clamp, ClampMode mode)
    : nets_{std::move(s1), std::move(t1), std::move(s2), std::move(t2)},
      width_(width),
      cond_width_(cond_width),
      clamp_(clamp),
      mode_(mode) {
  if (width_ < 2) throw std::invalid_argument("coupling block width must be >= 2 (pad scalars)");
  if (cond_width_ < 0) throw std::invalid_argument("negative condition width");
  if (!(clamp_ > 0)) throw std::invalid_argument("clamp constant must be > 0");
  const Index d1 = split();
  const Index d2 = width_ - d1;
  auto check = [&](const EqlNetwork& net, Index in, Index out, const char* name) {
    if (net.input_width() != in || net.output_width() != out) {
      std::ostringstream msg;
      msg << "subnetwork " << name << " is " << net.input_width() << "->" << net.output_width()
          << ", block needs " << in << "->" << out;
      throw std::invalid_argument(msg.str());
    }
  };
  check(nets_[0], d2 + cond_width_, d1, "s1");
  check(nets_[1], d2 + cond_width_, d1, "t1");
  check(nets_[2], d1 + cond_width_, d2, "s2");
  check(nets_[3], d1 + cond_width_, d2, "t2");
}

CouplingBlock CouplingBlock::random(Index width, Index cond_width, const SubnetSpec& spec, Rng& rng) {
  const Index d1 = width / 2;
  const Index d2 = width - d1;
  auto net = [&](Index in, Index out) {
    EqlNetwork n = EqlNetwork::random(in + cond_width, out, spec.hidden_layers, spec.library, rng, spec.clamp);
    n.layers().back().weights *= spec.output_init_scale;
    return n;
  };
  auto s1 = net(d2, d1);
  auto t1 = net(d2, d1);
  auto s2 = net(d1, d2);
  auto t2 = net(d1, d2);
  return CouplingBlock(std::move(s1), std::move(t1), std::move(s2), std::move(t2), width, cond_width,
                       spec.clamp, spec.clamp_mode);
}

CouplingBlock CouplingBlock::identity(Index width, Index cond_width, const SubnetSpec& spec) {
  const Index d1 = width / 2;
  const Index d2 = width - d1;
  auto net = [&](Index in, Index out) {
    return EqlNetwork::zeros(in + cond_width, out, spec.hidden_layers, spec.library, spec.clamp);
  };
  return CouplingBlock(net(d2, d1), net(d2, d1), net(d1, d2), net(d1, d2), width, cond_width,
                       spec.clamp, spec.clamp_mode);
}

BoundBlock bind(Tape& tape, const CouplingBlock& block) {
  BoundBlock bound;
  bound.block = &block;
  for (std::size_t i = 0; i < 4; ++i) bound.nets[i] = block.subnets()[i].bind(tape);
  return bound;
}

namespace {

Var with_cond(Tape& tape, Var v, const std::optional<Var>& cond) {
  return cond ? tape.concat_cols(v, *cond) : v;
}

void check_cond(Tape& tape, Index cond_width, const std::optional<Var>& cond) {
  const Index got = cond ? tape.cols(*cond) : 0;
  if (got != cond_width) {
    std::ostringstream msg;
    msg << "condition width " << got << " != " << cond_width;
    throw std::invalid_argument(msg.str());
  }
}

void check_width(Index got, Index want, const char* what) {
  if (got != want) {
    std::ostringstream msg;
    msg << what << ": width " << got << " != " << want;
    throw std::invalid_argument(msg.str());
  }
}

}  // namespace

Coupled block_forward(Tape& tape, const BoundBlock& bound, Var u, std::optional<Var> cond) {
  const CouplingBlock& b = *bound.block;
  check_width(tape.cols(u), b.width(), "block_forward");
  check_cond(tape, b.cond_width(), cond);
  const Index d1 = b.split();
  const Index d2 = b.width() - d1;
  Var u1 = tape.slice_cols(u, 0, d1);
  Var u2 = tape.slice_cols(u, d1, d2);

  Var in2 = with_cond(tape, u2, cond);
  Var s1 = clamp_log_scale(tape, bound.nets[0].apply(tape, in2), b.clamp(), b.clamp_mode());
  Var v1 = tape.add(tape.mul(u1, tape.exp(s1)), bound.nets[1].apply(tape, in2));

  Var in1 = with_cond(tape, v1, cond);
  Var s2 = clamp_log_scale(tape, bound.nets[2].apply(tape, in1), b.clamp(), b.clamp_mode());
  Var o2 = tape.add(tape.mul(u2, tape.exp(s2)), bound.nets[3].apply(tape, in1));

  Var logdet = tape.add(tape.row_sum(s1), tape.row_sum(s2));
  return {tape.concat_cols(v1, o2), logdet};
}

Var block_inverse(Tape& tape, const BoundBlock& bound, Var o, std::optional<Var> cond) {
  const CouplingBlock& b = *bound.block;
  check_width(tape.cols(o), b.width(), "block_inverse");
  check_cond(tape, b.cond_width(), cond);
  const Index d1 = b.split();
  const Index d2 = b.width() - d1;
  Var o1 = tape.slice_cols(o, 0, d1);
  Var o2 = tape.slice_cols(o, d1, d2);

  Var in1 = with_cond(tape, o1, cond);
  Var s2 = clamp_log_scale(tape, bound.nets[2].apply(tape, in1), b.clamp(), b.clamp_mode());
  Var u2 = tape.mul(tape.sub(o2, bound.nets[3].apply(tape, in1)), tape.exp(tape.scale(s2, -1.0)));

  Var in2 = with_cond(tape, u2, cond);
  Var s1 = clamp_log_scale(tape, bound.nets[0].apply(tape, in2), b.clamp(), b.clamp_mode());
  Var u1 = tape.mul(tape.sub(o1, bound.nets[1].apply(tape, in2)), tape.exp(tape.scale(s1, -1.0)));
  return tape.concat_cols(u1, u2);
}

MapResult block_forward(const CouplingBlock& block, const Matrix& u, const Matrix* cond) {
  Tape tape;
  Var x = tape.input("u", u.cols());
  std::optional<Var> c;
  InputMap inputs{{"u", u}};
  if (cond) {
    c = tape.input("cond", cond->cols());
    inputs.emplace("cond", *cond);
  }
  auto result = block_forward(tape, bind(tape, block), x, c);
  tape.forward(inputs);
  return {tape.value(result.out), tape.value(result.logdet).col(0)};
}

Matrix block_inverse(const CouplingBlock& block, const Matrix& o, const Matrix* cond) {
  Tape tape;
  Var x = tape.input("o", o.cols());
  std::optional<Var> c;
  InputMap inputs{{"o", o}};
  if (cond) {
    c = tape.input("cond", cond->cols());
    inputs.emplace("cond", *cond);
  }
  Var u = block_inverse(tape, bind(tape, block), x, c);
  tape.forward(inputs);
  return tape.value(u);
}

PermutationLayer::PermutationLayer(std::vector<Index> forward) : forward_(std::move(forward)) {
  inverse_.assign(forward_.size(), -1);
  for (std::size_t j = 0; j < forward_.size(); ++j) {
    const Index src = forward_[j];
    if (src < 0 || src >= static_cast<Index>(forward_.size()) || inverse_[static_cast<std::size_t>(src)] != -1) {
      throw std::invalid_argument("permutation is not a bijection");
    }
    inverse_[static_cast<std::size_t>(src)] = static_cast<Index>(j);
  }
}

PermutationLayer PermutationLayer::from_seed(Index width, std::uint64_t seed) {
  std::vector<Index> perm(static_cast<std::size_t>(width));
  std::iota(perm.begin(), perm.end(), Index{0});
  Rng rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  return PermutationLayer(std::move(perm));
}

Var PermutationLayer::apply(Tape& tape, Var x) const { return tape.permute_cols(x, forward_); }

Var PermutationLayer::apply_inverse(Tape& tape, Var x) const {
  return tape.permute_cols(x, inverse_);
}

InvertibleStack::InvertibleStack(Index width, Index cond_width, std::vector<StackLayer> layers)
    : width_(width), cond_width_(cond_width), layers_(std::move(layers)) {
  if (width_ < 1) throw std::invalid_argument("stack width must be >= 1");
  for (const auto& layer : layers_) {
    if (const auto* b = std::get_if<CouplingBlock>(&layer)) {
      if (b->width() != width_ || b->cond_width() != cond_width_) {
        throw std::invalid_argument("coupling block width does not match stack");
      }
    } else if (std::get<PermutationLayer>(layer).width() != width_) {
      throw std::invalid_argument("permutation width does not match stack");
    }
  }
}

InvertibleStack InvertibleStack::random(Index width, Index cond_width, int blocks,
                                        const SubnetSpec& spec, std::uint64_t seed) {
  std::vector<StackLayer> layers;
  Rng rng = make_rng(seed, 0);
  for (int i = 0; i < blocks; ++i) {
    if (i > 0) {
      layers.emplace_back(PermutationLayer::from_seed(width, derive_seed(seed, 1000 + static_cast<std::uint64_t>(i))));
    }
    layers.emplace_back(CouplingBlock::random(width, cond_width, spec, rng));
  }
  return InvertibleStack(width, cond_width, std::move(layers));
}

InvertibleStack InvertibleStack::identity(Index width, Index cond_width, int blocks,
                                          const SubnetSpec& spec) {
  std::vector<StackLayer> layers;
  for (int i = 0; i < blocks; ++i) {
    if (i > 0) {
      std::vector<Index> perm(static_cast<std::size_t>(width));
      std::iota(perm.begin(), perm.end(), Index{0});
      layers.emplace_back(PermutationLayer(std::move(perm)));
    }
    layers.emplace_back(CouplingBlock::identity(width, cond_width, spec));
  }
  return InvertibleStack(width, cond_width, std::move(layers));
}

std::size_t InvertibleStack::block_count() const {
  return static_cast<std::size_t>(std::count_if(layers_.begin(), layers_.end(), [](const StackLayer& l) {
    return std::holds_alternative<CouplingBlock>(l);
  }));
}

std::vector<EqlNetwork*> InvertibleStack::subnets() {
  std::vector<EqlNetwork*> out;
  for (auto& layer : layers_) {
    if (auto* b = std::get_if<CouplingBlock>(&layer)) {
      for (auto& net : b->subnets()) out.push_back(&net);
    }
  }
  return out;
}

std::vector<const EqlNetwork*> InvertibleStack::subnets() const {
  std::vector<const EqlNetwork*> out;
  for (const auto& layer : layers_) {
    if (const auto* b = std::get_if<CouplingBlock>(&layer)) {
      for (const auto& net : b->subnets()) out.push_back(&net);
    }
  }
  return out;
}

std::vector<Matrix*> InvertibleStack::parameters() {
  std::vector<Matrix*> out;
  for (EqlNetwork* net : subnets()) {
    for (auto& layer : net->layers()) out.push_back(&layer.weights);
  }
  return out;
}

std::vector<const Matrix*> InvertibleStack::parameters() const {
  std::vector<const Matrix*> out;
  for (const EqlNetwork* net : subnets()) {
    for (const auto& layer : net->layers()) out.push_back(&layer.weights);
  }
  return out;
}

BoundStack bind(Tape& tape, const InvertibleStack& stack) {
  BoundStack bound;
  bound.stack = &stack;
  for (const auto& layer : stack.layers()) {
    if (const auto* b = std::get_if<CouplingBlock>(&layer)) {
      bound.blocks.emplace_back(bind(tape, *b));
    } else {
      bound.blocks.emplace_back(std::nullopt);
    }
  }
  return bound;
}

Var zero_column(Tape& tape, Var like) { return tape.pad_cols(tape.slice_cols(like, 0, 0), 1); }

Coupled stack_forward(Tape& tape, const BoundStack& bound, Var x, std::optional<Var> cond) {
  const InvertibleStack& stack = *bound.stack;
  check_width(tape.cols(x), stack.width(), "stack_forward");
  Var h = x;
  Var logdet = zero_column(tape, x);
  for (std::size_t i = 0; i < stack.layers().size(); ++i) {
    const auto& layer = stack.layers()[i];
    if (const auto* perm = std::get_if<PermutationLayer>(&layer)) {
      h = perm->apply(tape, h);
    } else {
      auto step = block_forward(tape, *bound.blocks[i], h, cond);
      h = step.out;
      logdet = tape.add(logdet, step.logdet);
    }
  }
  return {h, logdet};
}

Var stack_inverse(Tape& tape, const BoundStack& bound, Var o, std::optional<Var> cond) {
  const InvertibleStack& stack = *bound.stack;
  check_width(tape.cols(o), stack.width(), "stack_inverse");
  Var h = o;
  for (std::size_t i = stack.layers().size(); i-- > 0;) {
    const auto& layer = stack.layers()[i];
    if (const auto* perm = std::get_if<PermutationLayer>(&layer)) {
      h = perm->apply_inverse(tape, h);
    } else {
      h = block_inverse(tape, *bound.blocks[i], h, cond);
    }
  }
  return h;
}

MapResult stack_forward(const InvertibleStack& stack, const Matrix& x, const Matrix* cond) {
  Tape tape;
  Var in = tape.input("x", x.cols());
  std::optional<Var> c;
  InputMap inputs{{"x", x}};
  if (cond) {
    c = tape.input("cond", cond->cols());
    inputs.emplace("cond", *cond);
  }
  auto result = stack_forward(tape, bind(tape, stack), in, c);
  tape.forward(inputs);
  return {tape.value(result.out), tape.value(result.logdet).col(0)};
}

Matrix stack_inverse(const InvertibleStack& stack, const Matrix& o, const Matrix* cond) {
  Tape tape;
  Var in = tape.input("o", o.cols());
  std::optional<Var> c;
  InputMap inputs{{"o", o}};
  if (cond) {
    c = tape.input("cond", cond->cols());
    inputs.emplace("cond", *cond);
  }
  Var x = stack_inverse(tape, bind(tape, stack), in, c);
  tape.forward(inputs);
  return tape.value(x);
}

Matrix pad_input(const Matrix& x, Index pad_count) {
  if (pad_count < 0) throw std::invalid_argument("pad count must be >= 0");
  Matrix out = Matrix::Zero(x.rows(), x.cols() + pad_count);
  out.leftCols(x.cols()) = x;
  return out;
}

double pad_penalty(const Matrix& outputs, Index pad_count) {
  if (pad_count <= 0 || outputs.rows() == 0) return 0.0;
  return outputs.rightCols(pad_count).squaredNorm() / static_cast<double>(outputs.rows() * pad_count);
}

Var pad_penalty(Tape& tape, Var outputs, Index pad_count) {
  if (pad_count <= 0) return tape.constant(Matrix::Zero(1, 1));
  const Index width = tape.cols(outputs);
  return tape.mean(tape.square(tape.slice_cols(outputs, width - pad_count, pad_count)));
}

}  // namespace isr
