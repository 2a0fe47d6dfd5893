#pragma once

#include "isr/eql.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <variant>
#include <vector>

namespace isr {

enum class ClampMode { Hard, Soft };

std::string_view to_string(ClampMode mode);
ClampMode clamp_mode_from_string(std::string_view name);

/// Architecture shared by the four subnetworks of every block.
struct SubnetSpec {
  int hidden_layers = 2;
  ActivationLibrary library = default_library();
  double clamp = 2.0;
  ClampMode clamp_mode = ClampMode::Hard;
  /// Multiplies the initial final-layer weights; 0 starts every block at the identity.
  double output_init_scale = 0.0;
};

/// Applies the log-scale clamp used in front of exp().
Var clamp_log_scale(Tape& tape, Var s, double bound, ClampMode mode);
double clamp_log_scale(double s, double bound, ClampMode mode);

/// Affine coupling block: [u1, u2] -> [v1, o2] with
///   v1 = u1 * exp(c(s1(u2))) + t1(u2),  o2 = u2 * exp(c(s2(v1))) + t2(v1)
/// where c is the log-scale clamp. With a condition y the subnetworks read [u2, y] / [v1, y].
class CouplingBlock {
 public:
  CouplingBlock(EqlNetwork s1, EqlNetwork t1, EqlNetwork s2, EqlNetwork t2, Index width,
                Index cond_width, double clamp, ClampMode mode);

  static CouplingBlock random(Index width, Index cond_width, const SubnetSpec& spec, Rng& rng);
  /// All-zero subnetworks: the identity map.
  static CouplingBlock identity(Index width, Index cond_width, const SubnetSpec& spec);

  Index width() const { return width_; }
  Index split() const { return width_ / 2; }
  Index cond_width() const { return cond_width_; }
  double clamp() const { return clamp_; }
  ClampMode clamp_mode() const { return mode_; }

  const EqlNetwork& s1() const { return nets_[0]; }
  const EqlNetwork& t1() const { return nets_[1]; }
  const EqlNetwork& s2() const { return nets_[2]; }
  const EqlNetwork& t2() const { return nets_[3]; }
  /// Order: s1, t1, s2, t2.
  std::array<EqlNetwork, 4>& subnets() { return nets_; }
  const std::array<EqlNetwork, 4>& subnets() const { return nets_; }

 private:
  std::array<EqlNetwork, 4> nets_;
  Index width_;
  Index cond_width_;
  double clamp_;
  ClampMode mode_;
};

struct BoundBlock {
  const CouplingBlock* block = nullptr;
  std::array<BoundEql, 4> nets;
};

BoundBlock bind(Tape& tape, const CouplingBlock& block);

/// Output plus per-sample log|det J| (batch x 1).
struct Coupled {
  Var out;
  Var logdet;
};

Coupled block_forward(Tape& tape, const BoundBlock& block, Var u, std::optional<Var> cond = {});
Var block_inverse(Tape& tape, const BoundBlock& block, Var o, std::optional<Var> cond = {});

struct MapResult {
  Matrix out;
  Vector logdet;
};

MapResult block_forward(const CouplingBlock& block, const Matrix& u, const Matrix* cond = nullptr);
Matrix block_inverse(const CouplingBlock& block, const Matrix& o, const Matrix* cond = nullptr);

/// Fixed column permutation; output column j reads input column forward()[j].
class PermutationLayer {
 public:
  explicit PermutationLayer(std::vector<Index> forward);
  static PermutationLayer from_seed(Index width, std::uint64_t seed);

  Index width() const { return static_cast<Index>(forward_.size()); }
  const std::vector<Index>& forward() const { return forward_; }
  const std::vector<Index>& inverse() const { return inverse_; }

  Var apply(Tape& tape, Var x) const;
  Var apply_inverse(Tape& tape, Var x) const;

 private:
  std::vector<Index> forward_;
  std::vector<Index> inverse_;
};

using StackLayer = std::variant<CouplingBlock, PermutationLayer>;

/// Ordered coupling blocks and permutations over a fixed width.
class InvertibleStack {
 public:
  InvertibleStack(Index width, Index cond_width, std::vector<StackLayer> layers);

  /// blocks coupling blocks with a seeded permutation between consecutive blocks.
  static InvertibleStack random(Index width, Index cond_width, int blocks, const SubnetSpec& spec,
                                std::uint64_t seed);
  static InvertibleStack identity(Index width, Index cond_width, int blocks, const SubnetSpec& spec);

  Index width() const { return width_; }
  Index cond_width() const { return cond_width_; }
  const std::vector<StackLayer>& layers() const { return layers_; }
  std::vector<StackLayer>& layers() { return layers_; }
  std::size_t block_count() const;

  /// Every subnetwork weight matrix in canonical (bind) order.
  std::vector<Matrix*> parameters();
  std::vector<const Matrix*> parameters() const;
  std::vector<EqlNetwork*> subnets();
  std::vector<const EqlNetwork*> subnets() const;

 private:
  Index width_;
  Index cond_width_;
  std::vector<StackLayer> layers_;
};

struct BoundStack {
  const InvertibleStack* stack = nullptr;
  std::vector<std::optional<BoundBlock>> blocks;  // aligned with layers()
};

BoundStack bind(Tape& tape, const InvertibleStack& stack);

Coupled stack_forward(Tape& tape, const BoundStack& stack, Var x, std::optional<Var> cond = {});
Var stack_inverse(Tape& tape, const BoundStack& stack, Var o, std::optional<Var> cond = {});

MapResult stack_forward(const InvertibleStack& stack, const Matrix& x, const Matrix* cond = nullptr);
Matrix stack_inverse(const InvertibleStack& stack, const Matrix& o, const Matrix* cond = nullptr);

/// Appends pad_count zero columns.
Matrix pad_input(const Matrix& x, Index pad_count);
/// Mean squared value of the trailing pad_count columns (0 when pad_count is 0).
double pad_penalty(const Matrix& outputs, Index pad_count);
Var pad_penalty(Tape& tape, Var outputs, Index pad_count);

/// batch x 1 zeros shaped after the rows of `like`.
Var zero_column(Tape& tape, Var like);

}  // namespace isr
