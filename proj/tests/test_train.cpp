#include "helpers.hpp"
#include "isr/bench.hpp"
#include "isr/train.hpp"

#include <doctest.h>

#include <cmath>

using namespace isr;
using isr::testing::scalar;

namespace {

ModelShape flow_shape(int blocks = 1) {
  ModelShape s;
  s.kind = ModelKind::Flow;
  s.dx = 2;
  s.blocks = blocks;
  return s;
}

Dataset gaussian_data(Index n, std::uint64_t seed) {
  return {sample_target(DistributionKind::Gaussian, n, seed), Matrix(n, 0)};
}

bool same_weights(const Model& a, const Model& b) {
  const auto pa = a.stack.parameters();
  const auto pb = b.stack.parameters();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (*pa[i] != *pb[i]) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("Adam with zero gradient leaves parameters alone") {
  Matrix w = Matrix::Constant(2, 2, 0.7);
  AdamState st;
  TrainConfig cfg;
  adam_step({&w}, {Matrix::Zero(2, 2)}, st, 0.1, cfg);
  CHECK(w == Matrix::Constant(2, 2, 0.7));
}

TEST_CASE("first Adam step follows the bias-corrected formula") {
  TrainConfig cfg;
  for (double g : {0.3, -2.0, 1e-6}) {
    Matrix w = scalar(1.0);
    AdamState st;
    adam_step({&w}, {scalar(g)}, st, 0.01, cfg);
    // m_hat = g, v_hat = g^2 after correction
    const double expected = 1.0 - 0.01 * g / (std::abs(g) + cfg.adam_eps);
    CHECK(w(0, 0) == doctest::Approx(expected).epsilon(1e-15));
  }
}

TEST_CASE("Adam minimises a quadratic") {
  TrainConfig cfg;
  Matrix w = scalar(1.0);
  AdamState st;
  for (int i = 0; i < 200; ++i) adam_step({&w}, {w}, st, 0.1, cfg);
  CHECK(std::abs(w(0, 0)) < 1e-3);
}

TEST_CASE("Adam masks and errors") {
  TrainConfig cfg;
  Matrix w(1, 3);
  w << 0.0, 2.0, 0.0;
  Matrix mask(1, 3);
  mask << 0.0, 1.0, 1.0;
  std::vector<Matrix> masks{mask};
  AdamState st;
  adam_step({&w}, {Matrix::Ones(1, 3)}, st, 0.1, cfg, &masks);
  CHECK(w(0, 0) == 0.0);
  CHECK(w(0, 1) < 2.0);
  CHECK(w(0, 2) < 0.0);
  CHECK_THROWS_AS(adam_step({&w}, {scalar(std::nan(""))}, st, 0.1, cfg), std::invalid_argument);
  Matrix g = Matrix::Ones(1, 3);
  g(0, 1) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(adam_step({&w}, {g}, st, 0.1, cfg), NonFiniteGradient);
}

TEST_CASE("geometric learning rate decay") {
  TrainConfig cfg;
  CHECK(lr_at(cfg, 0, 101) == doctest::Approx(1e-2));
  CHECK(lr_at(cfg, 100, 101) == doctest::Approx(1e-4));
  CHECK(lr_at(cfg, 50, 101) == doctest::Approx(1e-3));
  double prev = 1.0;
  for (long s = 0; s < 101; ++s) {
    CHECK(lr_at(cfg, s, 101) < prev);
    prev = lr_at(cfg, s, 101);
  }
}

TEST_CASE("sparsity phases") {
  TrainConfig cfg;
  cfg.epochs = 100;
  CHECK(lambda_at(cfg, 50) == 0.0);
  cfg.lambda = 0.5;
  CHECK(lambda_at(cfg, 0) == 0.0);
  CHECK(lambda_at(cfg, 19) == 0.0);
  CHECK(lambda_at(cfg, 20) > 0.0);
  CHECK(lambda_at(cfg, 20) < lambda_at(cfg, 30));
  CHECK(lambda_at(cfg, 39) == doctest::Approx(0.5));
  CHECK(lambda_at(cfg, 40) == 0.5);
  CHECK(lambda_at(cfg, 79) == 0.5);
  CHECK(lambda_at(cfg, 80) == 0.0);
}

TEST_CASE("config validation") {
  TrainConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  TrainConfig bad = cfg;
  bad.batch = 0;
  CHECK_THROWS(bad.validate());
  bad = cfg;
  bad.lr_end = 1.0;
  CHECK_THROWS(bad.validate());
  bad = cfg;
  bad.prune_frac = 0.1;
  CHECK_THROWS(bad.validate());
  bad = cfg;
  bad.lambda = -1;
  CHECK_THROWS(bad.validate());
}

TEST_CASE("zero epochs returns the model unchanged") {
  const Model m = make_model(flow_shape(), 81);
  TrainConfig cfg;
  cfg.epochs = 0;
  const TrainResult r = train(m, gaussian_data(100, 82), cfg);
  CHECK(same_weights(r.model, m));
  CHECK(r.history.records.empty());
}

TEST_CASE("training is deterministic and records every epoch") {
  TrainConfig cfg;
  cfg.epochs = 6;
  cfg.seed = 83;
  cfg.lambda = 1e-2;
  const Dataset data = gaussian_data(2000, 84);
  const Model init = make_model(flow_shape(), 85);
  const TrainResult a = train(init, data, cfg);
  const TrainResult b = train(init, data, cfg);
  CHECK(same_weights(a.model, b.model));
  REQUIRE(a.history.records.size() == 6);
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(a.history.records[i].epoch == static_cast<int>(i));
    CHECK(a.history.records[i].loss == b.history.records[i].loss);
  }
  cfg.seed = 86;
  CHECK_FALSE(same_weights(train(init, data, cfg).model, a.model));
}

TEST_CASE("Gaussian flow approaches the analytic optimum") {
  TrainConfig cfg;
  cfg.epochs = 30;
  cfg.seed = 87;
  const Dataset data = gaussian_data(10000, 88);
  const TrainResult r = train(make_model(flow_shape(), 89), data, cfg);
  const double optimum = 1.0 + std::log(0.1);
  CHECK(std::abs(nll_flow(r.model, sample_target(DistributionKind::Gaussian, 10000, 90)) - optimum) < 0.1);
  const auto& h = r.history.records;
  double head = 0.0, tail = 0.0;
  for (int i = 0; i < 10; ++i) {
    head += h[static_cast<std::size_t>(i)].loss;
    tail += h[h.size() - 1 - static_cast<std::size_t>(i)].loss;
  }
  CHECK(tail < head);
}

TEST_CASE("pruning leaves no small nonzero weights") {
  TrainConfig cfg;
  cfg.epochs = 20;
  cfg.seed = 91;
  cfg.lambda = 1e-2;
  cfg.prune_tol = 0.01;
  const TrainResult r = train(make_model(flow_shape(), 92), gaussian_data(3000, 93), cfg);
  CHECK(r.pruned > 0);
  for (const EqlNetwork* net : r.model.stack.subnets()) {
    for (const auto& layer : net->layers()) {
      const Matrix w = layer.weights.leftCols(layer.input_width()).cwiseAbs();
      CHECK(((w.array() == 0.0) || (w.array() >= cfg.prune_tol)).all());
    }
  }
}

TEST_CASE("non-finite training aborts with the last good model") {
  const Model init = make_model(flow_shape(), 94);
  Dataset data = gaussian_data(64, 95);
  data.x(3, 1) = 1e200;
  TrainConfig cfg;
  cfg.epochs = 3;
  try {
    train(init, data, cfg);
    FAIL("expected TrainingAborted");
  } catch (const TrainingAborted& e) {
    CHECK(e.epoch() == 0);
    CHECK(same_weights(e.last_good(), init));
  }
}

TEST_CASE("dataset shape checks") {
  const Model m = make_model(flow_shape(), 96);
  TrainConfig cfg;
  cfg.epochs = 1;
  CHECK_THROWS(train(m, Dataset{Matrix::Zero(10, 3), Matrix(10, 0)}, cfg));
  ModelShape s = flow_shape();
  s.kind = ModelKind::Isr;
  s.dy = 1;
  CHECK_THROWS(train(make_model(s, 97), Dataset{Matrix::Zero(10, 2), Matrix(10, 0)}, cfg));
}

TEST_CASE("gradient clipping") {
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.seed = 98;
  Dataset data = gaussian_data(1000, 99);
  // a few far-out rows make some batch gradients spike
  for (Index i = 0; i < 1000; i += 97) data.x.row(i) *= 4.0;
  const Model init = make_model(flow_shape(2), 100);
  const Model plain = train(init, data, cfg).model;

  TrainConfig loose = cfg;
  loose.grad_clip = 1e300;
  loose.grad_clip_factor = 1e300;
  CHECK(same_weights(train(init, data, loose).model, plain));

  TrainConfig tight = cfg;
  tight.grad_clip_factor = 1.0;
  const TrainResult clipped = train(init, data, tight);
  CHECK_FALSE(same_weights(clipped.model, plain));
  CHECK(same_weights(train(init, data, tight).model, clipped.model));
  tight.grad_clip_factor = 0.0;
  tight.grad_clip = 1e-3;
  CHECK_FALSE(same_weights(train(init, data, tight).model, plain));
  tight.grad_clip_factor = 0.5;
  CHECK_THROWS(tight.validate());
  tight.grad_clip_factor = 0.0;
  tight.grad_clip = -1.0;
  CHECK_THROWS(tight.validate());
}
