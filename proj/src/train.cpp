#include "isr/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

namespace isr {

void TrainConfig::validate() const {
  if (batch < 1) throw std::invalid_argument("batch must be >= 1");
  if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
  if (!(lr_end > 0) || lr_start < lr_end) throw std::invalid_argument("need lr_start >= lr_end > 0");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw std::invalid_argument("Adam betas must lie in [0, 1)");
  if (!(adam_eps > 0)) throw std::invalid_argument("Adam eps must be > 0");
  if (lambda < 0) throw std::invalid_argument("lambda must be >= 0");
  if (!(l05_threshold > 0)) throw std::invalid_argument("l05 threshold must be > 0");
  if (!(0 <= warmup_frac && warmup_frac <= ramp_frac && ramp_frac <= prune_frac && prune_frac <= 1)) {
    throw std::invalid_argument("phase fractions must satisfy 0 <= warmup <= ramp <= prune <= 1");
  }
  if (prune_tol < 0) throw std::invalid_argument("prune tol must be >= 0");
  if (!(grad_clip >= 0)) throw std::invalid_argument("grad clip must be >= 0");
  if (!(grad_clip_factor == 0 || grad_clip_factor >= 1)) throw std::invalid_argument("grad clip factor must be 0 or >= 1");
}

double lr_at(const TrainConfig& cfg, long step, long total_steps) {
  if (total_steps <= 1) return cfg.lr_start;
  const double t = std::clamp(static_cast<double>(step) / static_cast<double>(total_steps - 1), 0.0, 1.0);
  return cfg.lr_start * std::pow(cfg.lr_end / cfg.lr_start, t);
}

void adam_step(const std::vector<Matrix*>& params, const std::vector<Matrix>& grads, AdamState& state,
               double lr, const TrainConfig& cfg, const std::vector<Matrix>* masks) {
  if (params.size() != grads.size()) throw std::invalid_argument("adam_step: parameter/gradient count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->rows() != grads[i].rows() || params[i]->cols() != grads[i].cols()) {
      throw std::invalid_argument("adam_step: gradient shape mismatch");
    }
    if (!grads[i].allFinite()) {
      std::ostringstream msg;
      msg << "non-finite gradient in parameter " << i << " at Adam step " << state.step + 1;
      throw NonFiniteGradient(msg.str());
    }
  }
  if (state.m.size() != params.size()) {
    state.m.clear();
    state.v.clear();
    for (const Matrix* p : params) {
      state.m.push_back(Matrix::Zero(p->rows(), p->cols()));
      state.v.push_back(Matrix::Zero(p->rows(), p->cols()));
    }
    state.step = 0;
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix g = grads[i];
    if (masks) g.array() *= (*masks)[i].array();
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g.cwiseAbs2();
    auto m_hat = state.m[i].array() / c1;
    auto v_hat = state.v[i].array() / c2;
    params[i]->array() -= lr * m_hat / (v_hat.sqrt() + cfg.adam_eps);
    if (masks) params[i]->array() *= (*masks)[i].array();
  }
}

namespace {

int phase_epoch(double frac, int epochs) {
  return static_cast<int>(std::lround(frac * static_cast<double>(epochs)));
}

}  // namespace

double lambda_at(const TrainConfig& cfg, int epoch) {
  if (cfg.lambda == 0.0) return 0.0;
  const int warm = phase_epoch(cfg.warmup_frac, cfg.epochs);
  const int ramp = phase_epoch(cfg.ramp_frac, cfg.epochs);
  const int prune = phase_epoch(cfg.prune_frac, cfg.epochs);
  if (epoch < warm || epoch >= prune) return 0.0;
  if (epoch >= ramp) return cfg.lambda;
  return cfg.lambda * static_cast<double>(epoch - warm + 1) / static_cast<double>(ramp - warm);
}

double model_penalty(const Model& m, double threshold) {
  double total = 0.0;
  for (const EqlNetwork* net : m.stack.subnets()) total += l05_penalty(*net, threshold);
  return total;
}

std::size_t prune_model(Model& m, double tol) {
  std::size_t zeroed = 0;
  for (EqlNetwork* net : m.stack.subnets()) {
    auto [pruned, count] = threshold_weights(*net, tol);
    *net = std::move(pruned);
    zeroed += count;
  }
  return zeroed;
}

namespace {

std::vector<Matrix> masks_of(Model& m) {
  std::vector<Matrix> masks;
  for (const Matrix* w : m.stack.parameters()) {
    Matrix mask = (w->array() != 0.0).cast<double>();
    mask.col(w->cols() - 1).setOnes();  // biases are never pinned
    masks.push_back(std::move(mask));
  }
  return masks;
}

Matrix gather_rows(const Matrix& src, const std::vector<Index>& order, std::size_t begin, std::size_t end) {
  Matrix out(static_cast<Index>(end - begin), src.cols());
  for (std::size_t i = begin; i < end; ++i) out.row(static_cast<Index>(i - begin)) = src.row(order[i]);
  return out;
}

double grad_norm(const std::vector<Matrix>& grads) {
  double norm = 0.0;
  for (const auto& g : grads) norm = std::hypot(norm, g.stableNorm());
  return norm;
}

/// Returns the norm after clipping.
double clip_norm(std::vector<Matrix>& grads, double max_norm) {
  const double norm = grad_norm(grads);
  if (norm <= max_norm) return norm;
  for (auto& g : grads) g *= max_norm / norm;
  return max_norm;
}

}  // namespace

TrainResult train(Model model, const Dataset& data, const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  const Index n = data.x.rows();
  if (data.x.cols() != model.dx) throw std::invalid_argument("dataset x width does not match model");
  const bool needs_y = model.kind != ModelKind::Flow;
  if (needs_y && (data.y.rows() != n || data.y.cols() != model.dy)) {
    throw std::invalid_argument("dataset y shape does not match model");
  }
  TrainResult result;
  if (cfg.epochs == 0) {
    result.model = std::move(model);
    return result;
  }
  if (n == 0) throw std::invalid_argument("empty dataset");

  const std::size_t steps_per_epoch = static_cast<std::size_t>((n + cfg.batch - 1) / cfg.batch);
  const long total_steps = static_cast<long>(steps_per_epoch) * cfg.epochs;
  const int prune_epoch = phase_epoch(cfg.prune_frac, cfg.epochs);
  const bool regularised = cfg.lambda > 0;

  AdamState adam;
  double norm_ema = 0.0;
  std::vector<Matrix> masks;
  bool masked = false;
  long step = 0;
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    if (regularised && epoch == prune_epoch) {
      result.pruned += prune_model(model, cfg.prune_tol);
      masks = masks_of(model);
      masked = true;
    }
    const Model last_good = model;
    Rng shuffle_rng = make_rng(cfg.seed, 0x7000 + static_cast<std::uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    const double lambda = lambda_at(cfg, epoch);

    double loss_sum = 0.0;
    double lr = cfg.lr_start;
    for (std::size_t b = 0; b < steps_per_epoch; ++b) {
      const std::size_t begin = b * static_cast<std::size_t>(cfg.batch);
      const std::size_t end = std::min(begin + static_cast<std::size_t>(cfg.batch), static_cast<std::size_t>(n));

      Tape tape;
      Var xv = tape.input("x", model.dx);
      InputMap inputs{{"x", gather_rows(data.x, order, begin, end)}};
      std::optional<Var> yv;
      if (needs_y) {
        yv = tape.input("y", model.dy);
        inputs.emplace("y", gather_rows(data.y, order, begin, end));
      }
      BoundStack bound = bind(tape, model.stack);
      Var nll = model_nll(tape, model, bound, xv, yv);
      Var loss = nll;
      if (lambda > 0) {
        for (const auto& blk : bound.blocks) {
          if (!blk) continue;
          for (const auto& net : blk->nets) {
            loss = tape.add(loss, tape.scale(l05_penalty(tape, net, cfg.l05_threshold), lambda));
          }
        }
      }
      GradientMap grads;
      try {
        tape.forward(inputs);
        grads = tape.backward(loss);
        if (cfg.grad_clip > 0) clip_norm(grads.grads, cfg.grad_clip);
        if (cfg.grad_clip_factor > 0) {
          const double norm = norm_ema > 0 ? clip_norm(grads.grads, cfg.grad_clip_factor * norm_ema) : grad_norm(grads.grads);
          norm_ema = norm_ema > 0 ? 0.99 * norm_ema + 0.01 * norm : norm;
        }
        lr = lr_at(cfg, step, total_steps);
        adam_step(model.stack.parameters(), grads.grads, adam, lr, cfg, masked ? &masks : nullptr);
      } catch (const NonFiniteError& e) {
        throw TrainingAborted(std::string("non-finite loss: ") + e.what(), last_good, epoch);
      } catch (const NonFiniteGradient& e) {
        throw TrainingAborted(e.what(), last_good, epoch);
      }
      loss_sum += tape.value(nll)(0, 0) * static_cast<double>(end - begin);
      ++step;
    }
    if (regularised && epoch == cfg.epochs - 1) result.pruned += prune_model(model, cfg.prune_tol);

    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss = loss_sum / static_cast<double>(n);
    rec.penalty = model_penalty(model, cfg.l05_threshold);
    rec.lambda = lambda;
    rec.lr = lr;
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!std::isfinite(rec.loss)) throw TrainingAborted("non-finite epoch loss", last_good, epoch);
    result.history.records.push_back(rec);
    if (on_epoch) on_epoch(model, rec);
  }
  result.model = std::move(model);
  return result;
}

}  // namespace isr
