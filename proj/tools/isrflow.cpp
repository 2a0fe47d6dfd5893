#include "isr/io.hpp"
#include "isr/selftest.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>

using namespace isr;
namespace fs = std::filesystem;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNonFinite = 3;

struct Options {
  std::string config;
  std::string model;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::vector<double> target_y;
  std::optional<double> eps;
  std::optional<Index> n;
  std::string samples;
  std::string reference;
  std::string benchmark;
};

class Log {
 public:
  explicit Log(const fs::path& path) : out_(path, std::ios::app) {}
  template <class... Args>
  void operator()(const Args&... args) {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    out_ << std::put_time(std::localtime(&now), "%F %T") << " ";
    (out_ << ... << args);
    out_ << "\n" << std::flush;
  }

 private:
  std::ofstream out_;
};

Eigen::Vector2d target_y(const Options& o, const RunConfig& cfg) {
  if (o.target_y.empty()) return cfg.y_star;
  if (o.target_y.size() != 2) throw ConfigError("--target-y expects two values, e.g. 0,1.5");
  return {o.target_y[0], o.target_y[1]};
}

struct Loaded {
  RunConfig cfg;
  Model model;
};

Loaded load(const std::string& path) {
  if (path.empty()) throw ConfigError("--model is required");
  ModelFile f = load_model_file(path);
  return {parse_config(f.config), std::move(f.model)};
}

void emit(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
  } else {
    write_text(path, text);
  }
}

std::string dump(const Json& j) { return j.dump(2) + "\n"; }

int cmd_train(const Options& o) {
  if (o.config.empty()) throw ConfigError("--config is required");
  RunConfig cfg = load_config(o.config);
  if (o.seed) {
    cfg.seed = *o.seed;
    cfg.train.seed = cfg.shuffle_seed();
  }
  if (!o.out.empty()) cfg.out = o.out;
  const fs::path dir = cfg.out;
  fs::create_directories(dir);
  const std::string snapshot = format_config(cfg);
  write_text(dir / "config.cfg", snapshot);
  Log log(dir / "train.log");
  log("train ", cfg.benchmark, " seed ", cfg.seed, " blocks ", cfg.blocks, " epochs ", cfg.train.epochs);

  const Dataset data = make_dataset(cfg);
  const Model init = make_model(model_shape(cfg), cfg.init_seed());
  auto checkpoint = [&](const fs::path& path, const Model& m, const Json& history) {
    save_model_file(path, ModelFile{snapshot, m, history});
  };
  const auto on_epoch = [&](const Model& m, const EpochRecord& r) {
    log("epoch ", r.epoch, " loss ", r.loss, " penalty ", r.penalty, " lambda ", r.lambda, " lr ", r.lr, " wall ",
        r.wall_seconds, "s");
    if (cfg.checkpoint_every > 0 && (r.epoch + 1) % cfg.checkpoint_every == 0) {
      char name[48];
      std::snprintf(name, sizeof name, "checkpoint_%06d.json", r.epoch + 1);
      checkpoint(dir / name, m, Json{{"epochs", r.epoch + 1}});
    }
  };
  try {
    const TrainResult result = train(init, data, cfg.train, on_epoch);
    checkpoint(dir / "model.json", result.model, history_digest(result.history));
    write_text(dir / "history.csv", history_csv(result.history));
    log("done, pruned ", result.pruned, " weights");
    std::cout << "model written to " << (dir / "model.json").string() << "\n";
  } catch (const TrainingAborted& e) {
    checkpoint(dir / "checkpoint_abort.json", e.last_good(), Json{{"aborted_epoch", e.epoch()}});
    log("aborted at epoch ", e.epoch(), ": ", e.what());
    std::cerr << "training aborted at epoch " << e.epoch() << ": " << e.what() << "\nlast good model saved to "
              << (dir / "checkpoint_abort.json").string() << "\n";
    return kExitNonFinite;
  }
  return 0;
}

Matrix model_samples(const Loaded& l, const Options& o, Index n) {
  const std::uint64_t seed = o.seed ? *o.seed : l.cfg.sample_seed();
  Vector y;
  if (l.model.kind != ModelKind::Flow) y = target_y(o, l.cfg);
  return sample_posterior(l.model, y, n, seed);
}

int cmd_sample(const Options& o) {
  const Loaded l = load(o.model);
  const Index n = o.n ? *o.n : l.cfg.n_samples;
  emit(o.out, format_csv(column_names("x", l.model.dx), model_samples(l, o, n)));
  return 0;
}

int cmd_extract(const Options& o) {
  const Loaded l = load(o.model);
  const auto set = sym::compose_model(l.model);
  const std::string text = sym::render_model(set);
  std::cout << text;
  if (!o.out.empty()) {
    write_text(fs::path(o.out) / "expressions.txt", text);
    write_text(fs::path(o.out) / "expressions.json", dump(expressions_to_json(set)));
  }
  return 0;
}

Matrix read_table(const std::string& path, Index cols) {
  Table t = read_csv(path);
  if (t.values.cols() != cols) {
    throw ConfigError(path + ": expected " + std::to_string(cols) + " columns, found " +
                      std::to_string(t.values.cols()));
  }
  return std::move(t.values);
}

int cmd_evaluate(const Options& o) {
  std::optional<Loaded> l;
  if (!o.model.empty()) l = load(o.model);
  if (!l && o.samples.empty()) throw ConfigError("evaluate needs --model or --samples");
  RunConfig cfg = l ? l->cfg : RunConfig{};
  if (!o.benchmark.empty()) cfg.benchmark = o.benchmark;
  if (!l && o.benchmark.empty()) cfg.benchmark = "kinematics";
  const std::uint64_t seed = o.seed ? *o.seed : cfg.seed;
  const Index n = o.n ? *o.n : cfg.n_samples;

  Json context{{"benchmark", cfg.benchmark}, {"seed", seed}};
  MetricsReport report;
  if (cfg.is_kinematics()) {
    const Eigen::Vector2d y_star = target_y(o, cfg);
    const double eps = o.eps ? *o.eps : cfg.eps;
    Options so = o;
    so.seed = derive_seed(seed, 4);
    const Matrix samples = o.samples.empty() ? model_samples(*l, so, n) : read_table(o.samples, 4);
    const Matrix reference = o.reference.empty()
                                 ? rejection_sample(y_star, eps, cfg.n_reference, derive_seed(seed, 5)).samples
                                 : read_table(o.reference, 4);
    report = evaluate_posterior(samples, reference, y_star, seed);
    if (l) {
      const Dataset held_out = kinematics_dataset(cfg.n_reference, derive_seed(seed, 6));
      report.nll = model_loss(l->model, held_out.x, held_out.y);
      report.has_nll = true;
    }
    context["y_star"] = {y_star(0), y_star(1)};
    context["eps"] = eps;
  } else {
    const DistributionKind kind = distribution_from_string(cfg.benchmark);
    Options so = o;
    so.seed = derive_seed(seed, 4);
    const Matrix samples = o.samples.empty() ? model_samples(*l, so, n) : read_table(o.samples, 2);
    const Matrix reference =
        o.reference.empty() ? sample_target(kind, cfg.n_reference, derive_seed(seed, 5)) : read_table(o.reference, 2);
    report.err_post_raw = mmd(samples, reference);
    report.err_post = std::max(0.0, report.err_post_raw);
    report.has_resim = false;
    report.n_model = samples.rows();
    report.n_reference = reference.rows();
    report.seed = seed;
    if (l) {
      report.nll = nll_flow(l->model, sample_target(kind, cfg.n_reference, derive_seed(seed, 6)));
      report.has_nll = true;
    }
  }
  emit(o.out, dump(metrics_to_json(report, context)));
  return 0;
}

int cmd_oracle(const Options& o) {
  const RunConfig defaults;
  const Eigen::Vector2d y_star = target_y(o, defaults);
  const double eps = o.eps ? *o.eps : defaults.eps;
  const Index n = o.n ? *o.n : defaults.n_reference;
  const std::uint64_t seed = o.seed ? *o.seed : defaults.reference_seed();
  const RejectionResult r = rejection_sample(y_star, eps, n, seed);
  std::cerr << "accepted " << r.samples.rows() << " of " << r.draws << " draws (rate " << r.acceptance_rate
            << ")\n";
  emit(o.out, format_csv(column_names("x", 4), r.samples));
  return 0;
}

int cmd_selftest() {
  int failed = 0;
  for (const auto& c : run_selftest()) {
    std::cout << (c.passed ? "PASS " : "FAIL ") << c.name << " (" << c.detail << ")\n";
    failed += !c.passed;
  }
  std::cout << (failed ? std::to_string(failed) + " check(s) failed\n" : "all checks passed\n");
  return failed ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Invertible symbolic regression: train, sample, extract and evaluate"};
  app.require_subcommand(1);
  Options o;

  auto add_seed = [&](CLI::App* c) { c->add_option("--seed", o.seed, "Random seed"); };
  auto add_target = [&](CLI::App* c) {
    c->add_option("--target-y", o.target_y, "Observation y*, e.g. 0,1.5")->delimiter(',')->expected(2);
  };

  auto* train_cmd = app.add_subcommand("train", "Train a model from a config file");
  train_cmd->add_option("--config", o.config, "Config file")->required();
  train_cmd->add_option("--out", o.out, "Output directory (overrides the config)");
  add_seed(train_cmd);

  auto* sample_cmd = app.add_subcommand("sample", "Draw x samples from a trained model");
  sample_cmd->add_option("--model", o.model, "Model file")->required();
  sample_cmd->add_option("--out", o.out, "CSV path (default stdout)");
  sample_cmd->add_option("--n", o.n, "Number of samples");
  add_seed(sample_cmd);
  add_target(sample_cmd);

  auto* extract_cmd = app.add_subcommand("extract", "Print closed-form expressions of a model");
  extract_cmd->add_option("--model", o.model, "Model file")->required();
  extract_cmd->add_option("--out", o.out, "Directory for expressions.txt and expressions.json");

  auto* eval_cmd = app.add_subcommand("evaluate", "Compute posterior or density metrics");
  eval_cmd->add_option("--model", o.model, "Model file");
  eval_cmd->add_option("--samples", o.samples, "Samples CSV instead of sampling the model");
  eval_cmd->add_option("--reference", o.reference, "Reference CSV instead of the oracle / target sampler");
  eval_cmd->add_option("--benchmark", o.benchmark, "Benchmark name (default from the model config)");
  eval_cmd->add_option("--out", o.out, "JSON path (default stdout)");
  eval_cmd->add_option("--n", o.n, "Number of model samples");
  eval_cmd->add_option("--eps", o.eps, "Oracle acceptance radius");
  add_seed(eval_cmd);
  add_target(eval_cmd);

  auto* oracle_cmd = app.add_subcommand("oracle", "Rejection-sample the kinematics posterior");
  oracle_cmd->add_option("--out", o.out, "CSV path (default stdout)");
  oracle_cmd->add_option("--n", o.n, "Number of accepted samples");
  oracle_cmd->add_option("--eps", o.eps, "Acceptance radius");
  add_seed(oracle_cmd);
  add_target(oracle_cmd);

  auto* selftest_cmd = app.add_subcommand("selftest", "Run the built-in invariant checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*train_cmd) return cmd_train(o);
    if (*sample_cmd) return cmd_sample(o);
    if (*extract_cmd) return cmd_extract(o);
    if (*eval_cmd) return cmd_evaluate(o);
    if (*oracle_cmd) return cmd_oracle(o);
    if (*selftest_cmd) return cmd_selftest();
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
