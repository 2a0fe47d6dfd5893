#pragma once

// Run configuration, model files, CSV tables and JSON reports.

#include "isr/bench.hpp"
#include "isr/symbolic.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace isr {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ExperimentKind { Density, Inverse, ConditionalInverse };

std::string_view to_string(ExperimentKind kind);

struct RunConfig {
  ExperimentKind experiment = ExperimentKind::Density;
  std::string benchmark = "gaussian";  // gaussian | banana | ring | mog | kinematics
  std::uint64_t seed = 1;
  std::string out = "run";

  int blocks = 1;
  SubnetSpec subnet;
  double sigma2 = 1e-2;
  double pad_weight = 1.0;

  TrainConfig train;
  int checkpoint_every = 0;

  Index n_train = 10000;

  Eigen::Vector2d y_star{0.0, 1.5};
  double eps = 0.02;
  Index n_samples = 10000;
  Index n_reference = 10000;

  ModelKind model_kind() const;
  bool is_kinematics() const { return benchmark == "kinematics"; }
  /// Seeds of the independent random streams of a run.
  std::uint64_t init_seed() const { return derive_seed(seed, 1); }
  std::uint64_t data_seed() const { return derive_seed(seed, 2); }
  std::uint64_t shuffle_seed() const { return derive_seed(seed, 3); }
  std::uint64_t sample_seed() const { return derive_seed(seed, 4); }
  std::uint64_t reference_seed() const { return derive_seed(seed, 5); }

  void validate() const;
};

/// Parses the sectioned key = value format. Unknown sections or keys, bad
/// values and inconsistent combinations raise ConfigError.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);
std::string format_config(const RunConfig& cfg);

ModelShape model_shape(const RunConfig& cfg);
/// Training data for the configured benchmark.
Dataset make_dataset(const RunConfig& cfg);

// Model files.

using Json = nlohmann::ordered_json;

Json network_to_json(const EqlNetwork& net);
EqlNetwork network_from_json(const Json& j);
Json model_to_json(const Model& m);
Model model_from_json(const Json& j);

struct ModelFile {
  static constexpr int kVersion = 1;
  std::string config;  // snapshot of the run configuration text
  Model model;
  Json history;  // digest of the training history
};

void save_model_file(const std::filesystem::path& path, const ModelFile& file);
ModelFile load_model_file(const std::filesystem::path& path);

Json history_digest(const TrainHistory& history);
/// Per-epoch CSV without wall times, so reruns are byte-identical.
std::string history_csv(const TrainHistory& history);

// CSV.

struct Table {
  std::vector<std::string> header;
  Matrix values;
};

std::string format_csv(const std::vector<std::string>& header, const Matrix& values);
void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header, const Matrix& values);
Table read_csv(const std::filesystem::path& path);

std::vector<std::string> column_names(const std::string& prefix, Index count);

// JSON reports.

Json expressions_to_json(const sym::InvertibleExpressionSet& set);

struct LoadedExpressions {
  sym::Chain forward;
  sym::Chain inverse;
  std::vector<sym::Expr> forward_map;
  std::vector<sym::Expr> inverse_map;
};
LoadedExpressions expressions_from_json(const Json& j);

/// Stable key order; context keys (benchmark, y*, eps, ...) come first.
Json metrics_to_json(const MetricsReport& report, const Json& context = Json::object());

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace isr
