#include "isr/io.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <type_traits>
#include <unordered_map>

namespace isr {

std::string_view to_string(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::Density: return "density";
    case ExperimentKind::Inverse: return "inverse";
    case ExperimentKind::ConditionalInverse: return "conditional-inverse";
  }
  return "?";
}

ModelKind RunConfig::model_kind() const {
  switch (experiment) {
    case ExperimentKind::Density: return ModelKind::Flow;
    case ExperimentKind::Inverse: return ModelKind::Isr;
    case ExperimentKind::ConditionalInverse: return ModelKind::Cisr;
  }
  return ModelKind::Flow;
}

void RunConfig::validate() const {
  try {
    train.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("[train] ") + e.what());
  }
  if (blocks < 0) throw ConfigError("[model] blocks must be >= 0");
  if (subnet.hidden_layers < 0) throw ConfigError("[model] hidden_layers must be >= 0");
  if (!(subnet.clamp > 0)) throw ConfigError("[model] clamp must be > 0");
  if (!(sigma2 > 0)) throw ConfigError("[model] sigma2 must be > 0");
  if (pad_weight < 0) throw ConfigError("[model] pad_weight must be >= 0");
  if (n_train < 1) throw ConfigError("[data] n_train must be >= 1");
  if (checkpoint_every < 0) throw ConfigError("[train] checkpoint_every must be >= 0");
  if (!(eps > 0)) throw ConfigError("[eval] eps must be > 0");
  if (n_samples < 0 || n_reference < 0) throw ConfigError("[eval] sample counts must be >= 0");
  if (is_kinematics() == (experiment == ExperimentKind::Density)) {
    throw ConfigError("benchmark '" + benchmark + "' does not fit experiment kind '" +
                      std::string(to_string(experiment)) + "'");
  }
  if (!is_kinematics()) {
    try {
      distribution_from_string(benchmark);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("[experiment] ") + e.what());
    }
  }
}

namespace {

using Ptree = boost::property_tree::ptree;

const std::map<std::string, std::set<std::string>>& known_keys() {
  static const std::map<std::string, std::set<std::string>> keys{
      {"experiment", {"kind", "benchmark", "seed", "out"}},
      {"model",
       {"blocks", "hidden_layers", "library", "clamp", "clamp_mode", "output_init_scale", "sigma2", "pad_weight"}},
      {"train",
       {"batch", "epochs", "lr_start", "lr_end", "beta1", "beta2", "adam_eps", "lambda", "l05_threshold",
        "warmup_frac", "ramp_frac", "prune_frac", "prune_tol", "grad_clip", "grad_clip_factor", "checkpoint_every"}},
      {"data", {"n_train"}},
      {"eval", {"y_star", "eps", "n_samples", "n_reference"}},
  };
  return keys;
}

template <class T>
T parse_value(const std::string& section, const std::string& key, const std::string& text) {
  std::istringstream in(text);
  T value{};
  in >> value;
  if (!in || !(in >> std::ws).eof()) {
    throw ConfigError("[" + section + "] " + key + ": cannot parse '" + text + "'");
  }
  return value;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

RunConfig parse_config(const std::string& text) {
  Ptree tree;
  try {
    std::istringstream in(text);
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(std::string("config syntax: ") + e.what());
  }
  RunConfig cfg;
  for (const auto& [section, body] : tree) {
    auto known = known_keys().find(section);
    if (known == known_keys().end()) {
      if (body.empty()) throw ConfigError("key '" + section + "' outside any section");
      throw ConfigError("unknown section [" + section + "]");
    }
    for (const auto& [key, node] : body) {
      if (!known->second.count(key)) throw ConfigError("unknown key '" + key + "' in [" + section + "]");
      const std::string v = node.get_value<std::string>();
      auto num = [&](auto& out) { out = parse_value<std::decay_t<decltype(out)>>(section, key, v); };
      if (section == "experiment") {
        if (key == "kind") {
          if (v == "density") cfg.experiment = ExperimentKind::Density;
          else if (v == "inverse") cfg.experiment = ExperimentKind::Inverse;
          else if (v == "conditional-inverse") cfg.experiment = ExperimentKind::ConditionalInverse;
          else throw ConfigError("[experiment] kind: unknown '" + v + "'");
        } else if (key == "benchmark") {
          cfg.benchmark = v;
        } else if (key == "seed") {
          num(cfg.seed);
        } else if (key == "out") {
          cfg.out = v;
        }
      } else if (section == "model") {
        if (key == "blocks") num(cfg.blocks);
        else if (key == "hidden_layers") num(cfg.subnet.hidden_layers);
        else if (key == "library") {
          try {
            cfg.subnet.library = parse_library(v);
          } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string("[model] library: ") + e.what());
          }
        } else if (key == "clamp") num(cfg.subnet.clamp);
        else if (key == "clamp_mode") {
          try {
            cfg.subnet.clamp_mode = clamp_mode_from_string(v);
          } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string("[model] ") + e.what());
          }
        } else if (key == "output_init_scale") num(cfg.subnet.output_init_scale);
        else if (key == "sigma2") num(cfg.sigma2);
        else if (key == "pad_weight") num(cfg.pad_weight);
      } else if (section == "train") {
        auto& t = cfg.train;
        if (key == "batch") num(t.batch);
        else if (key == "epochs") num(t.epochs);
        else if (key == "lr_start") num(t.lr_start);
        else if (key == "lr_end") num(t.lr_end);
        else if (key == "beta1") num(t.beta1);
        else if (key == "beta2") num(t.beta2);
        else if (key == "adam_eps") num(t.adam_eps);
        else if (key == "lambda") num(t.lambda);
        else if (key == "l05_threshold") num(t.l05_threshold);
        else if (key == "warmup_frac") num(t.warmup_frac);
        else if (key == "ramp_frac") num(t.ramp_frac);
        else if (key == "prune_frac") num(t.prune_frac);
        else if (key == "prune_tol") num(t.prune_tol);
        else if (key == "grad_clip") num(t.grad_clip);
        else if (key == "grad_clip_factor") num(t.grad_clip_factor);
        else if (key == "checkpoint_every") num(cfg.checkpoint_every);
      } else if (section == "data") {
        num(cfg.n_train);
      } else if (section == "eval") {
        if (key == "y_star") {
          std::string s = v;
          std::replace(s.begin(), s.end(), ',', ' ');
          std::istringstream in(s);
          double a = 0, b = 0;
          if (!(in >> a >> b) || !(in >> std::ws).eof()) throw ConfigError("[eval] y_star: expected 'a, b'");
          cfg.y_star = {a, b};
        } else if (key == "eps") num(cfg.eps);
        else if (key == "n_samples") num(cfg.n_samples);
        else if (key == "n_reference") num(cfg.n_reference);
      }
    }
  }
  cfg.train.seed = cfg.shuffle_seed();
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

std::string format_config(const RunConfig& c) {
  std::ostringstream o;
  o << "[experiment]\n"
    << "kind = " << to_string(c.experiment) << "\n"
    << "benchmark = " << c.benchmark << "\n"
    << "seed = " << c.seed << "\n"
    << "out = " << c.out << "\n\n"
    << "[model]\n"
    << "blocks = " << c.blocks << "\n"
    << "hidden_layers = " << c.subnet.hidden_layers << "\n"
    << "library = " << format_library(c.subnet.library) << "\n"
    << "clamp = " << fmt(c.subnet.clamp) << "\n"
    << "clamp_mode = " << to_string(c.subnet.clamp_mode) << "\n"
    << "output_init_scale = " << fmt(c.subnet.output_init_scale) << "\n"
    << "sigma2 = " << fmt(c.sigma2) << "\n"
    << "pad_weight = " << fmt(c.pad_weight) << "\n\n"
    << "[train]\n"
    << "batch = " << c.train.batch << "\n"
    << "epochs = " << c.train.epochs << "\n"
    << "lr_start = " << fmt(c.train.lr_start) << "\n"
    << "lr_end = " << fmt(c.train.lr_end) << "\n"
    << "beta1 = " << fmt(c.train.beta1) << "\n"
    << "beta2 = " << fmt(c.train.beta2) << "\n"
    << "adam_eps = " << fmt(c.train.adam_eps) << "\n"
    << "lambda = " << fmt(c.train.lambda) << "\n"
    << "l05_threshold = " << fmt(c.train.l05_threshold) << "\n"
    << "warmup_frac = " << fmt(c.train.warmup_frac) << "\n"
    << "ramp_frac = " << fmt(c.train.ramp_frac) << "\n"
    << "prune_frac = " << fmt(c.train.prune_frac) << "\n"
    << "prune_tol = " << fmt(c.train.prune_tol) << "\n"
    << "grad_clip = " << fmt(c.train.grad_clip) << "\n"
    << "grad_clip_factor = " << fmt(c.train.grad_clip_factor) << "\n"
    << "checkpoint_every = " << c.checkpoint_every << "\n\n"
    << "[data]\n"
    << "n_train = " << c.n_train << "\n\n"
    << "[eval]\n"
    << "y_star = " << fmt(c.y_star(0)) << ", " << fmt(c.y_star(1)) << "\n"
    << "eps = " << fmt(c.eps) << "\n"
    << "n_samples = " << c.n_samples << "\n"
    << "n_reference = " << c.n_reference << "\n";
  return o.str();
}

ModelShape model_shape(const RunConfig& cfg) {
  ModelShape s;
  s.kind = cfg.model_kind();
  s.dx = cfg.is_kinematics() ? 4 : 2;
  s.dy = cfg.is_kinematics() ? 2 : 0;
  s.blocks = cfg.blocks;
  s.subnet = cfg.subnet;
  s.sigma2 = cfg.sigma2;
  s.pad_weight = cfg.pad_weight;
  return s;
}

Dataset make_dataset(const RunConfig& cfg) {
  if (cfg.is_kinematics()) return kinematics_dataset(cfg.n_train, cfg.data_seed());
  Dataset d;
  d.x = sample_target(distribution_from_string(cfg.benchmark), cfg.n_train, cfg.data_seed());
  d.y = Matrix(cfg.n_train, 0);
  return d;
}

Json network_to_json(const EqlNetwork& net) {
  Json layers = Json::array();
  for (const auto& layer : net.layers()) {
    Json l;
    l["rows"] = layer.weights.rows();
    l["cols"] = layer.weights.cols();
    std::vector<double> w;
    for (Index i = 0; i < layer.weights.rows(); ++i) {
      for (Index j = 0; j < layer.weights.cols(); ++j) w.push_back(layer.weights(i, j));
    }
    l["weights"] = w;
    if (layer.activation) {
      std::vector<std::string> units;
      for (auto k : layer.activation->units) units.emplace_back(to_string(k));
      l["activation"] = units;
      l["exp_clamp"] = layer.activation->exp_clamp;
    } else {
      l["activation"] = nullptr;
    }
    layers.push_back(std::move(l));
  }
  return Json{{"layers", layers}};
}

EqlNetwork network_from_json(const Json& j) {
  std::vector<EqlLayer> layers;
  for (const auto& l : j.at("layers")) {
    const Index rows = l.at("rows").get<Index>();
    const Index cols = l.at("cols").get<Index>();
    const auto w = l.at("weights").get<std::vector<double>>();
    if (static_cast<Index>(w.size()) != rows * cols) throw std::runtime_error("model file: weight count mismatch");
    EqlLayer layer;
    layer.weights.resize(rows, cols);
    for (Index i = 0; i < rows; ++i) {
      for (Index c = 0; c < cols; ++c) layer.weights(i, c) = w[static_cast<std::size_t>(i * cols + c)];
    }
    if (!l.at("activation").is_null()) {
      std::vector<ActivationKind> units;
      for (const auto& u : l.at("activation")) units.push_back(activation_from_string(u.get<std::string>()));
      layer.activation = std::make_shared<const ActivationLayout>(
          ActivationLayout::from_units(std::move(units), l.at("exp_clamp").get<double>()));
    }
    layers.push_back(std::move(layer));
  }
  return EqlNetwork(std::move(layers));
}

Json model_to_json(const Model& m) {
  Json layers = Json::array();
  for (const auto& layer : m.stack.layers()) {
    if (const auto* p = std::get_if<PermutationLayer>(&layer)) {
      layers.push_back(Json{{"type", "permutation"}, {"forward", p->forward()}});
      continue;
    }
    const auto& b = std::get<CouplingBlock>(layer);
    Json block{{"type", "coupling"}, {"clamp", b.clamp()}, {"clamp_mode", std::string(to_string(b.clamp_mode()))}};
    block["s1"] = network_to_json(b.s1());
    block["t1"] = network_to_json(b.t1());
    block["s2"] = network_to_json(b.s2());
    block["t2"] = network_to_json(b.t2());
    layers.push_back(std::move(block));
  }
  return Json{{"kind", std::string(to_string(m.kind))},
              {"dx", m.dx},
              {"dy", m.dy},
              {"sigma2", m.sigma2},
              {"pad_weight", m.pad_weight},
              {"width", m.width()},
              {"cond_width", m.cond_width()},
              {"layers", layers}};
}

Model model_from_json(const Json& j) {
  const Index width = j.at("width").get<Index>();
  const Index cond = j.at("cond_width").get<Index>();
  std::vector<StackLayer> layers;
  for (const auto& l : j.at("layers")) {
    const auto type = l.at("type").get<std::string>();
    if (type == "permutation") {
      layers.emplace_back(PermutationLayer(l.at("forward").get<std::vector<Index>>()));
    } else if (type == "coupling") {
      layers.emplace_back(CouplingBlock(network_from_json(l.at("s1")), network_from_json(l.at("t1")),
                                        network_from_json(l.at("s2")), network_from_json(l.at("t2")), width, cond,
                                        l.at("clamp").get<double>(),
                                        clamp_mode_from_string(l.at("clamp_mode").get<std::string>())));
    } else {
      throw std::runtime_error("model file: unknown layer type '" + type + "'");
    }
  }
  return wrap_stack(model_kind_from_string(j.at("kind").get<std::string>()), j.at("dx").get<Index>(),
                    j.at("dy").get<Index>(), InvertibleStack(width, cond, std::move(layers)),
                    j.at("sigma2").get<double>(), j.at("pad_weight").get<double>());
}

void save_model_file(const std::filesystem::path& path, const ModelFile& file) {
  Json j{{"format", "isrflow-model"},
         {"version", ModelFile::kVersion},
         {"config", file.config},
         {"history", file.history.is_null() ? Json::object() : file.history},
         {"model", model_to_json(file.model)}};
  write_text(path, j.dump(1) + "\n");
}

ModelFile load_model_file(const std::filesystem::path& path) {
  Json j;
  try {
    j = Json::parse(read_text(path));
  } catch (const Json::parse_error& e) {
    throw std::runtime_error("model file " + path.string() + ": " + e.what());
  }
  if (j.value("format", "") != "isrflow-model") throw std::runtime_error(path.string() + " is not a model file");
  if (j.at("version").get<int>() != ModelFile::kVersion) {
    throw std::runtime_error("unsupported model file version " + j.at("version").dump());
  }
  ModelFile f;
  f.config = j.at("config").get<std::string>();
  f.history = j.at("history");
  f.model = model_from_json(j.at("model"));
  return f;
}

std::string history_csv(const TrainHistory& history) {
  std::ostringstream o;
  o << "epoch,loss,penalty,lambda,lr\n";
  char buf[160];
  for (const auto& r : history.records) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g\n", r.epoch, r.loss, r.penalty, r.lambda, r.lr);
    o << buf;
  }
  return o.str();
}

Json history_digest(const TrainHistory& history) {
  const std::string csv = history_csv(history);
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
  for (unsigned char c : csv) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char hex[20];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(h));
  Json j{{"epochs", history.records.size()}, {"fnv1a", hex}};
  if (!history.records.empty()) j["final_loss"] = history.records.back().loss;
  return j;
}

std::string format_csv(const std::vector<std::string>& header, const Matrix& values) {
  if (static_cast<Index>(header.size()) != values.cols()) throw std::invalid_argument("CSV header width mismatch");
  std::string out;
  for (std::size_t i = 0; i < header.size(); ++i) out += (i ? "," : "") + header[i];
  out += "\n";
  char buf[40];
  for (Index r = 0; r < values.rows(); ++r) {
    for (Index c = 0; c < values.cols(); ++c) {
      std::snprintf(buf, sizeof buf, "%.17g", values(r, c));
      if (c) out += ",";
      out += buf;
    }
    out += "\n";
  }
  return out;
}

void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header, const Matrix& values) {
  write_text(path, format_csv(header, values));
}

Table read_csv(const std::filesystem::path& path) {
  std::istringstream in(read_text(path));
  Table t;
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(path.string() + ": empty CSV");
  std::stringstream hs(line);
  for (std::string cell; std::getline(hs, cell, ',');) t.header.push_back(cell);
  std::vector<double> vals;
  Index rows = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ls(line);
    std::size_t n = 0;
    for (std::string cell; std::getline(ls, cell, ','); ++n) {
      try {
        vals.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw std::runtime_error(path.string() + ": bad number '" + cell + "'");
      }
    }
    if (n != t.header.size()) throw std::runtime_error(path.string() + ": ragged row " + std::to_string(rows + 2));
    ++rows;
  }
  const auto cols = static_cast<Index>(t.header.size());
  t.values.resize(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    for (Index c = 0; c < cols; ++c) t.values(r, c) = vals[static_cast<std::size_t>(r * cols + c)];
  }
  return t;
}

std::vector<std::string> column_names(const std::string& prefix, Index count) {
  std::vector<std::string> out;
  for (Index i = 1; i <= count; ++i) out.push_back(prefix + std::to_string(i));
  return out;
}

namespace {

class NodeTable {
 public:
  std::size_t id(const sym::Expr& e) {
    if (auto it = ids_.find(e.get()); it != ids_.end()) return it->second;
    Json n{{"op", std::string(sym::to_string(e->kind))}};
    if (e->kind == sym::Kind::Const) n["value"] = e->value;
    if (e->kind == sym::Kind::Var) n["name"] = e->name;
    if (e->kind == sym::Kind::Clamp || e->kind == sym::Kind::SoftClamp) n["bound"] = e->value;
    if (!e->args.empty()) {
      std::vector<std::size_t> args;
      for (const auto& a : e->args) args.push_back(id(a));
      n["args"] = args;
    }
    const std::size_t k = nodes_.size();
    nodes_.push_back(std::move(n));
    ids_.emplace(e.get(), k);
    return k;
  }
  Json nodes() const { return nodes_; }

 private:
  std::unordered_map<const sym::Node*, std::size_t> ids_;
  Json nodes_ = Json::array();
};

Json chain_json(const sym::Chain& c, NodeTable& table) {
  Json steps = Json::array();
  for (const auto& s : c.steps) steps.push_back(Json{{"target", s.target}, {"expr", table.id(s.expr)}});
  return Json{{"inputs", c.inputs}, {"steps", steps}, {"outputs", c.outputs}};
}

Json map_json(const std::vector<std::string>& names, const std::vector<sym::Expr>& exprs, NodeTable& table) {
  Json j = Json::object();
  for (std::size_t i = 0; i < names.size(); ++i) j[names[i]] = table.id(exprs[i]);
  return j;
}

}  // namespace

Json expressions_to_json(const sym::InvertibleExpressionSet& set) {
  NodeTable table;
  Json layers = Json::array();
  for (const auto& l : set.layers) {
    if (const auto* p = std::get_if<sym::PermutationExpression>(&l)) {
      layers.push_back(Json{{"type", "permutation"}, {"forward", p->forward}});
      continue;
    }
    const auto& b = std::get<sym::BlockExpressions>(l);
    auto ids = [&](const std::vector<sym::Expr>& es) {
      std::vector<std::size_t> out;
      for (const auto& e : es) out.push_back(table.id(e));
      return out;
    };
    layers.push_back(Json{{"type", "coupling"}, {"block", b.index}, {"u", b.u}, {"v", b.v}, {"o", b.o},
                          {"s1", ids(b.s1)}, {"t1", ids(b.t1)}, {"s2", ids(b.s2)}, {"t2", ids(b.t2)}});
  }
  Json j{{"format", "isrflow-expressions"},
         {"kind", std::string(to_string(set.kind))},
         {"dx", set.dx},
         {"dy", set.dy},
         {"width", set.width},
         {"layers", layers}};
  j["forward"] = chain_json(set.forward, table);
  j["inverse"] = chain_json(set.inverse, table);
  j["forward_map"] = map_json(set.forward.outputs, set.forward_map, table);
  j["inverse_map"] = map_json(set.inverse.outputs, set.inverse_map, table);
  j["nodes"] = table.nodes();
  return j;
}

LoadedExpressions expressions_from_json(const Json& j) {
  std::vector<sym::Expr> nodes;
  for (const auto& n : j.at("nodes")) {
    const sym::Kind kind = sym::kind_from_string(n.at("op").get<std::string>());
    std::vector<sym::Expr> args;
    if (n.contains("args")) {
      for (const auto& a : n.at("args")) {
        const auto k = a.get<std::size_t>();
        if (k >= nodes.size()) throw std::runtime_error("expression JSON: forward reference");
        args.push_back(nodes[k]);
      }
    }
    switch (kind) {
      case sym::Kind::Const: nodes.push_back(sym::constant(n.at("value").get<double>())); break;
      case sym::Kind::Var: nodes.push_back(sym::variable(n.at("name").get<std::string>())); break;
      case sym::Kind::Add: nodes.push_back(sym::add(std::move(args))); break;
      case sym::Kind::Mul: nodes.push_back(sym::mul(std::move(args))); break;
      case sym::Kind::Square: nodes.push_back(sym::square(args.at(0))); break;
      case sym::Kind::Sin2Pi: nodes.push_back(sym::sin2pi(args.at(0))); break;
      case sym::Kind::Sigmoid: nodes.push_back(sym::sigmoid(args.at(0))); break;
      case sym::Kind::Exp: nodes.push_back(sym::exp(args.at(0))); break;
      case sym::Kind::Clamp: nodes.push_back(sym::clamp(args.at(0), n.at("bound").get<double>())); break;
      case sym::Kind::SoftClamp: nodes.push_back(sym::soft_clamp(args.at(0), n.at("bound").get<double>())); break;
    }
  }
  auto chain = [&](const Json& c) {
    sym::Chain out;
    out.inputs = c.at("inputs").get<std::vector<std::string>>();
    out.outputs = c.at("outputs").get<std::vector<std::string>>();
    for (const auto& s : c.at("steps")) out.steps.push_back({s.at("target").get<std::string>(), nodes.at(s.at("expr").get<std::size_t>())});
    return out;
  };
  LoadedExpressions out;
  out.forward = chain(j.at("forward"));
  out.inverse = chain(j.at("inverse"));
  for (const auto& name : out.forward.outputs) out.forward_map.push_back(nodes.at(j.at("forward_map").at(name).get<std::size_t>()));
  for (const auto& name : out.inverse.outputs) out.inverse_map.push_back(nodes.at(j.at("inverse_map").at(name).get<std::size_t>()));
  return out;
}

Json metrics_to_json(const MetricsReport& r, const Json& context) {
  Json j = context.is_null() ? Json::object() : context;
  j["Err_post"] = r.err_post;
  j["Err_post_raw"] = r.err_post_raw;
  if (r.has_nll) j["NLL"] = r.nll;
  if (r.has_resim) j["Err_resim"] = r.err_resim;
  j["n_model"] = r.n_model;
  j["n_reference"] = r.n_reference;
  j["seed"] = r.seed;
  j["kernel"] = Json{{"type", "inverse_multiquadric"}, {"scales", r.kernel.scales}};
  return j;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace isr
