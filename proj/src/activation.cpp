#include "isr/activation.hpp"

#include <sstream>
#include <stdexcept>

namespace isr {

namespace {

struct KindName {
  ActivationKind kind;
  std::string_view name;
};

constexpr KindName kNames[] = {
    {ActivationKind::Constant1, "const"},   {ActivationKind::Identity, "id"},
    {ActivationKind::Square, "square"},     {ActivationKind::SineScaled, "sin"},
    {ActivationKind::Sigmoid, "sigmoid"},   {ActivationKind::Exp, "exp"},
    {ActivationKind::PairProduct, "product"},
};

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

}  // namespace

std::string_view to_string(ActivationKind kind) {
  for (const auto& entry : kNames) {
    if (entry.kind == kind) return entry.name;
  }
  return "?";
}

ActivationKind activation_from_string(std::string_view name) {
  for (const auto& entry : kNames) {
    if (entry.name == name) return entry.kind;
  }
  throw std::invalid_argument("unknown activation '" + std::string(name) + "'");
}

ActivationLibrary default_library() {
  return {{ActivationKind::Constant1, 1}, {ActivationKind::Identity, 2},
          {ActivationKind::Square, 4},    {ActivationKind::SineScaled, 2},
          {ActivationKind::Sigmoid, 2},   {ActivationKind::PairProduct, 2}};
}

// Format: "const:1,id:2,square:4" (count defaults to 1).
ActivationLibrary parse_library(std::string_view text) {
  ActivationLibrary library;
  while (!text.empty()) {
    auto comma = text.find(',');
    auto item = trim(text.substr(0, comma));
    text = comma == std::string_view::npos ? std::string_view{} : text.substr(comma + 1);
    if (item.empty()) continue;
    int count = 1;
    auto colon = item.find(':');
    if (colon != std::string_view::npos) {
      auto num = std::string(trim(item.substr(colon + 1)));
      std::size_t used = 0;
      try {
        count = std::stoi(num, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != num.size() || count < 1) {
        throw std::invalid_argument("bad activation count in '" + std::string(item) + "'");
      }
      item = trim(item.substr(0, colon));
    }
    library.emplace_back(activation_from_string(item), count);
  }
  if (library.empty()) throw std::invalid_argument("empty activation library");
  return library;
}

std::string format_library(const ActivationLibrary& library) {
  std::ostringstream out;
  for (std::size_t i = 0; i < library.size(); ++i) {
    if (i) out << ',';
    out << to_string(library[i].first) << ':' << library[i].second;
  }
  return out.str();
}

ActivationLayout ActivationLayout::from_library(const ActivationLibrary& library,
                                                double exp_clamp) {
  std::vector<ActivationKind> units;
  for (const auto& [kind, count] : library) {
    for (int i = 0; i < count; ++i) units.push_back(kind);
  }
  return from_units(std::move(units), exp_clamp);
}

ActivationLayout ActivationLayout::from_units(std::vector<ActivationKind> units,
                                              double exp_clamp) {
  if (units.empty()) throw std::invalid_argument("activation layout needs at least one unit");
  ActivationLayout layout;
  layout.exp_clamp = exp_clamp;
  layout.units = std::move(units);
  Eigen::Index offset = 0;
  for (auto kind : layout.units) {
    layout.offsets.push_back(offset);
    offset += arity(kind);
  }
  layout.pre_width = offset;
  return layout;
}

}  // namespace isr
