#include "nestcv/hpspace.h"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "nestcv/error.h"
#include "nestcv/prng.h"

namespace nestcv {

using ordered_json = nlohmann::ordered_json;

SearchSpace::SearchSpace(std::vector<SearchAxis> axes) : axes_(std::move(axes)) {
  std::set<std::string> seen;
  for (const auto& axis : axes_) {
    if (axis.name.empty()) throw UsageError("search axis with empty name");
    if (!seen.insert(axis.name).second)
      throw UsageError("duplicate search axis '" + axis.name + "'");
    if (axis.choices.empty())
      throw UsageError("search axis '" + axis.name + "' has no choices");
  }
}

const SearchAxis* SearchSpace::find(const std::string& name) const {
  for (const auto& axis : axes_)
    if (axis.name == name) return &axis;
  return nullptr;
}

std::uint64_t SearchSpace::cardinality() const {
  std::uint64_t total = 1;
  for (const auto& axis : axes_) total *= axis.choices.size();
  return total;
}

std::optional<std::string> HyperparameterConfig::get(
    const std::string& axis) const {
  for (const auto& [name, value] : values)
    if (name == axis) return value;
  return std::nullopt;
}

SearchSpace reference_space() {
  return SearchSpace({
      {"architecture", {"ResNet50", "InceptionV3", "Xception"}},
      {"batch_size", {"16", "32", "64", "128"}},
      {"learning_rate", {"0.01", "0.001", "0.0001"}},
      {"decay", {"0.01", "0.001", "0.0001"}},
      {"momentum", {"0.5", "0.9", "0.99"}},
      {"nesterov", {"enabled", "disabled"}},
  });
}

std::vector<HyperparameterConfig> sample_configs(const SearchSpace& space,
                                                 int n, std::uint64_t seed) {
  if (n < 1) throw UsageError("number of configurations must be >= 1");
  std::vector<HyperparameterConfig> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j) {
    auto prng = DeterministicPrng::for_stream(seed, static_cast<std::uint64_t>(j));
    HyperparameterConfig cfg{j, {}};
    for (const auto& axis : space.axes()) {
      const auto pick = prng.below(axis.choices.size());
      cfg.values.emplace_back(axis.name, axis.choices[pick]);
    }
    out.push_back(std::move(cfg));
  }
  return out;
}

namespace {

std::string value_to_string(const ordered_json& v, std::size_t line) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "enabled" : "disabled";
  // Integers keep their exact spelling; floats go through the JSON dump so
  // 0.01 stays "0.01".
  if (v.is_number()) return v.dump();
  throw ParseError("config value must be a string or number", line);
}

}  // namespace

std::vector<HyperparameterConfig> parse_configs(const std::string& text,
                                                const SearchSpace* space) {
  std::vector<HyperparameterConfig> out;
  std::istringstream in(text);
  std::string raw;
  std::size_t line = 0;
  std::set<int> indices;
  while (std::getline(in, raw)) {
    ++line;
    if (raw.find_first_not_of(" \t\r") == std::string::npos) continue;
    ordered_json rec;
    try {
      rec = ordered_json::parse(raw);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("malformed config record: ") + e.what(), line);
    }
    if (!rec.is_object() || !rec.contains("index") ||
        !rec["index"].is_number_integer() || !rec.contains("values") ||
        !rec["values"].is_object())
      throw ParseError("config record needs integer 'index' and object 'values'",
                       line);
    HyperparameterConfig cfg;
    cfg.index = rec["index"].get<int>();
    if (cfg.index < 0) throw ParseError("negative config index", line);
    if (!indices.insert(cfg.index).second)
      throw ParseError("duplicate config index " + std::to_string(cfg.index), line);
    for (const auto& [name, v] : rec["values"].items())
      cfg.values.emplace_back(name, value_to_string(v, line));

    if (space) {
      for (const auto& [name, value] : cfg.values) {
        const auto* axis = space->find(name);
        if (!axis)
          throw UsageError("config h_" + std::to_string(cfg.index) +
                           ": unknown axis '" + name + "'");
        if (std::find(axis->choices.begin(), axis->choices.end(), value) ==
            axis->choices.end())
          throw UsageError("config h_" + std::to_string(cfg.index) + ": value '" +
                           value + "' not a choice of axis '" + name + "'");
      }
      for (const auto& axis : space->axes())
        if (!cfg.get(axis.name))
          throw UsageError("config h_" + std::to_string(cfg.index) +
                           ": missing axis '" + axis.name + "'");
    }
    out.push_back(std::move(cfg));
  }
  return out;
}

std::vector<HyperparameterConfig> load_configs(const std::filesystem::path& path,
                                               const SearchSpace* space) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config list " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_configs(buf.str(), space);
}

std::string format_configs(const std::vector<HyperparameterConfig>& configs) {
  std::string out;
  for (const auto& cfg : configs) {
    ordered_json rec;
    rec["index"] = cfg.index;
    rec["values"] = ordered_json::object();
    for (const auto& [name, value] : cfg.values) rec["values"][name] = value;
    out += rec.dump();
    out += '\n';
  }
  return out;
}

std::vector<HyperparameterConfig> reference_configs() {
  struct Row {
    const char *arch, *batch, *lr, *decay, *momentum, *nesterov;
  };
  static constexpr Row rows[] = {
      {"ResNet50", "128", "0.01", "0.01", "0.9", "enabled"},
      {"InceptionV3", "16", "0.001", "0.001", "0.9", "disabled"},
      {"ResNet50", "64", "0.01", "0.01", "0.99", "enabled"},
      {"Xception", "16", "0.001", "0.001", "0.5", "disabled"},
      {"ResNet50", "64", "0.01", "0.01", "0.5", "disabled"},
      {"ResNet50", "32", "0.01", "0.01", "0.99", "enabled"},
      {"ResNet50", "32", "0.0001", "0.0001", "0.99", "disabled"},
      {"ResNet50", "32", "0.01", "0.01", "0.9", "enabled"},
      {"InceptionV3", "64", "0.01", "0.01", "0.5", "disabled"},
  };
  std::vector<HyperparameterConfig> out;
  int j = 0;
  for (const auto& r : rows) {
    out.push_back({j++,
                   {{"architecture", r.arch},
                    {"batch_size", r.batch},
                    {"learning_rate", r.lr},
                    {"decay", r.decay},
                    {"momentum", r.momentum},
                    {"nesterov", r.nesterov}}});
  }
  return out;
}

}  // namespace nestcv
