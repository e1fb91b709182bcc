#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace nestcv {

struct SearchAxis {
  std::string name;
  // Numeric choices are kept as their decimal spelling so config identity
  // never depends on float parsing.
  std::vector<std::string> choices;

  bool operator==(const SearchAxis&) const = default;
};

class SearchSpace {
 public:
  SearchSpace() = default;
  // Throws UsageError on duplicate axis names or an empty axis.
  explicit SearchSpace(std::vector<SearchAxis> axes);

  const std::vector<SearchAxis>& axes() const { return axes_; }
  const SearchAxis* find(const std::string& name) const;
  // Number of distinct configurations (product of axis sizes).
  std::uint64_t cardinality() const;

  bool operator==(const SearchSpace&) const = default;

 private:
  std::vector<SearchAxis> axes_;
};

// One hyperparameter configuration h_j. Values are stored in axis order.
struct HyperparameterConfig {
  int index = 0;
  std::vector<std::pair<std::string, std::string>> values;

  // Value of an axis, or nullopt if the config does not carry it.
  std::optional<std::string> get(const std::string& axis) const;

  bool operator==(const HyperparameterConfig&) const = default;
};

// Built-in six-axis space over architecture, batch size, learning rate,
// decay, momentum, and Nesterov (648 combinations).
SearchSpace reference_space();

// Plain random search: config j draws one value per axis, in axis order, from
// DeterministicPrng::for_stream(seed, j). Duplicates are allowed.
std::vector<HyperparameterConfig> sample_configs(const SearchSpace& space,
                                                 int n, std::uint64_t seed);

// Config-list file: one JSON object per line,
//   {"index":0,"values":{"architecture":"ResNet50","batch_size":"128",...}}
// Blank lines are skipped. If `space` is given every value is checked
// against it.
std::vector<HyperparameterConfig> load_configs(
    const std::filesystem::path& path, const SearchSpace* space = nullptr);
std::vector<HyperparameterConfig> parse_configs(
    const std::string& text, const SearchSpace* space = nullptr);
std::string format_configs(const std::vector<HyperparameterConfig>& configs);

// The nine fixed configurations h_0..h_8 of the reference space.
std::vector<HyperparameterConfig> reference_configs();

}  // namespace nestcv
