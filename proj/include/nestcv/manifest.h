#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

namespace nestcv {

// One labeled item and its place in the item -> group -> supergroup
// hierarchy (image -> patient -> dataset, or image -> volume -> kidney).
struct DataItem {
  std::string item_id;
  std::string group_id;
  std::string supergroup_id;
  std::string label;
  std::optional<std::vector<double>> features;
  std::optional<std::string> payload_ref;

  bool operator==(const DataItem&) const = default;
};

// Immutable after construction; safe to share across threads.
class Manifest {
 public:
  // Validates the hierarchy. Throws IntegrityError on duplicate item ids, a
  // group spanning supergroups, or an empty item list.
  explicit Manifest(std::vector<DataItem> items);

  const std::vector<DataItem>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }
  // Distinct labels in order of first appearance.
  const std::vector<std::string>& class_names() const { return class_names_; }
  int class_index(const std::string& label) const;
  std::optional<std::size_t> find(const std::string& item_id) const;

  bool has_features() const;
  // Common feature dimension; throws IntegrityError if items disagree or any
  // item lacks features.
  std::size_t feature_dim() const;

 private:
  std::vector<DataItem> items_;
  std::vector<std::string> class_names_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Delimited text, header row naming the columns:
//   item_id,group_id,supergroup_id,label[,features][,payload_ref]
// Features are ';'-separated decimals. An empty group_id defaults to the
// item_id and an empty supergroup_id to the group_id.
Manifest parse_manifest(const std::string& text);
Manifest load_manifest(const std::filesystem::path& path);
std::string format_manifest(const Manifest& manifest);
void write_manifest(const Manifest& manifest, const std::filesystem::path& path);

struct ManifestSummary {
  std::size_t total = 0;
  std::map<std::string, std::size_t> per_class;
  std::map<std::string, std::size_t> per_group;
  std::map<std::string, std::size_t> per_supergroup;
  // (supergroup, label) -> count
  std::map<std::pair<std::string, std::string>, std::size_t> per_supergroup_class;

  std::size_t count_class(const std::string& label) const;
  // Informational note when class counts differ; never an error.
  std::optional<std::string> imbalance_note() const;
};

// `class_filter`, when given, restricts counting to those labels. An empty
// filter counts nothing.
ManifestSummary summarize(const Manifest& manifest,
                          const std::optional<std::set<std::string>>& class_filter =
                              std::nullopt);

}  // namespace nestcv
