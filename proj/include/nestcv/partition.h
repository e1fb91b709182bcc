#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "nestcv/manifest.h"

namespace nestcv {

// Granularity at which fold boundaries are drawn.
enum class PartitionLevel { kItem, kGroup, kSupergroup };

std::string_view to_string(PartitionLevel level);
PartitionLevel parse_partition_level(std::string_view text);

// Assignment of every manifest item to one of k folds F_0..F_{k-1}.
struct FoldAssignment {
  int k = 0;
  PartitionLevel level = PartitionLevel::kItem;
  std::uint64_t seed = 0;
  bool stratified = false;
  // fold_of[i] is the fold of manifest item i (manifest order).
  std::vector<int> fold_of;
  // Item ids in manifest order, kept so the assignment serializes on its own.
  std::vector<std::string> item_ids;

  std::vector<std::size_t> fold_sizes() const;
  // Manifest indices of the items in `fold`, ascending.
  std::vector<std::size_t> items_in_fold(int fold) const;

  bool operator==(const FoldAssignment&) const = default;
};

struct PartitionOptions {
  // Item level only: round-robin within each label so every fold sees a
  // similar class mix.
  bool stratified = false;
};

// Item level: seeded shuffle, then round-robin. Group and supergroup levels:
// the distinct keys are sorted, seeded-shuffled, stably ordered by size
// (largest first), and each is placed on the currently smallest fold, ties
// going to the lowest fold index. Throws UsageError for k < 2 or when there
// are fewer distinct keys than folds.
FoldAssignment assign_folds(const Manifest& manifest, int k, PartitionLevel level,
                            std::uint64_t seed, PartitionOptions options = {});

struct IntegrityViolation {
  std::string key;          // group or supergroup id, or item id
  std::vector<int> folds;   // folds the key was found in
  std::string message;
};

// Empty iff the assignment covers the manifest and no key at `level`
// (defaulting to the assignment's own level) spans more than one fold.
std::vector<IntegrityViolation> check_integrity(
    const FoldAssignment& assignment, const Manifest& manifest,
    std::optional<PartitionLevel> level = std::nullopt);

// "# k=4 level=supergroup seed=7 stratified=0" then "item_id,fold" rows.
std::string format_assignment(const FoldAssignment& assignment);
FoldAssignment parse_assignment(const std::string& text);
void write_assignment(const FoldAssignment& assignment,
                      const std::filesystem::path& path);
FoldAssignment load_assignment(const std::filesystem::path& path);

}  // namespace nestcv
