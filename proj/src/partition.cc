#include "nestcv/partition.h"

#include <algorithm>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "nestcv/error.h"
#include "nestcv/prng.h"
#include "text_util.h"

namespace nestcv {

std::string_view to_string(PartitionLevel level) {
  switch (level) {
    case PartitionLevel::kItem: return "item";
    case PartitionLevel::kGroup: return "group";
    case PartitionLevel::kSupergroup: return "supergroup";
  }
  return "?";
}

PartitionLevel parse_partition_level(std::string_view text) {
  if (text == "item") return PartitionLevel::kItem;
  if (text == "group") return PartitionLevel::kGroup;
  if (text == "supergroup") return PartitionLevel::kSupergroup;
  throw UsageError("unknown partition level '" + std::string(text) +
                   "' (expected item, group or supergroup)");
}

std::vector<std::size_t> FoldAssignment::fold_sizes() const {
  std::vector<std::size_t> sizes(static_cast<std::size_t>(k), 0);
  for (int f : fold_of) ++sizes[static_cast<std::size_t>(f)];
  return sizes;
}

std::vector<std::size_t> FoldAssignment::items_in_fold(int fold) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < fold_of.size(); ++i)
    if (fold_of[i] == fold) out.push_back(i);
  return out;
}

namespace {

const std::string& key_at(const DataItem& item, PartitionLevel level) {
  switch (level) {
    case PartitionLevel::kItem: return item.item_id;
    case PartitionLevel::kGroup: return item.group_id;
    case PartitionLevel::kSupergroup: return item.supergroup_id;
  }
  return item.item_id;
}

void assign_items(const Manifest& manifest, int k, DeterministicPrng& prng,
                  bool stratified, std::vector<int>& fold_of) {
  std::vector<std::vector<std::size_t>> buckets;
  if (stratified) {
    buckets.resize(manifest.class_names().size());
    for (std::size_t i = 0; i < manifest.size(); ++i)
      buckets[static_cast<std::size_t>(manifest.class_index(manifest.items()[i].label))]
          .push_back(i);
  } else {
    buckets.emplace_back(manifest.size());
    std::iota(buckets[0].begin(), buckets[0].end(), std::size_t{0});
  }
  std::size_t next = 0;
  for (auto& bucket : buckets) {
    prng.shuffle(std::span(bucket));
    for (auto i : bucket) fold_of[i] = static_cast<int>(next++ % static_cast<std::size_t>(k));
  }
}

void assign_units(const Manifest& manifest, int k, PartitionLevel level,
                  DeterministicPrng& prng, std::vector<int>& fold_of) {
  std::map<std::string, std::size_t> sizes;
  for (const auto& item : manifest.items()) ++sizes[key_at(item, level)];
  if (sizes.size() < static_cast<std::size_t>(k))
    throw UsageError("only " + std::to_string(sizes.size()) + " distinct " +
                     std::string(to_string(level)) + " keys for k=" +
                     std::to_string(k) + " folds");

  std::vector<std::pair<std::string, std::size_t>> units(sizes.begin(), sizes.end());
  prng.shuffle(std::span(units));
  std::stable_sort(units.begin(), units.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });

  std::vector<std::size_t> load(static_cast<std::size_t>(k), 0);
  std::map<std::string, int> fold_of_key;
  for (const auto& [key, size] : units) {
    const auto smallest = static_cast<std::size_t>(
        std::min_element(load.begin(), load.end()) - load.begin());
    load[smallest] += size;
    fold_of_key[key] = static_cast<int>(smallest);
  }
  for (std::size_t i = 0; i < manifest.size(); ++i)
    fold_of[i] = fold_of_key.at(key_at(manifest.items()[i], level));
}

}  // namespace

FoldAssignment assign_folds(const Manifest& manifest, int k, PartitionLevel level,
                            std::uint64_t seed, PartitionOptions options) {
  if (k < 2) throw UsageError("k must be >= 2, got " + std::to_string(k));
  FoldAssignment out;
  out.k = k;
  out.level = level;
  out.seed = seed;
  out.stratified = options.stratified && level == PartitionLevel::kItem;
  out.fold_of.assign(manifest.size(), -1);
  out.item_ids.reserve(manifest.size());
  for (const auto& item : manifest.items()) out.item_ids.push_back(item.item_id);

  auto prng = DeterministicPrng::for_stream(seed, 0);
  if (level == PartitionLevel::kItem) {
    if (manifest.size() < static_cast<std::size_t>(k))
      throw UsageError("only " + std::to_string(manifest.size()) +
                       " items for k=" + std::to_string(k) + " folds");
    assign_items(manifest, k, prng, out.stratified, out.fold_of);
  } else {
    assign_units(manifest, k, level, prng, out.fold_of);
  }
  return out;
}

std::vector<IntegrityViolation> check_integrity(const FoldAssignment& assignment,
                                                const Manifest& manifest,
                                                std::optional<PartitionLevel> level) {
  std::vector<IntegrityViolation> out;
  if (assignment.fold_of.size() != manifest.size()) {
    out.push_back({"", {}, "assignment covers " +
                               std::to_string(assignment.fold_of.size()) +
                               " items, manifest has " +
                               std::to_string(manifest.size())});
    return out;
  }
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    const auto& id = manifest.items()[i].item_id;
    const int f = assignment.fold_of[i];
    if (i < assignment.item_ids.size() && assignment.item_ids[i] != id)
      out.push_back({id, {}, "item order differs from manifest at '" + id + "'"});
    if (f < 0 || f >= assignment.k)
      out.push_back({id, {f}, "item '" + id + "' has no valid fold"});
  }
  if (!out.empty()) return out;

  const auto lvl = level.value_or(assignment.level);
  if (lvl == PartitionLevel::kItem) return out;
  std::map<std::string, std::set<int>> folds_of_key;
  for (std::size_t i = 0; i < manifest.size(); ++i)
    folds_of_key[key_at(manifest.items()[i], lvl)].insert(assignment.fold_of[i]);
  for (const auto& [key, folds] : folds_of_key) {
    if (folds.size() < 2) continue;
    std::ostringstream msg;
    msg << to_string(lvl) << " '" << key << "' spans folds";
    for (int f : folds) msg << ' ' << f;
    out.push_back({key, std::vector<int>(folds.begin(), folds.end()), msg.str()});
  }
  return out;
}

std::string format_assignment(const FoldAssignment& a) {
  std::string out = "# k=" + std::to_string(a.k) + " level=" +
                    std::string(to_string(a.level)) + " seed=" +
                    std::to_string(a.seed) + " stratified=" +
                    (a.stratified ? "1" : "0") + "\nitem_id,fold\n";
  for (std::size_t i = 0; i < a.fold_of.size(); ++i)
    out += a.item_ids[i] + ',' + std::to_string(a.fold_of[i]) + '\n';
  return out;
}

FoldAssignment parse_assignment(const std::string& text) {
  FoldAssignment a;
  std::istringstream in(text);
  std::string raw;
  std::size_t line = 0;
  bool header_seen = false, columns_seen = false;
  while (std::getline(in, raw)) {
    ++line;
    if (!raw.empty() && raw.back() == '\r') raw.pop_back();
    if (raw.empty()) continue;
    if (!header_seen) {
      if (raw.rfind("# ", 0) != 0) throw ParseError("missing fold header comment", line);
      std::istringstream fields(raw.substr(2));
      std::string kv;
      while (fields >> kv) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ParseError("bad header field '" + kv + "'", line);
        const auto key = kv.substr(0, eq), value = kv.substr(eq + 1);
        long long n = 0;
        if (key == "k" && detail::parse_int(value, n)) a.k = static_cast<int>(n);
        else if (key == "level") a.level = parse_partition_level(value);
        else if (key == "seed") a.seed = std::stoull(value);
        else if (key == "stratified") a.stratified = value == "1";
        else throw ParseError("bad header field '" + kv + "'", line);
      }
      if (a.k < 2) throw ParseError("fold header lacks k >= 2", line);
      header_seen = true;
      continue;
    }
    if (!columns_seen) {
      if (raw != "item_id,fold") throw ParseError("expected 'item_id,fold'", line);
      columns_seen = true;
      continue;
    }
    const auto comma = raw.rfind(',');
    long long f = 0;
    if (comma == std::string::npos || !detail::parse_int(raw.substr(comma + 1), f) ||
        f < 0 || f >= a.k)
      throw ParseError("bad fold row", line);
    a.item_ids.push_back(raw.substr(0, comma));
    a.fold_of.push_back(static_cast<int>(f));
  }
  if (!columns_seen) throw ParseError("fold file is empty", line);
  return a;
}

void write_assignment(const FoldAssignment& assignment,
                      const std::filesystem::path& path) {
  detail::write_file_atomic(path, format_assignment(assignment));
}

FoldAssignment load_assignment(const std::filesystem::path& path) {
  return parse_assignment(detail::read_file(path));
}

}  // namespace nestcv
