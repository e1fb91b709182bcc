#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <map>
#include <numeric>
#include <set>

#include "nestcv/error.h"
#include "nestcv/manifest.h"
#include "nestcv/partition.h"
#include "support.h"

using namespace nestcv;
namespace ts = testsupport;

namespace {

std::vector<std::size_t> sorted_sizes(const FoldAssignment& a) {
  auto s = a.fold_sizes();
  std::sort(s.begin(), s.end());
  return s;
}

// Manifest whose groups have the given sizes, each group its own supergroup.
Manifest grouped(const std::vector<int>& sizes) {
  std::vector<DataItem> items;
  for (std::size_t g = 0; g < sizes.size(); ++g)
    for (int i = 0; i < sizes[g]; ++i)
      items.push_back({"g" + std::to_string(g) + "_" + std::to_string(i), "g" + std::to_string(g),
                       "g" + std::to_string(g), i % 2 ? "a" : "b", std::nullopt, std::nullopt});
  return Manifest(items);
}

}  // namespace

TEST_CASE("chest X-ray shape, k=4 by supergroup: one dataset per fold") {
  const auto m = parse_manifest(ts::xray_manifest());
  const auto a = assign_folds(m, 4, PartitionLevel::kSupergroup, 7);
  for (auto size : a.fold_sizes()) CHECK(size == 1240);
  CHECK(check_integrity(a, m).empty());
  std::map<std::string, std::set<int>> folds_of;
  for (std::size_t i = 0; i < m.size(); ++i) folds_of[m.items()[i].supergroup_id].insert(a.fold_of[i]);
  std::set<int> used;
  for (const auto& [sg, folds] : folds_of) {
    CHECK(folds.size() == 1);
    used.insert(*folds.begin());
  }
  CHECK(used.size() == 4);
}

TEST_CASE("kidney shape, k=10 by supergroup: 1,800 items per fold") {
  const auto m = parse_manifest(ts::kidney_manifest());
  const auto a = assign_folds(m, 10, PartitionLevel::kSupergroup, 3);
  for (auto size : a.fold_sizes()) CHECK(size == 1800);
  CHECK(check_integrity(a, m).empty());
}

TEST_CASE("10 items, k=5 at item level: folds of 2") {
  const auto m = parse_manifest(ts::blobs_manifest(10, 2, 1, 1.0, 1));
  const auto a = assign_folds(m, 5, PartitionLevel::kItem, 99);
  CHECK(a.fold_sizes() == std::vector<std::size_t>(5, 2));
}

TEST_CASE("greedy largest-first packs {5,5,4,3,2,1,1} into {7,7,7}") {
  const std::vector<int> sizes{5, 5, 4, 3, 2, 1, 1};
  // Oracle: every order the shuffle could produce, then the stated greedy
  // rule (stable largest-first, smallest fold, lowest index on ties).
  std::vector<int> order(sizes.size());
  std::iota(order.begin(), order.end(), 0);
  std::set<std::vector<int>> outcomes;
  do {
    auto units = order;
    std::stable_sort(units.begin(), units.end(), [&](int x, int y) { return sizes[x] > sizes[y]; });
    std::vector<int> load(3, 0);
    for (int u : units) *std::min_element(load.begin(), load.end()) += sizes[u];
    std::sort(load.begin(), load.end());
    outcomes.insert(load);
  } while (std::next_permutation(order.begin(), order.end()));
  REQUIRE(outcomes.size() == 1);
  CHECK(*outcomes.begin() == std::vector<int>{7, 7, 7});

  const auto m = grouped(sizes);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto a = assign_folds(m, 3, PartitionLevel::kGroup, seed);
    CHECK(sorted_sizes(a) == std::vector<std::size_t>{7, 7, 7});
    CHECK(check_integrity(a, m).empty());
  }
}

TEST_CASE("same inputs give identical assignments; seeds matter") {
  const auto m = parse_manifest(ts::blobs_manifest(300, 3, 1, 1.0, 5, 3, 12));
  for (auto level : {PartitionLevel::kItem, PartitionLevel::kGroup, PartitionLevel::kSupergroup}) {
    const auto a = assign_folds(m, 4, level, 17);
    const auto b = assign_folds(m, 4, level, 17);
    CHECK(a == b);
    CHECK(format_assignment(a) == format_assignment(b));
  }
  CHECK(assign_folds(m, 4, PartitionLevel::kItem, 1).fold_of !=
        assign_folds(m, 4, PartitionLevel::kItem, 2).fold_of);
}

TEST_CASE("balance bounds") {
  const auto m = parse_manifest(ts::blobs_manifest(1001, 2, 1, 1.0, 8, 7, 13));
  const auto item = assign_folds(m, 6, PartitionLevel::kItem, 4);
  auto s = sorted_sizes(item);
  CHECK(s.back() - s.front() <= 1);
  const auto group = assign_folds(m, 6, PartitionLevel::kGroup, 4);
  s = sorted_sizes(group);
  CHECK(s.back() - s.front() <= 7);
}

TEST_CASE("stratified item split keeps class mix per fold") {
  const auto m = parse_manifest(ts::blobs_manifest(400, 4, 1, 1.0, 2));
  const auto a = assign_folds(m, 4, PartitionLevel::kItem, 3, {true});
  std::map<std::pair<int, std::string>, int> counts;
  for (std::size_t i = 0; i < m.size(); ++i) ++counts[{a.fold_of[i], m.items()[i].label}];
  for (const auto& [key, n] : counts) CHECK(n == 25);
}

TEST_CASE("integrity reports") {
  const auto m = parse_manifest(ts::blobs_manifest(200, 2, 1, 1.0, 3, 4, 10));
  auto a = assign_folds(m, 4, PartitionLevel::kGroup, 1);
  CHECK(check_integrity(a, m).empty());

  // Move one item of group g0 to another fold.
  const auto first = *m.find("x0");
  a.fold_of[first] = (a.fold_of[first] + 1) % 4;
  const auto violations = check_integrity(a, m);
  REQUIRE(violations.size() == 1);
  CHECK(violations[0].key == "g0");
  CHECK(violations[0].folds.size() == 2);

  // Item-level split checked at group level: compare against a direct scan.
  const auto item = assign_folds(m, 4, PartitionLevel::kItem, 5);
  std::map<std::string, std::set<int>> folds_of;
  for (std::size_t i = 0; i < m.size(); ++i) folds_of[m.items()[i].group_id].insert(item.fold_of[i]);
  std::size_t spanning = 0;
  for (const auto& [g, f] : folds_of) spanning += f.size() > 1;
  CHECK(spanning > 0);
  CHECK(check_integrity(item, m, PartitionLevel::kGroup).size() == spanning);
}

TEST_CASE("invalid partition requests") {
  const auto m = parse_manifest(ts::xray_manifest());
  CHECK_THROWS_AS(assign_folds(m, 1, PartitionLevel::kItem, 0), UsageError);
  CHECK_THROWS_AS(assign_folds(m, 5, PartitionLevel::kSupergroup, 0), UsageError);
}

TEST_CASE("assignment file round-trip") {
  ts::TempDir dir;
  const auto m = parse_manifest(ts::blobs_manifest(60, 2, 1, 1.0, 4, 3, 6));
  const auto a = assign_folds(m, 3, PartitionLevel::kSupergroup, 12);
  write_assignment(a, dir / "folds.csv");
  const auto text = ts::read_text(dir / "folds.csv");
  CHECK(text.rfind("# k=3 level=supergroup seed=12", 0) == 0);
  CHECK(load_assignment(dir / "folds.csv") == a);
  CHECK_THROWS_AS(parse_assignment("# k=3 level=item seed=1 stratified=0\nx0,7\n"), Error);
}
