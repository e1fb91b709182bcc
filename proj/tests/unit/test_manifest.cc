#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "nestcv/error.h"
#include "nestcv/manifest.h"
#include "support.h"

using namespace nestcv;
namespace ts = testsupport;

TEST_CASE("chest X-ray shaped manifest") {
  const auto m = parse_manifest(ts::xray_manifest());
  CHECK(m.size() == 4960);
  CHECK(m.class_names() == std::vector<std::string>{"cardiomegaly", "no finding"});
  const auto s = summarize(m);
  CHECK(s.total == 4960);
  CHECK(s.per_supergroup.size() == 4);
  for (int d = 0; d < 4; ++d)
    for (const char* label : {"cardiomegaly", "no finding"})
      CHECK(s.per_supergroup_class.at({"dataset" + std::to_string(d), label}) == 620);
  CHECK_FALSE(s.imbalance_note().has_value());
}

TEST_CASE("kidney shaped manifest") {
  const auto m = parse_manifest(ts::kidney_manifest());
  const auto s = summarize(m);
  CHECK(s.total == 18000);
  CHECK(s.per_supergroup.size() == 10);
  CHECK(s.per_class.size() == 3);
  std::size_t sum = 0;
  for (const auto& [sg, n] : s.per_supergroup) sum += n;
  CHECK(sum == s.total);
}

TEST_CASE("single row manifest") {
  const auto m = parse_manifest("item_id,group_id,supergroup_id,label\na,,,x\n");
  REQUIRE(m.size() == 1);
  CHECK(m.class_names().size() == 1);
  // Missing hierarchy levels default upward.
  CHECK(m.items()[0].group_id == "a");
  CHECK(m.items()[0].supergroup_id == "a");
}

TEST_CASE("group spanning supergroups is an integrity error") {
  CHECK_THROWS_AS(parse_manifest("item_id,group_id,supergroup_id,label\n"
                                 "a,p1,A,x\nb,p1,B,x\n"),
                  IntegrityError);
}

TEST_CASE("duplicate ids, empty manifests, malformed rows") {
  CHECK_THROWS_AS(parse_manifest("item_id,group_id,supergroup_id,label\na,g,s,x\na,g,s,y\n"),
                  IntegrityError);
  CHECK_THROWS_AS(parse_manifest("item_id,group_id,supergroup_id,label\n"), IntegrityError);
  try {
    parse_manifest("item_id,group_id,supergroup_id,label\na,g,s,x\nb,g,s\n");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
  }
  CHECK_THROWS_AS(parse_manifest("id,label\n"), ParseError);
  CHECK_THROWS_AS(
      parse_manifest("item_id,group_id,supergroup_id,label,features\na,g,s,x,1;zz\n"),
      ParseError);
}

TEST_CASE("empty class filter counts nothing") {
  const auto m = parse_manifest(ts::xray_manifest());
  const auto s = summarize(m, std::set<std::string>{});
  CHECK(s.total == 0);
  CHECK(s.per_class.empty());
  const auto only = summarize(m, std::set<std::string>{"cardiomegaly"});
  CHECK(only.total == 2480);
}

TEST_CASE("imbalance produces a note, not an error") {
  const auto m = parse_manifest("item_id,group_id,supergroup_id,label\na,,,x\nb,,,x\nc,,,y\n");
  CHECK(summarize(m).imbalance_note().has_value());
}

TEST_CASE("write then load round-trips byte for byte") {
  ts::TempDir dir;
  const std::string text = ts::blobs_manifest(50, 3, 4, 2.5, 11, 2, 5);
  const auto m = parse_manifest(text);
  write_manifest(m, dir / "m.csv");
  const auto once = ts::read_text(dir / "m.csv");
  const auto again = load_manifest(dir / "m.csv");
  CHECK(again.items() == m.items());
  write_manifest(again, dir / "m2.csv");
  CHECK(ts::read_text(dir / "m2.csv") == once);
  CHECK(format_manifest(parse_manifest(once)) == once);
}

TEST_CASE("features and payload refs") {
  const auto m = parse_manifest(
      "item_id,group_id,supergroup_id,label,features,payload_ref\n"
      "a,g,s,x,1.5;-2;3e-1,img/a.png\nb,g,s,y,0;0;0,img/b.png\n");
  CHECK(m.has_features());
  CHECK(m.feature_dim() == 3);
  CHECK((*m.items()[0].features)[2] == doctest::Approx(0.3));
  CHECK(m.items()[1].payload_ref == "img/b.png");
  CHECK(m.class_index("y") == 1);
}
