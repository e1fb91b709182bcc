#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <fstream>

#include "nestcv/checkpoint.h"
#include "nestcv/error.h"
#include "support.h"

using namespace nestcv;
namespace ts = testsupport;
namespace fs = std::filesystem;

namespace {

std::vector<char> bytes(const std::string& s) { return {s.begin(), s.end()}; }

MetadataRecord record(const std::string& task, TaskStatus status, int epoch,
                      std::optional<double> metric = std::nullopt) {
  MetadataRecord r;
  r.run_id = "r1";
  r.task_id = task;
  r.status = status;
  r.epoch = epoch;
  r.metric = metric;
  return r;
}

struct InjectedCrash {};

}  // namespace

TEST_CASE("records round-trip through the log") {
  ts::TempDir dir;
  CheckpointStore store(dir / "s");
  auto r = record("run/r1/cfg2/test0/val3", TaskStatus::kCompleted, 4, 0.625);
  r.config = 2;
  r.test_fold = 0;
  r.val_fold = 3;
  r.worker_id = "w1";
  store.append(r);
  store.append_run({"r1", {{"k", 4}}});
  const auto log = store.read_log();
  REQUIRE(log.records.size() == 1);
  CHECK(log.records[0].task_id == r.task_id);
  CHECK(log.records[0].metric == 0.625);
  CHECK(log.records[0].val_fold == 3);
  CHECK_FALSE(log.records[0].wall_time.empty());
  REQUIRE(log.runs.size() == 1);
  CHECK(store.find_run("r1")->params["k"] == 4);
  CHECK_FALSE(store.find_run("other").has_value());
}

TEST_CASE("torn final line is dropped and truncated on reopen") {
  ts::TempDir dir;
  {
    CheckpointStore store(dir / "s");
    store.append(record("a", TaskStatus::kCompleted, 1, 0.5));
  }
  {
    std::ofstream out(dir / "s" / "metadata.log", std::ios::app);
    out << R"({"kind":"task","run_id":"r1","task_id":"b","sta)";
  }
  {
    const CheckpointStore probe(dir / "s");
    const auto log = probe.read_log();
    CHECK(log.records.size() == 1);
  }
  CheckpointStore store(dir / "s");
  store.append(record("c", TaskStatus::kCompleted, 1, 0.25));
  const auto log = store.read_log();
  CHECK(log.records.size() == 2);
  CHECK(log.warnings.empty());
}

TEST_CASE("corrupt interior line is an integrity error") {
  ts::TempDir dir;
  fs::create_directories(dir / "s");
  ts::write_text(dir / "s" / "metadata.log", "garbage\n{\"kind\":\"run\",\"run_id\":\"x\",\"params\":{}}\n");
  const CheckpointStore store(dir / "s");
  CHECK_THROWS_AS(store.read_log(), IntegrityError);
}

TEST_CASE("saving epochs 1..3 leaves only the newest blob") {
  ts::TempDir dir;
  CheckpointStore store(dir / "s");
  for (int e = 1; e <= 3; ++e) store.save_model("run/r1/cfg0/test-/val1", e, bytes("w" + std::to_string(e)));
  CHECK_FALSE(store.has_model("run/r1/cfg0/test-/val1", 1));
  CHECK_FALSE(store.has_model("run/r1/cfg0/test-/val1", 2));
  const auto latest = store.latest_model("run/r1/cfg0/test-/val1");
  REQUIRE(latest);
  CHECK(latest->first == 3);
  CHECK(latest->second == "run/r1/cfg0/test-/val1/3.ckpt");
  CHECK(store.load_model(latest->second) == bytes("w3"));
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(store.task_blob_dir("run/r1/cfg0/test-/val1"))) {
    (void)e;
    ++files;
  }
  CHECK(files == 1);
}

TEST_CASE("crash between writing a new blob and pruning the old one") {
  ts::TempDir dir;
  CheckpointStore store(dir / "s");
  store.save_model("t", 1, bytes("one"));
  store.set_fault_hook([](FaultPoint p, const std::string&, int epoch) {
    if (p == FaultPoint::kBlobWritten && epoch == 2) throw InjectedCrash{};
  });
  CHECK_THROWS_AS(store.save_model("t", 2, bytes("two")), InjectedCrash);
  store.set_fault_hook(nullptr);
  CHECK(store.has_model("t", 1));
  CHECK(store.has_model("t", 2));
  CHECK(store.latest_model("t")->first == 2);
}

TEST_CASE("empty blobs are rejected; missing blobs fail to load") {
  ts::TempDir dir;
  CheckpointStore store(dir / "s");
  CHECK_THROWS_AS(store.save_model("t", 1, {}), UsageError);
  CHECK_THROWS_AS(store.load_model("t/9.ckpt"), Error);
  CHECK_FALSE(store.latest_model("t").has_value());
}

TEST_CASE("recovery view: completed tasks and a partial one at epoch 7") {
  ts::TempDir dir;
  CheckpointStore store(dir / "s");
  for (int i = 0; i < 5; ++i) {
    const auto id = "done" + std::to_string(i);
    store.append(record(id, TaskStatus::kStarted, 0));
    store.append(record(id, TaskStatus::kCompleted, 2, 0.1 * i));
  }
  for (int e = 1; e <= 7; ++e) {
    store.save_model("partial", e, bytes("p"));
    store.append(record("partial", TaskStatus::kEpoch, e, 0.5));
  }
  store.append(record("failing", TaskStatus::kFailed, 0));
  // Other runs do not leak into this view.
  auto foreign = record("done0", TaskStatus::kCompleted, 2, 0.9);
  foreign.run_id = "r2";
  store.append(foreign);

  const auto view = store.recovery_view("r1");
  CHECK(view.completed.size() == 5);
  CHECK(view.completed.at("done3") == doctest::Approx(0.3));
  REQUIRE(view.partial.count("partial") == 1);
  CHECK(view.partial.at("partial").first == 7);
  CHECK(view.failures.at("failing") == 1);
}

TEST_CASE("duplicate completed records are an integrity error") {
  ts::TempDir dir;
  CheckpointStore store(dir / "s");
  store.append(record("x", TaskStatus::kCompleted, 1, 0.5));
  store.append(record("x", TaskStatus::kCompleted, 1, 0.5));
  CHECK_THROWS_AS(store.recovery_view("r1"), IntegrityError);
}

TEST_CASE("status names round-trip") {
  for (auto s : {TaskStatus::kStarted, TaskStatus::kEpoch, TaskStatus::kCompleted, TaskStatus::kFailed})
    CHECK(parse_task_status(to_string(s)) == s);
  CHECK_THROWS(parse_task_status("bogus"));
}
