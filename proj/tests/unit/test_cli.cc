#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <regex>

#include "nestcv/error.h"
#include "nestcv/job.h"
#include "support.h"

using namespace nestcv;
namespace ts = testsupport;
using nlohmann::json;

namespace {

// A small job under `dir`: blob manifest, mock backend, reference space.
json job(const ts::TempDir& dir, const std::string& algorithm = "nachos", int k = 4) {
  ts::write_text(dir / "m.csv", ts::blobs_manifest(60, 2, 2, 3.0, 7));
  return {{"schema_version", 1},
          {"run_id", "cli"},
          {"algorithm", algorithm},
          {"manifest", "m.csv"},
          {"k", k},
          {"seeds", {{"partition", 1}, {"sampling", 2}, {"trainer", 3}}},
          {"n", 3},
          {"epochs", 2},
          {"pool", "local:2"}};
}

std::string write_spec(const ts::TempDir& dir, const json& spec, const std::string& name = "job.json") {
  ts::write_text(dir / name, spec.dump(2));
  return ts::quote((dir / name).string());
}

std::string report_section(const std::string& out) {
  const auto pos = out.find("run cli");
  return pos == std::string::npos ? "" : out.substr(pos);
}

}  // namespace

TEST_CASE("run, then rerun: nothing re-executes and the report is identical") {
  ts::TempDir dir;
  const auto spec = write_spec(dir, job(dir));
  const auto first = ts::run_cli("run --spec " + spec);
  REQUIRE(first.exit_code == 0);
  CHECK(first.output.find("all tasks skipped") == std::string::npos);
  CHECK(std::regex_search(first.output, std::regex("PROGRESS phase=1 done=\\d+/36")));
  CHECK(std::regex_search(first.output, std::regex("PROGRESS phase=2 done=4/4")));
  const auto report_path = dir / "store" / "reports" / "cli.json";
  REQUIRE(std::filesystem::exists(report_path));
  const auto saved = ts::read_text(report_path);

  const auto second = ts::run_cli("run --spec " + spec);
  REQUIRE(second.exit_code == 0);
  CHECK(second.output.find("all tasks skipped") != std::string::npos);
  CHECK(ts::read_text(report_path) == saved);
  CHECK(report_section(second.output) == report_section(first.output));

  const auto from_log = ts::run_cli("report --store " + ts::quote((dir / "store").string()) +
                                    " --run-id cli --json");
  REQUIRE(from_log.exit_code == 0);
  CHECK(json::parse(from_log.output) == json::parse(saved));
}

TEST_CASE("report of an unknown run or missing store fails with exit 1") {
  ts::TempDir dir;
  CHECK(ts::run_cli("report --store " + ts::quote((dir / "nothing").string()) + " --run-id x").exit_code == 1);
  ts::run_cli("run --spec " + write_spec(dir, job(dir)));
  const auto r = ts::run_cli("report --store " + ts::quote((dir / "store").string()) + " --run-id other");
  CHECK(r.exit_code == 1);
  CHECK(r.output.find("unknown run id") != std::string::npos);
}

TEST_CASE("nachos with two folds is a usage error") {
  ts::TempDir dir;
  const auto r = ts::run_cli("run --spec " + write_spec(dir, job(dir, "nachos", 2)));
  CHECK(r.exit_code == 1);
  CHECK(r.output.find("k >= 3") != std::string::npos);
}

TEST_CASE("bad specs and arguments exit 1") {
  ts::TempDir dir;
  auto spec = job(dir);
  spec["surprise"] = true;
  CHECK(ts::run_cli("run --spec " + write_spec(dir, spec)).exit_code == 1);
  auto no_seeds = job(dir);
  no_seeds.erase("seeds");
  CHECK(ts::run_cli("run --spec " + write_spec(dir, no_seeds)).exit_code == 1);
  CHECK(ts::run_cli("run").exit_code == 1);
  CHECK(ts::run_cli("frobnicate").exit_code == 1);
  CHECK(ts::run_cli("--help").exit_code == 0);
}

TEST_CASE("replay prints the expected summaries") {
  const auto x = ts::run_cli("replay " + ts::quote(ts::fixture("nested_xray.csv").string()));
  REQUIRE(x.exit_code == 0);
  CHECK(x.output.find("0.75 ± 0.03") != std::string::npos);
  const auto k = ts::run_cli("replay --mode tests " +
                             ts::quote(ts::fixture("kidney_tests.csv").string()));
  REQUIRE(k.exit_code == 0);
  CHECK(k.output.find("0.84 ± 0.03") != std::string::npos);
  const auto j = ts::run_cli("replay --json " + ts::quote(ts::fixture("flat_xray.csv").string()));
  REQUIRE(j.exit_code == 0);
  CHECK(json::parse(j.output)["selected_config"] == 5);
}

TEST_CASE("malformed replay input names the row") {
  ts::TempDir dir;
  ts::write_text(dir / "bad.csv", "test_fold,config_index,val_fold,metric\n0,1,2,0.5\n0,1,2\n");
  const auto r = ts::run_cli("replay " + ts::quote((dir / "bad.csv").string()));
  CHECK(r.exit_code == 1);
  CHECK(r.output.find("line 3") != std::string::npos);
}

TEST_CASE("store root can be redirected through the environment") {
  ts::TempDir dir;
  const auto spec = write_spec(dir, job(dir, "dachos"));
  const auto alt = dir / "elsewhere";
  const auto r = ts::run_command("NESTCV_STORE_ROOT=" + ts::quote(alt.string()) + " " +
                                 ts::quote(ts::kCliPath.string()) + " run --spec " + spec);
  REQUIRE(r.exit_code == 0);
  CHECK(std::filesystem::exists(alt / "reports" / "cli.json"));
  CHECK_FALSE(std::filesystem::exists(dir / "store"));
  const auto rep = ts::run_command("NESTCV_STORE_ROOT=" + ts::quote(alt.string()) + " " +
                                   ts::quote(ts::kCliPath.string()) + " report --run-id cli");
  CHECK(rep.exit_code == 0);
  CHECK(rep.output.find("progress: phase 1 100.0%, phase 2 100.0%") != std::string::npos);
}

TEST_CASE("failing trainer: run exits 2 and the report shows progress") {
  ts::TempDir dir;
  auto spec = job(dir);
  spec["backend"] = {{"kind", "exec"}, {"command", {"python3", "-c", "import sys; sys.exit(3)"}}};
  spec["retries"] = 0;
  const auto r = ts::run_cli("run --spec " + write_spec(dir, spec));
  CHECK(r.exit_code == 2);
  const auto rep = ts::run_cli("report --store " + ts::quote((dir / "store").string()) + " --run-id cli");
  CHECK(rep.exit_code == 0);
  CHECK(rep.output.find("progress: phase 1 0.0%, phase 2 0.0%") != std::string::npos);
}

TEST_CASE("plan lists every phase-one task") {
  ts::TempDir dir;
  const auto r = ts::run_cli("plan --spec " + write_spec(dir, job(dir)));
  REQUIRE(r.exit_code == 0);
  CHECK(r.output.find("# phase 1: 36 tasks") != std::string::npos);
  CHECK(r.output.find("# phase 2: 4 tasks") != std::string::npos);
}

TEST_CASE("job specs round-trip") {
  ts::TempDir dir;
  auto j = job(dir);
  j["space"] = {{"kind", "axes"}, {"axes", {{{"name", "lr"}, {"choices", {"0.1", "0.01"}}}}}};
  j["backend"] = {{"kind", "exec"}, {"command", {"python3", "t.py"}}, {"timeout_s", 5.0}};
  const auto spec = JobSpec::parse(j.dump());
  const auto text = spec.serialize();
  CHECK(JobSpec::parse(text) == spec);
  CHECK(JobSpec::parse(text).serialize() == text);
  CHECK_THROWS_AS(JobSpec::parse("{"), UsageError);
}

TEST_CASE("worker process: bad endpoint, then a full session ending in shutdown") {
  ts::TempDir dir;
  const auto spec = write_spec(dir, job(dir));
  CHECK(ts::run_cli("worker --spec " + spec + " --listen nowhere --id w").exit_code == 1);

  const auto cli = ts::quote(ts::kCliPath.string());
  const auto out = ts::quote((dir / "worker.out").string());
  const auto pool = ts::quote((dir / "pool.txt").string());
  const std::string script =
      cli + " worker --spec " + spec + " --listen 127.0.0.1:0 --id w1 --slots 2 --heartbeat-ms 100 > " +
      out + " 2>&1 & pid=$!\n"
      "for i in $(seq 1 100); do grep -q LISTENING " + out + " && break; sleep 0.05; done\n"
      "port=$(sed -n 's/LISTENING port=//p' " + out + ")\n"
      "echo \"w1 127.0.0.1:$port 2\" > " + pool + "\n" +
      cli + " run --spec " + spec + " --pool " + pool + " >/dev/null; echo manager=$?\n"
      "wait $pid; echo worker=$?\n";
  const auto r = ts::run_command("sh -c " + ts::quote(script));
  CHECK(r.output.find("manager=0") != std::string::npos);
  CHECK(r.output.find("worker=0") != std::string::npos);
  CHECK(ts::read_text(dir / "worker.out").find("shut down") != std::string::npos);
}
