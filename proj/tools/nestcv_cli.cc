// Command-line front end: run, replay, worker, report, plan.

#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>

#include "CLI11.hpp"
#include "nestcv/engine.h"
#include "nestcv/error.h"
#include "nestcv/job.h"
#include "nestcv/manifest.h"
#include "nestcv/partition.h"

namespace fs = std::filesystem;
using namespace nestcv;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRunFailed = 2;

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot read " + path);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

fs::path spec_dir(const std::string& spec_path) {
  return fs::absolute(spec_path).parent_path();
}

int cmd_run(const std::string& spec_path, const std::string& pool_override, bool json_out) {
  auto spec = JobSpec::load(spec_path);
  if (!pool_override.empty()) spec.pool = pool_override;
  std::mutex out_mu;
  JobHooks hooks;
  hooks.on_progress = [&](const ProgressEvent& e) {
    std::lock_guard lock(out_mu);
    std::cout << "PROGRESS phase=" << e.phase << " done=" << e.done << "/" << e.total
              << std::endl;
  };
  JobOutcome outcome;
  try {
    outcome = execute_job(spec, spec_dir(spec_path), hooks);
  } catch (const UsageError&) {
    throw;
  } catch (const ParseError&) {
    throw;
  } catch (const IntegrityError&) {
    throw;
  } catch (const Error& e) {
    std::cerr << "run failed: " << e.what() << "\n";
    return kExitRunFailed;
  }
  const auto& run = outcome.run;
  if (run.executed == 0 && run.skipped > 0) std::cout << "all tasks skipped\n";
  std::cout << (json_out ? run.report.to_json().dump(2) + "\n" : run.report.to_text());
  std::cout << "report: " << outcome.report_path.string() << "\n";
  if (run.failed()) {
    std::cerr << "run incomplete: " << run.report.failed_tasks.size()
              << " task(s) exhausted their retries\n";
    return kExitRunFailed;
  }
  return kExitOk;
}

int cmd_replay(const std::string& matrix_path, const std::string& mode_text, bool json_out) {
  ReplayMode mode = ReplayMode::kAuto;
  if (mode_text == "nachos") mode = ReplayMode::kNachos;
  else if (mode_text == "dachos") mode = ReplayMode::kDachos;
  else if (mode_text == "tests") mode = ReplayMode::kTests;
  else if (mode_text != "auto") throw UsageError("unknown replay mode '" + mode_text + "'");
  const auto report = replay(parse_matrix(read_text(matrix_path)), mode);
  std::cout << (json_out ? report.to_json().dump(2) + "\n" : report.to_text());
  return kExitOk;
}

int cmd_report(const std::string& store_root, const std::string& run_id, bool json_out) {
  fs::path root = store_root;
  if (root.empty()) {
    const char* env = std::getenv(kStoreRootEnv);
    if (!env || !*env) throw UsageError("--store or " + std::string(kStoreRootEnv) + " is required");
    root = env;
  }
  if (!fs::exists(root / "metadata.log"))
    throw UsageError("no metadata log under " + root.string());
  const CheckpointStore store(root);
  const auto report = report_from_store(store, run_id);
  if (json_out) {
    std::cout << report.to_json().dump(2) << "\n";
  } else {
    auto pct = [](std::size_t done, std::size_t total) {
      return total ? 100.0 * static_cast<double>(done) / static_cast<double>(total) : 100.0;
    };
    std::cout << report.to_text();
    std::printf("progress: phase 1 %.1f%%, phase 2 %.1f%%\n",
                pct(report.phase1_done, report.phase1_total),
                pct(report.phase2_done, report.phase2_total));
  }
  return kExitOk;
}

int cmd_plan(const std::string& spec_path) {
  const auto spec = JobSpec::load(spec_path);
  const auto plan = plan_job(spec, spec_dir(spec_path));
  std::cout << "# phase 1: " << plan.phase1.tasks.size() << " tasks\n";
  for (const auto& t : plan.phase1.tasks) {
    std::cout << t.task_id << " " << to_string(t.mode) << " train=";
    for (std::size_t i = 0; i < t.train_folds.size(); ++i)
      std::cout << (i ? "," : "") << t.train_folds[i];
    std::cout << " eval=" << (t.eval_fold ? std::to_string(*t.eval_fold) : "-") << "\n";
  }
  std::cout << "# phase 2: " << plan.phase2_count << " tasks ("
            << (spec.algorithm == Algorithm::kNachos ? "train_test" : "final_train")
            << ", config selected after phase 1)\n";
  return kExitOk;
}

int cmd_worker(const std::string& spec_path, const std::string& endpoint,
               const std::string& worker_id, int slots, int heartbeat_ms) {
  const auto spec = JobSpec::load(spec_path);
  const auto base = spec_dir(spec_path);
  const fs::path manifest_path =
      fs::path(spec.manifest).is_absolute() ? fs::path(spec.manifest) : base / spec.manifest;
  const Manifest manifest = load_manifest(manifest_path);
  const FoldAssignment folds =
      assign_folds(manifest, spec.k, spec.level, spec.partition_seed, {spec.stratified});
  const auto root = effective_store_root(spec, base);
  CheckpointStore store(root);
  TrainingData data;
  data.manifest = &manifest;
  data.folds = &folds;
  data.manifest_path = fs::absolute(manifest_path);
  data.folds_path = fs::absolute(root / "runs" / (spec.run_id + ".folds.csv"));
  auto backend = make_backend(spec, base);

  WorkerServeOptions options;
  options.worker_id = worker_id;
  options.endpoint = endpoint;
  options.slots = slots;
  options.heartbeat_interval = std::chrono::milliseconds(heartbeat_ms);
  options.on_listening = [&](int port) {
    std::cout << "LISTENING port=" << port << std::endl;
  };
  serve_worker(options, store, data, *backend);
  std::cout << "worker " << worker_id << " shut down\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  std::signal(SIGPIPE, SIG_IGN);
  CLI::App app{"Nested cross-validation orchestration"};
  app.require_subcommand(1);

  std::string spec_path, pool, matrix_path, mode = "auto", store_root, run_id, endpoint, worker_id;
  bool json_out = false;
  int slots = 1, heartbeat_ms = 10000;

  auto* run = app.add_subcommand("run", "Run or resume a job");
  run->add_option("--spec", spec_path, "Job spec (JSON)")->required();
  run->add_option("--pool", pool, "Override the spec pool (local:g or pool file)");
  run->add_flag("--json", json_out, "Print the machine report");

  auto* rep = app.add_subcommand("replay", "Selection and statistics from a metric table");
  rep->add_option("matrix", matrix_path, "Matrix file")->required();
  rep->add_option("--mode", mode, "auto, nachos, dachos, or tests");
  rep->add_flag("--json", json_out, "Print the machine report");

  auto* worker = app.add_subcommand("worker", "Serve tasks for a manager");
  worker->add_option("--spec", spec_path, "Job spec naming data and backend")->required();
  worker->add_option("--listen", endpoint, "host:port to listen on (port 0 picks one)")->required();
  worker->add_option("--id", worker_id, "Worker id used in the pool file")->required();
  worker->add_option("--slots", slots, "Concurrent tasks")->check(CLI::PositiveNumber);
  worker->add_option("--heartbeat-ms", heartbeat_ms, "Heartbeat interval")
      ->check(CLI::PositiveNumber);

  auto* report = app.add_subcommand("report", "Rebuild a report from the metadata log");
  report->add_option("--store", store_root, "Store root (default: $NESTCV_STORE_ROOT)");
  report->add_option("--run-id", run_id, "Run id")->required();
  report->add_flag("--json", json_out, "Print the machine report");

  auto* plan = app.add_subcommand("plan", "Print the task plan without executing");
  plan->add_option("--spec", spec_path, "Job spec (JSON)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*run) return cmd_run(spec_path, pool, json_out);
    if (*rep) return cmd_replay(matrix_path, mode, json_out);
    if (*worker) return cmd_worker(spec_path, endpoint, worker_id, slots, heartbeat_ms);
    if (*report) return cmd_report(store_root, run_id, json_out);
    if (*plan) return cmd_plan(spec_path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
