#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "nestcv/engine.h"
#include "nestcv/hpspace.h"
#include "nestcv/partition.h"

namespace nestcv {

inline constexpr int kJobSpecSchemaVersion = 1;

// A complete, explicitly seeded description of one run. Serialized as a JSON
// object; relative paths resolve against the spec file's directory.
struct JobSpec {
  int schema_version = kJobSpecSchemaVersion;
  std::string run_id;
  Algorithm algorithm = Algorithm::kNachos;
  std::string manifest;
  int k = 4;
  PartitionLevel level = PartitionLevel::kItem;
  bool stratified = false;

  std::uint64_t partition_seed = 0;
  std::uint64_t sampling_seed = 0;
  std::uint64_t trainer_seed = 0;

  // "reference" (preset axes, n sampled), "axes" (inline axes, n sampled), or
  // "configs" (config-list file, n must match its length).
  std::string space = "reference";
  std::vector<SearchAxis> axes;
  std::string configs_path;
  int n = 1;
  int epochs = 1;

  // "mock", "tiny", or "exec".
  std::string backend = "mock";
  std::vector<std::string> trainer_command;
  double trainer_timeout_s = 0;
  double mock_epoch_delay_ms = 0;

  std::string store_root = "store";
  std::string pool = "local:1";
  int retries = 1;
  double heartbeat_s = 10;

  // Checks ranges and cross-field rules (k >= 3 for nachos, ...). Throws
  // UsageError.
  void validate() const;

  nlohmann::ordered_json to_json() const;
  // Unknown keys, missing required keys, and schema mismatches throw
  // UsageError.
  static JobSpec from_json(const nlohmann::json& j);
  static JobSpec parse(const std::string& text);
  static JobSpec load(const std::filesystem::path& path);
  std::string serialize() const;

  bool operator==(const JobSpec&) const = default;
};

// Store root after applying the NESTCV_STORE_ROOT override.
std::filesystem::path effective_store_root(const JobSpec& spec,
                                           const std::filesystem::path& base_dir);
inline constexpr const char* kStoreRootEnv = "NESTCV_STORE_ROOT";

// Samples or loads the run's configurations.
std::vector<HyperparameterConfig> job_configs(const JobSpec& spec,
                                              const std::filesystem::path& base_dir);

std::shared_ptr<TrainerBackend> make_backend(const JobSpec& spec,
                                             const std::filesystem::path& base_dir);

struct JobHooks {
  std::function<void(const ProgressEvent&)> on_progress;
  // Replaces the spec's backend (tests).
  std::shared_ptr<TrainerBackend> backend;
  std::optional<WorkerPool> pool;
  FaultHook fault_hook;
};

struct JobOutcome {
  RunOutcome run;
  std::filesystem::path report_path;
  std::filesystem::path store_root;
};

// Partition, sample, dispatch both phases, write the JSON report to
// {store}/reports/{run_id}.json. Resumes from the store when the run exists.
JobOutcome execute_job(const JobSpec& spec, const std::filesystem::path& base_dir,
                       const JobHooks& hooks = {});

// Same inputs, without executing: the phase-1 tasks and the phase-2 count.
NestedPlan plan_job(const JobSpec& spec, const std::filesystem::path& base_dir);

// Run parameters recorded in the log for this spec.
RunParams run_params(const JobSpec& spec, const std::vector<HyperparameterConfig>& configs);

}  // namespace nestcv
