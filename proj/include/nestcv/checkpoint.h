#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace nestcv {

enum class TaskStatus { kStarted, kEpoch, kCompleted, kFailed };

std::string_view to_string(TaskStatus status);
TaskStatus parse_task_status(std::string_view text);

// One line of the metadata log: what happened to which (h_j, F_i, F_m) task
// and at which epoch.
struct MetadataRecord {
  std::string run_id;
  std::string task_id;
  TaskStatus status = TaskStatus::kStarted;
  int config = 0;
  std::optional<int> test_fold;
  std::optional<int> val_fold;
  int epoch = 0;
  std::optional<double> metric;
  std::string wall_time;  // UTC, ISO 8601; filled on append when empty
  std::string checkpoint_ref;
  std::string message;
  std::string worker_id;

  nlohmann::json to_json() const;
  static MetadataRecord from_json(const nlohmann::json& j);
};

// Run-level header line: the parameters a report needs besides task metrics.
struct RunRecord {
  std::string run_id;
  nlohmann::json params;
};

struct LogContents {
  std::vector<RunRecord> runs;
  std::vector<MetadataRecord> records;
  std::vector<std::string> warnings;
};

struct RecoveryView {
  std::map<std::string, double> completed;
  std::map<std::string, std::string> completed_refs;
  // task_id -> (highest epoch with a surviving model blob, its ref)
  std::map<std::string, std::pair<int, std::string>> partial;
  std::map<std::string, int> failures;
};

// Crash-injection points, used by fault-tolerance tests.
enum class FaultPoint { kLogAppended, kBlobWritten, kBlobPruned };
using FaultHook =
    std::function<void(FaultPoint point, const std::string& task_id, int epoch)>;

// Metadata log plus per-epoch model blobs under one root directory:
//   {root}/metadata.log
//   {root}/blobs/{task_id}/{epoch}.ckpt
// Blob refs are the path relative to {root}/blobs.
class CheckpointStore {
 public:
  // Creates the directory layout. A torn final log line left by a crash is
  // truncated away so later appends start on a clean line.
  explicit CheckpointStore(std::filesystem::path root);

  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path log_path() const { return root_ / "metadata.log"; }
  std::filesystem::path blob_dir() const { return root_ / "blobs"; }
  std::filesystem::path task_blob_dir(std::string_view task_id) const;
  std::filesystem::path resolve(std::string_view ref) const;

  // Appends and fsyncs before returning. Serialized internally.
  void append(MetadataRecord record);
  void append_run(const RunRecord& run);

  // Torn final lines are dropped with a warning; an unparseable line that is
  // not the last one throws IntegrityError.
  LogContents read_log() const;
  std::optional<RunRecord> find_run(std::string_view run_id) const;

  // Durably writes the epoch blob, then deletes every older blob of the task.
  // Returns the ref. Throws UsageError on an empty blob.
  std::string save_model(std::string_view task_id, int epoch,
                         std::span<const char> blob);
  std::vector<char> load_model(std::string_view ref) const;
  std::string model_ref(std::string_view task_id, int epoch) const;
  bool has_model(std::string_view task_id, int epoch) const;
  // Highest surviving epoch blob of a task.
  std::optional<std::pair<int, std::string>> latest_model(std::string_view task_id) const;

  // completed: tasks with a completed record (duplicate -> IntegrityError);
  // partial: tasks with epoch records, no completed record, and a blob.
  RecoveryView recovery_view(std::string_view run_id) const;

  void set_fault_hook(FaultHook hook) { fault_hook_ = std::move(hook); }

 private:
  void append_line(const std::string& line);
  void fault(FaultPoint point, const std::string& task_id, int epoch) const;

  std::filesystem::path root_;
  std::mutex log_mu_;
  FaultHook fault_hook_;
};

std::string utc_timestamp();

}  // namespace nestcv
