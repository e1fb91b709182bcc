#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "nestcv/checkpoint.h"
#include "nestcv/manifest.h"
#include "nestcv/partition.h"
#include "nestcv/task.h"

namespace nestcv {

// Read-only data shared by every task of a run.
struct TrainingData {
  const Manifest* manifest = nullptr;
  const FoldAssignment* folds = nullptr;
  // On-disk copies for external trainers.
  std::filesystem::path manifest_path;
  std::filesystem::path folds_path;
};

using EpochCallback =
    std::function<void(int epoch, double metric, const std::string& checkpoint_ref)>;

struct TaskContext {
  std::uint64_t seed = 0;  // trainer seed of the run
  const TrainingData* data = nullptr;
  CheckpointStore* store = nullptr;
  EpochCallback on_epoch;
  const std::atomic<bool>* cancel = nullptr;

  bool cancelled() const { return cancel && cancel->load(); }
};

// Contract implemented by every training backend. After each epoch a backend
// persists a model checkpoint through the store (which drops the previous
// epoch's blob) and reports the epoch through `on_epoch`.
class TrainerBackend {
 public:
  virtual ~TrainerBackend() = default;
  virtual std::string name() const = 0;
  virtual TaskResult run(const TrainingTask& task, TaskContext& ctx) = 0;
};

// Validates the task, checks the resume checkpoint, runs the backend, and
// checks the result invariants (metric in [0,1], epochs completed).
TaskResult run_task(TrainerBackend& backend, const TrainingTask& task, TaskContext& ctx);

// "{seed}|{config index}|{mode}|{eval_fold or -}|{train folds joined by ,}|{epochs}"
std::string mock_canonical_string(std::uint64_t seed, const TrainingTask& task);
// FNV-1a 64 of the canonical string, top 53 bits scaled into [0, 1).
double mock_metric(std::uint64_t seed, const TrainingTask& task);
double mock_metric_of_string(std::string_view canonical);

struct MockOptions {
  // Sleep per epoch, for scheduling experiments.
  std::chrono::microseconds epoch_delay{0};
};

// Deterministic stand-in for training: the metric depends only on task
// identity, so resumed and uninterrupted runs agree exactly.
class MockBackend : public TrainerBackend {
 public:
  explicit MockBackend(MockOptions options = {}) : options_(options) {}
  std::string name() const override { return "mock"; }
  TaskResult run(const TrainingTask& task, TaskContext& ctx) override;

 private:
  MockOptions options_;
};

// One-hidden-layer ReLU network with a softmax output, trained by mini-batch
// SGD with momentum (optionally Nesterov) on manifest feature vectors.
//   architecture  -> hidden width (ResNet50 32, InceptionV3 48, Xception 64)
//   batch_size    -> mini-batch size
//   learning_rate, decay -> lr_e = learning_rate / (1 + decay * e)
//   momentum, nesterov
// Checkpoints hold weights, momentum buffers, and the epoch counter, so a
// resumed task finishes bit-identical to an uninterrupted one.
class TinyLearnerBackend : public TrainerBackend {
 public:
  std::string name() const override { return "tiny"; }
  TaskResult run(const TrainingTask& task, TaskContext& ctx) override;

  static int hidden_width(const std::string& architecture);
};

struct ExecOptions {
  std::vector<std::string> command;
  // Longest silence tolerated from the trainer; zero disables.
  std::chrono::milliseconds timeout{0};
};

// Runs an external trainer process per task, speaking newline-delimited JSON
// over its stdin/stdout:
//   host -> trainer  {"type":"task", <task fields>, "seed", "data_path",
//                     "folds_path", "checkpoint_dir"}   later maybe {"type":"cancel"}
//   trainer -> host  {"type":"progress","task_id","epoch","metric"[,"checkpoint_ref"]}
//                    {"type":"done","task_id","metric","checkpoint_ref"}
//                    {"type":"error","task_id","message"}
class ExecBackend : public TrainerBackend {
 public:
  explicit ExecBackend(ExecOptions options);
  std::string name() const override { return "exec"; }
  TaskResult run(const TrainingTask& task, TaskContext& ctx) override;

 private:
  ExecOptions options_;
};

}  // namespace nestcv
