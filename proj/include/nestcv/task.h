#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "nestcv/hpspace.h"

namespace nestcv {

enum class TaskMode { kTrainVal, kTrainTest, kFinalTrain };

std::string_view to_string(TaskMode mode);
TaskMode parse_task_mode(std::string_view text);

// Scheduling weight used to order tasks inside a phase (longest first).
int nominal_cost(TaskMode mode);

// One unit of training work: config h_j trained on `train_folds` and scored
// on `eval_fold` (absent for final_train).
struct TrainingTask {
  std::string task_id;
  TaskMode mode = TaskMode::kTrainVal;
  HyperparameterConfig config;
  std::vector<int> train_folds;
  std::optional<int> eval_fold;
  // Outer test fold, when the task belongs to a cross-testing iteration.
  std::optional<int> test_fold;
  int epochs = 1;
  int resume_from_epoch = 0;

  // Throws UsageError if the task breaks its invariants.
  void validate() const;

  bool operator==(const TrainingTask&) const = default;
};

// "run/{run_id}/cfg{j}/test{i or -}/val{m or -}"
std::string make_task_id(std::string_view run_id, int config_index,
                         std::optional<int> test_fold, std::optional<int> val_fold);

struct TaskIdParts {
  std::string run_id;
  int config_index = 0;
  std::optional<int> test_fold;
  std::optional<int> val_fold;
};
std::optional<TaskIdParts> parse_task_id(std::string_view task_id);

struct TaskResult {
  std::string task_id;
  // Accuracy in [0, 1]: v_m^j for train_val, t_i for train_test, training
  // accuracy (informational) for final_train.
  double metric = 0.0;
  int epochs_completed = 0;
  std::string checkpoint_ref;

  bool operator==(const TaskResult&) const = default;
};

// The deployable model produced by a final_train task.
struct ModelArtifact {
  std::string artifact_ref;
  HyperparameterConfig config;
  std::vector<int> trained_on;
};

nlohmann::json to_json(const HyperparameterConfig& config);
HyperparameterConfig config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TrainingTask& task);
TrainingTask task_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TaskResult& result);
TaskResult result_from_json(const nlohmann::json& j);

}  // namespace nestcv
