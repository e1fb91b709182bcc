#include "nestcv/task.h"

#include <algorithm>
#include <set>

#include "nestcv/error.h"
#include "text_util.h"

namespace nestcv {

using nlohmann::json;

std::string_view to_string(TaskMode mode) {
  switch (mode) {
    case TaskMode::kTrainVal: return "train_val";
    case TaskMode::kTrainTest: return "train_test";
    case TaskMode::kFinalTrain: return "final_train";
  }
  return "?";
}

TaskMode parse_task_mode(std::string_view text) {
  if (text == "train_val") return TaskMode::kTrainVal;
  if (text == "train_test") return TaskMode::kTrainTest;
  if (text == "final_train") return TaskMode::kFinalTrain;
  throw ParseError("unknown task mode '" + std::string(text) + "'");
}

int nominal_cost(TaskMode mode) {
  switch (mode) {
    case TaskMode::kTrainVal: return 1;
    case TaskMode::kTrainTest: return 2;
    case TaskMode::kFinalTrain: return 3;
  }
  return 0;
}

void TrainingTask::validate() const {
  if (task_id.empty()) throw UsageError("task without id");
  if (epochs < 1) throw UsageError(task_id + ": epochs must be >= 1");
  if (resume_from_epoch < 0 || resume_from_epoch > epochs)
    throw UsageError(task_id + ": resume_from_epoch out of range");
  if (train_folds.empty()) throw UsageError(task_id + ": no training folds");
  if (!std::is_sorted(train_folds.begin(), train_folds.end()) ||
      std::adjacent_find(train_folds.begin(), train_folds.end()) != train_folds.end())
    throw UsageError(task_id + ": training folds must be ascending and distinct");
  if ((mode == TaskMode::kFinalTrain) == eval_fold.has_value())
    throw UsageError(task_id + ": eval fold must be present iff mode is not final_train");
  if (eval_fold && std::binary_search(train_folds.begin(), train_folds.end(), *eval_fold))
    throw UsageError(task_id + ": eval fold " + std::to_string(*eval_fold) +
                     " is also a training fold");
  if (test_fold && std::binary_search(train_folds.begin(), train_folds.end(), *test_fold))
    throw UsageError(task_id + ": test fold " + std::to_string(*test_fold) +
                     " leaks into training folds");
}

std::string make_task_id(std::string_view run_id, int config_index,
                         std::optional<int> test_fold, std::optional<int> val_fold) {
  std::string id = "run/";
  id += run_id;
  id += "/cfg" + std::to_string(config_index);
  id += "/test" + (test_fold ? std::to_string(*test_fold) : std::string("-"));
  id += "/val" + (val_fold ? std::to_string(*val_fold) : std::string("-"));
  return id;
}

std::optional<TaskIdParts> parse_task_id(std::string_view task_id) {
  const auto parts = detail::split(task_id, '/');
  if (parts.size() != 5 || parts[0] != "run") return std::nullopt;
  TaskIdParts out;
  out.run_id = std::string(parts[1]);
  auto numbered = [](std::string_view field, std::string_view prefix,
                     bool allow_dash) -> std::optional<std::optional<int>> {
    if (field.substr(0, prefix.size()) != prefix) return std::nullopt;
    field.remove_prefix(prefix.size());
    if (allow_dash && field == "-") return std::optional<int>{};
    long long v = 0;
    if (!detail::parse_int(field, v) || v < 0) return std::nullopt;
    return std::optional<int>(static_cast<int>(v));
  };
  auto cfg = numbered(parts[2], "cfg", false);
  auto test = numbered(parts[3], "test", true);
  auto val = numbered(parts[4], "val", true);
  if (!cfg || !test || !val) return std::nullopt;
  out.config_index = **cfg;
  out.test_fold = *test;
  out.val_fold = *val;
  return out;
}

json to_json(const HyperparameterConfig& config) {
  json values = json::object();
  for (const auto& [name, value] : config.values) values[name] = value;
  return json{{"index", config.index}, {"values", values}};
}

HyperparameterConfig config_from_json(const json& j) {
  HyperparameterConfig cfg;
  cfg.index = j.at("index").get<int>();
  for (const auto& [name, value] : j.at("values").items())
    cfg.values.emplace_back(name, value.get<std::string>());
  return cfg;
}

json to_json(const TrainingTask& task) {
  json j{{"task_id", task.task_id},
         {"mode", std::string(to_string(task.mode))},
         {"config", to_json(task.config)},
         {"train_folds", task.train_folds},
         {"eval_fold", task.eval_fold ? json(*task.eval_fold) : json(nullptr)},
         {"test_fold", task.test_fold ? json(*task.test_fold) : json(nullptr)},
         {"epochs", task.epochs},
         {"resume_from_epoch", task.resume_from_epoch}};
  return j;
}

TrainingTask task_from_json(const json& j) {
  TrainingTask t;
  t.task_id = j.at("task_id").get<std::string>();
  t.mode = parse_task_mode(j.at("mode").get<std::string>());
  t.config = config_from_json(j.at("config"));
  t.train_folds = j.at("train_folds").get<std::vector<int>>();
  if (j.contains("eval_fold") && !j["eval_fold"].is_null())
    t.eval_fold = j["eval_fold"].get<int>();
  if (j.contains("test_fold") && !j["test_fold"].is_null())
    t.test_fold = j["test_fold"].get<int>();
  t.epochs = j.at("epochs").get<int>();
  t.resume_from_epoch = j.value("resume_from_epoch", 0);
  return t;
}

json to_json(const TaskResult& r) {
  return json{{"task_id", r.task_id},
              {"metric", r.metric},
              {"epochs_completed", r.epochs_completed},
              {"checkpoint_ref", r.checkpoint_ref}};
}

TaskResult result_from_json(const json& j) {
  TaskResult r;
  r.task_id = j.at("task_id").get<std::string>();
  r.metric = j.at("metric").get<double>();
  r.epochs_completed = j.value("epochs_completed", 0);
  r.checkpoint_ref = j.value("checkpoint_ref", std::string());
  return r;
}

}  // namespace nestcv
