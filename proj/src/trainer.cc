#include "nestcv/trainer.h"

#include <thread>

#include "nestcv/error.h"
#include "nestcv/prng.h"

namespace nestcv {

using nlohmann::json;

TaskResult run_task(TrainerBackend& backend, const TrainingTask& task,
                    TaskContext& ctx) {
  task.validate();
  if (!ctx.store) throw UsageError("task context has no checkpoint store");
  if (task.resume_from_epoch > 0 &&
      !ctx.store->has_model(task.task_id, task.resume_from_epoch))
    throw TrainerFailure(task.task_id + ": no model checkpoint for resume epoch " +
                             std::to_string(task.resume_from_epoch),
                         task.resume_from_epoch);
  auto result = backend.run(task, ctx);
  if (result.task_id != task.task_id)
    throw ProtocolError("backend answered for " + result.task_id + " instead of " +
                        task.task_id);
  if (!(result.metric >= 0.0 && result.metric <= 1.0))
    throw ProtocolError(task.task_id + ": metric out of [0,1]", result.epochs_completed);
  if (result.epochs_completed != task.epochs)
    throw TrainerFailure(task.task_id + ": backend completed " +
                             std::to_string(result.epochs_completed) + " of " +
                             std::to_string(task.epochs) + " epochs",
                         result.epochs_completed);
  return result;
}

std::string mock_canonical_string(std::uint64_t seed, const TrainingTask& task) {
  std::string s = std::to_string(seed);
  s += '|';
  s += std::to_string(task.config.index);
  s += '|';
  s += to_string(task.mode);
  s += '|';
  s += task.eval_fold ? std::to_string(*task.eval_fold) : std::string("-");
  s += '|';
  for (std::size_t f = 0; f < task.train_folds.size(); ++f) {
    if (f) s += ',';
    s += std::to_string(task.train_folds[f]);
  }
  s += '|';
  s += std::to_string(task.epochs);
  return s;
}

double mock_metric_of_string(std::string_view canonical) {
  return unit_interval(fnv1a64(canonical));
}

double mock_metric(std::uint64_t seed, const TrainingTask& task) {
  return mock_metric_of_string(mock_canonical_string(seed, task));
}

TaskResult MockBackend::run(const TrainingTask& task, TaskContext& ctx) {
  TaskResult result{task.task_id, 0.0, task.resume_from_epoch, ""};
  if (task.resume_from_epoch > 0) {
    result.checkpoint_ref = ctx.store->model_ref(task.task_id, task.resume_from_epoch);
    const auto blob = ctx.store->load_model(result.checkpoint_ref);
    result.metric = json::parse(blob.begin(), blob.end()).at("metric").get<double>();
  }
  for (int epoch = task.resume_from_epoch + 1; epoch <= task.epochs; ++epoch) {
    if (ctx.cancelled()) throw TrainerFailure(task.task_id + ": cancelled", epoch - 1);
    if (options_.epoch_delay.count() > 0) std::this_thread::sleep_for(options_.epoch_delay);
    auto partial = task;
    partial.epochs = epoch;
    const double metric = mock_metric(ctx.seed, partial);
    const auto blob =
        json{{"task_id", task.task_id}, {"epoch", epoch}, {"metric", metric}}.dump();
    result.checkpoint_ref = ctx.store->save_model(task.task_id, epoch, blob);
    result.metric = metric;
    result.epochs_completed = epoch;
    if (ctx.on_epoch) ctx.on_epoch(epoch, metric, result.checkpoint_ref);
  }
  return result;
}

}  // namespace nestcv
