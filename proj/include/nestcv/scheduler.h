#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "nestcv/checkpoint.h"
#include "nestcv/task.h"
#include "nestcv/trainer.h"

namespace nestcv {

struct WorkerSpec {
  std::string worker_id;
  // Empty for an in-process worker, otherwise "host:port" of a listening
  // `worker` process.
  std::string endpoint;
  int slots = 1;
};

struct WorkerPool {
  std::vector<WorkerSpec> workers;

  int total_slots() const;
  void validate() const;

  // g in-process worker slots, one worker each.
  static WorkerPool local(int g);
  // "local:g", or a pool file path whose lines are "worker_id host:port slots"
  // ('#' comments allowed).
  static WorkerPool parse(const std::string& text);
  static WorkerPool from_argument(const std::string& arg);
};

// Ordered tasks plus phase barriers: every task before barriers[p] must be
// resolved before any task at or after it is handed out.
struct TaskPlan {
  std::vector<TrainingTask> tasks;
  std::vector<std::size_t> barriers;

  std::size_t phase_count() const { return barriers.size() + 1; }
  std::size_t phase_of(std::size_t task_pos) const;
  // Unique task ids, valid barrier positions, valid tasks.
  void validate() const;
};

// Descending nominal cost, then task id. The longest-processing-time-first
// order used within a phase.
void order_phase(std::vector<TrainingTask>& tasks);

// Thrown by an in-process backend to simulate the death of its worker: the
// in-flight task is requeued and the worker leaves the pool.
class WorkerLostError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TraceEntry {
  std::string task_id;
  std::string worker_id;
  int slot = 0;
  double start_s = 0;  // seconds since dispatch start
  double end_s = 0;
};

struct ProgressEvent {
  std::size_t phase = 0;  // 1-based
  std::size_t done = 0;
  std::size_t total = 0;
};

struct DispatchOptions {
  std::string run_id;
  std::uint64_t trainer_seed = 0;
  int retries = 1;
  std::chrono::milliseconds heartbeat_interval{10000};
  int missed_heartbeats = 3;
  // How long a remote worker link keeps dialing before it is declared dead.
  std::chrono::milliseconds connect_timeout{60000};
  // Send shutdown to remote workers when the plan is done. Off for a dispatch
  // that will be followed by another one on the same workers.
  bool release_workers = true;
  std::function<void(const ProgressEvent&)> on_progress;
};

struct DispatchOutcome {
  std::map<std::string, TaskResult> results;
  std::vector<std::string> skipped;   // already completed in the store
  std::vector<std::string> failed;    // exhausted retries
  std::vector<TraceEntry> trace;
  std::size_t executed = 0;
  double wall_s = 0;
};

// Manager side of pull-based dispatch. Workers request a task, run it, and
// report back before requesting the next one. Tasks already completed in the
// store are skipped and their stored metric returned; partially trained tasks
// resume from their latest model checkpoint. The manager is the only writer of
// the metadata log.
class Dispatcher {
 public:
  Dispatcher(CheckpointStore& store, const TrainingData& data,
             std::shared_ptr<TrainerBackend> backend, DispatchOptions options);

  // Throws Error when every worker is lost, and rethrows any fatal error
  // (storage failure, injected crash) raised while the plan was running.
  DispatchOutcome dispatch(const TaskPlan& plan, const WorkerPool& pool);

 private:
  CheckpointStore& store_;
  const TrainingData& data_;
  std::shared_ptr<TrainerBackend> backend_;
  DispatchOptions options_;
};

struct MakespanReport {
  std::map<std::string, double> busy_s;  // per worker
  double wall_s = 0;
  double serial_s = 0;     // sum of task durations
  double max_task_s = 0;
  double speedup = 0;      // serial / wall
  int slots = 1;

  // Greedy list scheduling guarantees wall <= serial/g + max task.
  bool within_list_bound(double slack_s = 0) const {
    return wall_s <= serial_s / slots + max_task_s + slack_s;
  }
};

MakespanReport makespan_report(const std::vector<TraceEntry>& trace, int slots);

// Virtual-time greedy pull schedule: tasks in the given order go to whichever
// slot frees up first (lowest slot on ties). Returns the makespan.
double simulate_list_schedule(const std::vector<double>& durations, int slots);

// Sends shutdown to every remote worker of the pool that accepts a connection
// within `timeout`. For runs that stop before their final dispatch.
void release_workers(const WorkerPool& pool, std::chrono::milliseconds timeout);

// Worker side: listens on `endpoint` and serves manager sessions one after
// another until a manager says shutdown. A session that ends without shutdown
// cancels its in-flight tasks. `slots` tasks may run concurrently.
struct WorkerServeOptions {
  std::string worker_id;
  std::string endpoint;
  int slots = 1;
  std::chrono::milliseconds heartbeat_interval{10000};
  // Called once the listening socket is bound (port may be resolved from 0).
  std::function<void(int port)> on_listening;
};
void serve_worker(const WorkerServeOptions& options, CheckpointStore& store,
                  const TrainingData& data, TrainerBackend& backend);

}  // namespace nestcv
