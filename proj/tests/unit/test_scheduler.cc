#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <atomic>
#include <future>
#include <mutex>
#include <set>
#include <thread>

#include "nestcv/error.h"
#include "nestcv/manifest.h"
#include "nestcv/partition.h"
#include "nestcv/scheduler.h"
#include "support.h"

using namespace nestcv;
namespace ts = testsupport;
using namespace std::chrono_literals;

namespace {

// Wraps the mock backend with per-task behavior scripted by the test.
class ScriptedBackend : public TrainerBackend {
 public:
  explicit ScriptedBackend(MockOptions options = {}) : mock_(options) {}
  std::string name() const override { return "scripted"; }

  TaskResult run(const TrainingTask& task, TaskContext& ctx) override {
    int attempt;
    {
      std::lock_guard lock(mu_);
      attempt = ++attempts_[task.task_id];
      starts_.push_back(task.task_id);
    }
    if (lose_on_first.count(task.task_id) && attempt == 1) throw WorkerLostError("gone");
    if (always_lose) throw WorkerLostError("gone");
    if (fail_attempts.count(task.task_id) && attempt <= fail_attempts.at(task.task_id))
      throw TrainerFailure("scripted failure");
    return mock_.run(task, ctx);
  }

  int attempts(const std::string& id) {
    std::lock_guard lock(mu_);
    return attempts_[id];
  }

  std::set<std::string> lose_on_first;
  std::map<std::string, int> fail_attempts;
  bool always_lose = false;

 private:
  MockBackend mock_;
  std::mutex mu_;
  std::map<std::string, int> attempts_;
  std::vector<std::string> starts_;
};

std::vector<TrainingTask> tasks(int n, int epochs = 1, int offset = 0) {
  std::vector<TrainingTask> out;
  for (int j = offset; j < offset + n; ++j) {
    TrainingTask t;
    t.task_id = make_task_id("r", j, std::nullopt, 1);
    t.config = {j, {}};
    t.train_folds = {0, 2};
    t.eval_fold = 1;
    t.epochs = epochs;
    out.push_back(t);
  }
  return out;
}

struct Env {
  ts::TempDir dir;
  Manifest manifest = parse_manifest(ts::blobs_manifest(30, 2, 2, 3.0, 1));
  FoldAssignment folds = assign_folds(manifest, 3, PartitionLevel::kItem, 1);
  CheckpointStore store{dir / "store"};
  TrainingData data;

  Env() {
    data.manifest = &manifest;
    data.folds = &folds;
  }

  DispatchOptions options() const {
    DispatchOptions o;
    o.run_id = "r";
    o.trainer_seed = 11;
    o.heartbeat_interval = 50ms;
    o.connect_timeout = 3000ms;
    return o;
  }
};

}  // namespace

TEST_CASE("pool parsing") {
  CHECK(WorkerPool::from_argument("local:3").total_slots() == 3);
  const auto pool = WorkerPool::parse("# comment\nw1 10.0.0.1:7000 4\nw2 10.0.0.2:7000 2\n");
  REQUIRE(pool.workers.size() == 2);
  CHECK(pool.workers[0].endpoint == "10.0.0.1:7000");
  CHECK(pool.total_slots() == 6);
  CHECK_THROWS_AS(WorkerPool::parse("w1 host 0\n"), Error);
  CHECK_THROWS_AS(WorkerPool::parse(""), Error);
  CHECK_THROWS_AS(WorkerPool::parse("w1 a:1 1\nw1 b:1 1\n"), Error);
}

TEST_CASE("phase ordering is longest first, then by id") {
  auto list = tasks(3);
  list[1].mode = TaskMode::kFinalTrain;
  list[1].eval_fold.reset();
  order_phase(list);
  CHECK(list[0].mode == TaskMode::kFinalTrain);
  CHECK(list[1].task_id < list[2].task_id);
}

TEST_CASE("empty plan completes immediately") {
  Env env;
  Dispatcher d(env.store, env.data, std::make_shared<ScriptedBackend>(), env.options());
  const auto out = d.dispatch(TaskPlan{}, WorkerPool::local(2));
  CHECK(out.results.empty());
  CHECK(out.executed == 0);
}

TEST_CASE("every task runs once and results are logged") {
  Env env;
  auto backend = std::make_shared<ScriptedBackend>();
  std::vector<ProgressEvent> events;
  std::mutex mu;
  auto opts = env.options();
  opts.on_progress = [&](const ProgressEvent& e) {
    std::lock_guard lock(mu);
    events.push_back(e);
  };
  Dispatcher d(env.store, env.data, backend, opts);
  TaskPlan plan{tasks(12), {}};
  const auto out = d.dispatch(plan, WorkerPool::local(3));
  CHECK(out.executed == 12);
  CHECK(out.results.size() == 12);
  for (const auto& t : plan.tasks) {
    CHECK(backend->attempts(t.task_id) == 1);
    CHECK(out.results.at(t.task_id).metric == mock_metric(11, t));
  }
  CHECK(env.store.recovery_view("r").completed.size() == 12);
  REQUIRE_FALSE(events.empty());
  CHECK(events.back().done == 12);
  CHECK(events.back().total == 12);

  SUBCASE("a second dispatch skips everything") {
    Dispatcher again(env.store, env.data, backend, env.options());
    const auto second = again.dispatch(plan, WorkerPool::local(3));
    CHECK(second.executed == 0);
    CHECK(second.skipped.size() == 12);
    CHECK(second.results.at(plan.tasks[4].task_id) == out.results.at(plan.tasks[4].task_id));
  }
}

TEST_CASE("a lost worker's task is requeued and finishes elsewhere") {
  Env env;
  auto backend = std::make_shared<ScriptedBackend>();
  const auto plan_tasks = tasks(6);
  backend->lose_on_first.insert(plan_tasks[2].task_id);
  Dispatcher d(env.store, env.data, backend, env.options());
  const auto out = d.dispatch(TaskPlan{plan_tasks, {}}, WorkerPool::local(3));
  CHECK(out.results.size() == 6);
  CHECK(backend->attempts(plan_tasks[2].task_id) == 2);
  std::set<std::string> workers;
  for (const auto& e : out.trace) workers.insert(e.worker_id);
  CHECK(workers.size() <= 2);
}

TEST_CASE("losing every worker is fatal") {
  Env env;
  auto backend = std::make_shared<ScriptedBackend>();
  backend->always_lose = true;
  Dispatcher d(env.store, env.data, backend, env.options());
  CHECK_THROWS_AS(d.dispatch(TaskPlan{tasks(4), {}}, WorkerPool::local(2)), Error);
}

TEST_CASE("trainer failures retry, then exhaust") {
  Env env;
  auto backend = std::make_shared<ScriptedBackend>();
  const auto plan_tasks = tasks(4);
  backend->fail_attempts[plan_tasks[0].task_id] = 1;   // recovers on retry
  backend->fail_attempts[plan_tasks[1].task_id] = 99;  // never recovers
  Dispatcher d(env.store, env.data, backend, env.options());
  const auto out = d.dispatch(TaskPlan{plan_tasks, {}}, WorkerPool::local(2));
  CHECK(out.results.count(plan_tasks[0].task_id) == 1);
  CHECK(out.failed == std::vector<std::string>{plan_tasks[1].task_id});
  CHECK(backend->attempts(plan_tasks[1].task_id) == 2);
  CHECK(out.results.size() == 3);
  CHECK(env.store.recovery_view("r").failures.at(plan_tasks[1].task_id) == 2);
}

TEST_CASE("barriers hold later phases back") {
  Env env;
  auto backend = std::make_shared<ScriptedBackend>(MockOptions{5ms});
  auto list = tasks(7);
  auto later = tasks(3, 1, 100);
  list.insert(list.end(), later.begin(), later.end());
  Dispatcher d(env.store, env.data, backend, env.options());
  const auto out = d.dispatch(TaskPlan{list, {7}}, WorkerPool::local(4));
  double phase1_end = 0, phase2_start = 1e9;
  std::set<std::string> late_ids;
  for (const auto& t : later) late_ids.insert(t.task_id);
  for (const auto& e : out.trace) {
    if (late_ids.count(e.task_id)) phase2_start = std::min(phase2_start, e.start_s);
    else phase1_end = std::max(phase1_end, e.end_s);
  }
  CHECK(phase1_end <= phase2_start);
}

TEST_CASE("list scheduling bound") {
  // One long task and seven unit tasks on two slots.
  std::vector<double> d{8, 1, 1, 1, 1, 1, 1, 1};
  CHECK(simulate_list_schedule(d, 2) == 8);
  CHECK(simulate_list_schedule(d, 1) == 15);
  // Short tasks first is worse: the long one starts late.
  std::vector<double> bad{1, 1, 1, 1, 1, 1, 1, 8};
  CHECK(simulate_list_schedule(bad, 2) > 8);
  CHECK(simulate_list_schedule({}, 3) == 0);
}

TEST_CASE("makespan report arithmetic") {
  std::vector<TraceEntry> trace{{"a", "w0", 0, 0.0, 2.0}, {"b", "w1", 0, 0.0, 1.0}, {"c", "w1", 0, 1.0, 2.0}};
  const auto r = makespan_report(trace, 2);
  CHECK(r.wall_s == doctest::Approx(2.0));
  CHECK(r.serial_s == doctest::Approx(4.0));
  CHECK(r.speedup == doctest::Approx(2.0));
  CHECK(r.max_task_s == doctest::Approx(2.0));
  CHECK(r.within_list_bound());
}

TEST_CASE("single slot gives speedup near one") {
  Env env;
  auto backend = std::make_shared<ScriptedBackend>(MockOptions{20ms});
  Dispatcher d(env.store, env.data, backend, env.options());
  const auto out = d.dispatch(TaskPlan{tasks(5), {}}, WorkerPool::local(1));
  const auto r = makespan_report(out.trace, 1);
  CHECK(r.speedup <= 1.0 + 1e-9);
  CHECK(r.speedup >= 0.9);
}

TEST_CASE("two remote workers and a local slot share one plan") {
  Env env;
  auto remote_backend = std::make_shared<ScriptedBackend>(MockOptions{20ms});
  std::promise<int> early_port, late_port;  // resolved once each worker listens

  auto serve = [&](const std::string& id, std::promise<int>& port, std::chrono::milliseconds delay) {
    std::this_thread::sleep_for(delay);
    CheckpointStore store(env.dir / "store");
    WorkerServeOptions o;
    o.worker_id = id;
    o.endpoint = "127.0.0.1:0";
    o.slots = 2;
    o.heartbeat_interval = 50ms;
    o.on_listening = [&](int p) { port.set_value(p); };
    serve_worker(o, store, env.data, *remote_backend);
  };
  std::thread early(serve, "early", std::ref(early_port), 0ms);
  const int p1 = early_port.get_future().get();

  std::thread late(serve, "late", std::ref(late_port), 0ms);
  const int p2 = late_port.get_future().get();

  WorkerPool pool;
  pool.workers.push_back({"early", "127.0.0.1:" + std::to_string(p1), 2});
  pool.workers.push_back({"late", "127.0.0.1:" + std::to_string(p2), 2});
  pool.workers.push_back({"local0", "", 1});

  auto local_backend = std::make_shared<ScriptedBackend>(MockOptions{20ms});
  Dispatcher d(env.store, env.data, local_backend, env.options());
  const auto plan_tasks = tasks(20);
  const auto out = d.dispatch(TaskPlan{plan_tasks, {}}, pool);
  early.join();
  late.join();

  CHECK(out.results.size() == 20);
  for (const auto& t : plan_tasks) CHECK(out.results.at(t.task_id).metric == mock_metric(11, t));
  std::set<std::string> workers;
  for (const auto& e : out.trace) workers.insert(e.worker_id);
  CHECK(workers.count("early") == 1);
  CHECK(workers.count("late") == 1);
  CHECK(env.store.recovery_view("r").completed.size() == 20);
}

TEST_CASE("manager keeps dialing a worker that starts after dispatch begins") {
  Env env;
  // Pick a free port, release it, and start the worker there later.
  int port = 0;
  {
    std::promise<int> probe;
    auto backend = std::make_shared<ScriptedBackend>();
    std::thread t([&] {
      CheckpointStore store(env.dir / "store");
      WorkerServeOptions o;
      o.worker_id = "probe";
      o.endpoint = "127.0.0.1:0";
      o.on_listening = [&](int p) { probe.set_value(p); };
      try {
        serve_worker(o, store, env.data, *backend);
      } catch (const Error&) {
      }
    });
    port = probe.get_future().get();
    // A manager that connects and immediately shuts down releases the probe.
    WorkerPool pool;
    pool.workers.push_back({"probe", "127.0.0.1:" + std::to_string(port), 1});
    Dispatcher d(env.store, env.data, backend, env.options());
    d.dispatch(TaskPlan{tasks(1, 1, 500), {}}, pool);
    t.join();
  }

  auto backend = std::make_shared<ScriptedBackend>(MockOptions{30ms});
  std::thread late([&] {
    std::this_thread::sleep_for(150ms);
    CheckpointStore store(env.dir / "store");
    WorkerServeOptions o;
    o.worker_id = "late";
    o.endpoint = "127.0.0.1:" + std::to_string(port);
    o.heartbeat_interval = 50ms;
    serve_worker(o, store, env.data, *backend);
  });
  WorkerPool pool;
  pool.workers.push_back({"local0", "", 1});
  pool.workers.push_back({"late", "127.0.0.1:" + std::to_string(port), 1});
  Dispatcher d(env.store, env.data, backend, env.options());
  const auto out = d.dispatch(TaskPlan{tasks(12), {}}, pool);
  late.join();
  CHECK(out.results.size() == 12);
  std::set<std::string> workers;
  for (const auto& e : out.trace) workers.insert(e.worker_id);
  CHECK(workers.count("late") == 1);
}

TEST_CASE("a worker serves successive dispatches until released") {
  Env env;
  auto backend = std::make_shared<ScriptedBackend>(MockOptions{5ms});
  std::promise<int> port;
  std::thread worker([&] {
    CheckpointStore store(env.dir / "store");
    WorkerServeOptions o;
    o.worker_id = "w";
    o.endpoint = "127.0.0.1:0";
    o.heartbeat_interval = 50ms;
    o.on_listening = [&](int p) { port.set_value(p); };
    serve_worker(o, store, env.data, *backend);
  });
  WorkerPool pool;
  pool.workers.push_back({"w", "127.0.0.1:" + std::to_string(port.get_future().get()), 1});

  auto held = env.options();
  held.release_workers = false;
  const auto first = Dispatcher(env.store, env.data, backend, held).dispatch(TaskPlan{tasks(3), {}}, pool);
  CHECK(first.results.size() == 3);
  const auto second =
      Dispatcher(env.store, env.data, backend, env.options()).dispatch(TaskPlan{tasks(3, 1, 10), {}}, pool);
  CHECK(second.results.size() == 3);
  worker.join();  // returns only because the second dispatch released it
}
