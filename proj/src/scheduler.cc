#include "nestcv/scheduler.h"

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <deque>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "nestcv/error.h"
#include "net.h"
#include "text_util.h"

namespace nestcv {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

// ---------------------------------------------------------------------------
// Pool and plan

int WorkerPool::total_slots() const {
  int g = 0;
  for (const auto& w : workers) g += w.slots;
  return g;
}

void WorkerPool::validate() const {
  if (workers.empty()) throw UsageError("worker pool is empty");
  std::set<std::string> ids;
  for (const auto& w : workers) {
    if (!ids.insert(w.worker_id).second)
      throw UsageError("duplicate worker id '" + w.worker_id + "'");
    if (w.slots < 1) throw UsageError("worker '" + w.worker_id + "' needs >= 1 slot");
  }
}

WorkerPool WorkerPool::local(int g) {
  if (g < 1) throw UsageError("local pool needs g >= 1");
  WorkerPool pool;
  for (int i = 0; i < g; ++i) pool.workers.push_back({"local-" + std::to_string(i), "", 1});
  return pool;
}

WorkerPool WorkerPool::parse(const std::string& text) {
  WorkerPool pool;
  std::istringstream in(text);
  std::string raw;
  std::size_t line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const auto hash = raw.find('#');
    if (hash != std::string::npos) raw.erase(hash);
    std::istringstream fields(raw);
    std::string id, endpoint, slots_text, extra;
    if (!(fields >> id)) continue;
    long long slots = 1;
    if (!(fields >> endpoint >> slots_text) || (fields >> extra) ||
        !detail::parse_int(slots_text, slots))
      throw ParseError("pool line must be 'worker_id host:port slots'", line);
    if (endpoint != "local") net::parse_endpoint(endpoint);
    pool.workers.push_back(
        {id, endpoint == "local" ? std::string() : endpoint, static_cast<int>(slots)});
  }
  pool.validate();
  return pool;
}

WorkerPool WorkerPool::from_argument(const std::string& arg) {
  if (arg.rfind("local:", 0) == 0) {
    long long g = 0;
    if (!detail::parse_int(arg.substr(6), g)) throw UsageError("bad pool '" + arg + "'");
    return local(static_cast<int>(g));
  }
  return parse(detail::read_file(arg));
}

std::size_t TaskPlan::phase_of(std::size_t task_pos) const {
  std::size_t phase = 0;
  for (auto b : barriers)
    if (task_pos >= b) ++phase;
  return phase;
}

void TaskPlan::validate() const {
  std::set<std::string> ids;
  for (const auto& t : tasks) {
    t.validate();
    if (!ids.insert(t.task_id).second) throw UsageError("duplicate task id " + t.task_id);
  }
  for (std::size_t b = 0; b < barriers.size(); ++b) {
    if (barriers[b] > tasks.size() || (b && barriers[b] < barriers[b - 1]))
      throw UsageError("invalid barrier position");
  }
}

void order_phase(std::vector<TrainingTask>& tasks) {
  std::stable_sort(tasks.begin(), tasks.end(), [](const auto& a, const auto& b) {
    const int ca = nominal_cost(a.mode), cb = nominal_cost(b.mode);
    if (ca != cb) return ca > cb;
    return a.task_id < b.task_id;
  });
}

// ---------------------------------------------------------------------------
// Manager state

namespace {

struct Assignment {
  enum Kind { kTask, kWait, kShutdown } kind = kWait;
  TrainingTask task;
};

class Board {
 public:
  Board(const TaskPlan& plan, std::vector<bool> resolved_at_start, CheckpointStore& store,
        const DispatchOptions& options)
      : plan_(plan), store_(store), options_(options), start_(Clock::now()) {
    const auto n = plan.tasks.size();
    state_.assign(n, State::kPending);
    attempts_.assign(n, 0);
    phase_total_.assign(plan.phase_count(), 0);
    phase_done_.assign(plan.phase_count(), 0);
    queues_.resize(plan.phase_count());
    for (std::size_t i = 0; i < n; ++i) {
      const auto phase = plan.phase_of(i);
      ++phase_total_[phase];
      position_[plan.tasks[i].task_id] = i;
      if (resolved_at_start[i]) {
        state_[i] = State::kResolved;
        ++phase_done_[phase];
      } else {
        queues_[phase].push_back(i);
        ++unresolved_;
      }
    }
  }

  double now_s() const {
    return std::chrono::duration<double>(Clock::now() - start_).count();
  }

  void emit_initial_progress() {
    for (std::size_t p = 0; p < phase_total_.size(); ++p)
      if (options_.on_progress) options_.on_progress({p + 1, phase_done_[p], phase_total_[p]});
  }

  Assignment try_request(const std::string& worker, int slot) {
    std::optional<MetadataRecord> rec;
    Assignment a;
    {
      std::lock_guard lock(mu_);
      a = next_locked(worker, slot, rec);
    }
    if (rec) log(*rec);
    return a;
  }

  Assignment request(const std::string& worker, int slot) {
    std::optional<MetadataRecord> rec;
    Assignment a;
    {
      std::unique_lock lock(mu_);
      for (;;) {
        a = next_locked(worker, slot, rec);
        if (a.kind != Assignment::kWait) break;
        cv_.wait(lock);
      }
    }
    if (rec) log(*rec);
    return a;
  }

  void progress(const std::string& worker, int slot, const std::string& task_id, int epoch,
                double metric, const std::string& ref) {
    MetadataRecord rec;
    {
      std::lock_guard lock(mu_);
      const auto pos = inflight_position(worker, slot, task_id);
      if (!pos || aborted_) return;
      rec = record_for(*pos, TaskStatus::kEpoch, worker);
    }
    rec.epoch = epoch;
    rec.metric = metric;
    rec.checkpoint_ref = ref;
    log(rec);
  }

  void done(const std::string& worker, int slot, const TaskResult& result) {
    MetadataRecord rec;
    std::size_t pos;
    {
      std::lock_guard lock(mu_);
      auto found = inflight_position(worker, slot, result.task_id);
      if (!found || aborted_) return;
      pos = *found;
      rec = record_for(pos, TaskStatus::kCompleted, worker);
    }
    rec.epoch = result.epochs_completed;
    rec.metric = result.metric;
    rec.checkpoint_ref = result.checkpoint_ref;
    // Logged before the task counts as resolved, so a crash here re-runs it.
    log(rec);
    std::lock_guard lock(mu_);
    if (aborted_) return;
    const auto& fl = inflight_.at({worker, slot});
    trace_.push_back({result.task_id, worker, slot, fl.start_s, now_s()});
    inflight_.erase({worker, slot});
    results_[result.task_id] = result;
    ++executed_;
    resolve_locked(pos);
  }

  void failed(const std::string& worker, int slot, const std::string& task_id,
              const std::string& message) {
    MetadataRecord rec;
    {
      std::lock_guard lock(mu_);
      auto found = inflight_position(worker, slot, task_id);
      if (!found || aborted_) return;
      rec = record_for(*found, TaskStatus::kFailed, worker);
      rec.message = message;
      inflight_.erase({worker, slot});
      if (attempts_[*found] > options_.retries) {
        failed_.push_back(task_id);
        resolve_locked(*found);
      } else {
        requeue_locked(*found);
      }
    }
    log(rec);
  }

  // Requeues whatever the worker (or one slot of it) was running.
  void lost(const std::string& worker, std::optional<int> slot = std::nullopt) {
    std::lock_guard lock(mu_);
    for (auto it = inflight_.begin(); it != inflight_.end();) {
      if (it->first.first == worker && (!slot || it->first.second == *slot)) {
        requeue_locked(it->second.pos);
        it = inflight_.erase(it);
      } else {
        ++it;
      }
    }
  }

  void link_up() {
    std::lock_guard lock(mu_);
    ++links_;
  }

  void link_dead() {
    std::lock_guard lock(mu_);
    if (--links_ == 0 && unresolved_ > 0 && !aborted_) {
      fatal_ = std::make_exception_ptr(
          Error("all workers lost with " + std::to_string(unresolved_) + " tasks unfinished"));
      aborted_ = true;
      cancel_.store(true);
    }
    cv_.notify_all();
  }

  void abort(std::exception_ptr error) {
    std::lock_guard lock(mu_);
    if (!aborted_) fatal_ = error;
    aborted_ = true;
    cancel_.store(true);
    cv_.notify_all();
  }

  void wait_finished() {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return aborted_ || unresolved_ == 0; });
  }

  bool finished() {
    std::lock_guard lock(mu_);
    return aborted_ || unresolved_ == 0;
  }

  const std::atomic<bool>* cancel_flag() const { return &cancel_; }
  std::exception_ptr fatal() const { return fatal_; }
  std::map<std::string, TaskResult> take_results() { return std::move(results_); }
  std::vector<TraceEntry> take_trace() { return std::move(trace_); }
  std::vector<std::string> failed_tasks() const { return failed_; }
  std::size_t executed() const { return executed_; }

 private:
  enum class State { kPending, kInflight, kResolved };
  struct Inflight {
    std::size_t pos;
    double start_s;
  };

  Assignment next_locked(const std::string& worker, int slot,
                         std::optional<MetadataRecord>& rec) {
    if (aborted_ || unresolved_ == 0) return {Assignment::kShutdown, {}};
    if (inflight_.count({worker, slot}))
      throw Error("worker " + worker + " slot " + std::to_string(slot) +
                  " requested a task while holding one");
    const auto phase = current_phase_locked();
    auto& queue = queues_[phase];
    if (queue.empty()) return {Assignment::kWait, {}};
    const auto pos = queue.front();
    queue.pop_front();
    state_[pos] = State::kInflight;
    ++attempts_[pos];
    inflight_[{worker, slot}] = {pos, now_s()};
    rec = record_for(pos, TaskStatus::kStarted, worker);
    rec->epoch = resume_epoch(pos);
    Assignment a{Assignment::kTask, plan_.tasks[pos]};
    return a;
  }

  int resume_epoch(std::size_t pos) const { return plan_.tasks[pos].resume_from_epoch; }

  std::size_t current_phase_locked() const {
    for (std::size_t p = 0; p < phase_total_.size(); ++p)
      if (phase_done_[p] < phase_total_[p]) return p;
    return phase_total_.size() - 1;
  }

  std::optional<std::size_t> inflight_position(const std::string& worker, int slot,
                                               const std::string& task_id) const {
    auto it = inflight_.find({worker, slot});
    if (it == inflight_.end() || plan_.tasks[it->second.pos].task_id != task_id)
      return std::nullopt;
    return it->second.pos;
  }

  void requeue_locked(std::size_t pos) {
    state_[pos] = State::kPending;
    queues_[plan_.phase_of(pos)].push_front(pos);
    cv_.notify_all();
  }

  void resolve_locked(std::size_t pos) {
    state_[pos] = State::kResolved;
    const auto phase = plan_.phase_of(pos);
    ++phase_done_[phase];
    --unresolved_;
    if (options_.on_progress) options_.on_progress({phase + 1, phase_done_[phase], phase_total_[phase]});
    cv_.notify_all();
  }

  MetadataRecord record_for(std::size_t pos, TaskStatus status, const std::string& worker) const {
    const auto& t = plan_.tasks[pos];
    MetadataRecord rec;
    rec.run_id = options_.run_id;
    rec.task_id = t.task_id;
    rec.status = status;
    rec.config = t.config.index;
    rec.test_fold = t.test_fold;
    rec.val_fold = t.mode == TaskMode::kTrainVal ? t.eval_fold : std::nullopt;
    rec.worker_id = worker;
    return rec;
  }

  void log(const MetadataRecord& rec) {
    try {
      store_.append(rec);
    } catch (...) {
      abort(std::current_exception());
      throw;
    }
  }

  const TaskPlan& plan_;
  CheckpointStore& store_;
  const DispatchOptions& options_;
  const Clock::time_point start_;

  std::mutex mu_;
  std::condition_variable cv_;
  std::vector<State> state_;
  std::vector<int> attempts_;
  std::vector<std::deque<std::size_t>> queues_;
  std::vector<std::size_t> phase_total_, phase_done_;
  std::map<std::string, std::size_t> position_;
  std::map<std::pair<std::string, int>, Inflight> inflight_;
  std::map<std::string, TaskResult> results_;
  std::vector<TraceEntry> trace_;
  std::vector<std::string> failed_;
  std::size_t unresolved_ = 0;
  std::size_t executed_ = 0;
  int links_ = 0;
  bool aborted_ = false;
  std::exception_ptr fatal_;
  std::atomic<bool> cancel_{false};
};

// Raises resume_from_epoch when the store already holds a later checkpoint
// than the one the manager knew about.
void verify_on_receipt(TrainingTask& task, const CheckpointStore& store) {
  if (auto latest = store.latest_model(task.task_id)) {
    if (latest->first > task.resume_from_epoch && latest->first <= task.epochs)
      task.resume_from_epoch = latest->first;
  }
}

void run_local_slot(Board& board, const std::string& worker, int slot, TrainerBackend& backend,
                    CheckpointStore& store, const TrainingData& data, std::uint64_t seed) {
  for (;;) {
    Assignment a;
    try {
      a = board.request(worker, slot);
    } catch (...) {
      board.abort(std::current_exception());
      break;
    }
    if (a.kind == Assignment::kShutdown) break;
    auto task = a.task;
    TaskContext ctx;
    ctx.seed = seed;
    ctx.data = &data;
    ctx.store = &store;
    ctx.cancel = board.cancel_flag();
    ctx.on_epoch = [&](int epoch, double metric, const std::string& ref) {
      board.progress(worker, slot, task.task_id, epoch, metric, ref);
    };
    try {
      verify_on_receipt(task, store);
      auto result = run_task(backend, task, ctx);
      board.done(worker, slot, result);
    } catch (const WorkerLostError&) {
      board.lost(worker, slot);
      break;
    } catch (const TrainerFailure& e) {
      try {
        board.failed(worker, slot, task.task_id, e.what());
      } catch (...) {
        break;
      }
    } catch (const UsageError& e) {
      try {
        board.failed(worker, slot, task.task_id, e.what());
      } catch (...) {
        break;
      }
    } catch (...) {
      board.abort(std::current_exception());
      break;
    }
  }
  board.link_dead();
}

// One remote worker: dial, serve its protocol session, and redial after a
// loss until the dispatch ends or connect_timeout passes without a session.
void run_remote_link(Board& board, const WorkerSpec& spec, const DispatchOptions& options,
                     std::atomic<bool>& stop) {
  const auto ep = net::parse_endpoint(spec.endpoint);
  auto dial_since = Clock::now();
  while (!stop.load() && !board.finished()) {
    net::Socket sock;
    try {
      sock = net::connect_to(ep);
    } catch (const IoError&) {
      if (Clock::now() - dial_since > options.connect_timeout) break;
      std::this_thread::sleep_for(std::chrono::milliseconds(100));
      continue;
    }
    auto last_heard = Clock::now();
    const auto silence_limit = options.heartbeat_interval * options.missed_heartbeats;
    std::string worker_id = spec.worker_id;
    bool shutdown_sent = false;
    try {
      for (;;) {
        if (board.finished() && !shutdown_sent) {
          if (!options.release_workers) break;
          net::send_frame(sock.fd(), json{{"type", "shutdown"}});
          shutdown_sent = true;
        }
        auto msg = net::recv_frame(sock.fd(), std::chrono::milliseconds(100));
        if (!msg) break;  // EOF
        if (msg->is_null()) {
          if (Clock::now() - last_heard > silence_limit)
            throw IoError("worker " + worker_id + " missed heartbeats");
          if (stop.load() && shutdown_sent) break;
          continue;
        }
        last_heard = Clock::now();
        const auto type = msg->value("type", std::string());
        if (type == "hello") {
          if (msg->value("worker_id", std::string()) != spec.worker_id)
            throw IoError("worker at " + spec.endpoint + " says it is '" +
                          msg->value("worker_id", std::string()) + "'");
        } else if (type == "heartbeat") {
        } else if (type == "request") {
          const int slot = msg->value("slot", 0);
          if (slot < 0 || slot >= spec.slots) throw IoError("request for unknown slot");
          auto a = board.try_request(worker_id, slot);
          json reply{{"slot", slot}};
          if (a.kind == Assignment::kTask) {
            reply["type"] = "assign";
            reply["task"] = to_json(a.task);
            reply["seed"] = options.trainer_seed;
          } else if (a.kind == Assignment::kWait) {
            reply["type"] = "wait";
          } else if (options.release_workers) {
            reply = json{{"type", "shutdown"}};
            shutdown_sent = true;
          } else {
            break;
          }
          net::send_frame(sock.fd(), reply);
        } else if (type == "progress") {
          board.progress(worker_id, msg->value("slot", 0), msg->value("task_id", std::string()),
                         msg->value("epoch", 0), msg->value("metric", 0.0),
                         msg->value("checkpoint_ref", std::string()));
        } else if (type == "done") {
          auto result = result_from_json(*msg);
          const bool bad_metric = !(result.metric >= 0.0 && result.metric <= 1.0);
          if (bad_metric)
            board.failed(worker_id, msg->value("slot", 0), result.task_id,
                         "protocol violation: metric outside [0,1]");
          else
            board.done(worker_id, msg->value("slot", 0), result);
        } else if (type == "failed") {
          board.failed(worker_id, msg->value("slot", 0), msg->value("task_id", std::string()),
                       msg->value("message", std::string("worker reported failure")));
        } else {
          throw IoError("unknown worker message '" + type + "'");
        }
      }
    } catch (const IoError&) {
    } catch (const nlohmann::json::exception&) {
    } catch (...) {
      board.abort(std::current_exception());
      break;
    }
    board.lost(worker_id);
    if (shutdown_sent || board.finished()) break;
    dial_since = Clock::now();
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Dispatcher

Dispatcher::Dispatcher(CheckpointStore& store, const TrainingData& data,
                       std::shared_ptr<TrainerBackend> backend, DispatchOptions options)
    : store_(store), data_(data), backend_(std::move(backend)), options_(std::move(options)) {}

DispatchOutcome Dispatcher::dispatch(const TaskPlan& input, const WorkerPool& pool) {
  input.validate();
  pool.validate();
  DispatchOutcome outcome;
  const auto started = Clock::now();

  TaskPlan plan = input;
  const auto view = store_.recovery_view(options_.run_id);
  std::vector<bool> resolved(plan.tasks.size(), false);
  for (std::size_t i = 0; i < plan.tasks.size(); ++i) {
    auto& task = plan.tasks[i];
    if (auto it = view.completed.find(task.task_id); it != view.completed.end()) {
      TaskResult r{task.task_id, it->second, task.epochs, ""};
      if (auto latest = store_.latest_model(task.task_id)) r.checkpoint_ref = latest->second;
      outcome.results[task.task_id] = r;
      outcome.skipped.push_back(task.task_id);
      resolved[i] = true;
    } else if (auto p = view.partial.find(task.task_id); p != view.partial.end()) {
      if (p->second.first <= task.epochs) task.resume_from_epoch = p->second.first;
    }
  }

  Board board(plan, resolved, store_, options_);
  board.emit_initial_progress();
  if (outcome.skipped.size() < plan.tasks.size()) {
    std::atomic<bool> stop{false};
    std::vector<std::thread> threads;
    for (const auto& w : pool.workers) {
      if (w.endpoint.empty()) {
        for (int s = 0; s < w.slots; ++s) {
          board.link_up();
          threads.emplace_back([&, id = w.worker_id, s] {
            run_local_slot(board, id, s, *backend_, store_, data_, options_.trainer_seed);
          });
        }
      } else {
        board.link_up();
        threads.emplace_back([&, spec = w] {
          run_remote_link(board, spec, options_, stop);
          board.link_dead();
        });
      }
    }
    board.wait_finished();
    stop.store(true);
    for (auto& t : threads) t.join();
    if (auto fatal = board.fatal()) std::rethrow_exception(fatal);
  }
  for (auto& [id, r] : board.take_results()) outcome.results[id] = r;
  outcome.failed = board.failed_tasks();
  outcome.trace = board.take_trace();
  outcome.executed = board.executed();
  outcome.wall_s = std::chrono::duration<double>(Clock::now() - started).count();
  return outcome;
}

// ---------------------------------------------------------------------------
// Makespan

MakespanReport makespan_report(const std::vector<TraceEntry>& trace, int slots) {
  MakespanReport r;
  r.slots = std::max(slots, 1);
  if (trace.empty()) return r;
  double first = trace.front().start_s, last = trace.front().end_s;
  for (const auto& e : trace) {
    const double d = e.end_s - e.start_s;
    r.busy_s[e.worker_id] += d;
    r.serial_s += d;
    r.max_task_s = std::max(r.max_task_s, d);
    first = std::min(first, e.start_s);
    last = std::max(last, e.end_s);
  }
  r.wall_s = last - first;
  r.speedup = r.wall_s > 0 ? r.serial_s / r.wall_s : 0.0;
  return r;
}

double simulate_list_schedule(const std::vector<double>& durations, int slots) {
  if (slots < 1) throw UsageError("need at least one slot");
  std::vector<double> free_at(static_cast<std::size_t>(slots), 0.0);
  double makespan = 0;
  for (double d : durations) {
    auto it = std::min_element(free_at.begin(), free_at.end());
    *it += d;
    makespan = std::max(makespan, *it);
  }
  return makespan;
}

void release_workers(const WorkerPool& pool, std::chrono::milliseconds timeout) {
  for (const auto& w : pool.workers) {
    if (w.endpoint.empty()) continue;
    const auto deadline = Clock::now() + timeout;
    for (;;) {
      try {
        auto sock = net::connect_to(net::parse_endpoint(w.endpoint));
        net::send_frame(sock.fd(), json{{"type", "shutdown"}});
        break;
      } catch (const IoError&) {
        if (Clock::now() > deadline) break;
        std::this_thread::sleep_for(std::chrono::milliseconds(100));
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Worker side

namespace {

// One manager session on an accepted connection. Returns true when the
// manager said shutdown, false when the connection ended without it.
bool serve_session(net::Socket& conn, const WorkerServeOptions& options, CheckpointStore& store,
                   const TrainingData& data, TrainerBackend& backend) {
  std::mutex write_mu;
  auto send = [&](const json& msg) {
    std::lock_guard lock(write_mu);
    net::send_frame(conn.fd(), msg);
  };

  std::mutex mu;
  std::condition_variable cv;
  std::vector<std::deque<json>> mailbox(static_cast<std::size_t>(options.slots));
  bool shutdown = false, broken = false;
  std::atomic<bool> cancel{false};

  send(json{{"type", "hello"}, {"worker_id", options.worker_id}, {"slots", options.slots}});

  std::thread reader([&] {
    try {
      for (;;) {
        auto msg = net::recv_frame(conn.fd());
        if (!msg) break;
        const auto type = msg->value("type", std::string());
        std::lock_guard lock(mu);
        if (type == "shutdown") {
          shutdown = true;
          cv.notify_all();
          return;
        }
        const int slot = msg->value("slot", -1);
        if (slot < 0 || slot >= options.slots) continue;
        mailbox[static_cast<std::size_t>(slot)].push_back(std::move(*msg));
        cv.notify_all();
      }
    } catch (const std::exception&) {
    }
    std::lock_guard lock(mu);
    broken = true;
    cancel.store(true);
    cv.notify_all();
  });

  std::thread heartbeat([&] {
    std::unique_lock lock(mu);
    while (!shutdown && !broken) {
      if (cv.wait_for(lock, options.heartbeat_interval, [&] { return shutdown || broken; }))
        break;
      lock.unlock();
      try {
        send(json{{"type", "heartbeat"}, {"worker_id", options.worker_id}});
      } catch (const std::exception&) {
      }
      lock.lock();
    }
  });

  auto slot_loop = [&](int slot) {
    for (;;) {
      json msg;
      try {
        send(json{{"type", "request"}, {"worker_id", options.worker_id}, {"slot", slot}});
      } catch (const std::exception&) {
        return;
      }
      {
        std::unique_lock lock(mu);
        auto& box = mailbox[static_cast<std::size_t>(slot)];
        cv.wait(lock, [&] { return shutdown || broken || !box.empty(); });
        if (shutdown || broken) return;
        msg = std::move(box.front());
        box.pop_front();
      }
      const auto type = msg.value("type", std::string());
      if (type == "wait") {
        std::unique_lock lock(mu);
        cv.wait_for(lock, std::chrono::milliseconds(50), [&] { return shutdown || broken; });
        continue;
      }
      if (type != "assign") continue;
      auto task = task_from_json(msg.at("task"));
      TaskContext ctx;
      ctx.seed = msg.value("seed", std::uint64_t{0});
      ctx.data = &data;
      ctx.store = &store;
      ctx.cancel = &cancel;
      ctx.on_epoch = [&](int epoch, double metric, const std::string& ref) {
        send(json{{"type", "progress"}, {"slot", slot}, {"task_id", task.task_id},
                  {"epoch", epoch}, {"metric", metric}, {"checkpoint_ref", ref}});
      };
      try {
        verify_on_receipt(task, store);
        auto result = run_task(backend, task, ctx);
        auto reply = to_json(result);
        reply["type"] = "done";
        reply["slot"] = slot;
        send(reply);
      } catch (const Error& e) {
        try {
          send(json{{"type", "failed"}, {"slot", slot}, {"task_id", task.task_id},
                    {"message", e.what()}});
        } catch (const std::exception&) {
          return;
        }
      }
    }
  };

  std::vector<std::thread> slots;
  for (int s = 0; s < options.slots; ++s) slots.emplace_back(slot_loop, s);
  for (auto& t : slots) t.join();
  {
    std::lock_guard lock(mu);
    if (!shutdown) broken = true;
    cv.notify_all();
  }
  heartbeat.join();
  conn.shutdown_both();
  reader.join();
  return shutdown;
}

}  // namespace

void serve_worker(const WorkerServeOptions& options, CheckpointStore& store,
                  const TrainingData& data, TrainerBackend& backend) {
  if (options.slots < 1) throw UsageError("worker needs >= 1 slot");
  int port = 0;
  auto listener = net::listen_on(net::parse_endpoint(options.endpoint), &port);
  if (options.on_listening) options.on_listening(port);

  // Sessions end at a phase boundary or when the manager dies; either way the
  // next manager connection starts a fresh session.
  for (;;) {
    std::optional<net::Socket> accepted;
    while (!(accepted = net::accept_one(listener, std::chrono::milliseconds(1000)))) {
    }
    if (serve_session(*accepted, options, store, data, backend)) return;
  }
}

}  // namespace nestcv
