#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>

#include "nestcv/error.h"
#include "nestcv/trainer.h"

namespace nestcv {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

struct Child {
  pid_t pid = -1;
  int in = -1;   // our write end of the child's stdin
  int out = -1;  // our read end of the child's stdout

  ~Child() {
    if (in >= 0) ::close(in);
    if (out >= 0) ::close(out);
    if (pid > 0) {
      ::kill(pid, SIGKILL);
      int status = 0;
      ::waitpid(pid, &status, 0);
    }
  }

  // Returns the exit status (or 128+signal).
  int reap() {
    if (in >= 0) {
      ::close(in);
      in = -1;
    }
    int status = 0;
    while (::waitpid(pid, &status, 0) < 0 && errno == EINTR) {
    }
    pid = -1;
    if (WIFEXITED(status)) return WEXITSTATUS(status);
    if (WIFSIGNALED(status)) return 128 + WTERMSIG(status);
    return -1;
  }
};

void spawn(const std::vector<std::string>& command, Child& child) {
  int to_child[2], from_child[2], exec_err[2];
  if (::pipe2(to_child, O_CLOEXEC) || ::pipe2(from_child, O_CLOEXEC) ||
      ::pipe2(exec_err, O_CLOEXEC))
    throw TrainerFailure(std::string("pipe: ") + std::strerror(errno));

  std::vector<char*> argv;
  for (const auto& arg : command) argv.push_back(const_cast<char*>(arg.c_str()));
  argv.push_back(nullptr);

  const pid_t pid = ::fork();
  if (pid < 0) throw TrainerFailure(std::string("fork: ") + std::strerror(errno));
  if (pid == 0) {
    ::dup2(to_child[0], STDIN_FILENO);
    ::dup2(from_child[1], STDOUT_FILENO);
    ::execvp(argv[0], argv.data());
    const int err = errno;
    (void)!::write(exec_err[1], &err, sizeof err);
    ::_exit(127);
  }
  ::close(to_child[0]);
  ::close(from_child[1]);
  ::close(exec_err[1]);
  child.pid = pid;
  child.in = to_child[1];
  child.out = from_child[0];

  int err = 0;
  const auto n = ::read(exec_err[0], &err, sizeof err);
  ::close(exec_err[0]);
  if (n == static_cast<ssize_t>(sizeof err))
    throw TrainerFailure("cannot launch trainer '" + command.front() +
                         "': " + std::strerror(err));
}

bool write_all(int fd, const std::string& data) {
  std::size_t off = 0;
  while (off < data.size()) {
    const auto n = ::write(fd, data.data() + off, data.size() - off);
    if (n < 0) {
      if (errno == EINTR) continue;
      return false;
    }
    off += static_cast<std::size_t>(n);
  }
  return true;
}

}  // namespace

ExecBackend::ExecBackend(ExecOptions options) : options_(std::move(options)) {
  if (options_.command.empty()) throw UsageError("exec backend needs a command");
  // A trainer that dies before reading its task must not kill the host.
  ::signal(SIGPIPE, SIG_IGN);
}

TaskResult ExecBackend::run(const TrainingTask& task, TaskContext& ctx) {
  Child child;
  spawn(options_.command, child);

  json msg = to_json(task);
  msg["type"] = "task";
  msg["seed"] = ctx.seed;
  msg["data_path"] = ctx.data ? ctx.data->manifest_path.string() : std::string();
  msg["folds_path"] = ctx.data ? ctx.data->folds_path.string() : std::string();
  msg["checkpoint_dir"] = ctx.store->task_blob_dir(task.task_id).string();
  if (!write_all(child.in, msg.dump() + "\n"))
    throw TrainerFailure(task.task_id + ": trainer closed its input before the task");

  TaskResult result{task.task_id, 0.0, task.resume_from_epoch, ""};
  int last_epoch = task.resume_from_epoch;
  bool cancel_sent = false;
  std::string buffer;
  auto last_heard = Clock::now();

  auto violation = [&](const std::string& what) {
    return ProtocolError(task.task_id + ": protocol violation: " + what, last_epoch);
  };

  for (;;) {
    if (ctx.cancelled() && !cancel_sent) {
      write_all(child.in, R"({"type":"cancel"})" "\n");
      cancel_sent = true;
    }
    pollfd pfd{child.out, POLLIN, 0};
    const int rc = ::poll(&pfd, 1, 100);
    if (rc < 0 && errno != EINTR)
      throw TrainerFailure(std::string("poll: ") + std::strerror(errno), last_epoch);
    if (rc <= 0) {
      if (options_.timeout.count() > 0 && Clock::now() - last_heard > options_.timeout)
        throw TrainerFailure(task.task_id + ": trainer timed out after epoch " +
                                 std::to_string(last_epoch),
                             last_epoch);
      continue;
    }
    char chunk[4096];
    const auto n = ::read(child.out, chunk, sizeof chunk);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw TrainerFailure(std::string("read: ") + std::strerror(errno), last_epoch);
    }
    if (n == 0) {
      const int status = child.reap();
      throw TrainerFailure(task.task_id + ": trainer exited (status " +
                               std::to_string(status) + ") without a result; last epoch " +
                               std::to_string(last_epoch),
                           last_epoch);
    }
    last_heard = Clock::now();
    buffer.append(chunk, static_cast<std::size_t>(n));

    std::size_t nl;
    while ((nl = buffer.find('\n')) != std::string::npos) {
      const std::string line = buffer.substr(0, nl);
      buffer.erase(0, nl + 1);
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      json rec;
      try {
        rec = json::parse(line);
      } catch (const json::exception&) {
        throw violation("unparseable record '" + line.substr(0, 80) + "'");
      }
      if (!rec.is_object() || !rec.contains("type") || !rec["type"].is_string())
        throw violation("record without type");
      const auto type = rec["type"].get<std::string>();
      if (rec.value("task_id", std::string()) != task.task_id)
        throw violation("record for unknown task");

      if (type == "error") {
        throw TrainerFailure(task.task_id + ": trainer error: " +
                                 rec.value("message", std::string("(no message)")),
                             last_epoch);
      }
      if (!rec.contains("metric") || !rec["metric"].is_number())
        throw violation(type + " without numeric metric");
      const double metric = rec["metric"].get<double>();
      if (!(metric >= 0.0 && metric <= 1.0))
        throw violation("metric " + rec["metric"].dump() + " outside [0,1]");

      if (type == "progress") {
        if (!rec.contains("epoch") || !rec["epoch"].is_number_integer())
          throw violation("progress without epoch");
        const int epoch = rec["epoch"].get<int>();
        if (epoch <= last_epoch || epoch > task.epochs)
          throw violation("epoch " + std::to_string(epoch) + " out of order");
        last_epoch = epoch;
        result.epochs_completed = epoch;
        result.metric = metric;
        result.checkpoint_ref = rec.value("checkpoint_ref", ctx.store->model_ref(task.task_id, epoch));
        if (ctx.on_epoch) ctx.on_epoch(epoch, metric, result.checkpoint_ref);
      } else if (type == "done") {
        result.metric = metric;
        result.epochs_completed = task.epochs;
        result.checkpoint_ref = rec.value("checkpoint_ref", result.checkpoint_ref);
        child.reap();
        return result;
      } else {
        throw violation("unknown record type '" + type + "'");
      }
    }
  }
}

}  // namespace nestcv
