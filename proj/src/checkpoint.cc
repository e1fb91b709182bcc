#include "nestcv/checkpoint.h"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cstring>
#include <ctime>
#include <fstream>
#include <set>
#include <sstream>

#include "nestcv/error.h"
#include "text_util.h"

namespace nestcv {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(TaskStatus status) {
  switch (status) {
    case TaskStatus::kStarted: return "started";
    case TaskStatus::kEpoch: return "epoch";
    case TaskStatus::kCompleted: return "completed";
    case TaskStatus::kFailed: return "failed";
  }
  return "?";
}

TaskStatus parse_task_status(std::string_view text) {
  if (text == "started") return TaskStatus::kStarted;
  if (text == "epoch") return TaskStatus::kEpoch;
  if (text == "completed") return TaskStatus::kCompleted;
  if (text == "failed") return TaskStatus::kFailed;
  throw ParseError("unknown task status '" + std::string(text) + "'");
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const auto secs = std::chrono::system_clock::to_time_t(now);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                      now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&secs, &tm);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ",
                tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday, tm.tm_hour,
                tm.tm_min, tm.tm_sec, static_cast<int>(ms));
  return buf;
}

json MetadataRecord::to_json() const {
  json j{{"run_id", run_id},
         {"task_id", task_id},
         {"status", std::string(nestcv::to_string(status))},
         {"config", config},
         {"test_fold", test_fold ? json(*test_fold) : json(nullptr)},
         {"val_fold", val_fold ? json(*val_fold) : json(nullptr)},
         {"epoch", epoch},
         {"metric", metric ? json(*metric) : json(nullptr)},
         {"wall_time", wall_time}};
  if (!checkpoint_ref.empty()) j["checkpoint_ref"] = checkpoint_ref;
  if (!message.empty()) j["message"] = message;
  if (!worker_id.empty()) j["worker_id"] = worker_id;
  return j;
}

MetadataRecord MetadataRecord::from_json(const json& j) {
  MetadataRecord r;
  r.run_id = j.at("run_id").get<std::string>();
  r.task_id = j.at("task_id").get<std::string>();
  r.status = parse_task_status(j.at("status").get<std::string>());
  r.config = j.at("config").get<int>();
  if (!j.at("test_fold").is_null()) r.test_fold = j["test_fold"].get<int>();
  if (!j.at("val_fold").is_null()) r.val_fold = j["val_fold"].get<int>();
  r.epoch = j.at("epoch").get<int>();
  if (!j.at("metric").is_null()) r.metric = j["metric"].get<double>();
  r.wall_time = j.value("wall_time", std::string());
  r.checkpoint_ref = j.value("checkpoint_ref", std::string());
  r.message = j.value("message", std::string());
  r.worker_id = j.value("worker_id", std::string());
  return r;
}

CheckpointStore::CheckpointStore(fs::path root) : root_(std::move(root)) {
  std::error_code ec;
  fs::create_directories(blob_dir(), ec);
  if (ec) throw IoError("cannot create store at " + root_.string() + ": " + ec.message());

  const auto log = log_path();
  if (!fs::exists(log)) {
    std::ofstream touch(log, std::ios::app);
    if (!touch) throw IoError("cannot create " + log.string());
    return;
  }
  const auto contents = detail::read_file(log);
  if (!contents.empty() && contents.back() != '\n') {
    const auto keep = contents.rfind('\n');
    fs::resize_file(log, keep == std::string::npos ? 0 : keep + 1);
  }
}

fs::path CheckpointStore::task_blob_dir(std::string_view task_id) const {
  return blob_dir() / fs::path(std::string(task_id));
}

fs::path CheckpointStore::resolve(std::string_view ref) const {
  return blob_dir() / fs::path(std::string(ref));
}

void CheckpointStore::fault(FaultPoint point, const std::string& task_id,
                            int epoch) const {
  if (fault_hook_) fault_hook_(point, task_id, epoch);
}

void CheckpointStore::append_line(const std::string& line) {
  std::lock_guard lock(log_mu_);
  const int fd = ::open(log_path().c_str(), O_WRONLY | O_APPEND | O_CREAT | O_CLOEXEC, 0644);
  if (fd < 0) throw IoError("open metadata log: " + std::string(std::strerror(errno)));
  std::size_t off = 0;
  while (off < line.size()) {
    const auto n = ::write(fd, line.data() + off, line.size() - off);
    if (n < 0) {
      if (errno == EINTR) continue;
      const int err = errno;
      ::close(fd);
      throw IoError("append metadata log: " + std::string(std::strerror(err)));
    }
    off += static_cast<std::size_t>(n);
  }
  const int rc = ::fdatasync(fd);
  ::close(fd);
  if (rc != 0) throw IoError("fsync metadata log: " + std::string(std::strerror(errno)));
}

void CheckpointStore::append(MetadataRecord record) {
  if (record.wall_time.empty()) record.wall_time = utc_timestamp();
  append_line(record.to_json().dump() + '\n');
  fault(FaultPoint::kLogAppended, record.task_id, record.epoch);
}

void CheckpointStore::append_run(const RunRecord& run) {
  json j{{"record", "run"}, {"run_id", run.run_id}, {"params", run.params}};
  append_line(j.dump() + '\n');
}

LogContents CheckpointStore::read_log() const {
  LogContents out;
  std::string contents;
  try {
    contents = detail::read_file(log_path());
  } catch (const IoError&) {
    return out;
  }
  std::size_t pos = 0, line_no = 0;
  while (pos < contents.size()) {
    ++line_no;
    const auto nl = contents.find('\n', pos);
    const bool last = nl == std::string::npos || nl + 1 == contents.size();
    const bool torn = nl == std::string::npos;
    const auto line = contents.substr(pos, torn ? std::string::npos : nl - pos);
    pos = torn ? contents.size() : nl + 1;
    if (line.empty()) continue;
    if (torn) {
      out.warnings.push_back("metadata log line " + std::to_string(line_no) +
                             " is torn (no newline); ignored");
      continue;
    }
    try {
      const auto j = json::parse(line);
      if (j.value("record", std::string()) == "run")
        out.runs.push_back({j.at("run_id").get<std::string>(), j.at("params")});
      else
        out.records.push_back(MetadataRecord::from_json(j));
    } catch (const std::exception& e) {
      if (last) {
        out.warnings.push_back("metadata log line " + std::to_string(line_no) +
                               " unparseable; ignored as torn");
        continue;
      }
      throw IntegrityError("corrupt metadata log at line " + std::to_string(line_no) +
                           ": " + e.what());
    }
  }
  return out;
}

std::optional<RunRecord> CheckpointStore::find_run(std::string_view run_id) const {
  for (auto& run : read_log().runs)
    if (run.run_id == run_id) return run;
  return std::nullopt;
}

std::string CheckpointStore::model_ref(std::string_view task_id, int epoch) const {
  return std::string(task_id) + "/" + std::to_string(epoch) + ".ckpt";
}

bool CheckpointStore::has_model(std::string_view task_id, int epoch) const {
  return fs::exists(resolve(model_ref(task_id, epoch)));
}

namespace {

std::vector<int> blob_epochs(const fs::path& dir) {
  std::vector<int> out;
  std::error_code ec;
  for (fs::directory_iterator it(dir, ec), end; !ec && it != end; it.increment(ec)) {
    const auto name = it->path().filename().string();
    if (it->path().extension() != ".ckpt") continue;
    long long e = 0;
    if (detail::parse_int(name.substr(0, name.size() - 5), e) && e >= 0)
      out.push_back(static_cast<int>(e));
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

std::string CheckpointStore::save_model(std::string_view task_id, int epoch,
                                        std::span<const char> blob) {
  if (blob.empty()) throw UsageError("refusing to save an empty model blob");
  const auto ref = model_ref(task_id, epoch);
  const std::string id(task_id);
  detail::write_file_atomic(resolve(ref), std::string_view(blob.data(), blob.size()));
  fault(FaultPoint::kBlobWritten, id, epoch);
  for (int old : blob_epochs(task_blob_dir(task_id))) {
    if (old >= epoch) continue;
    std::error_code ec;
    fs::remove(resolve(model_ref(task_id, old)), ec);
  }
  fault(FaultPoint::kBlobPruned, id, epoch);
  return ref;
}

std::vector<char> CheckpointStore::load_model(std::string_view ref) const {
  const auto data = detail::read_file(resolve(ref));
  return {data.begin(), data.end()};
}

std::optional<std::pair<int, std::string>> CheckpointStore::latest_model(
    std::string_view task_id) const {
  const auto epochs = blob_epochs(task_blob_dir(task_id));
  if (epochs.empty()) return std::nullopt;
  return std::make_pair(epochs.back(), model_ref(task_id, epochs.back()));
}

RecoveryView CheckpointStore::recovery_view(std::string_view run_id) const {
  RecoveryView view;
  std::set<std::string> with_epochs;
  for (const auto& rec : read_log().records) {
    if (rec.run_id != run_id) continue;
    switch (rec.status) {
      case TaskStatus::kCompleted:
        if (!rec.metric)
          throw IntegrityError("completed record without metric for " + rec.task_id);
        if (!view.completed.emplace(rec.task_id, *rec.metric).second)
          throw IntegrityError("corrupt metadata log: duplicate completed record for " +
                               rec.task_id);
        view.completed_refs[rec.task_id] = rec.checkpoint_ref;
        break;
      case TaskStatus::kEpoch:
        with_epochs.insert(rec.task_id);
        break;
      case TaskStatus::kFailed:
        ++view.failures[rec.task_id];
        break;
      case TaskStatus::kStarted:
        break;
    }
  }
  for (const auto& id : with_epochs) {
    if (view.completed.count(id)) continue;
    if (auto latest = latest_model(id)) view.partial.emplace(id, *latest);
  }
  return view;
}

}  // namespace nestcv
