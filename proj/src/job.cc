#include "nestcv/job.h"

#include <cstdlib>
#include <regex>
#include <set>

#include "nestcv/error.h"
#include "nestcv/manifest.h"
#include "text_util.h"

namespace nestcv {

using nlohmann::json;
using nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

void check_keys(const json& j, const char* where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw UsageError(std::string(where) + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    bool known = false;
    for (const char* a : allowed) known = known || key == a;
    if (!known) throw UsageError(std::string("unknown key '") + key + "' in " + where);
  }
}

template <typename T>
T required(const json& j, const char* key, const char* where) {
  if (!j.contains(key)) throw UsageError(std::string("missing '") + key + "' in " + where);
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw UsageError(std::string("'") + key + "' in " + where + " has the wrong type");
  }
}

template <typename T>
T optional_value(const json& j, const char* key, const char* where, T fallback) {
  if (!j.contains(key)) return fallback;
  return required<T>(j, key, where);
}

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

}  // namespace

void JobSpec::validate() const {
  if (schema_version != kJobSpecSchemaVersion)
    throw UsageError("unsupported job spec schema_version " + std::to_string(schema_version));
  static const std::regex id_re("[A-Za-z0-9_.-]+");
  if (!std::regex_match(run_id, id_re))
    throw UsageError("run_id must be non-empty and use only letters, digits, '_', '.', '-'");
  if (manifest.empty()) throw UsageError("manifest path is required");
  if (algorithm == Algorithm::kNachos && k < 3)
    throw UsageError("nachos needs k >= 3 folds, got k=" + std::to_string(k));
  if (algorithm == Algorithm::kDachos && k < 2)
    throw UsageError("dachos needs k >= 2 folds, got k=" + std::to_string(k));
  if (n < 1) throw UsageError("n must be >= 1");
  if (epochs < 1) throw UsageError("epochs must be >= 1");
  if (space != "reference" && space != "axes" && space != "configs")
    throw UsageError("space kind must be reference, axes, or configs");
  if (space == "axes") SearchSpace{axes};
  if (space == "configs" && configs_path.empty()) throw UsageError("space.path is required");
  if (backend != "mock" && backend != "tiny" && backend != "exec")
    throw UsageError("backend must be mock, tiny, or exec");
  if (backend == "exec" && trainer_command.empty())
    throw UsageError("exec backend needs backend.command");
  if (retries < 0) throw UsageError("retries must be >= 0");
  if (!(heartbeat_s > 0)) throw UsageError("heartbeat_s must be positive");
  if (trainer_timeout_s < 0 || mock_epoch_delay_ms < 0)
    throw UsageError("timeouts and delays must be >= 0");
  if (pool.empty() || store_root.empty()) throw UsageError("pool and store_root are required");
}

ordered_json JobSpec::to_json() const {
  ordered_json space_json{{"kind", space}};
  if (space == "axes") {
    ordered_json axes_json = ordered_json::array();
    for (const auto& a : axes) axes_json.push_back({{"name", a.name}, {"choices", a.choices}});
    space_json["axes"] = axes_json;
  } else if (space == "configs") {
    space_json["path"] = configs_path;
  }
  ordered_json backend_json{{"kind", backend}};
  if (backend == "exec") {
    backend_json["command"] = trainer_command;
    backend_json["timeout_s"] = trainer_timeout_s;
  } else if (backend == "mock") {
    backend_json["epoch_delay_ms"] = mock_epoch_delay_ms;
  }
  ordered_json out;
  out["schema_version"] = schema_version;
  out["run_id"] = run_id;
  out["algorithm"] = std::string(to_string(algorithm));
  out["manifest"] = manifest;
  out["k"] = k;
  out["partition"] = {{"level", std::string(to_string(level))}, {"stratified", stratified}};
  out["seeds"] = {{"partition", partition_seed}, {"sampling", sampling_seed}, {"trainer", trainer_seed}};
  out["space"] = space_json;
  out["n"] = n;
  out["epochs"] = epochs;
  out["backend"] = backend_json;
  out["store_root"] = store_root;
  out["pool"] = pool;
  out["retries"] = retries;
  out["heartbeat_s"] = heartbeat_s;
  return out;
}

JobSpec JobSpec::from_json(const json& j) {
  check_keys(j, "job spec",
             {"schema_version", "run_id", "algorithm", "manifest", "k", "partition", "seeds",
              "space", "n", "epochs", "backend", "store_root", "pool", "retries", "heartbeat_s"});
  JobSpec s;
  s.schema_version = required<int>(j, "schema_version", "job spec");
  if (s.schema_version != kJobSpecSchemaVersion)
    throw UsageError("unsupported job spec schema_version " + std::to_string(s.schema_version));
  s.run_id = required<std::string>(j, "run_id", "job spec");
  s.algorithm = parse_algorithm(required<std::string>(j, "algorithm", "job spec"));
  s.manifest = required<std::string>(j, "manifest", "job spec");
  s.k = required<int>(j, "k", "job spec");

  const auto partition = optional_value<json>(j, "partition", "job spec", json::object());
  check_keys(partition, "partition", {"level", "stratified"});
  s.level = parse_partition_level(optional_value<std::string>(partition, "level", "partition", "item"));
  s.stratified = optional_value<bool>(partition, "stratified", "partition", false);

  // Seeds are mandatory: no run depends on the wall clock.
  const auto seeds = required<json>(j, "seeds", "job spec");
  check_keys(seeds, "seeds", {"partition", "sampling", "trainer"});
  s.partition_seed = required<std::uint64_t>(seeds, "partition", "seeds");
  s.sampling_seed = required<std::uint64_t>(seeds, "sampling", "seeds");
  s.trainer_seed = required<std::uint64_t>(seeds, "trainer", "seeds");

  const auto space = optional_value<json>(j, "space", "job spec", json{{"kind", "reference"}});
  check_keys(space, "space", {"kind", "axes", "path"});
  s.space = required<std::string>(space, "kind", "space");
  if (space.contains("axes")) {
    for (const auto& a : space.at("axes")) {
      check_keys(a, "space axis", {"name", "choices"});
      s.axes.push_back({required<std::string>(a, "name", "space axis"),
                        required<std::vector<std::string>>(a, "choices", "space axis")});
    }
  }
  s.configs_path = optional_value<std::string>(space, "path", "space", "");
  s.n = required<int>(j, "n", "job spec");
  s.epochs = optional_value<int>(j, "epochs", "job spec", 1);

  const auto backend = optional_value<json>(j, "backend", "job spec", json{{"kind", "mock"}});
  check_keys(backend, "backend", {"kind", "command", "timeout_s", "epoch_delay_ms"});
  s.backend = required<std::string>(backend, "kind", "backend");
  s.trainer_command =
      optional_value<std::vector<std::string>>(backend, "command", "backend", {});
  s.trainer_timeout_s = optional_value<double>(backend, "timeout_s", "backend", 0.0);
  s.mock_epoch_delay_ms = optional_value<double>(backend, "epoch_delay_ms", "backend", 0.0);

  s.store_root = optional_value<std::string>(j, "store_root", "job spec", "store");
  s.pool = optional_value<std::string>(j, "pool", "job spec", "local:1");
  s.retries = optional_value<int>(j, "retries", "job spec", 1);
  s.heartbeat_s = optional_value<double>(j, "heartbeat_s", "job spec", 10.0);
  s.validate();
  return s;
}

JobSpec JobSpec::parse(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw UsageError(std::string("job spec is not valid JSON: ") + e.what());
  }
  return from_json(j);
}

JobSpec JobSpec::load(const fs::path& path) { return parse(detail::read_file(path)); }

std::string JobSpec::serialize() const { return to_json().dump(2) + "\n"; }

fs::path effective_store_root(const JobSpec& spec, const fs::path& base_dir) {
  if (const char* env = std::getenv(kStoreRootEnv); env && *env) return fs::path(env);
  return resolve(base_dir, spec.store_root);
}

std::vector<HyperparameterConfig> job_configs(const JobSpec& spec, const fs::path& base_dir) {
  if (spec.space == "reference") return sample_configs(reference_space(), spec.n, spec.sampling_seed);
  if (spec.space == "axes") return sample_configs(SearchSpace(spec.axes), spec.n, spec.sampling_seed);
  auto configs = load_configs(resolve(base_dir, spec.configs_path));
  if (configs.size() != static_cast<std::size_t>(spec.n))
    throw UsageError("config list has " + std::to_string(configs.size()) +
                     " entries but the spec says n=" + std::to_string(spec.n));
  return configs;
}

std::shared_ptr<TrainerBackend> make_backend(const JobSpec& spec, const fs::path& base_dir) {
  if (spec.backend == "mock") {
    MockOptions o;
    o.epoch_delay = std::chrono::microseconds(static_cast<long long>(spec.mock_epoch_delay_ms * 1000));
    return std::make_shared<MockBackend>(o);
  }
  if (spec.backend == "tiny") return std::make_shared<TinyLearnerBackend>();
  ExecOptions o;
  o.command = spec.trainer_command;
  // A relative script path next to the spec resolves like the other paths.
  if (!o.command.empty() && o.command[0].find('/') != std::string::npos)
    o.command[0] = resolve(base_dir, o.command[0]).string();
  o.timeout = std::chrono::milliseconds(static_cast<long long>(spec.trainer_timeout_s * 1000));
  return std::make_shared<ExecBackend>(o);
}

RunParams run_params(const JobSpec& spec, const std::vector<HyperparameterConfig>& configs) {
  RunParams p;
  p.run_id = spec.run_id;
  p.algorithm = spec.algorithm;
  p.k = spec.k;
  p.epochs = spec.epochs;
  p.configs = configs;
  p.metadata = json{{"partition_level", std::string(to_string(spec.level))},
                    {"stratified", spec.stratified},
                    {"seeds",
                     {{"partition", spec.partition_seed},
                      {"sampling", spec.sampling_seed},
                      {"trainer", spec.trainer_seed}}}};
  p.execution = json{{"backend", spec.backend}};
  return p;
}

NestedPlan plan_job(const JobSpec& spec, const fs::path& base_dir) {
  spec.validate();
  const auto configs = job_configs(spec, base_dir);
  return spec.algorithm == Algorithm::kNachos
             ? plan_nachos(spec.run_id, configs, spec.k, spec.epochs)
             : plan_dachos(spec.run_id, configs, spec.k, spec.epochs);
}

JobOutcome execute_job(const JobSpec& spec, const fs::path& base_dir, const JobHooks& hooks) {
  spec.validate();
  const auto manifest_path = resolve(base_dir, spec.manifest);
  const Manifest manifest = load_manifest(manifest_path);
  const FoldAssignment folds =
      assign_folds(manifest, spec.k, spec.level, spec.partition_seed, {spec.stratified});
  if (const auto violations = check_integrity(folds, manifest); !violations.empty())
    throw IntegrityError("partition integrity check failed: " + violations.front().message);
  const auto configs = job_configs(spec, base_dir);

  JobOutcome out;
  out.store_root = effective_store_root(spec, base_dir);
  CheckpointStore store(out.store_root);
  if (hooks.fault_hook) store.set_fault_hook(hooks.fault_hook);

  const auto folds_path = out.store_root / "runs" / (spec.run_id + ".folds.csv");
  fs::create_directories(folds_path.parent_path());
  detail::write_file_atomic(folds_path, format_assignment(folds));

  TrainingData data;
  data.manifest = &manifest;
  data.folds = &folds;
  data.manifest_path = fs::absolute(manifest_path);
  data.folds_path = fs::absolute(folds_path);

  const auto pool = hooks.pool ? *hooks.pool : WorkerPool::from_argument(
      spec.pool.rfind("local:", 0) == 0 ? spec.pool : resolve(base_dir, spec.pool).string());
  auto backend = hooks.backend ? hooks.backend : make_backend(spec, base_dir);

  EngineOptions options;
  options.on_progress = hooks.on_progress;
  options.retries = spec.retries;
  options.heartbeat_interval =
      std::chrono::milliseconds(static_cast<long long>(spec.heartbeat_s * 1000));
  options.trainer_seed = spec.trainer_seed;

  out.run = run_nested(run_params(spec, configs), store, data, backend, pool, options);
  out.report_path = out.store_root / "reports" / (spec.run_id + ".json");
  fs::create_directories(out.report_path.parent_path());
  detail::write_file_atomic(out.report_path, out.run.report.to_json().dump(2) + "\n");
  return out;
}

}  // namespace nestcv
