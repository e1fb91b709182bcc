#include "nestcv/engine.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include "nestcv/error.h"
#include "text_util.h"

namespace nestcv {

using nlohmann::json;

std::string_view to_string(Algorithm algorithm) {
  return algorithm == Algorithm::kNachos ? "nachos" : "dachos";
}

Algorithm parse_algorithm(std::string_view text) {
  if (text == "nachos") return Algorithm::kNachos;
  if (text == "dachos") return Algorithm::kDachos;
  throw UsageError("unknown algorithm '" + std::string(text) + "' (nachos or dachos)");
}

// ---------------------------------------------------------------------------
// Statistics and selection

namespace {
std::string fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}
}  // namespace

std::string SummaryStats::display(int decimals) const {
  return fixed(mean, decimals) + " ± " + fixed(standard_error, decimals);
}

SummaryStats summarize_tests(const std::vector<double>& t) {
  if (t.size() < 2)
    throw UsageError("summary statistics need at least 2 values, got " + std::to_string(t.size()));
  SummaryStats s;
  s.count = t.size();
  double sum = 0;
  for (double v : t) sum += v;
  s.mean = sum / static_cast<double>(s.count);
  double ss = 0;
  for (double v : t) ss += (v - s.mean) * (v - s.mean);
  s.sample_sd = std::sqrt(ss / static_cast<double>(s.count - 1));
  s.standard_error = s.sample_sd / std::sqrt(static_cast<double>(s.count));
  return s;
}

SelectionResult select_best(const std::vector<ConfigSummary>& summaries) {
  if (summaries.empty()) throw UsageError("selection needs at least one config");
  const ConfigSummary* best = nullptr;
  for (const auto& s : summaries) {
    if (!best || s.vbar > best->vbar || (s.vbar == best->vbar && s.config < best->config))
      best = &s;
  }
  SelectionResult r{best->config, best->vbar, std::nullopt};
  for (const auto& s : summaries) {
    if (&s == best) continue;
    const double gap = best->vbar - s.vbar;
    if (!r.runner_up_gap || gap < *r.runner_up_gap) r.runner_up_gap = gap;
  }
  return r;
}

std::vector<ConfigSummary> summarize_configs(const ValidationMatrix& matrix) {
  std::vector<ConfigSummary> out;
  for (const auto& [j, row] : matrix.cells) {
    if (row.empty()) continue;
    double sum = 0;
    for (const auto& [m, v] : row) sum += v;
    out.push_back({j, sum / static_cast<double>(row.size()), row.size()});
  }
  return out;
}

void check_matrix_shape(const ValidationMatrix& matrix, const std::vector<int>& configs, int k,
                        std::optional<int> skip_fold) {
  const std::string where = skip_fold ? " for test fold " + std::to_string(*skip_fold) : "";
  for (int j : configs) {
    const auto row = matrix.cells.find(j);
    for (int m = 0; m < k; ++m) {
      if (skip_fold && m == *skip_fold) continue;
      if (row == matrix.cells.end() || !row->second.count(m))
        throw IntegrityError("matrix is missing cell (j=" + std::to_string(j) +
                             ", m=" + std::to_string(m) + ")" + where);
    }
  }
  for (const auto& [j, row] : matrix.cells) {
    if (std::find(configs.begin(), configs.end(), j) == configs.end())
      throw IntegrityError("matrix has cells for unknown config " + std::to_string(j));
    for (const auto& [m, v] : row) {
      if (m < 0 || m >= k || (skip_fold && m == *skip_fold))
        throw IntegrityError("matrix cell (j=" + std::to_string(j) + ", m=" + std::to_string(m) +
                             ") is outside the fold range" + where);
    }
  }
}

// ---------------------------------------------------------------------------
// Plans

namespace {

void check_configs(const std::vector<HyperparameterConfig>& configs) {
  if (configs.empty()) throw UsageError("need at least one hyperparameter config (n >= 1)");
  std::set<int> seen;
  for (const auto& c : configs)
    if (!seen.insert(c.index).second)
      throw UsageError("duplicate config index " + std::to_string(c.index));
}

std::vector<int> folds_except(int k, std::initializer_list<int> excluded) {
  std::vector<int> out;
  for (int f = 0; f < k; ++f)
    if (std::find(excluded.begin(), excluded.end(), f) == excluded.end()) out.push_back(f);
  return out;
}

const HyperparameterConfig& config_by_index(const std::vector<HyperparameterConfig>& configs,
                                            int index) {
  for (const auto& c : configs)
    if (c.index == index) return c;
  throw UsageError("no config with index " + std::to_string(index));
}

}  // namespace

NestedPlan plan_nachos(const std::string& run_id, const std::vector<HyperparameterConfig>& configs,
                       int k, int epochs) {
  if (k < 3) throw UsageError("nachos needs k >= 3 folds (inner training needs k-2 >= 1), got k=" +
                              std::to_string(k));
  check_configs(configs);
  NestedPlan plan;
  plan.algorithm = Algorithm::kNachos;
  for (int i = 0; i < k; ++i) {
    for (const auto& c : configs) {
      for (int m = 0; m < k; ++m) {
        if (m == i) continue;
        TrainingTask t;
        t.task_id = make_task_id(run_id, c.index, i, m);
        t.mode = TaskMode::kTrainVal;
        t.config = c;
        t.train_folds = folds_except(k, {i, m});
        t.eval_fold = m;
        t.test_fold = i;
        t.epochs = epochs;
        t.validate();
        plan.phase1.tasks.push_back(std::move(t));
      }
    }
  }
  order_phase(plan.phase1.tasks);
  plan.phase2_count = static_cast<std::size_t>(k);
  return plan;
}

NestedPlan plan_dachos(const std::string& run_id, const std::vector<HyperparameterConfig>& configs,
                       int k, int epochs) {
  if (k < 2) throw UsageError("dachos needs k >= 2 folds, got k=" + std::to_string(k));
  check_configs(configs);
  NestedPlan plan;
  plan.algorithm = Algorithm::kDachos;
  for (const auto& c : configs) {
    for (int m = 0; m < k; ++m) {
      TrainingTask t;
      t.task_id = make_task_id(run_id, c.index, std::nullopt, m);
      t.mode = TaskMode::kTrainVal;
      t.config = c;
      t.train_folds = folds_except(k, {m});
      t.eval_fold = m;
      t.epochs = epochs;
      t.validate();
      plan.phase1.tasks.push_back(std::move(t));
    }
  }
  order_phase(plan.phase1.tasks);
  plan.phase2_count = 1;
  return plan;
}

TaskPlan phase2_tasks(Algorithm algorithm, const std::string& run_id,
                      const std::vector<HyperparameterConfig>& configs, int k, int epochs,
                      const std::vector<int>& jstar) {
  TaskPlan plan;
  if (algorithm == Algorithm::kNachos) {
    if (jstar.size() != static_cast<std::size_t>(k))
      throw UsageError("need one selected config per test fold");
    for (int i = 0; i < k; ++i) {
      TrainingTask t;
      t.task_id = make_task_id(run_id, jstar[static_cast<std::size_t>(i)], i, std::nullopt);
      t.mode = TaskMode::kTrainTest;
      t.config = config_by_index(configs, jstar[static_cast<std::size_t>(i)]);
      t.train_folds = folds_except(k, {i});
      t.eval_fold = i;
      t.test_fold = i;
      t.epochs = epochs;
      t.validate();
      plan.tasks.push_back(std::move(t));
    }
  } else {
    if (jstar.size() != 1) throw UsageError("dachos selects exactly one config");
    TrainingTask t;
    t.task_id = make_task_id(run_id, jstar[0], std::nullopt, std::nullopt);
    t.mode = TaskMode::kFinalTrain;
    t.config = config_by_index(configs, jstar[0]);
    t.train_folds = folds_except(k, {});
    t.epochs = epochs;
    t.validate();
    plan.tasks.push_back(std::move(t));
  }
  order_phase(plan.tasks);
  return plan;
}

// ---------------------------------------------------------------------------
// Reports

json RunParams::to_json() const {
  json configs_json = json::array();
  for (const auto& c : configs) configs_json.push_back(nestcv::to_json(c));
  return json{{"run_id", run_id},   {"algorithm", std::string(to_string(algorithm))},
              {"k", k},             {"epochs", epochs},
              {"configs", configs_json}, {"metadata", metadata},
              {"execution", execution}};
}

RunParams RunParams::from_json(const json& j) {
  RunParams p;
  p.run_id = j.at("run_id").get<std::string>();
  p.algorithm = parse_algorithm(j.at("algorithm").get<std::string>());
  p.k = j.at("k").get<int>();
  p.epochs = j.at("epochs").get<int>();
  for (const auto& c : j.at("configs")) p.configs.push_back(config_from_json(c));
  p.metadata = j.value("metadata", json::object());
  p.execution = j.value("execution", json::object());
  return p;
}

ReportState build_report(const RunParams& params, const std::map<std::string, double>& completed,
                         const std::map<std::string, std::string>& refs,
                         const std::map<std::string, int>& failures) {
  ReportState r;
  r.params = params;
  const int k = params.k;
  const auto n = params.configs.size();
  auto metric = [&](const std::string& id) -> std::optional<double> {
    auto it = completed.find(id);
    if (it == completed.end()) return std::nullopt;
    return it->second;
  };

  if (params.algorithm == Algorithm::kNachos) {
    r.phase1_total = static_cast<std::size_t>(k * (k - 1)) * n;
    r.phase2_total = static_cast<std::size_t>(k);
    std::vector<double> tests;
    for (int i = 0; i < k; ++i) {
      FoldOutcome fold;
      fold.test_fold = i;
      ValidationMatrix matrix;
      std::size_t cells = 0;
      for (const auto& c : params.configs) {
        for (int m = 0; m < k; ++m) {
          if (m == i) continue;
          if (auto v = metric(make_task_id(params.run_id, c.index, i, m))) {
            matrix.cells[c.index][m] = *v;
            ++cells;
          }
        }
      }
      r.phase1_done += cells;
      if (cells == static_cast<std::size_t>(k - 1) * n) {
        fold.summaries = summarize_configs(matrix);
        fold.selection = select_best(fold.summaries);
        fold.test_metric =
            metric(make_task_id(params.run_id, fold.selection->jstar, i, std::nullopt));
        if (fold.test_metric) {
          ++r.phase2_done;
          tests.push_back(*fold.test_metric);
        }
      }
      r.folds.push_back(std::move(fold));
    }
    if (tests.size() == static_cast<std::size_t>(k)) r.test_stats = summarize_tests(tests);
  } else {
    r.phase1_total = static_cast<std::size_t>(k) * n;
    r.phase2_total = 1;
    ValidationMatrix matrix;
    for (const auto& c : params.configs) {
      for (int m = 0; m < k; ++m) {
        if (auto v = metric(make_task_id(params.run_id, c.index, std::nullopt, m))) {
          matrix.cells[c.index][m] = *v;
          ++r.phase1_done;
        }
      }
    }
    if (r.phase1_done == r.phase1_total) {
      r.summaries = summarize_configs(matrix);
      r.selection = select_best(r.summaries);
      const auto id = make_task_id(params.run_id, r.selection->jstar, std::nullopt, std::nullopt);
      if (auto v = metric(id)) {
        ++r.phase2_done;
        r.final_train_metric = *v;
        ModelArtifact m;
        auto ref = refs.find(id);
        m.artifact_ref = ref == refs.end() ? std::string() : ref->second;
        m.config = config_by_index(params.configs, r.selection->jstar);
        m.trained_on = folds_except(k, {});
        r.model = std::move(m);
      }
    }
  }

  for (const auto& [id, count] : failures)
    if (count > 0 && !completed.count(id)) r.failed_tasks.push_back(id);
  return r;
}

namespace {

json stats_json(const SummaryStats& s) {
  return json{{"count", s.count},
              {"mean", s.mean},
              {"sample_sd", s.sample_sd},
              {"standard_error", s.standard_error},
              {"display", s.display()}};
}

json summaries_json(const std::vector<ConfigSummary>& summaries) {
  json out = json::array();
  for (const auto& s : summaries)
    out.push_back(json{{"config", s.config}, {"vbar", s.vbar}, {"folds", s.folds}});
  return out;
}

void put_selection(json& out, const SelectionResult& s) {
  out["selected_config"] = s.jstar;
  out["vbar"] = s.vbar_star;
  out["runner_up_gap"] = s.runner_up_gap ? json(*s.runner_up_gap) : json(nullptr);
}

}  // namespace

json ReportState::to_json() const {
  json out = json::object();
  out["format"] = "nestcv-report";
  out["version"] = kReportVersion;
  out["run_id"] = params.run_id;
  out["algorithm"] = std::string(to_string(params.algorithm));
  out["k"] = params.k;
  out["n"] = params.configs.size();
  out["epochs"] = params.epochs;
  out["metadata"] = params.metadata;
  out["status"] = complete() ? "complete" : (failed_tasks.empty() ? "incomplete" : "failed");
  out["progress"] = json{{"phase1", {{"done", phase1_done}, {"total", phase1_total}}},
                         {"phase2", {{"done", phase2_done}, {"total", phase2_total}}}};
  if (params.algorithm == Algorithm::kNachos) {
    json folds_json = json::array();
    for (const auto& f : folds) {
      json fj{{"test_fold", f.test_fold}};
      if (!f.summaries.empty()) fj["configs"] = summaries_json(f.summaries);
      if (f.selection) put_selection(fj, *f.selection);
      else if (f.declared_config) fj["selected_config"] = *f.declared_config;
      fj["test_metric"] = f.test_metric ? json(*f.test_metric) : json(nullptr);
      folds_json.push_back(std::move(fj));
    }
    out["folds"] = std::move(folds_json);
    out["test_stats"] = test_stats ? stats_json(*test_stats) : json(nullptr);
  } else {
    if (!summaries.empty()) out["configs"] = summaries_json(summaries);
    if (selection) put_selection(out, *selection);
    if (model) {
      out["model"] = json{{"artifact_ref", model->artifact_ref},
                          {"config", nestcv::to_json(model->config)},
                          {"trained_on", model->trained_on}};
      out["final_train_metric"] = *final_train_metric;
    }
  }
  if (!failed_tasks.empty()) out["failed_tasks"] = failed_tasks;
  return out;
}

std::string ReportState::to_text() const {
  std::ostringstream out;
  out << "run " << params.run_id << " (" << to_string(params.algorithm) << ", k=" << params.k
      << ", n=" << params.configs.size() << ")\n";
  out << "phase 1: " << phase1_done << "/" << phase1_total << " tasks, phase 2: " << phase2_done
      << "/" << phase2_total << " tasks\n";
  if (params.algorithm == Algorithm::kNachos) {
    for (const auto& f : folds) {
      out << "test fold " << f.test_fold << ":";
      if (f.selection)
        out << " best h_" << f.selection->jstar << " (mean validation "
            << fixed(f.selection->vbar_star, 2) << ")";
      else if (f.declared_config)
        out << " h_" << *f.declared_config;
      if (f.test_metric) out << " test " << fixed(*f.test_metric, 2);
      out << "\n";
    }
    if (test_stats)
      out << "test accuracy: " << test_stats->display() << " (sd "
          << fixed(test_stats->sample_sd, 2) << ", n=" << test_stats->count << ")\n";
  } else {
    for (const auto& s : summaries)
      out << "h_" << s.config << ": mean validation " << fixed(s.vbar, 2) << "\n";
    if (selection) out << "best: h_" << selection->jstar << "\n";
    if (model) out << "model: " << model->artifact_ref << "\n";
  }
  for (const auto& id : failed_tasks) out << "failed: " << id << "\n";
  return out.str();
}

ReportState report_from_store(const CheckpointStore& store, const std::string& run_id) {
  const auto run = store.find_run(run_id);
  if (!run) throw UsageError("unknown run id '" + run_id + "' in " + store.root().string());
  const auto params = RunParams::from_json(run->params);
  const auto view = store.recovery_view(run_id);
  return build_report(params, view.completed, view.completed_refs, view.failures);
}

// ---------------------------------------------------------------------------
// Live runs

RunOutcome run_nested(const RunParams& params, CheckpointStore& store, const TrainingData& data,
                      std::shared_ptr<TrainerBackend> backend, const WorkerPool& pool,
                      const EngineOptions& options) {
  if (params.epochs < 1) throw UsageError("epochs must be >= 1");
  const auto plan = params.algorithm == Algorithm::kNachos
                        ? plan_nachos(params.run_id, params.configs, params.k, params.epochs)
                        : plan_dachos(params.run_id, params.configs, params.k, params.epochs);

  const json params_json = params.to_json();
  if (auto existing = store.find_run(params.run_id)) {
    if (existing->params != params_json)
      throw UsageError("run id '" + params.run_id +
                       "' already exists in the store with different parameters");
  } else {
    store.append_run({params.run_id, params_json});
  }

  DispatchOptions dopt;
  dopt.run_id = params.run_id;
  dopt.trainer_seed = options.trainer_seed;
  dopt.retries = options.retries;
  dopt.heartbeat_interval = options.heartbeat_interval;
  dopt.connect_timeout = options.connect_timeout;
  auto phase_progress = [&](std::size_t phase) {
    return [&, phase](const ProgressEvent& e) {
      if (options.on_progress) options.on_progress({phase, e.done, e.total});
    };
  };

  RunOutcome outcome;
  dopt.on_progress = phase_progress(1);
  dopt.release_workers = false;  // remote workers stay for phase 2
  {
    Dispatcher dispatcher(store, data, backend, dopt);
    const auto d = dispatcher.dispatch(plan.phase1, pool);
    outcome.executed += d.executed;
    outcome.skipped += d.skipped.size();
  }
  auto report = report_from_store(store, params.run_id);
  if (report.phase1_done < report.phase1_total) {
    release_workers(pool, std::chrono::milliseconds(2000));
    outcome.report = std::move(report);
    return outcome;
  }

  std::vector<int> jstar;
  if (params.algorithm == Algorithm::kNachos)
    for (const auto& f : report.folds) jstar.push_back(f.selection->jstar);
  else
    jstar.push_back(report.selection->jstar);
  const auto phase2 =
      phase2_tasks(params.algorithm, params.run_id, params.configs, params.k, params.epochs, jstar);
  dopt.on_progress = phase_progress(2);
  dopt.release_workers = true;
  {
    Dispatcher dispatcher(store, data, backend, dopt);
    const auto d = dispatcher.dispatch(phase2, pool);
    outcome.executed += d.executed;
    outcome.skipped += d.skipped.size();
  }
  outcome.report = report_from_store(store, params.run_id);
  return outcome;
}

// ---------------------------------------------------------------------------
// Replay

std::vector<MatrixRow> parse_matrix(const std::string& text) {
  std::vector<MatrixRow> rows;
  std::istringstream in(text);
  std::string raw;
  std::size_t line = 0;
  auto fold = [&](std::string_view field, const char* what) -> std::optional<int> {
    if (field == "-") return std::nullopt;
    long long v = 0;
    if (!detail::parse_int(field, v) || v < 0)
      throw ParseError(std::string("bad ") + what + " '" + std::string(field) + "'", line);
    return static_cast<int>(v);
  };
  while (std::getline(in, raw)) {
    ++line;
    const auto text_line = detail::trim(raw);
    if (text_line.empty() || text_line.front() == '#') continue;
    if (text_line.rfind("test_fold", 0) == 0) continue;  // header
    const auto fields = detail::split(text_line, ',');
    if (fields.size() != 4)
      throw ParseError("expected 4 fields test_fold,config_index,val_fold,metric, got " +
                           std::to_string(fields.size()),
                       line);
    MatrixRow row;
    row.line = line;
    row.test_fold = fold(detail::trim(fields[0]), "test fold");
    row.config = fold(detail::trim(fields[1]), "config index");
    row.val_fold = fold(detail::trim(fields[2]), "validation fold");
    if (!detail::parse_double(detail::trim(fields[3]), row.metric) ||
        !(row.metric >= 0.0 && row.metric <= 1.0))
      throw ParseError("metric '" + std::string(detail::trim(fields[3])) + "' is not in [0,1]",
                       line);
    if (!row.test_fold && !row.val_fold)
      throw ParseError("row needs a test fold or a validation fold", line);
    if (row.val_fold && !row.config)
      throw ParseError("validation cell needs a config index", line);
    if (row.test_fold && row.val_fold && *row.test_fold == *row.val_fold)
      throw ParseError("validation fold equals the test fold", line);
    rows.push_back(row);
  }
  return rows;
}

namespace {

std::string cell_key(const MatrixRow& r) {
  auto f = [](std::optional<int> v) { return v ? std::to_string(*v) : std::string("-"); };
  return f(r.test_fold) + "," + (r.val_fold ? f(r.config) : std::string("*")) + "," +
         f(r.val_fold);
}

}  // namespace

ReportState replay(const std::vector<MatrixRow>& rows, ReplayMode mode) {
  if (rows.empty()) throw IntegrityError("matrix has no rows");
  {
    std::map<std::string, std::size_t> seen;
    for (const auto& r : rows) {
      auto [it, fresh] = seen.emplace(cell_key(r), r.line);
      if (!fresh)
        throw IntegrityError("duplicate cell on line " + std::to_string(r.line) +
                             " (first on line " + std::to_string(it->second) + ")");
    }
  }
  if (mode == ReplayMode::kAuto) {
    mode = ReplayMode::kTests;
    for (const auto& r : rows) {
      if (r.val_fold && !r.test_fold) mode = ReplayMode::kDachos;
      if (r.val_fold && r.test_fold && mode != ReplayMode::kDachos) mode = ReplayMode::kNachos;
    }
  }

  RunParams params;
  params.run_id = "replay";
  params.metadata = json{{"source", "replay"}};
  std::set<int> config_set;
  int k = 0;
  for (const auto& r : rows) {
    if (r.val_fold && r.config) config_set.insert(*r.config);
    if (r.test_fold) k = std::max(k, *r.test_fold + 1);
    if (r.val_fold) k = std::max(k, *r.val_fold + 1);
  }
  const std::vector<int> configs(config_set.begin(), config_set.end());
  for (int j : configs) params.configs.push_back({j, {}});
  params.k = k;

  if (mode == ReplayMode::kTests) {
    params.algorithm = Algorithm::kNachos;
    ReportState r;
    r.params = params;
    std::vector<std::optional<double>> t(static_cast<std::size_t>(k));
    std::vector<std::optional<int>> declared(static_cast<std::size_t>(k));
    for (const auto& row : rows) {
      if (!row.test_fold || row.val_fold)
        throw IntegrityError("line " + std::to_string(row.line) +
                             ": test-only replay accepts only test rows");
      t[static_cast<std::size_t>(*row.test_fold)] = row.metric;
      declared[static_cast<std::size_t>(*row.test_fold)] = row.config;
    }
    std::vector<double> values;
    for (int i = 0; i < k; ++i) {
      if (!t[static_cast<std::size_t>(i)])
        throw IntegrityError("missing test accuracy for fold " + std::to_string(i));
      FoldOutcome f;
      f.test_fold = i;
      f.declared_config = declared[static_cast<std::size_t>(i)];
      f.test_metric = t[static_cast<std::size_t>(i)];
      values.push_back(*f.test_metric);
      r.folds.push_back(f);
    }
    r.test_stats = summarize_tests(values);
    r.phase2_total = r.phase2_done = static_cast<std::size_t>(k);
    return r;
  }

  if (configs.empty()) throw IntegrityError("matrix has no validation cells");
  std::map<std::string, double> completed;
  std::vector<ValidationMatrix> matrices(static_cast<std::size_t>(mode == ReplayMode::kNachos ? k : 1));
  for (const auto& r : rows) {
    if (!r.val_fold) continue;
    if ((mode == ReplayMode::kNachos) != r.test_fold.has_value())
      throw IntegrityError("line " + std::to_string(r.line) + ": mixes " +
                           (r.test_fold ? "nested" : "flat") + " cells into a " +
                           (mode == ReplayMode::kNachos ? "nachos" : "dachos") + " matrix");
    matrices[r.test_fold ? static_cast<std::size_t>(*r.test_fold) : 0].cells[*r.config][*r.val_fold] =
        r.metric;
    completed[make_task_id(params.run_id, *r.config, r.test_fold, r.val_fold)] = r.metric;
  }

  if (mode == ReplayMode::kDachos) {
    params.algorithm = Algorithm::kDachos;
    if (k < 2) throw IntegrityError("dachos matrix needs at least 2 validation folds");
    check_matrix_shape(matrices[0], configs, k, std::nullopt);
    for (const auto& r : rows)
      if (!r.val_fold)
        throw IntegrityError("line " + std::to_string(r.line) + ": test row in a dachos matrix");
    auto report = build_report(params, completed);
    report.phase2_total = 0;  // no final model in a replay
    return report;
  }

  params.algorithm = Algorithm::kNachos;
  if (k < 3) throw IntegrityError("nachos matrix needs at least 3 folds");
  for (int i = 0; i < k; ++i) check_matrix_shape(matrices[static_cast<std::size_t>(i)], configs, k, i);
  auto report = build_report(params, completed);
  bool any_test = false;
  for (const auto& r : rows) {
    if (r.val_fold) continue;
    any_test = true;
    const auto& fold = report.folds[static_cast<std::size_t>(*r.test_fold)];
    const int jstar = fold.selection->jstar;
    if (r.config && *r.config != jstar)
      throw IntegrityError("line " + std::to_string(r.line) + ": test row for fold " +
                           std::to_string(*r.test_fold) + " names h_" + std::to_string(*r.config) +
                           " but selection chose h_" + std::to_string(jstar));
    completed[make_task_id(params.run_id, jstar, *r.test_fold, std::nullopt)] = r.metric;
  }
  report = build_report(params, completed);
  if (!any_test) report.phase2_total = 0;
  return report;
}

}  // namespace nestcv
