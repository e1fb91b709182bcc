#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "nestcv/checkpoint.h"
#include "nestcv/hpspace.h"
#include "nestcv/scheduler.h"
#include "nestcv/task.h"

namespace nestcv {

enum class Algorithm { kNachos, kDachos };
std::string_view to_string(Algorithm algorithm);
Algorithm parse_algorithm(std::string_view text);

struct SummaryStats {
  std::size_t count = 0;
  double mean = 0;
  double sample_sd = 0;       // n-1 denominator
  double standard_error = 0;  // sample_sd / sqrt(count)

  // "0.75 ± 0.03": mean and standard error at `decimals` places.
  std::string display(int decimals = 2) const;
};

// Throws UsageError for fewer than two values.
SummaryStats summarize_tests(const std::vector<double>& t);

struct ConfigSummary {
  int config = 0;
  double vbar = 0;
  std::size_t folds = 0;
};

struct SelectionResult {
  int jstar = 0;
  double vbar_star = 0;
  // vbar_star minus the best other mean; absent with a single config.
  std::optional<double> runner_up_gap;
};

// Highest mean at full precision; exact ties go to the lowest config index.
// Throws UsageError on empty input.
SelectionResult select_best(const std::vector<ConfigSummary>& summaries);

// cells[j][m] = v_m^j for one test fold (NACHOS) or globally (DACHOS).
struct ValidationMatrix {
  std::map<int, std::map<int, double>> cells;
};

std::vector<ConfigSummary> summarize_configs(const ValidationMatrix& matrix);

// Throws IntegrityError naming the first missing (j, m) cell. `skip_fold`
// is the NACHOS test fold, which has no validation cells.
void check_matrix_shape(const ValidationMatrix& matrix, const std::vector<int>& configs, int k,
                        std::optional<int> skip_fold);

// ---------------------------------------------------------------------------
// Plans

struct NestedPlan {
  Algorithm algorithm = Algorithm::kNachos;
  // Phase 1: every train_val task, LPT-ordered.
  TaskPlan phase1;
  // Phase 2 size: k train_test tasks (NACHOS) or one final_train (DACHOS).
  // Their configs are bound after phase 1.
  std::size_t phase2_count = 0;
};

// k >= 3 and n >= 1, else UsageError.
NestedPlan plan_nachos(const std::string& run_id, const std::vector<HyperparameterConfig>& configs,
                       int k, int epochs);
// k >= 2 and n >= 1, else UsageError.
NestedPlan plan_dachos(const std::string& run_id, const std::vector<HyperparameterConfig>& configs,
                       int k, int epochs);

// Phase-2 tasks once selection is known. `jstar` holds one config index per
// test fold for NACHOS, or a single index for DACHOS.
TaskPlan phase2_tasks(Algorithm algorithm, const std::string& run_id,
                      const std::vector<HyperparameterConfig>& configs, int k, int epochs,
                      const std::vector<int>& jstar);

// ---------------------------------------------------------------------------
// Reports

// Everything a report needs besides task metrics. Stored as the run header
// in the metadata log, so reports can be rebuilt from the log alone.
struct RunParams {
  std::string run_id;
  Algorithm algorithm = Algorithm::kNachos;
  int k = 0;
  int epochs = 1;
  std::vector<HyperparameterConfig> configs;
  // Seeds and partition level: copied into the report verbatim.
  nlohmann::json metadata = nlohmann::json::object();
  // How tasks were executed (backend kind). Part of the run header, so a
  // resume cannot switch trainers, but left out of reports.
  nlohmann::json execution = nlohmann::json::object();

  nlohmann::json to_json() const;
  static RunParams from_json(const nlohmann::json& j);
};

struct FoldOutcome {
  int test_fold = 0;
  std::vector<ConfigSummary> summaries;
  std::optional<SelectionResult> selection;
  // Config named by a replayed test row when no validation cells exist.
  std::optional<int> declared_config;
  std::optional<double> test_metric;
};

struct ReportState {
  RunParams params;
  // NACHOS: one entry per test fold.
  std::vector<FoldOutcome> folds;
  std::optional<SummaryStats> test_stats;
  // DACHOS.
  std::vector<ConfigSummary> summaries;
  std::optional<SelectionResult> selection;
  std::optional<ModelArtifact> model;
  std::optional<double> final_train_metric;

  std::size_t phase1_done = 0, phase1_total = 0;
  std::size_t phase2_done = 0, phase2_total = 0;
  std::vector<std::string> failed_tasks;

  bool complete() const { return phase1_done == phase1_total && phase2_done == phase2_total; }
  // Versioned machine report; doubles at full precision. Holds no wall-clock
  // or pool information, so reruns and different pools compare byte-equal.
  nlohmann::json to_json() const;
  // Human summary with 2-decimal display values.
  std::string to_text() const;
};

inline constexpr int kReportVersion = 1;

// Pure function of the run parameters and completed-task metrics.
ReportState build_report(const RunParams& params, const std::map<std::string, double>& completed,
                         const std::map<std::string, std::string>& refs = {},
                         const std::map<std::string, int>& failures = {});

// Rebuilds the report from the metadata log. Throws UsageError for an
// unknown run id.
ReportState report_from_store(const CheckpointStore& store, const std::string& run_id);

// ---------------------------------------------------------------------------
// Live runs

struct EngineOptions {
  std::function<void(const ProgressEvent&)> on_progress;  // phase is 1 or 2
  int retries = 1;
  std::chrono::milliseconds heartbeat_interval{10000};
  std::chrono::milliseconds connect_timeout{60000};
  std::uint64_t trainer_seed = 0;
};

struct RunOutcome {
  ReportState report;
  std::size_t executed = 0;
  std::size_t skipped = 0;
  bool failed() const { return !report.complete(); }
};

// Runs (or resumes) both phases. A run id already in the store must carry
// identical parameters. Stops after phase 1 when any phase-1 task exhausted
// its retries; the outcome then lists the incomplete tasks.
RunOutcome run_nested(const RunParams& params, CheckpointStore& store, const TrainingData& data,
                      std::shared_ptr<TrainerBackend> backend, const WorkerPool& pool,
                      const EngineOptions& options);

// ---------------------------------------------------------------------------
// Replay of transcribed metric tables.
//
// Rows "test_fold,config_index,val_fold,metric" with '-' for absent folds:
//   i,j,m,v   NACHOS validation cell v_m^j under test fold i
//   -,j,m,v   DACHOS validation cell
//   i,j,-,t   test accuracy t_i of the config chosen for fold i ('-' for j
//             when unknown)
// A header line and '#' comments are allowed.

enum class ReplayMode { kAuto, kNachos, kDachos, kTests };

struct MatrixRow {
  std::optional<int> test_fold;
  std::optional<int> config;
  std::optional<int> val_fold;
  double metric = 0;
  std::size_t line = 0;
};

// ParseError carries the 1-based line number.
std::vector<MatrixRow> parse_matrix(const std::string& text);

// Selection and aggregation as if the rows were live results. Throws
// IntegrityError on shape problems.
ReportState replay(const std::vector<MatrixRow>& rows, ReplayMode mode = ReplayMode::kAuto);

}  // namespace nestcv
