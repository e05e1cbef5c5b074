#pragma once

#include <cstdint>
#include <map>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "cmalab/schedule.hpp"
#include "cmalab/theory.hpp"
#include "cmalab/toy.hpp"

namespace cmalab::harness {

/// A named grid of runs: the cartesian product of `grid` values crossed with
/// `seeds`, executed by the runner for `kind` ("train_toy" or "sim_theory")
/// on top of the kind-specific `base` config.
struct ExperimentSpec {
  std::string name;
  std::string kind;
  nlohmann::json base;
  std::map<std::string, std::vector<nlohmann::json>> grid;
  std::vector<std::uint64_t> seeds;
  std::string output_path;
};

ExperimentSpec spec_from_json(const nlohmann::json& j);
ExperimentSpec load_spec(const std::string& path);

struct ResultRow {
  std::string config_hash;
  std::string config_id;
  std::uint64_t seed = 0;
  std::string metric;
  double value = 0.0;
  bool failed = false;
};

struct ResultTable {
  std::vector<ResultRow> rows;

  bool any_failed() const;
  /// Values of `metric` for a config across seeds, ordered by seed position.
  std::vector<double> values(const std::string& config_id,
                             const std::string& metric) const;
};

struct RunOptions {
  int jobs = 0;  // 0 = hardware concurrency
};

/// Executes every grid cell x seed, appending rows to
/// `output_path/results.csv` as they complete (rows land in deterministic
/// cell-major order regardless of thread timing). Existing rows are treated
/// as done, so a killed sweep resumes without duplicates. Also writes
/// `manifest.json` and, on completion, `summary.json` with per-cell
/// median/IQR. Cell failures are recorded and do not stop the sweep.
ResultTable run_experiment(const ExperimentSpec& spec,
                           const RunOptions& options = {});

/// Builds the task and train configs for one "train_toy" run description
/// (see README for the schema). Shared by the sweep runner and the CLI.
std::pair<toy::ToyTaskConfig, toy::TrainConfig> toy_configs_from_json(
    const nlohmann::json& j);

theory::TheoryConfig theory_config_from_json(const nlohmann::json& j);

// --- deterministic CSV exports (shared by the CLI and the acceptance suite) ---

void write_schedule_eval_csv(const std::string& path, const Schedule& s,
                             std::int64_t every = 1);
void write_theory_losses_csv(const std::string& path,
                             const theory::TheoryConfig& config,
                             std::int64_t runs);
/// Writes (step, w1, w2, lr) rows; with runs > 1 the iterates are the mean
/// trajectory over that many seeded runs.
void write_theory_trajectory_csv(const std::string& path,
                                 const theory::TheoryConfig& config,
                                 std::int64_t runs = 1);

// --- acceptance suite ---

struct CriterionResult {
  int index = 0;
  std::string name;
  bool pass = false;
  std::string detail;
  double seconds = 0.0;
  double limit_seconds = 0.0;
};

/// Runs the acceptance criteria with fixed seeds, printing one verdict line
/// per criterion to `out`. Scratch files go under `scratch_dir`. `only`
/// restricts the run to a single criterion index (0 runs all nine).
std::vector<CriterionResult> run_acceptance(const std::string& scratch_dir,
                                            std::ostream& out, int only = 0);

bool all_passed(const std::vector<CriterionResult>& results);

double median(std::vector<double> values);
double interquartile_range(std::vector<double> values);

}  // namespace cmalab::harness
