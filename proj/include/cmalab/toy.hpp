#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "cmalab/averaging.hpp"
#include "cmalab/data_order.hpp"
#include "cmalab/schedule.hpp"

namespace cmalab::toy {

enum class QualityDistribution { UniformScores, TwoPool };

std::string to_string(QualityDistribution q);
QualityDistribution quality_distribution_from_string(const std::string& name);

/// Synthetic mixed-quality regression task. Inputs are standard normal,
/// labels are y = <w*, x> + eps with eps ~ Normal(0, sigma(q)^2) and
/// sigma(q) = noise_max * (1 - q): a score of 1 means a noiseless sample.
/// The validation set is disjoint from the training stream and noiseless.
struct ToyTaskConfig {
  std::int64_t dim = 32;
  std::int64_t n_train = 200000;
  std::int64_t n_val = 4096;
  double noise_max = 2.0;  // sigma_max
  QualityDistribution quality = QualityDistribution::UniformScores;
  // TwoPool: the first floor(low_fraction * n_train) samples draw scores from
  // low_range, the rest from high_range, mirroring a two-phase data layout.
  double low_fraction = 0.8;
  std::pair<double, double> low_range{0.0, 0.5};
  std::pair<double, double> high_range{0.8, 1.0};
  std::uint64_t seed = 0;
};

double noise_sigma(const ToyTaskConfig& cfg, double score);

class ToyTask {
 public:
  explicit ToyTask(ToyTaskConfig cfg);

  const ToyTaskConfig& config() const { return cfg_; }
  const std::vector<double>& true_weights() const { return w_star_; }
  const std::vector<double>& scores() const { return scores_; }

  std::span<const double> train_input(std::int64_t i) const;
  double train_label(std::int64_t i) const;
  std::span<const double> val_input(std::int64_t j) const;
  double val_label(std::int64_t j) const;

  ScoredDataset scored_view() const { return ScoredDataset{scores_}; }

 private:
  ToyTaskConfig cfg_;
  std::vector<double> w_star_;
  std::vector<double> scores_;
  std::vector<double> train_x_;  // n_train x dim, row-major
  std::vector<double> train_y_;
  std::vector<double> val_x_;    // n_val x dim
  std::vector<double> val_y_;
};

struct TrainConfig {
  Schedule schedule;
  OrderPolicy order_policy;
  std::int64_t batch_size = 8;
  std::int64_t checkpoint_interval = 1000;  // s
  std::int64_t checkpoint_window = 6;       // k
  std::optional<AverageStrategy> averaging;
  // Combine checkpoints with geometric weights alpha^i on the i-th most
  // recent checkpoint instead of the oldest-to-newest EMA recursion. The two
  // weightings differ; the recursion is the default.
  bool geometric_ema = false;
  std::uint64_t seed = 0;
};

struct RunRecord {
  std::vector<std::int64_t> steps;  // 1..T
  std::vector<double> lrs;
  std::vector<double> train_losses;  // batch loss before the update
  std::vector<std::pair<std::int64_t, double>> val_losses;  // checkpoint steps
};

struct TrainResult {
  ParamVector final_params;
  CheckpointSeries checkpoints;
  RunRecord record;
};

/// Raised when the training loss stops being finite.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(std::int64_t step, const std::string& what)
      : std::runtime_error(what), step_(step) {}
  std::int64_t step() const { return step_; }

 private:
  std::int64_t step_;
};

/// Single-pass minibatch SGD on 0.5 * (y_hat - y)^2. The stream order comes
/// from the config's order policy; the learning rate at step t (1-based) is
/// eta_at(schedule, t); checkpoints are saved at steps
/// {T-(k-1)s, ..., T-s, T}. Requires n_train == total_steps * batch_size.
TrainResult train(const ToyTask& task, const TrainConfig& cfg);

/// Mean 0.5 * (y_hat - y)^2 over the noiseless validation set.
double evaluate(std::span<const double> params, const ToyTask& task);

struct CmaResult {
  ParamVector params;
  double val_loss = 0.0;
  double last_checkpoint_val_loss = 0.0;
};

/// The curriculum + averaging pipeline: order the stream, train, then average
/// the saved checkpoint window into the final parameters. Requires an Sma or
/// Ema strategy and a Constant or WsdOneSqrt schedule.
CmaResult run_cma(const ToyTask& task, const TrainConfig& cfg);

void write_run_record_csv(const std::string& path, const RunRecord& record);

void to_json(nlohmann::json& j, const ToyTaskConfig& cfg);
void from_json(const nlohmann::json& j, ToyTaskConfig& cfg);

}  // namespace cmalab::toy
