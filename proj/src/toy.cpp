#include "cmalab/toy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "cmalab/csv.hpp"
#include "cmalab/rng.hpp"

namespace cmalab::toy {

namespace {

// Substream tags; sample streams are offset by their index.
constexpr std::uint64_t kStreamWeights = 0;
constexpr std::uint64_t kStreamScores = 1;
constexpr std::uint64_t kStreamTrain = 1ULL << 40;
constexpr std::uint64_t kStreamVal = 2ULL << 40;

}  // namespace

std::string to_string(QualityDistribution q) {
  switch (q) {
    case QualityDistribution::UniformScores: return "uniform_scores";
    case QualityDistribution::TwoPool: return "two_pool";
  }
  throw std::invalid_argument("unknown quality distribution");
}

QualityDistribution quality_distribution_from_string(const std::string& name) {
  if (name == "uniform_scores") return QualityDistribution::UniformScores;
  if (name == "two_pool") return QualityDistribution::TwoPool;
  throw std::invalid_argument("unknown quality distribution: " + name);
}

double noise_sigma(const ToyTaskConfig& cfg, double score) {
  return cfg.noise_max * (1.0 - score);
}

ToyTask::ToyTask(ToyTaskConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.dim <= 0) throw std::invalid_argument("dim must be positive");
  if (cfg_.n_train <= 0) throw std::invalid_argument("n_train must be positive");
  if (cfg_.n_val <= 0) throw std::invalid_argument("n_val must be positive");
  if (!(cfg_.noise_max >= 0.0))
    throw std::invalid_argument("noise_max must be non-negative");
  if (cfg_.quality == QualityDistribution::TwoPool &&
      !(cfg_.low_fraction > 0.0 && cfg_.low_fraction < 1.0))
    throw std::invalid_argument("low_fraction must lie in (0, 1)");

  const auto dim = static_cast<std::size_t>(cfg_.dim);
  const auto n_train = static_cast<std::size_t>(cfg_.n_train);
  const auto n_val = static_cast<std::size_t>(cfg_.n_val);

  w_star_.resize(dim);
  {
    CounterRng rng = CounterRng::substream(cfg_.seed, kStreamWeights);
    for (auto& w : w_star_) w = rng.normal();
  }

  scores_.resize(n_train);
  {
    CounterRng rng = CounterRng::substream(cfg_.seed, kStreamScores);
    if (cfg_.quality == QualityDistribution::UniformScores) {
      for (auto& q : scores_) q = rng.next_double();
    } else {
      const auto n_low = static_cast<std::size_t>(
          std::floor(cfg_.low_fraction * static_cast<double>(n_train)));
      for (std::size_t i = 0; i < n_train; ++i) {
        const auto& range = i < n_low ? cfg_.low_range : cfg_.high_range;
        scores_[i] = rng.uniform(range.first, range.second);
      }
    }
  }

  train_x_.resize(n_train * dim);
  train_y_.resize(n_train);
  for (std::size_t i = 0; i < n_train; ++i) {
    CounterRng rng = CounterRng::substream(cfg_.seed, kStreamTrain + i);
    double dot = 0.0;
    double* row = &train_x_[i * dim];
    for (std::size_t j = 0; j < dim; ++j) {
      row[j] = rng.normal();
      dot += w_star_[j] * row[j];
    }
    train_y_[i] = dot + noise_sigma(cfg_, scores_[i]) * rng.normal();
  }

  val_x_.resize(n_val * dim);
  val_y_.resize(n_val);
  for (std::size_t i = 0; i < n_val; ++i) {
    CounterRng rng = CounterRng::substream(cfg_.seed, kStreamVal + i);
    double dot = 0.0;
    double* row = &val_x_[i * dim];
    for (std::size_t j = 0; j < dim; ++j) {
      row[j] = rng.normal();
      dot += w_star_[j] * row[j];
    }
    val_y_[i] = dot;  // noiseless
  }
}

std::span<const double> ToyTask::train_input(std::int64_t i) const {
  const auto dim = static_cast<std::size_t>(cfg_.dim);
  return {&train_x_[static_cast<std::size_t>(i) * dim], dim};
}

double ToyTask::train_label(std::int64_t i) const {
  return train_y_[static_cast<std::size_t>(i)];
}

std::span<const double> ToyTask::val_input(std::int64_t j) const {
  const auto dim = static_cast<std::size_t>(cfg_.dim);
  return {&val_x_[static_cast<std::size_t>(j) * dim], dim};
}

double ToyTask::val_label(std::int64_t j) const {
  return val_y_[static_cast<std::size_t>(j)];
}

double evaluate(std::span<const double> params, const ToyTask& task) {
  for (double p : params)
    if (!std::isfinite(p))
      throw std::invalid_argument("cannot evaluate non-finite parameters");
  if (params.size() != static_cast<std::size_t>(task.config().dim))
    throw std::invalid_argument("parameter dim mismatch");

  long double acc = 0.0L;
  const std::int64_t n_val = task.config().n_val;
  for (std::int64_t j = 0; j < n_val; ++j) {
    const auto x = task.val_input(j);
    double dot = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) dot += params[k] * x[k];
    const double r = dot - task.val_label(j);
    acc += 0.5L * r * r;
  }
  return static_cast<double>(acc / static_cast<long double>(n_val));
}

TrainResult train(const ToyTask& task, const TrainConfig& cfg) {
  validate(cfg.schedule);
  const std::int64_t T = cfg.schedule.total_steps;
  const std::int64_t b = cfg.batch_size;
  if (b < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (task.config().n_train != T * b)
    throw std::invalid_argument(
        "single pass requires n_train == total_steps * batch_size");
  const std::int64_t k = cfg.checkpoint_window;
  const std::int64_t s = cfg.checkpoint_interval;
  if (k < 1 || s < 1)
    throw std::invalid_argument("checkpoint window and interval must be >= 1");
  if (k * s > T)
    throw std::invalid_argument("checkpoint window exceeds the run length");

  const Permutation perm = make_order(task.scored_view(), cfg.order_policy);

  const auto dim = static_cast<std::size_t>(task.config().dim);
  ParamVector w(dim, 0.0);
  std::vector<double> grad(dim);

  TrainResult out;
  out.record.steps.reserve(static_cast<std::size_t>(T));
  out.record.lrs.reserve(static_cast<std::size_t>(T));
  out.record.train_losses.reserve(static_cast<std::size_t>(T));

  const std::int64_t first_checkpoint = T - (k - 1) * s;
  for (std::int64_t t = 1; t <= T; ++t) {
    const double lr = eta_at(cfg.schedule, t);
    std::fill(grad.begin(), grad.end(), 0.0);
    double batch_loss = 0.0;
    for (std::int64_t j = 0; j < b; ++j) {
      const std::size_t idx = perm[static_cast<std::size_t>((t - 1) * b + j)];
      const auto x = task.train_input(static_cast<std::int64_t>(idx));
      double dot = 0.0;
      for (std::size_t d = 0; d < dim; ++d) dot += w[d] * x[d];
      const double r = dot - task.train_label(static_cast<std::int64_t>(idx));
      batch_loss += 0.5 * r * r;
      for (std::size_t d = 0; d < dim; ++d) grad[d] += r * x[d];
    }
    batch_loss /= static_cast<double>(b);
    if (!std::isfinite(batch_loss))
      throw DivergenceError(t, "training loss diverged at step " + fmt_int(t));
    const double scale = lr / static_cast<double>(b);
    for (std::size_t d = 0; d < dim; ++d) w[d] -= scale * grad[d];

    out.record.steps.push_back(t);
    out.record.lrs.push_back(lr);
    out.record.train_losses.push_back(batch_loss);

    if (t >= first_checkpoint && (t - first_checkpoint) % s == 0) {
      out.checkpoints.checkpoints.push_back(w);
      out.checkpoints.steps.push_back(t);
      out.record.val_losses.emplace_back(t, evaluate(w, task));
    }
  }

  out.final_params = std::move(w);
  return out;
}

CmaResult run_cma(const ToyTask& task, const TrainConfig& cfg) {
  if (!cfg.averaging)
    throw std::invalid_argument("run_cma needs an averaging strategy");
  if (cfg.averaging->kind == AverageStrategy::Kind::Wma)
    throw std::invalid_argument("run_cma averages with sma or ema");
  if (cfg.schedule.shape != ScheduleShape::Constant &&
      cfg.schedule.shape != ScheduleShape::WsdOneSqrt)
    throw std::invalid_argument(
        "run_cma expects a constant or moderately decayed wsd schedule");

  TrainResult trained = train(task, cfg);

  ParamVector averaged;
  if (cfg.geometric_ema &&
      cfg.averaging->kind == AverageStrategy::Kind::Ema) {
    // Weights alpha^i on the i-th most recent checkpoint, normalized.
    const std::size_t n = trained.checkpoints.size();
    std::vector<double> weights(n);
    long double norm = 0.0L;
    for (std::size_t i = 0; i < n; ++i) {
      weights[n - 1 - i] = std::pow(cfg.averaging->alpha, static_cast<double>(i));
      norm += weights[n - 1 - i];
    }
    for (auto& wgt : weights) wgt = static_cast<double>(wgt / norm);
    averaged = average(trained.checkpoints, AverageStrategy::wma(weights));
  } else {
    averaged = average(trained.checkpoints, *cfg.averaging);
  }

  CmaResult out;
  out.val_loss = evaluate(averaged, task);
  out.last_checkpoint_val_loss = trained.record.val_losses.back().second;
  out.params = std::move(averaged);
  return out;
}

void write_run_record_csv(const std::string& path, const RunRecord& record) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << "step,lr,train_loss,val_loss\n";
  std::size_t vi = 0;
  for (std::size_t i = 0; i < record.steps.size(); ++i) {
    out << record.steps[i] << "," << fmt_double(record.lrs[i]) << ","
        << fmt_double(record.train_losses[i]) << ",";
    if (vi < record.val_losses.size() &&
        record.val_losses[vi].first == record.steps[i]) {
      out << fmt_double(record.val_losses[vi].second);
      ++vi;
    }
    out << "\n";
  }
}

void to_json(nlohmann::json& j, const ToyTaskConfig& cfg) {
  j = nlohmann::json{{"dim", cfg.dim},
                     {"n_train", cfg.n_train},
                     {"n_val", cfg.n_val},
                     {"noise_max", cfg.noise_max},
                     {"quality_distribution", to_string(cfg.quality)},
                     {"low_fraction", cfg.low_fraction},
                     {"low_range", {cfg.low_range.first, cfg.low_range.second}},
                     {"high_range", {cfg.high_range.first, cfg.high_range.second}},
                     {"seed", cfg.seed}};
}

void from_json(const nlohmann::json& j, ToyTaskConfig& cfg) {
  ToyTaskConfig defaults;
  cfg.dim = j.value("dim", defaults.dim);
  cfg.n_train = j.value("n_train", defaults.n_train);
  cfg.n_val = j.value("n_val", defaults.n_val);
  cfg.noise_max = j.value("noise_max", defaults.noise_max);
  cfg.quality = quality_distribution_from_string(
      j.value("quality_distribution", std::string("uniform_scores")));
  cfg.low_fraction = j.value("low_fraction", defaults.low_fraction);
  if (j.contains("low_range"))
    cfg.low_range = {j["low_range"][0].get<double>(),
                     j["low_range"][1].get<double>()};
  if (j.contains("high_range"))
    cfg.high_range = {j["high_range"][0].get<double>(),
                      j["high_range"][1].get<double>()};
  cfg.seed = j.value("seed", defaults.seed);
}

}  // namespace cmalab::toy
