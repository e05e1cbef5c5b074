#include "cmalab/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <filesystem>
#include <fstream>
#include <limits>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "cmalab/csv.hpp"
#include "cmalab/rng.hpp"

namespace fs = std::filesystem;

namespace cmalab::harness {

namespace {

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hash_hex(const std::string& text) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a(text)));
  return buf;
}

std::string value_repr(const nlohmann::json& v) {
  const std::string text = v.is_string() ? v.get<std::string>() : v.dump();
  if (text.find(',') != std::string::npos ||
      text.find(';') != std::string::npos ||
      text.find('\n') != std::string::npos)
    throw std::invalid_argument("grid values must be simple scalars: " + text);
  return text;
}

double quantile(std::vector<double>& sorted, double p) {
  const std::size_t n = sorted.size();
  if (n == 1) return sorted[0];
  const double pos = p * static_cast<double>(n - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, n - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

}  // namespace

double median(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("median of empty set");
  std::sort(values.begin(), values.end());
  return quantile(values, 0.5);
}

double interquartile_range(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("iqr of empty set");
  std::sort(values.begin(), values.end());
  return quantile(values, 0.75) - quantile(values, 0.25);
}

ExperimentSpec spec_from_json(const nlohmann::json& j) {
  ExperimentSpec spec;
  spec.name = j.at("name").get<std::string>();
  spec.kind = j.at("kind").get<std::string>();
  if (spec.kind != "train_toy" && spec.kind != "sim_theory")
    throw std::invalid_argument("unknown experiment kind: " + spec.kind);
  spec.base = j.value("base", nlohmann::json::object());
  const auto& grid = j.at("grid");
  if (!grid.is_object() || grid.empty())
    throw std::invalid_argument("grid must be a non-empty object");
  for (auto it = grid.begin(); it != grid.end(); ++it) {
    if (!it.value().is_array() || it.value().empty())
      throw std::invalid_argument("grid entry " + it.key() +
                                  " must be a non-empty array");
    spec.grid[it.key()] =
        std::vector<nlohmann::json>(it.value().begin(), it.value().end());
  }
  spec.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  if (spec.seeds.empty()) throw std::invalid_argument("seeds must be non-empty");
  spec.output_path = j.value("output_path", std::string("results"));
  return spec;
}

ExperimentSpec load_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return spec_from_json(nlohmann::json::parse(in));
}

bool ResultTable::any_failed() const {
  for (const auto& row : rows)
    if (row.failed) return true;
  return false;
}

std::vector<double> ResultTable::values(const std::string& config_id,
                                        const std::string& metric) const {
  std::vector<double> out;
  for (const auto& row : rows)
    if (!row.failed && row.config_id == config_id && row.metric == metric)
      out.push_back(row.value);
  return out;
}

std::pair<toy::ToyTaskConfig, toy::TrainConfig> toy_configs_from_json(
    const nlohmann::json& j) {
  toy::ToyTaskConfig task = j.value("task", nlohmann::json::object());
  const std::uint64_t seed = j.value("seed", std::uint64_t{0});
  task.seed = seed;

  const nlohmann::json t = j.value("train", nlohmann::json::object());
  const double peak = t.value("peak_lr", 0.02);
  const std::int64_t warmup = t.value("warmup_steps", std::int64_t{500});
  const std::int64_t batch = t.value("batch_size", std::int64_t{8});
  if (batch < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (task.n_train % batch != 0)
    throw std::invalid_argument("n_train must be divisible by batch_size");
  const std::int64_t total = task.n_train / batch;

  const std::string shape = t.value("schedule_shape", std::string("constant"));
  const double end_ratio = t.value("end_lr_ratio", 1.0 / 300.0);
  const double decay_fraction = t.value("decay_fraction", 0.2);
  const auto decay_start =
      total - static_cast<std::int64_t>(std::llround(
                  decay_fraction * static_cast<double>(total)));

  toy::TrainConfig train;
  if (shape == "constant") {
    train.schedule = Schedule::constant(peak, total, warmup);
  } else if (shape == "cosine") {
    train.schedule = Schedule::cosine(peak, peak * end_ratio, total, warmup);
  } else if (shape == "wsd_one_sqrt") {
    train.schedule = Schedule::wsd_one_sqrt(peak, peak * end_ratio, total,
                                            warmup, decay_start);
  } else if (shape == "wsd_sqrt_cube") {
    train.schedule = Schedule::wsd_sqrt_cube(peak, total, warmup, decay_start);
  } else {
    throw std::invalid_argument("unknown schedule_shape: " + shape);
  }

  train.order_policy = parse_policy(t.value("order", std::string("uniform")));
  seed_policy(train.order_policy, seed);
  train.batch_size = batch;
  train.checkpoint_interval = t.value("checkpoint_interval", std::int64_t{1000});
  train.checkpoint_window = t.value("checkpoint_window", std::int64_t{6});
  train.geometric_ema = t.value("geometric_ema", false);
  train.seed = seed;

  const std::string averaging = t.value("averaging", std::string("none"));
  if (averaging == "none") {
    train.averaging.reset();
  } else if (averaging == "sma") {
    train.averaging = AverageStrategy::sma();
  } else if (averaging == "ema") {
    train.averaging = AverageStrategy::ema(t.value("alpha", 0.2));
  } else {
    throw std::invalid_argument("toy averaging must be none, sma or ema");
  }
  return {std::move(task), std::move(train)};
}

theory::TheoryConfig theory_config_from_json(const nlohmann::json& j) {
  theory::TheoryConfig cfg;
  cfg.dataset_size = j.at("M").get<std::int64_t>();
  cfg.scale = j.value("L", 1.0);
  cfg.seed = j.value("seed", std::uint64_t{0});

  const std::string name = j.value("strategy", std::string("uniform"));
  if (name == "uniform") {
    theory::TheorySchedule schedule;
    const std::string kind = j.value("schedule", std::string("wsd"));
    if (kind == "constant")
      schedule.kind = theory::TheoryScheduleKind::Constant;
    else if (kind == "wsd")
      schedule.kind = theory::TheoryScheduleKind::PracticalWsd;
    else if (kind == "wsmd")
      schedule.kind = theory::TheoryScheduleKind::Wsmd;
    else
      throw std::invalid_argument("unknown theory schedule: " + kind);
    schedule.eta0 = j.value("eta0", 0.5);
    schedule.t0_exponent = j.value("t0_exponent", 2.0 / 3.0);
    cfg.strategy = theory::Strategy::uniform(schedule);
  } else if (name == "ascend_wsd") {
    cfg.strategy = theory::Strategy::ascend_practical_wsd();
  } else if (name == "ascend_wsmd") {
    cfg.strategy = theory::Strategy::ascend_wsmd(j.value("t0_exponent", 2.0 / 3.0));
  } else if (name == "ascend_swa") {
    cfg.strategy = theory::Strategy::ascend_swa(j.value("eta0", 0.5),
                                                j.value("n_exponent", 2.0 / 3.0));
  } else {
    throw std::invalid_argument("unknown theory strategy: " + name);
  }
  theory::validate(cfg);
  return cfg;
}

namespace {

struct Cell {
  nlohmann::json params;  // param name -> value
  std::string config_id;
};

std::vector<Cell> enumerate_cells(const ExperimentSpec& spec) {
  std::vector<std::string> keys;
  for (const auto& [k, _] : spec.grid) keys.push_back(k);
  std::vector<std::size_t> idx(keys.size(), 0);
  std::vector<Cell> cells;
  while (true) {
    Cell cell;
    cell.params = nlohmann::json::object();
    std::string id;
    for (std::size_t i = 0; i < keys.size(); ++i) {
      const auto& value = spec.grid.at(keys[i])[idx[i]];
      cell.params[keys[i]] = value;
      if (!id.empty()) id += ";";
      id += keys[i] + "=" + value_repr(value);
    }
    cell.config_id = id;
    cells.push_back(std::move(cell));
    // odometer
    std::size_t p = keys.size();
    while (p > 0) {
      --p;
      if (++idx[p] < spec.grid.at(keys[p]).size()) break;
      idx[p] = 0;
      if (p == 0) return cells;
    }
    if (keys.empty()) return cells;
  }
}

const char* primary_metric(const std::string& kind) {
  return kind == "train_toy" ? "final_val_loss" : "mean_loss";
}

// task-level keys; everything else lands in the train section
bool is_task_key(const std::string& key) {
  return key == "dim" || key == "n_train" || key == "n_val" ||
         key == "noise_max" || key == "quality_distribution" ||
         key == "low_fraction";
}

std::vector<ResultRow> run_cell(const ExperimentSpec& spec, const Cell& cell,
                                std::uint64_t seed) {
  const std::string hash_input = spec.kind + "|" + spec.base.dump() + "|" +
                                 cell.config_id + "|" + fmt_int(static_cast<std::int64_t>(seed));
  const std::string hash = hash_hex(hash_input);

  std::vector<ResultRow> rows;
  auto add = [&](const std::string& metric, double value, bool failed = false) {
    rows.push_back({hash, cell.config_id, seed, metric, value, failed});
  };

  try {
    if (spec.kind == "train_toy") {
      nlohmann::json merged = spec.base;
      if (!merged.contains("task")) merged["task"] = nlohmann::json::object();
      if (!merged.contains("train")) merged["train"] = nlohmann::json::object();
      for (auto it = cell.params.begin(); it != cell.params.end(); ++it) {
        if (is_task_key(it.key()))
          merged["task"][it.key()] = it.value();
        else
          merged["train"][it.key()] = it.value();
      }
      merged["seed"] = seed;
      auto [task_cfg, train_cfg] = toy_configs_from_json(merged);
      toy::ToyTask task(task_cfg);
      if (train_cfg.averaging) {
        const toy::CmaResult result = toy::run_cma(task, train_cfg);
        add("last_checkpoint_val_loss", result.last_checkpoint_val_loss);
        add("final_val_loss", result.val_loss);
      } else {
        const toy::TrainResult result = toy::train(task, train_cfg);
        add("final_val_loss", toy::evaluate(result.final_params, task));
      }
    } else {
      nlohmann::json merged = spec.base;
      for (auto it = cell.params.begin(); it != cell.params.end(); ++it)
        merged[it.key()] = it.value();
      merged["seed"] = seed;
      const std::int64_t runs = merged.value("runs", std::int64_t{200});
      const theory::TheoryConfig cfg = theory_config_from_json(merged);
      const theory::LossEstimate est = theory::estimate_loss(cfg, runs);
      add("std_error", est.std_error);
      add("mean_loss", est.mean);
    }
  } catch (const std::exception&) {
    rows.clear();
    add(primary_metric(spec.kind), std::numeric_limits<double>::quiet_NaN(),
        /*failed=*/true);
  }
  return rows;
}

}  // namespace

ResultTable run_experiment(const ExperimentSpec& spec,
                           const RunOptions& options) {
  const std::vector<Cell> cells = enumerate_cells(spec);
  fs::create_directories(spec.output_path);
  const std::string csv_path =
      (fs::path(spec.output_path) / "results.csv").string();
  const std::string header =
      "config_hash,artifact_version,config_id,seed,metric,value,status";

  // Rows already on disk count as done; a killed sweep resumes from there.
  ResultTable table;
  std::set<std::pair<std::string, std::uint64_t>> done;
  if (fs::exists(csv_path)) {
    std::ifstream in(csv_path);
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
      if (first) {
        first = false;
        if (line != header)
          throw std::runtime_error("unexpected results.csv header in " +
                                   csv_path);
        continue;
      }
      if (line.empty()) continue;
      std::istringstream ss(line);
      ResultRow row;
      std::string seed_field, value_field, status_field, version_field;
      std::getline(ss, row.config_hash, ',');
      std::getline(ss, version_field, ',');
      std::getline(ss, row.config_id, ',');
      std::getline(ss, seed_field, ',');
      std::getline(ss, row.metric, ',');
      std::getline(ss, value_field, ',');
      std::getline(ss, status_field);
      row.seed = std::stoull(seed_field);
      row.failed = status_field == "failed";
      row.value = value_field.empty()
                      ? std::numeric_limits<double>::quiet_NaN()
                      : std::stod(value_field);
      if (row.metric == primary_metric(spec.kind))
        done.emplace(row.config_id, row.seed);
      table.rows.push_back(std::move(row));
    }
  }

  struct Task {
    std::size_t cell = 0;
    std::size_t seed_pos = 0;
  };
  std::vector<Task> tasks;
  for (std::size_t c = 0; c < cells.size(); ++c)
    for (std::size_t s = 0; s < spec.seeds.size(); ++s)
      if (!done.count({cells[c].config_id, spec.seeds[s]}))
        tasks.push_back({c, s});

  // Manifest is timestamp-free so identical runs leave identical bytes.
  {
    nlohmann::json grid_json = nlohmann::json::object();
    for (const auto& [k, vs] : spec.grid) grid_json[k] = vs;
    nlohmann::json manifest{{"name", spec.name},
                            {"kind", spec.kind},
                            {"artifact_version", std::string(kArtifactVersion)},
                            {"base", spec.base},
                            {"grid", grid_json},
                            {"seeds", spec.seeds},
                            {"cells", cells.size()}};
    std::ofstream out(fs::path(spec.output_path) / "manifest.json",
                      std::ios::trunc);
    out << manifest.dump(2) << "\n";
  }

  const bool fresh = !fs::exists(csv_path) || fs::file_size(csv_path) == 0;
  std::ofstream csv(csv_path, std::ios::app);
  if (!csv) throw std::runtime_error("cannot open " + csv_path);
  if (fresh) {
    csv << header << "\n";
    csv.flush();
  }

  // Workers fill per-task slots; the main thread appends them in task order,
  // so the file contents never depend on thread timing.
  std::vector<std::vector<ResultRow>> slots(tasks.size());
  std::vector<char> ready(tasks.size(), 0);
  std::mutex mu;
  std::condition_variable cv;
  std::atomic<std::size_t> next{0};

  int jobs = options.jobs > 0
                 ? options.jobs
                 : static_cast<int>(std::thread::hardware_concurrency());
  if (jobs < 1) jobs = 1;
  jobs = std::min<int>(jobs, static_cast<int>(std::max<std::size_t>(tasks.size(), 1)));

  auto worker = [&]() {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= tasks.size()) return;
      auto rows = run_cell(spec, cells[tasks[i].cell],
                           spec.seeds[tasks[i].seed_pos]);
      {
        std::lock_guard<std::mutex> lock(mu);
        slots[i] = std::move(rows);
        ready[i] = 1;
      }
      cv.notify_all();
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(jobs));
  for (int i = 0; i < jobs; ++i) pool.emplace_back(worker);

  for (std::size_t i = 0; i < tasks.size(); ++i) {
    std::unique_lock<std::mutex> lock(mu);
    cv.wait(lock, [&] { return ready[i] == 1; });
    std::vector<ResultRow> rows = std::move(slots[i]);
    lock.unlock();
    for (const auto& row : rows) {
      csv << row.config_hash << "," << kArtifactVersion << ","
          << row.config_id << "," << row.seed << "," << row.metric << ",";
      if (!row.failed) csv << fmt_double(row.value);
      csv << "," << (row.failed ? "failed" : "ok") << "\n";
    }
    csv.flush();
    for (auto& row : rows) table.rows.push_back(std::move(row));
  }
  for (auto& t : pool) t.join();

  // Per-cell summary over seeds of the primary metric.
  {
    nlohmann::json summary = nlohmann::json::object();
    for (const auto& cell : cells) {
      const auto vals = table.values(cell.config_id, primary_metric(spec.kind));
      nlohmann::json entry{{"count", vals.size()}};
      if (!vals.empty()) {
        entry["median"] = median(vals);
        entry["iqr"] = interquartile_range(vals);
      }
      summary[cell.config_id] = entry;
    }
    std::ofstream out(fs::path(spec.output_path) / "summary.json",
                      std::ios::trunc);
    out << summary.dump(2) << "\n";
  }
  return table;
}

// --- CSV exports ---

void write_schedule_eval_csv(const std::string& path, const Schedule& s,
                             std::int64_t every) {
  validate(s);
  if (every < 1) throw std::invalid_argument("stride must be >= 1");
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << "step,lr\n";
  for (std::int64_t t = 0; t <= s.total_steps; t += every)
    out << t << "," << fmt_double(eta_at(s, t)) << "\n";
  if ((s.total_steps % every) != 0)
    out << s.total_steps << "," << fmt_double(eta_at(s, s.total_steps)) << "\n";
}

void write_theory_losses_csv(const std::string& path,
                             const theory::TheoryConfig& config,
                             std::int64_t runs) {
  const std::vector<double> losses = theory::per_run_losses(config, runs);
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << "run,loss\n";
  for (std::size_t r = 0; r < losses.size(); ++r)
    out << r << "," << fmt_double(losses[r]) << "\n";
}

void write_theory_trajectory_csv(const std::string& path,
                                 const theory::TheoryConfig& config,
                                 std::int64_t runs) {
  theory::validate(config);
  if (runs < 1) throw std::invalid_argument("need at least one run");
  const std::int64_t m = config.dataset_size;
  const auto etas = theory::strategy_etas(config.strategy, m);
  const theory::SampleOrder order =
      config.strategy.kind == theory::StrategyKind::UniformSampling
          ? theory::SampleOrder::Uniform
          : theory::SampleOrder::Ascending;

  std::vector<long double> mean_signal(static_cast<std::size_t>(m) + 1, 0.0L);
  std::vector<long double> mean_noise(static_cast<std::size_t>(m) + 1, 0.0L);
  for (std::int64_t r = 0; r < runs; ++r) {
    CounterRng rng =
        CounterRng::substream(config.seed, static_cast<std::uint64_t>(r));
    const theory::Dataset data = theory::gen_dataset(m, config.scale, rng);
    const auto trajectory =
        theory::run_sgd(data, order, etas, {config.scale, 0.0}, rng);
    for (std::size_t t = 0; t < trajectory.size(); ++t) {
      mean_signal[t] += trajectory[t].signal;
      mean_noise[t] += trajectory[t].noise;
    }
  }

  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << "step,w1,w2,lr\n";
  for (std::size_t t = 0; t <= static_cast<std::size_t>(m); ++t) {
    out << t << ","
        << fmt_double(static_cast<double>(mean_signal[t] / runs)) << ","
        << fmt_double(static_cast<double>(mean_noise[t] / runs)) << ",";
    if (t > 0) out << fmt_double(etas[t - 1]);
    out << "\n";
  }
}

}  // namespace cmalab::harness
