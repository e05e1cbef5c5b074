#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "cmalab/averaging.hpp"
#include "cmalab/csv.hpp"
#include "cmalab/data_order.hpp"
#include "cmalab/harness.hpp"
#include "cmalab/rng.hpp"
#include "cmalab/schedule.hpp"
#include "cmalab/theory.hpp"
#include "cmalab/toy.hpp"

namespace fs = std::filesystem;

namespace cmalab::harness {

namespace {

using Clock = std::chrono::steady_clock;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string fmt3(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

// --- shared toy setup for criteria 6-8 ---

constexpr std::int64_t kToyDim = 32;
constexpr std::int64_t kToyTrain = 200000;
constexpr std::int64_t kToyVal = 4096;
constexpr double kToyNoiseMax = 2.0;
constexpr std::int64_t kToyBatch = 8;
constexpr std::int64_t kToySteps = kToyTrain / kToyBatch;
constexpr double kToyPeakLr = 0.02;
constexpr std::int64_t kToyWarmup = 500;
constexpr std::int64_t kToyCheckpointInterval = 1000;
constexpr std::int64_t kToyCheckpointWindow = 6;
constexpr double kAggressiveEndRatio = 1.0 / 300.0;
const std::vector<std::uint64_t> kToySeeds{1, 2, 3, 4, 5};
const std::vector<double> kSweepRatios{1.0 / 300.0, 1.0 / 30.0, 0.1,
                                       1.0 / 3.0,   2.0 / 3.0,  1.0};

Schedule toy_constant() {
  return Schedule::constant(kToyPeakLr, kToySteps, kToyWarmup);
}

Schedule toy_wsd(double end_ratio) {
  // 20% decay tail, within the 15-20% range used throughout.
  const std::int64_t decay_start = kToySteps - kToySteps / 5;
  return Schedule::wsd_one_sqrt(kToyPeakLr, kToyPeakLr * end_ratio, kToySteps,
                                kToyWarmup, decay_start);
}

toy::TrainConfig toy_train_config(const Schedule& schedule, bool ascend,
                                  std::uint64_t seed) {
  toy::TrainConfig cfg;
  cfg.schedule = schedule;
  cfg.order_policy =
      ascend ? OrderPolicy::ascend() : OrderPolicy::uniform(seed);
  seed_policy(cfg.order_policy, seed);
  cfg.batch_size = kToyBatch;
  cfg.checkpoint_interval = kToyCheckpointInterval;
  cfg.checkpoint_window = kToyCheckpointWindow;
  cfg.seed = seed;
  return cfg;
}

struct ToyBaseArms {
  // One entry per seed.
  std::vector<double> uniform_const;
  std::vector<double> ascend_const;
  std::vector<double> uniform_wsd;
  std::vector<double> ascend_wsd;
  std::vector<double> cma;  // ascend + constant + ema over the window
  bool ready = false;
};

void build_base_arms(ToyBaseArms& arms) {
  if (arms.ready) return;
  for (std::uint64_t seed : kToySeeds) {
    toy::ToyTaskConfig task_cfg;
    task_cfg.dim = kToyDim;
    task_cfg.n_train = kToyTrain;
    task_cfg.n_val = kToyVal;
    task_cfg.noise_max = kToyNoiseMax;
    task_cfg.seed = seed;
    const toy::ToyTask task(task_cfg);

    auto run = [&](const Schedule& schedule, bool ascend) {
      return toy::train(task, toy_train_config(schedule, ascend, seed));
    };

    const toy::TrainResult uniform_const = run(toy_constant(), false);
    const toy::TrainResult ascend_const = run(toy_constant(), true);
    const toy::TrainResult uniform_wsd = run(toy_wsd(kAggressiveEndRatio), false);
    const toy::TrainResult ascend_wsd = run(toy_wsd(kAggressiveEndRatio), true);

    arms.uniform_const.push_back(toy::evaluate(uniform_const.final_params, task));
    arms.ascend_const.push_back(toy::evaluate(ascend_const.final_params, task));
    arms.uniform_wsd.push_back(toy::evaluate(uniform_wsd.final_params, task));
    arms.ascend_wsd.push_back(toy::evaluate(ascend_wsd.final_params, task));
    arms.cma.push_back(toy::evaluate(
        average(ascend_const.checkpoints, AverageStrategy::ema(0.2)), task));
  }
  arms.ready = true;
}

}  // namespace

bool all_passed(const std::vector<CriterionResult>& results) {
  for (const auto& r : results)
    if (!r.pass) return false;
  return true;
}

std::vector<CriterionResult> run_acceptance(const std::string& scratch_dir,
                                            std::ostream& out, int only) {
  fs::create_directories(scratch_dir);
  std::vector<CriterionResult> results;
  ToyBaseArms arms;

  auto criterion = [&](int index, const std::string& name,
                       double limit_seconds,
                       const std::function<bool(std::string&)>& body) {
    if (only != 0 && index != only) return;
    CriterionResult r;
    r.index = index;
    r.name = name;
    r.limit_seconds = limit_seconds;
    const auto start = Clock::now();
    try {
      r.pass = body(r.detail);
    } catch (const std::exception& e) {
      r.pass = false;
      r.detail = std::string("exception: ") + e.what();
    }
    r.seconds = std::chrono::duration<double>(Clock::now() - start).count();
    if (r.seconds > r.limit_seconds) {
      r.pass = false;
      r.detail += " [over time limit]";
    }
    out << "[" << index << "/9] " << (r.pass ? "PASS" : "FAIL") << " "
        << r.name << " | " << r.detail << " | " << fmt3(r.seconds)
        << "s (limit " << fmt3(r.limit_seconds) << "s)\n";
    out.flush();
    results.push_back(std::move(r));
  };

  // 1. The schedule-derived averaging weights reproduce the reference table.
  criterion(1, "wma-weight-reproduction", 1.0, [](std::string& detail) {
    const Schedule s = Schedule::wsd_one_sqrt(1.0, 0.05, 1000, 0, 0);
    const auto weights = derive_wma_weights(normalized_etas(s, 6));
    const std::vector<double> expected{0.4249, 0.1760, 0.1350,
                                       0.1138, 0.1003, 0.0500};
    double max_err = 0.0;
    for (std::size_t i = 0; i < expected.size(); ++i)
      max_err = std::max(max_err, std::fabs(weights[i] - expected[i]));
    detail = "max_err=" + fmt3(max_err) + " tol=1e-3";
    return max_err <= 1e-3;
  });

  // 2. Averaging with those weights re-weights the per-checkpoint updates.
  criterion(2, "wma-reweighting-identity", 5.0, [](std::string& detail) {
    const Schedule s = Schedule::wsd_one_sqrt(1.0, 0.05, 1000, 0, 0);
    const std::size_t window = 6, dim = 1000;
    const auto etas = normalized_etas(s, static_cast<std::int64_t>(window));
    const auto weights = derive_wma_weights(etas);

    double worst = 0.0;
    for (int series = 0; series < 100; ++series) {
      CounterRng rng = CounterRng::substream(2024, static_cast<std::uint64_t>(series));
      ParamVector anchor(dim);
      for (auto& v : anchor) v = rng.normal();
      std::vector<ParamVector> updates(window, ParamVector(dim));
      for (auto& g : updates)
        for (auto& v : g) v = rng.normal();

      CheckpointSeries cps;
      ParamVector current = anchor;
      for (std::size_t k = 0; k < window; ++k) {
        for (std::size_t j = 0; j < dim; ++j) current[j] += updates[k][j];
        cps.checkpoints.push_back(current);
        cps.steps.push_back(static_cast<std::int64_t>(k + 1));
      }
      const ParamVector averaged = average(cps, AverageStrategy::wma(weights));

      double num = 0.0, den = 0.0;
      for (std::size_t j = 0; j < dim; ++j) {
        long double expect = anchor[j];
        for (std::size_t k = 0; k < window; ++k)
          expect += static_cast<long double>(etas[k]) * updates[k][j];
        num = std::max(num, std::fabs(averaged[j] - static_cast<double>(expect)));
        den = std::max(den, std::fabs(static_cast<double>(expect)));
      }
      worst = std::max(worst, num / den);
    }
    detail = "max_rel_err=" + fmt3(worst) + " tol=1e-12";
    return worst <= 1e-12;
  });

  // 3. Moderate decay and tail averaging shrink the loss like M^(-2/3).
  criterion(3, "theory-scaling-positive", 300.0, [](std::string& detail) {
    const std::vector<std::int64_t> sizes{1000, 10000, 100000};
    auto slope_for = [&](theory::Strategy strategy) {
      std::vector<std::pair<double, double>> points;
      for (std::int64_t m : sizes) {
        theory::TheoryConfig cfg;
        cfg.dataset_size = m;
        cfg.scale = 1.0;
        cfg.strategy = strategy;
        cfg.seed = 7;
        points.emplace_back(static_cast<double>(m),
                            theory::estimate_loss(cfg, 200).mean);
      }
      return theory::fit_scaling(points);
    };
    const double slope_wsmd = slope_for(theory::Strategy::ascend_wsmd());
    const double slope_swa = slope_for(theory::Strategy::ascend_swa());
    detail = "slope_wsmd=" + fmt3(slope_wsmd) + " slope_swa=" +
             fmt3(slope_swa) + " range=[-0.85,-0.50]";
    auto ok = [](double v) { return v >= -0.85 && v <= -0.50; };
    return ok(slope_wsmd) && ok(slope_swa);
  });

  // 4. Uniform sampling and aggressive decay stay away from the optimum.
  criterion(4, "theory-scaling-negative", 300.0, [](std::string& detail) {
    const std::vector<std::int64_t> sizes{1000, 10000, 100000};
    bool floors_ok = true;
    double min_loss = std::numeric_limits<double>::infinity();
    auto slope_for = [&](theory::Strategy strategy) {
      std::vector<std::pair<double, double>> points;
      for (std::int64_t m : sizes) {
        theory::TheoryConfig cfg;
        cfg.dataset_size = m;
        cfg.scale = 1.0;
        cfg.strategy = strategy;
        cfg.seed = 11;
        const double mean = theory::estimate_loss(cfg, 200).mean;
        min_loss = std::min(min_loss, mean);
        if (mean < 0.05) floors_ok = false;
        points.emplace_back(static_cast<double>(m), mean);
      }
      return theory::fit_scaling(points);
    };
    const double slope_uniform = slope_for(theory::Strategy::uniform(
        {theory::TheoryScheduleKind::PracticalWsd, 0.5, 0.0}));
    const double slope_ascend =
        slope_for(theory::Strategy::ascend_practical_wsd());
    detail = "slope_uniform=" + fmt3(slope_uniform) + " slope_ascend_wsd=" +
             fmt3(slope_ascend) + " min_loss=" + fmt3(min_loss) +
             " floor=0.05 min_slope=-0.1";
    return floors_ok && slope_uniform >= -0.1 && slope_ascend >= -0.1;
  });

  // 5. Monte Carlo agrees with the exact moment recursion.
  criterion(5, "theory-oracle-equivalence", 30.0, [](std::string& detail) {
    theory::TheoryConfig cfg;
    cfg.dataset_size = 50;
    cfg.scale = 1.0;
    cfg.strategy =
        theory::Strategy::uniform({theory::TheoryScheduleKind::Constant, 0.5, 0.0});
    cfg.seed = 3;
    const theory::LossEstimate est = theory::estimate_loss(cfg, 100000);
    const double oracle = theory::oracle_moments(cfg).loss();
    const double gap = std::fabs(est.mean - oracle);
    detail = "mc=" + fmt3(est.mean) + " oracle=" + fmt3(oracle) + " gap=" +
             fmt3(gap) + " tol=3*stderr=" + fmt3(3.0 * est.std_error);
    return gap <= 3.0 * est.std_error;
  });

  // 6. Under a constant LR the ascending curriculum beats uniform ordering,
  //    by at least three standard errors of the seed-to-seed gap.
  criterion(6, "toy-curriculum-win-constant-lr", 600.0,
            [&](std::string& detail) {
    build_base_arms(arms);
    const double med_uniform = median(arms.uniform_const);
    const double med_ascend = median(arms.ascend_const);
    const double gap = med_uniform - med_ascend;

    const std::size_t n = kToySeeds.size();
    long double mean_diff = 0.0L;
    for (std::size_t i = 0; i < n; ++i)
      mean_diff += arms.uniform_const[i] - arms.ascend_const[i];
    mean_diff /= static_cast<long double>(n);
    long double var = 0.0L;
    for (std::size_t i = 0; i < n; ++i) {
      const long double dev =
          arms.uniform_const[i] - arms.ascend_const[i] - mean_diff;
      var += dev * dev;
    }
    const double seed_noise = std::sqrt(
        static_cast<double>(var / (static_cast<long double>(n - 1) *
                                   static_cast<long double>(n))));

    detail = "median_uniform=" + fmt3(med_uniform) + " median_ascend=" +
             fmt3(med_ascend) + " gap=" + fmt3(gap) + " seed_noise=" +
             fmt3(seed_noise) + " (stderr of the per-seed gap, n=5)";
    return med_ascend < med_uniform && gap >= 3.0 * seed_noise;
  });

  // 7. Aggressive decay shrinks the curriculum's advantage.
  criterion(7, "toy-decay-erodes-gap", 600.0, [&](std::string& detail) {
    build_base_arms(arms);
    std::vector<double> gap_const, gap_wsd;
    for (std::size_t i = 0; i < kToySeeds.size(); ++i) {
      gap_const.push_back(arms.uniform_const[i] - arms.ascend_const[i]);
      gap_wsd.push_back(arms.uniform_wsd[i] - arms.ascend_wsd[i]);
    }
    const double g_const = median(gap_const);
    const double g_wsd = median(gap_wsd);
    detail = "gap_const=" + fmt3(g_const) + " gap_wsd=" + fmt3(g_wsd);
    return g_wsd < g_const;
  });

  // 8. The averaging pipeline beats the decayed baseline, and the curriculum
  //    prefers a higher ending LR than uniform ordering does.
  criterion(8, "toy-cma-and-ending-lr-ordering", 1800.0,
            [&](std::string& detail) {
    build_base_arms(arms);
    const double med_cma = median(arms.cma);
    const double med_baseline = median(arms.uniform_wsd);

    // Ending-LR sweep, decay only (no averaging).
    std::map<double, std::vector<double>> uniform_losses, ascend_losses;
    for (std::uint64_t seed : kToySeeds) {
      toy::ToyTaskConfig task_cfg;
      task_cfg.dim = kToyDim;
      task_cfg.n_train = kToyTrain;
      task_cfg.n_val = kToyVal;
      task_cfg.noise_max = kToyNoiseMax;
      task_cfg.seed = seed;
      const toy::ToyTask task(task_cfg);
      for (double ratio : kSweepRatios) {
        for (bool ascend : {false, true}) {
          const toy::TrainResult result = toy::train(
              task, toy_train_config(toy_wsd(ratio), ascend, seed));
          (ascend ? ascend_losses : uniform_losses)[ratio].push_back(
              toy::evaluate(result.final_params, task));
        }
      }
    }
    auto argmin_ratio = [](const std::map<double, std::vector<double>>& table) {
      double best_ratio = 0.0;
      double best = std::numeric_limits<double>::infinity();
      for (const auto& [ratio, losses] : table) {
        const double med = median(losses);
        if (med < best) {
          best = med;
          best_ratio = ratio;
        }
      }
      return best_ratio;
    };
    const double uniform_best = argmin_ratio(uniform_losses);
    const double ascend_best = argmin_ratio(ascend_losses);

    detail = "median_cma=" + fmt3(med_cma) + " median_uniform_wsd=" +
             fmt3(med_baseline) + " argmin_end_ratio_uniform=" +
             fmt3(uniform_best) + " argmin_end_ratio_ascend=" +
             fmt3(ascend_best);
    return med_cma <= med_baseline && ascend_best > uniform_best;
  });

  // 9. Identical commands produce byte-identical CSV files.
  criterion(9, "output-determinism", 60.0, [&](std::string& detail) {
    const fs::path dir(scratch_dir);

    const Schedule s = Schedule::wsd_one_sqrt(3e-3, 1e-5, 10000, 500, 8000);
    write_schedule_eval_csv((dir / "sched_a.csv").string(), s, 7);
    write_schedule_eval_csv((dir / "sched_b.csv").string(), s, 7);

    theory::TheoryConfig cfg;
    cfg.dataset_size = 1000;
    cfg.scale = 1.0;
    cfg.strategy = theory::Strategy::ascend_wsmd();
    cfg.seed = 42;
    write_theory_losses_csv((dir / "sim_a.csv").string(), cfg, 50);
    write_theory_losses_csv((dir / "sim_b.csv").string(), cfg, 50);

    ScoredDataset scores;
    CounterRng rng = CounterRng::substream(99, 0);
    scores.scores.resize(5000);
    for (auto& q : scores.scores) q = rng.next_double();
    const auto policy = OrderPolicy::folded(3, 7);
    write_permutation((dir / "perm_a.txt").string(),
                      make_order(scores, policy));
    write_permutation((dir / "perm_b.txt").string(),
                      make_order(scores, policy));

    const bool sched_ok = read_file((dir / "sched_a.csv").string()) ==
                          read_file((dir / "sched_b.csv").string());
    const bool sim_ok = read_file((dir / "sim_a.csv").string()) ==
                        read_file((dir / "sim_b.csv").string());
    const bool perm_ok = read_file((dir / "perm_a.txt").string()) ==
                         read_file((dir / "perm_b.txt").string());
    detail = std::string("schedule_csv=") + (sched_ok ? "identical" : "diff") +
             " sim_csv=" + (sim_ok ? "identical" : "diff") +
             " order=" + (perm_ok ? "identical" : "diff");
    return sched_ok && sim_ok && perm_ok;
  });

  return results;
}

}  // namespace cmalab::harness
