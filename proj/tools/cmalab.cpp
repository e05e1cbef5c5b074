// Command-line front end for the schedule / curriculum / averaging laboratory.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"

#include "cmalab/averaging.hpp"
#include "cmalab/csv.hpp"
#include "cmalab/data_order.hpp"
#include "cmalab/harness.hpp"
#include "cmalab/schedule.hpp"
#include "cmalab/theory.hpp"
#include "cmalab/toy.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Relative output paths land under $CMALAB_OUT_DIR when it is set.
std::string resolve_out(const std::string& path) {
  if (path.empty() || fs::path(path).is_absolute()) return path;
  const char* base = std::getenv("CMALAB_OUT_DIR");
  if (base == nullptr || *base == '\0') return path;
  return (fs::path(base) / path).string();
}

// Resolves against $CMALAB_OUT_DIR and makes sure the directory exists.
std::string prepare_out(const std::string& path) {
  const std::string resolved = resolve_out(path);
  if (const fs::path parent = fs::path(resolved).parent_path(); !parent.empty())
    fs::create_directories(parent);
  return resolved;
}

std::ofstream open_out(const std::string& path) {
  const std::string resolved = prepare_out(path);
  std::ofstream out(resolved, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + resolved + " for writing");
  return out;
}

struct ScheduleArgs {
  std::string shape = "wsd_one_sqrt";
  double peak_lr = 3e-3;
  double end_lr = 1e-5;
  std::int64_t warmup_steps = 0;
  std::int64_t total_steps = 10000;
  std::int64_t decay_start = -1;  // -1: shape default
  std::string json_path;
};

cmalab::Schedule schedule_from_args(const ScheduleArgs& args) {
  if (!args.json_path.empty()) {
    std::ifstream in(args.json_path);
    if (!in) throw std::runtime_error("cannot open " + args.json_path);
    return json::parse(in).get<cmalab::Schedule>();
  }
  cmalab::Schedule s;
  s.shape = cmalab::schedule_shape_from_string(args.shape);
  s.peak_lr = args.peak_lr;
  s.end_lr = s.shape == cmalab::ScheduleShape::Constant ? args.peak_lr : args.end_lr;
  s.warmup_steps = args.warmup_steps;
  s.total_steps = args.total_steps;
  if (args.decay_start >= 0) {
    s.decay_start = args.decay_start;
  } else if (s.shape == cmalab::ScheduleShape::Cosine) {
    s.decay_start = s.warmup_steps;
  } else if (s.shape == cmalab::ScheduleShape::Constant) {
    s.decay_start = s.total_steps;
  } else {
    s.decay_start = s.total_steps - s.total_steps / 5;
  }
  cmalab::validate(s);
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Learning-rate schedule, data-curriculum and checkpoint-averaging lab"};
  app.require_subcommand(1);

  // --- schedule eval ---
  auto* schedule_cmd = app.add_subcommand("schedule", "Schedule utilities");
  schedule_cmd->require_subcommand(1);
  auto* eval_cmd = schedule_cmd->add_subcommand("eval", "Print (step, lr) pairs as CSV");
  ScheduleArgs sched_args;
  std::int64_t every = 1;
  std::string out_path;
  eval_cmd->add_option("--shape", sched_args.shape,
                       "constant|cosine|wsd_one_sqrt|wsd_sqrt_cube");
  eval_cmd->add_option("--peak-lr", sched_args.peak_lr, "Peak learning rate");
  eval_cmd->add_option("--end-lr", sched_args.end_lr, "Ending learning rate");
  eval_cmd->add_option("--warmup-steps", sched_args.warmup_steps, "Warmup steps");
  eval_cmd->add_option("--total-steps", sched_args.total_steps, "Total steps");
  eval_cmd->add_option("--decay-start", sched_args.decay_start,
                       "First decay step (default: shape-specific)");
  eval_cmd->add_option("--json", sched_args.json_path, "Schedule JSON file");
  eval_cmd->add_option("--every", every, "Emit every k-th step");
  eval_cmd->add_option("-o,--out", out_path, "Output CSV (default stdout)");
  eval_cmd->callback([&]() {
    const cmalab::Schedule s = schedule_from_args(sched_args);
    if (out_path.empty()) {
      std::cout << "step,lr\n";
      for (std::int64_t t = 0; t <= s.total_steps; t += every)
        std::cout << t << "," << cmalab::fmt_double(eta_at(s, t)) << "\n";
    } else {
      cmalab::harness::write_schedule_eval_csv(prepare_out(out_path), s, every);
    }
  });

  // --- order ---
  auto* order_cmd = app.add_subcommand("order", "Turn quality scores into a training order");
  std::string scores_path, policy_text = "ascend", perm_out = "permutation.txt";
  std::uint64_t order_seed = 0;
  order_cmd->add_option("--scores", scores_path, "CSV (index,score) or JSONL scores")
      ->required();
  order_cmd->add_option("--policy", policy_text,
                        "uniform|ascend|descend|folded:K|all_together|"
                        "two_phase:FIRST+SECOND:SPLIT");
  order_cmd->add_option("--seed", order_seed, "Shuffle seed");
  order_cmd->add_option("-o,--out", perm_out, "Output permutation file");
  order_cmd->callback([&]() {
    const cmalab::ScoredDataset ds =
        scores_path.size() > 6 &&
                scores_path.substr(scores_path.size() - 6) == ".jsonl"
            ? cmalab::load_scores_jsonl(scores_path)
            : cmalab::load_scores_csv(scores_path);
    cmalab::OrderPolicy policy = cmalab::parse_policy(policy_text);
    cmalab::seed_policy(policy, order_seed);
    cmalab::write_permutation(prepare_out(perm_out), make_order(ds, policy));
    std::cout << "wrote " << ds.size() << " indices\n";
  });

  // --- average ---
  auto* avg_cmd = app.add_subcommand("average", "Average a tail window of checkpoints");
  std::string strategy_name = "ema", avg_out = "averaged.bin";
  double alpha = 0.2, wma_end_ratio = 0.05;
  std::int64_t window = 6;
  std::vector<std::string> inputs;
  avg_cmd->add_option("--strategy", strategy_name, "sma|ema|wma");
  avg_cmd->add_option("--alpha", alpha, "EMA decay");
  avg_cmd->add_option("--window", window, "Number of most recent checkpoints");
  avg_cmd->add_option("--wma-end-ratio", wma_end_ratio,
                      "Ending/peak LR ratio of the hypothetical 1-sqrt schedule");
  avg_cmd->add_option("-o,--out", avg_out, "Output checkpoint path");
  avg_cmd->add_option("checkpoints", inputs, "Checkpoint files, oldest first")
      ->required();
  avg_cmd->callback([&]() {
    if (window < 1) throw CLI::ValidationError("--window must be >= 1");
    cmalab::CheckpointSeries series;
    const std::size_t take = std::min<std::size_t>(
        inputs.size(), static_cast<std::size_t>(window));
    for (std::size_t i = inputs.size() - take; i < inputs.size(); ++i) {
      auto loaded = cmalab::load_checkpoint(inputs[i]);
      series.checkpoints.push_back(std::move(loaded.values));
      series.steps.push_back(loaded.step);
    }
    cmalab::AverageStrategy strategy;
    const auto kind = cmalab::average_kind_from_string(strategy_name);
    if (kind == cmalab::AverageStrategy::Kind::Sma) {
      strategy = cmalab::AverageStrategy::sma();
    } else if (kind == cmalab::AverageStrategy::Kind::Ema) {
      strategy = cmalab::AverageStrategy::ema(alpha);
    } else {
      const auto schedule =
          cmalab::Schedule::wsd_one_sqrt(1.0, wma_end_ratio, 1000, 0, 0);
      strategy = cmalab::AverageStrategy::wma(cmalab::derive_wma_weights(
          cmalab::normalized_etas(schedule, static_cast<std::int64_t>(take))));
    }
    const auto averaged = cmalab::average(series, strategy);
    cmalab::save_checkpoint(prepare_out(avg_out), averaged, series.steps.back());
    std::cout << "averaged " << take << " checkpoints -> " << resolve_out(avg_out)
              << "\n";
  });

  // --- sim theory ---
  auto* sim_cmd = app.add_subcommand("sim", "Simulations");
  sim_cmd->require_subcommand(1);
  auto* theory_cmd = sim_cmd->add_subcommand(
      "theory", "2D quadratic SGD model: per-run final losses");
  std::string strat_name = "uniform", theory_schedule = "wsd";
  std::int64_t sim_m = 1000, sim_runs = 200;
  double sim_l = 1.0, eta0 = 0.5, t0_exp = 2.0 / 3.0, n_exp = 2.0 / 3.0;
  std::uint64_t sim_seed = 0;
  std::string losses_out, traj_out;
  theory_cmd->add_option("--strategy", strat_name,
                         "uniform|ascend_wsd|ascend_wsmd|ascend_swa");
  theory_cmd->add_option("--schedule", theory_schedule,
                         "constant|wsd|wsmd (uniform strategy only)");
  theory_cmd->add_option("-M,--M", sim_m, "Dataset size = iteration count");
  theory_cmd->add_option("-L,--L", sim_l, "Scale");
  theory_cmd->add_option("--runs", sim_runs, "Monte Carlo runs");
  theory_cmd->add_option("--seed", sim_seed, "Seed");
  theory_cmd->add_option("--eta0", eta0, "Constant/plateau learning rate");
  theory_cmd->add_option("--t0-exponent", t0_exp, "WSMD decay-window exponent");
  theory_cmd->add_option("--n-exponent", n_exp, "SWA window exponent");
  std::int64_t traj_runs = 1;
  theory_cmd->add_option("-o,--out", losses_out, "Per-run losses CSV");
  theory_cmd->add_option("--trajectory", traj_out, "Trajectory CSV");
  theory_cmd->add_option("--trajectory-runs", traj_runs,
                         "Average the trajectory over this many runs");
  theory_cmd->callback([&]() {
    const json j{{"M", sim_m},           {"L", sim_l},
                 {"seed", sim_seed},     {"strategy", strat_name},
                 {"schedule", theory_schedule}, {"eta0", eta0},
                 {"t0_exponent", t0_exp}, {"n_exponent", n_exp}};
    const auto cfg = cmalab::harness::theory_config_from_json(j);
    const auto est = cmalab::theory::estimate_loss(cfg, sim_runs);
    std::cout << "strategy=" << strat_name << " M=" << sim_m
              << " L=" << cmalab::fmt_double(sim_l) << " runs=" << sim_runs
              << " mean_loss=" << cmalab::fmt_double(est.mean)
              << " std_error=" << cmalab::fmt_double(est.std_error) << "\n";
    if (!losses_out.empty())
      cmalab::harness::write_theory_losses_csv(prepare_out(losses_out), cfg,
                                               sim_runs);
    if (!traj_out.empty())
      cmalab::harness::write_theory_trajectory_csv(prepare_out(traj_out), cfg,
                                                   traj_runs);
  });

  // --- train toy ---
  auto* train_cmd = app.add_subcommand("train", "Trainers");
  train_cmd->require_subcommand(1);
  auto* toy_cmd =
      train_cmd->add_subcommand("toy", "Single-pass synthetic regression run");
  std::string toy_config_path, record_out, summary_out;
  toy_cmd->add_option("--config", toy_config_path, "Run config JSON")->required();
  toy_cmd->add_option("--record", record_out, "RunRecord CSV output");
  toy_cmd->add_option("--summary", summary_out, "Summary JSON output");
  toy_cmd->callback([&]() {
    std::ifstream in(toy_config_path);
    if (!in) throw std::runtime_error("cannot open " + toy_config_path);
    const json cfg_json = json::parse(in);
    auto [task_cfg, train_cfg] = cmalab::harness::toy_configs_from_json(cfg_json);
    const cmalab::toy::ToyTask task(task_cfg);

    json summary;
    if (train_cfg.averaging) {
      const auto result = cmalab::toy::run_cma(task, train_cfg);
      summary["final_val_loss"] = result.val_loss;
      summary["last_checkpoint_val_loss"] = result.last_checkpoint_val_loss;
      if (!record_out.empty()) {
        auto cfg_no_avg = train_cfg;
        cfg_no_avg.averaging.reset();
        cmalab::toy::write_run_record_csv(
            prepare_out(record_out), cmalab::toy::train(task, cfg_no_avg).record);
      }
    } else {
      const auto result = cmalab::toy::train(task, train_cfg);
      summary["final_val_loss"] = cmalab::toy::evaluate(result.final_params, task);
      if (!record_out.empty())
        cmalab::toy::write_run_record_csv(prepare_out(record_out), result.record);
    }
    std::cout << summary.dump() << "\n";
    if (!summary_out.empty()) open_out(summary_out) << summary.dump(2) << "\n";
  });

  // --- sweep ---
  auto* sweep_cmd = app.add_subcommand("sweep", "Run an experiment grid");
  std::string spec_path, sweep_out_override;
  int jobs = 0;
  sweep_cmd->add_option("--spec", spec_path, "Experiment spec JSON")->required();
  sweep_cmd->add_option("--jobs", jobs, "Parallel cells (0 = all cores)");
  sweep_cmd->add_option("-o,--out", sweep_out_override, "Override output_path");
  sweep_cmd->callback([&]() {
    cmalab::harness::ExperimentSpec spec = cmalab::harness::load_spec(spec_path);
    if (!sweep_out_override.empty()) spec.output_path = sweep_out_override;
    spec.output_path = resolve_out(spec.output_path);
    cmalab::harness::RunOptions options;
    options.jobs = jobs;
    const auto table = cmalab::harness::run_experiment(spec, options);
    std::size_t failed = 0;
    for (const auto& row : table.rows) failed += row.failed ? 1 : 0;
    std::cout << "experiment " << spec.name << ": " << table.rows.size()
              << " rows, " << failed << " failed\n";
    if (failed > 0) throw CLI::RuntimeError("", 1);
  });

  // --- accept ---
  auto* accept_cmd = app.add_subcommand("accept", "Run the acceptance suite");
  std::string scratch = "accept-scratch";
  int only = 0;
  accept_cmd->add_option("--scratch", scratch, "Scratch directory");
  accept_cmd->add_option("--only", only, "Run a single criterion (1-9)");
  accept_cmd->callback([&]() {
    const auto results =
        cmalab::harness::run_acceptance(resolve_out(scratch), std::cout, only);
    if (!cmalab::harness::all_passed(results)) throw CLI::RuntimeError("", 1);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
