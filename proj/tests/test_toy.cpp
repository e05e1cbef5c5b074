#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include "cmalab/harness.hpp"
#include "cmalab/rng.hpp"
#include "cmalab/toy.hpp"

using namespace cmalab;
using namespace cmalab::toy;

namespace {

ToyTaskConfig small_task(std::uint64_t seed, double noise_max = 2.0) {
  ToyTaskConfig cfg;
  cfg.dim = 16;
  cfg.n_train = 40000;
  cfg.n_val = 2048;
  cfg.noise_max = noise_max;
  cfg.seed = seed;
  return cfg;
}

TrainConfig small_train(const Schedule& schedule, OrderPolicy policy,
                        std::uint64_t seed) {
  TrainConfig cfg;
  cfg.schedule = schedule;
  cfg.order_policy = std::move(policy);
  seed_policy(cfg.order_policy, seed);
  cfg.batch_size = 8;
  cfg.checkpoint_interval = 200;
  cfg.checkpoint_window = 6;
  cfg.seed = seed;
  return cfg;
}

Schedule small_constant() { return Schedule::constant(0.02, 5000, 200); }

Schedule small_wsd(double end_ratio) {
  return Schedule::wsd_one_sqrt(0.02, 0.02 * end_ratio, 5000, 200, 4000);
}

}  // namespace

TEST_CASE("noise law hits its endpoints") {
  ToyTaskConfig cfg;
  cfg.noise_max = 3.0;
  CHECK(noise_sigma(cfg, 1.0) == 0.0);
  CHECK(noise_sigma(cfg, 0.0) == 3.0);
  CHECK(noise_sigma(cfg, 0.5) == 1.5);
}

TEST_CASE("zero noise_max makes every sample noiseless regardless of score") {
  ToyTaskConfig cfg = small_task(1, /*noise_max=*/0.0);
  cfg.n_train = 500;
  const ToyTask task(cfg);
  const auto& w_star = task.true_weights();
  for (std::int64_t i = 0; i < cfg.n_train; ++i) {
    const auto x = task.train_input(i);
    double dot = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) dot += w_star[j] * x[j];
    CHECK(task.train_label(i) == dot);
  }
}

TEST_CASE("label variance of a zero-quality pool matches the decomposition") {
  ToyTaskConfig cfg;
  cfg.dim = 8;
  cfg.n_train = 100000;
  cfg.n_val = 16;
  cfg.noise_max = 2.0;
  cfg.quality = QualityDistribution::TwoPool;
  cfg.low_fraction = 0.5;
  cfg.low_range = {0.0, 0.0};  // exactly q = 0
  cfg.high_range = {0.9, 1.0};
  cfg.seed = 9;
  const ToyTask task(cfg);

  double norm2 = 0.0;
  for (double w : task.true_weights()) norm2 += w * w;
  const std::int64_t n_low = 50000;
  long double sum = 0.0L, sq = 0.0L;
  for (std::int64_t i = 0; i < n_low; ++i) {
    CHECK(task.scores()[static_cast<std::size_t>(i)] == 0.0);
    const double y = task.train_label(i);
    sum += y;
    sq += static_cast<long double>(y) * y;
  }
  const double mean = static_cast<double>(sum / n_low);
  const double var = static_cast<double>(sq / n_low) - mean * mean;
  const double expected = norm2 + cfg.noise_max * cfg.noise_max;
  CHECK(std::fabs(var / expected - 1.0) <= 0.02);
}

TEST_CASE("two-pool scores are blocked low then high") {
  ToyTaskConfig cfg = small_task(3);
  cfg.n_train = 1000;
  cfg.quality = QualityDistribution::TwoPool;
  cfg.low_fraction = 0.8;
  const ToyTask task(cfg);
  for (std::size_t i = 0; i < 800; ++i) {
    CHECK(task.scores()[i] >= cfg.low_range.first);
    CHECK(task.scores()[i] <= cfg.low_range.second);
  }
  for (std::size_t i = 800; i < 1000; ++i) {
    CHECK(task.scores()[i] >= cfg.high_range.first);
    CHECK(task.scores()[i] <= cfg.high_range.second);
  }
}

TEST_CASE("training twice with the same seeds is bit-identical") {
  const ToyTask task(small_task(7));
  const auto cfg = small_train(small_wsd(0.1), OrderPolicy::uniform(7), 7);
  const auto a = train(task, cfg);
  const auto b = train(task, cfg);
  CHECK(a.final_params == b.final_params);
  CHECK(a.record.train_losses == b.record.train_losses);
  CHECK(a.record.lrs == b.record.lrs);
  CHECK(a.record.val_losses == b.record.val_losses);
}

TEST_CASE("a single hand-checked gradient step") {
  ToyTaskConfig cfg;
  cfg.dim = 1;
  cfg.n_train = 1;
  cfg.n_val = 4;
  cfg.noise_max = 0.5;
  cfg.seed = 13;
  const ToyTask task(cfg);
  TrainConfig train_cfg;
  train_cfg.schedule = Schedule::constant(0.5, 1, 0);
  train_cfg.order_policy = OrderPolicy::ascend();
  train_cfg.batch_size = 1;
  train_cfg.checkpoint_interval = 1;
  train_cfg.checkpoint_window = 1;
  const auto result = train(task, train_cfg);
  // gradient of 0.5*(w x - y)^2 at w = 0 is -y x, so one step gives eta*y*x
  const double x = task.train_input(0)[0];
  const double y = task.train_label(0);
  CHECK(result.final_params[0] == 0.5 * y * x);
  CHECK(result.record.train_losses[0] == 0.5 * y * y);
}

TEST_CASE("a zero learning-rate step leaves the parameters untouched") {
  ToyTaskConfig cfg;
  cfg.dim = 4;
  cfg.n_train = 1;
  cfg.n_val = 4;
  cfg.seed = 2;
  const ToyTask task(cfg);
  TrainConfig train_cfg;
  // sqrt-cube hits exactly zero at the final (here: only) step
  train_cfg.schedule = Schedule::wsd_sqrt_cube(0.5, 1, 0, 0);
  train_cfg.order_policy = OrderPolicy::ascend();
  train_cfg.batch_size = 1;
  train_cfg.checkpoint_interval = 1;
  train_cfg.checkpoint_window = 1;
  const auto result = train(task, train_cfg);
  CHECK(result.final_params == ParamVector(4, 0.0));
}

TEST_CASE("checkpoints land on the trailing window steps") {
  const ToyTask task(ToyTaskConfig{.dim = 4, .n_train = 4000, .n_val = 16,
                                   .noise_max = 1.0, .seed = 5});
  TrainConfig cfg;
  cfg.schedule = Schedule::constant(0.01, 1000, 10);
  cfg.order_policy = OrderPolicy::uniform(1);
  cfg.batch_size = 4;
  cfg.checkpoint_interval = 100;
  cfg.checkpoint_window = 6;
  const auto result = train(task, cfg);
  CHECK(result.checkpoints.steps ==
        std::vector<std::int64_t>{500, 600, 700, 800, 900, 1000});
  CHECK(result.record.val_losses.size() == 6);
  CHECK(result.checkpoints.checkpoints.back() == result.final_params);
}

TEST_CASE("train validates the stream and window sizes") {
  const ToyTask task(ToyTaskConfig{.dim = 4, .n_train = 1000, .n_val = 16,
                                   .noise_max = 1.0, .seed = 5});
  TrainConfig cfg;
  cfg.schedule = Schedule::constant(0.01, 400, 0);
  cfg.order_policy = OrderPolicy::ascend();
  cfg.batch_size = 2;  // 400 * 2 != 1000
  CHECK_THROWS_AS(train(task, cfg), std::invalid_argument);

  cfg.schedule = Schedule::constant(0.01, 500, 0);
  cfg.checkpoint_interval = 100;
  cfg.checkpoint_window = 6;  // 600 > 500
  CHECK_THROWS_AS(train(task, cfg), std::invalid_argument);
}

TEST_CASE("divergence raises a diagnostic with the failing step") {
  const ToyTask task(ToyTaskConfig{.dim = 32, .n_train = 4000, .n_val = 16,
                                   .noise_max = 1.0, .seed = 6});
  TrainConfig cfg;
  cfg.schedule = Schedule::constant(5.0, 500, 0);  // far past stability
  cfg.order_policy = OrderPolicy::uniform(6);
  cfg.batch_size = 8;
  cfg.checkpoint_interval = 10;
  cfg.checkpoint_window = 1;
  try {
    train(task, cfg);
    FAIL("expected divergence");
  } catch (const DivergenceError& e) {
    CHECK(e.step() > 0);
    CHECK(e.step() <= 500);
  }
}

TEST_CASE("evaluate is exact at the teacher and at zero") {
  const ToyTask task(small_task(8));
  CHECK(evaluate(task.true_weights(), task) == 0.0);

  long double acc = 0.0L;
  for (std::int64_t j = 0; j < task.config().n_val; ++j)
    acc += 0.5L * task.val_label(j) * task.val_label(j);
  const double expected = static_cast<double>(acc / task.config().n_val);
  const ParamVector zeros(static_cast<std::size_t>(task.config().dim), 0.0);
  CHECK(evaluate(zeros, task) == doctest::Approx(expected).epsilon(1e-12));

  ParamVector bad = zeros;
  bad[0] = std::nan("");
  CHECK_THROWS_AS(evaluate(bad, task), std::invalid_argument);
}

TEST_CASE("validation loss matches the gaussian identity") {
  // for standard normal inputs, E[0.5 (dx)^2] = 0.5 ||d||^2
  ToyTaskConfig cfg = small_task(10);
  cfg.n_val = 8192;
  const ToyTask task(cfg);
  CounterRng rng = CounterRng::substream(55, 0);
  ParamVector params = task.true_weights();
  double norm2 = 0.0;
  for (auto& p : params) {
    const double delta = 0.3 * rng.normal();
    p += delta;
    norm2 += delta * delta;
  }
  const double loss = evaluate(params, task);
  CHECK(loss == doctest::Approx(0.5 * norm2).epsilon(0.10));
}

TEST_CASE("run_cma with a window of one returns the final checkpoint") {
  const ToyTask task(small_task(11));
  auto cfg = small_train(small_constant(), OrderPolicy::ascend(), 11);
  cfg.checkpoint_window = 1;
  cfg.averaging = AverageStrategy::ema(0.37);  // alpha is irrelevant at k=1
  const auto cma = run_cma(task, cfg);
  auto plain_cfg = cfg;
  plain_cfg.averaging.reset();
  const auto plain = train(task, plain_cfg);
  CHECK(cma.params == plain.final_params);
  CHECK(cma.val_loss == cma.last_checkpoint_val_loss);
}

TEST_CASE("run_cma default path equals the averaging module's ema") {
  const ToyTask task(small_task(12));
  auto cfg = small_train(small_constant(), OrderPolicy::ascend(), 12);
  cfg.averaging = AverageStrategy::ema(0.2);
  const auto cma = run_cma(task, cfg);
  auto plain_cfg = cfg;
  plain_cfg.averaging.reset();
  const auto trained = train(task, plain_cfg);
  CHECK(cma.params == average(trained.checkpoints, AverageStrategy::ema(0.2)));
}

TEST_CASE("geometric ema weights alpha^i toward recent checkpoints") {
  const ToyTask task(small_task(14));
  auto cfg = small_train(small_constant(), OrderPolicy::ascend(), 14);
  cfg.averaging = AverageStrategy::ema(0.2);
  cfg.geometric_ema = true;
  const auto cma = run_cma(task, cfg);

  auto plain_cfg = cfg;
  plain_cfg.averaging.reset();
  const auto trained = train(task, plain_cfg);
  const std::size_t n = trained.checkpoints.size();
  long double norm = 0.0L;
  std::vector<long double> weights(n);
  for (std::size_t i = 0; i < n; ++i) {
    weights[n - 1 - i] = std::pow(0.2L, static_cast<long double>(i));
    norm += weights[n - 1 - i];
  }
  for (std::size_t j = 0; j < cma.params.size(); ++j) {
    long double acc = 0.0L;
    for (std::size_t i = 0; i < n; ++i)
      acc += (weights[i] / norm) * trained.checkpoints.checkpoints[i][j];
    CHECK(cma.params[j] == doctest::Approx(static_cast<double>(acc)).epsilon(1e-12));
  }
  // the two ema formulations genuinely differ
  cfg.geometric_ema = false;
  CHECK(run_cma(task, cfg).params != cma.params);
}

TEST_CASE("run_cma rejects unsupported configurations") {
  const ToyTask task(small_task(15));
  auto cfg = small_train(small_constant(), OrderPolicy::ascend(), 15);
  SUBCASE("missing averaging") {
    CHECK_THROWS_AS(run_cma(task, cfg), std::invalid_argument);
  }
  SUBCASE("wma strategy") {
    cfg.averaging = AverageStrategy::wma({1.0});
    CHECK_THROWS_AS(run_cma(task, cfg), std::invalid_argument);
  }
  SUBCASE("cosine schedule") {
    cfg.averaging = AverageStrategy::ema(0.2);
    cfg.schedule = Schedule::cosine(0.02, 1e-4, 5000, 200);
    CHECK_THROWS_AS(run_cma(task, cfg), std::invalid_argument);
  }
}

TEST_CASE("curriculum effects on the small task") {
  // medians over three seeds keep this fast while pinning the orderings
  std::vector<double> u_const, a_const, d_const, u_wsd, a_wsd;
  for (std::uint64_t seed : {21, 22, 23}) {
    const ToyTask task(small_task(seed));
    auto run = [&](const Schedule& s, OrderPolicy policy) {
      const auto result = train(task, small_train(s, std::move(policy), seed));
      return evaluate(result.final_params, task);
    };
    u_const.push_back(run(small_constant(), OrderPolicy::uniform(seed)));
    a_const.push_back(run(small_constant(), OrderPolicy::ascend()));
    d_const.push_back(run(small_constant(), OrderPolicy::descend()));
    u_wsd.push_back(run(small_wsd(1.0 / 300), OrderPolicy::uniform(seed)));
    a_wsd.push_back(run(small_wsd(1.0 / 300), OrderPolicy::ascend()));
  }
  const double mu = harness::median(u_const), ma = harness::median(a_const);
  const double md = harness::median(d_const);
  SUBCASE("ascending beats uniform under a constant learning rate") {
    CHECK(ma < mu);
  }
  SUBCASE("descending never beats ascending") { CHECK(ma <= md); }
  SUBCASE("decay erodes the curriculum gap") {
    const double gap_const = mu - ma;
    const double gap_wsd = harness::median(u_wsd) - harness::median(a_wsd);
    CHECK(gap_wsd < gap_const);
  }
}

TEST_CASE("ordering cannot matter when quality has no effect") {
  std::vector<double> diffs, bands;
  for (std::uint64_t seed : {31, 32, 33}) {
    const ToyTask task(small_task(seed, /*noise_max=*/0.0));
    auto run = [&](OrderPolicy policy) {
      const auto result =
          train(task, small_train(small_constant(), std::move(policy), seed));
      return evaluate(result.final_params, task);
    };
    const double u = run(OrderPolicy::uniform(seed));
    const double a = run(OrderPolicy::ascend());
    diffs.push_back(std::fabs(u - a));
    bands.push_back(std::max(u, a));
  }
  // differences sit inside the seed-to-seed noise band
  for (std::size_t i = 0; i < diffs.size(); ++i)
    CHECK(diffs[i] <= bands[i]);
}

TEST_CASE("two-pool task trains end to end under two-phase orderings") {
  ToyTaskConfig cfg;
  cfg.dim = 8;
  cfg.n_train = 10000;
  cfg.n_val = 256;
  cfg.noise_max = 2.0;
  cfg.quality = QualityDistribution::TwoPool;
  cfg.low_fraction = 0.8;
  cfg.seed = 40;
  const ToyTask task(cfg);
  const std::int64_t split = 8000;

  TrainConfig train_cfg;
  train_cfg.schedule = Schedule::constant(0.02, 2500, 100);
  train_cfg.order_policy = OrderPolicy::two_phase(
      OrderPolicy::uniform(1), OrderPolicy::ascend(), split);
  seed_policy(train_cfg.order_policy, 40);
  train_cfg.batch_size = 4;
  train_cfg.checkpoint_interval = 100;
  train_cfg.checkpoint_window = 6;
  train_cfg.seed = 40;

  const auto result = train(task, train_cfg);
  CHECK(std::isfinite(evaluate(result.final_params, task)));

  // the stream's tail is the high-quality pool in ascending-score order
  const auto perm = make_order(task.scored_view(), train_cfg.order_policy);
  double prev = -1.0;
  for (std::size_t i = static_cast<std::size_t>(split); i < perm.size(); ++i) {
    CHECK(perm[i] >= static_cast<std::size_t>(split));
    const double q = task.scores()[perm[i]];
    CHECK(q >= prev);
    CHECK(q >= cfg.high_range.first);
    prev = q;
  }
}

TEST_CASE("run record csv carries val losses only at checkpoint steps") {
  namespace fs = std::filesystem;
  const ToyTask task(ToyTaskConfig{.dim = 4, .n_train = 400, .n_val = 16,
                                   .noise_max = 1.0, .seed = 16});
  TrainConfig cfg;
  cfg.schedule = Schedule::constant(0.01, 100, 5);
  cfg.order_policy = OrderPolicy::uniform(16);
  cfg.batch_size = 4;
  cfg.checkpoint_interval = 20;
  cfg.checkpoint_window = 3;
  const auto result = train(task, cfg);

  const auto dir = fs::temp_directory_path() / "cmalab_toy_test";
  fs::create_directories(dir);
  const std::string path = (dir / "record.csv").string();
  write_run_record_csv(path, result.record);

  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  CHECK(line == "step,lr,train_loss,val_loss");
  std::size_t rows = 0, with_val = 0;
  while (std::getline(in, line)) {
    ++rows;
    if (line.back() != ',') ++with_val;
  }
  CHECK(rows == 100);
  CHECK(with_val == 3);
  fs::remove_all(dir);
}
