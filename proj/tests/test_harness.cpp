#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cmalab/harness.hpp"

using namespace cmalab;
using namespace cmalab::harness;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json tiny_theory_spec(const std::string& out) {
  return json{{"name", "tiny-theory"},
              {"kind", "sim_theory"},
              {"base", {{"L", 1.0}, {"runs", 20}, {"strategy", "ascend_wsmd"}}},
              {"grid", {{"M", {100, 200}}}},
              {"seeds", {1, 2}},
              {"output_path", out}};
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name)
      : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("spec parsing rejects malformed grids and empty seeds") {
  json j = tiny_theory_spec("out");
  SUBCASE("valid spec parses") {
    const auto spec = spec_from_json(j);
    CHECK(spec.name == "tiny-theory");
    CHECK(spec.grid.at("M").size() == 2);
  }
  SUBCASE("empty seeds") {
    j["seeds"] = json::array();
    CHECK_THROWS_AS(spec_from_json(j), std::invalid_argument);
  }
  SUBCASE("empty grid") {
    j["grid"] = json::object();
    CHECK_THROWS_AS(spec_from_json(j), std::invalid_argument);
  }
  SUBCASE("unknown kind") {
    j["kind"] = "train_llm";
    CHECK_THROWS_AS(spec_from_json(j), std::invalid_argument);
  }
}

TEST_CASE("toy config builder applies defaults and overrides") {
  const json j{{"task", {{"dim", 8}, {"n_train", 4000}, {"n_val", 64}}},
               {"train",
                {{"peak_lr", 0.05},
                 {"batch_size", 4},
                 {"schedule_shape", "wsd_one_sqrt"},
                 {"end_lr_ratio", 0.1},
                 {"decay_fraction", 0.25},
                 {"order", "folded:3"},
                 {"averaging", "ema"},
                 {"alpha", 0.3}}},
               {"seed", 17}};
  const auto [task, train] = toy_configs_from_json(j);
  CHECK(task.dim == 8);
  CHECK(task.seed == 17);
  CHECK(train.schedule.total_steps == 1000);
  CHECK(train.schedule.peak_lr == 0.05);
  CHECK(train.schedule.end_lr == doctest::Approx(0.005));
  CHECK(train.schedule.decay_start == 750);
  CHECK(train.order_policy.kind == OrderPolicy::Kind::Folded);
  CHECK(train.order_policy.folds == 3);
  CHECK(train.order_policy.seed == 17);
  REQUIRE(train.averaging.has_value());
  CHECK(train.averaging->kind == AverageStrategy::Kind::Ema);
  CHECK(train.averaging->alpha == 0.3);

  SUBCASE("indivisible stream length is rejected") {
    json bad = j;
    bad["train"]["batch_size"] = 3;
    CHECK_THROWS_AS(toy_configs_from_json(bad), std::invalid_argument);
  }
}

TEST_CASE("theory config builder covers all strategies") {
  CHECK(theory_config_from_json({{"M", 100}, {"strategy", "uniform"}})
            .strategy.kind == theory::StrategyKind::UniformSampling);
  CHECK(theory_config_from_json({{"M", 100}, {"strategy", "ascend_wsd"}})
            .strategy.kind == theory::StrategyKind::AscendPracticalWsd);
  CHECK(theory_config_from_json({{"M", 100}, {"strategy", "ascend_wsmd"}})
            .strategy.kind == theory::StrategyKind::AscendWsmd);
  const auto swa = theory_config_from_json(
      {{"M", 100}, {"strategy", "ascend_swa"}, {"eta0", 0.25}});
  CHECK(swa.strategy.kind == theory::StrategyKind::AscendSwa);
  CHECK(swa.strategy.eta0 == 0.25);
  CHECK_THROWS_AS(
      theory_config_from_json({{"M", 100}, {"strategy", "sideways"}}),
      std::invalid_argument);
}

TEST_CASE("run_experiment is deterministic and rerun-stable") {
  TempDir a("cmalab_sweep_a"), b("cmalab_sweep_b");
  const auto spec_a = spec_from_json(tiny_theory_spec((a.path / "r").string()));
  const auto spec_b = spec_from_json(tiny_theory_spec((b.path / "r").string()));

  const auto table_a = run_experiment(spec_a, {.jobs = 2});
  const auto table_b = run_experiment(spec_b, {.jobs = 1});
  CHECK_FALSE(table_a.any_failed());
  // thread count cannot leak into the table
  CHECK(slurp(a.path / "r" / "results.csv") == slurp(b.path / "r" / "results.csv"));

  // rerunning a completed sweep leaves the file byte-identical
  const auto before = slurp(a.path / "r" / "results.csv");
  const auto table_again = run_experiment(spec_a, {.jobs = 2});
  CHECK(slurp(a.path / "r" / "results.csv") == before);
  CHECK(table_again.rows.size() == table_a.rows.size());

  // summary carries median and iqr per cell
  const json summary = json::parse(slurp(a.path / "r" / "summary.json"));
  CHECK(summary.size() == 2);
  for (const auto& [_, entry] : summary.items()) {
    CHECK(entry.contains("median"));
    CHECK(entry.contains("iqr"));
    CHECK(entry.at("count") == 2);
  }
  const json manifest = json::parse(slurp(a.path / "r" / "manifest.json"));
  CHECK(manifest.at("cells") == 2);
}

TEST_CASE("a truncated results file resumes without duplicates") {
  TempDir dir("cmalab_sweep_resume");
  const auto spec = spec_from_json(tiny_theory_spec((dir.path / "r").string()));
  run_experiment(spec, {.jobs = 1});
  const std::string full = slurp(dir.path / "r" / "results.csv");

  // keep the header and the first completed (cell, seed) group
  std::istringstream ss(full);
  std::string line, truncated;
  for (int i = 0; i < 3 && std::getline(ss, line); ++i)
    truncated += line + "\n";
  {
    std::ofstream out(dir.path / "r" / "results.csv", std::ios::trunc);
    out << truncated;
  }

  const auto table = run_experiment(spec, {.jobs = 1});
  CHECK(table.rows.size() == 8);  // 2 cells x 2 seeds x 2 metrics

  // no duplicate (config, seed, metric) triples
  std::set<std::string> keys;
  std::istringstream reread(slurp(dir.path / "r" / "results.csv"));
  std::getline(reread, line);  // header
  std::size_t rows = 0;
  while (std::getline(reread, line)) {
    if (line.empty()) continue;
    ++rows;
    std::istringstream fields(line);
    std::string hash, version, config, seed, metric;
    std::getline(fields, hash, ',');
    std::getline(fields, version, ',');
    std::getline(fields, config, ',');
    std::getline(fields, seed, ',');
    std::getline(fields, metric, ',');
    CHECK(keys.insert(config + "|" + seed + "|" + metric).second);
  }
  CHECK(rows == 8);
}

TEST_CASE("cell failures are recorded and the sweep continues") {
  TempDir dir("cmalab_sweep_fail");
  json j{{"name", "mixed"},
         {"kind", "train_toy"},
         {"base",
          {{"task", {{"dim", 4}, {"n_train", 400}, {"n_val", 16}}},
           {"train", {{"batch_size", 4},
                      {"warmup_steps", 5},
                      {"checkpoint_interval", 10},
                      {"checkpoint_window", 2}}}}},
         // end_lr_ratio 5.0 puts end_lr above peak_lr, which cannot validate
         {"grid", {{"schedule_shape", {"wsd_one_sqrt"}},
                   {"end_lr_ratio", {0.1, 5.0}}}},
         {"seeds", {1}},
         {"output_path", (dir.path / "r").string()}};
  const auto table = run_experiment(spec_from_json(j), {.jobs = 1});
  CHECK(table.any_failed());
  std::size_t ok = 0, failed = 0;
  for (const auto& row : table.rows) (row.failed ? failed : ok) += 1;
  CHECK(ok == 1);
  CHECK(failed == 1);
  const std::string csv = slurp(dir.path / "r" / "results.csv");
  CHECK(csv.find(",failed") != std::string::npos);
}

TEST_CASE("median and iqr") {
  CHECK(median({3.0, 1.0, 2.0}) == 2.0);
  CHECK(median({4.0, 1.0, 2.0, 3.0}) == 2.5);
  CHECK(interquartile_range({1.0, 1.0, 1.0, 1.0}) == 0.0);
  CHECK_THROWS_AS(median({}), std::invalid_argument);
}
