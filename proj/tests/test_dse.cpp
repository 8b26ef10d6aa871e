#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "see/dse.hpp"
#include "see/errors.hpp"

using namespace see;

namespace {

ArchitectureSpec small_base() {
  ArchitectureSpec s;
  s.trunk = {{6, 3, 1, 2, 2}, {8, 3, 1, 2, 2}, {8, 3, 1, 2, 2}};
  s.fc_hidden = 16;
  s.head = {4, 3, 2, 2, 8};
  return s;
}

SweepSettings small_settings() {
  SweepSettings st;
  st.base_architecture = small_base();
  st.training.epochs = 2;
  st.training.batch_size = 16;
  st.training.learning_rate = 3e-3;
  st.stage_trees = 2;
  st.stage_depth = 3;
  st.final_stage = {3, 4};
  st.baseline_forest = {10, 6};
  return st;
}

SplitResult small_data(std::uint64_t seed) {
  SyntheticSpec spec{3, 2, 2, 64, 20, 0.5, seed};
  return split(generate_synthetic(spec), 0.6, seed);
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

SweepRecord rec(const std::string& id, double acc, double energy, double mem = 1.0) {
  SweepRecord r;
  r.config_id = id;
  r.model_id = id;
  r.accuracy = acc;
  r.energy_ratio = energy;
  r.memory_kb = mem;
  return r;
}

}  // namespace

TEST_CASE("tapered loss weights") {
  CHECK(tapered_loss_weights(2.0, 3) == std::vector<double>{2.0, 1.5, 1.0});
  CHECK(tapered_loss_weights(4.0, 2) == std::vector<double>{4.0, 1.0});
  CHECK(tapered_loss_weights(3.0, 1) == std::vector<double>{1.0});
}

TEST_CASE("enumerate_grid: counting, filtering, determinism") {
  ArchitectureSpec base = small_base();
  base.channels = 2;
  base.segment_length = 128;
  base.num_classes = 3;
  SweepGrid g;
  g.data_percentages = {20, 30};
  g.num_early_exits = {1};
  g.thresholds = {0.1, 0.5, 1.0};
  g.first_loss_weights = {2};
  g.exit_layers = {1};
  auto configs = enumerate_grid(g, base);
  CHECK(configs.front().model.baseline);
  CHECK(configs.size() - 1 <= 6);
  CHECK(configs.size() == 7);
  std::set<std::string> ids;
  for (const auto& c : configs) CHECK(ids.insert(c.id()).second);

  g.num_early_exits = {2};
  g.exit_layers = {1, 2, 3};
  g.thresholds = {0.5};
  configs = enumerate_grid(g, base);
  for (const auto& c : configs) {
    if (c.model.baseline) continue;
    REQUIRE(c.model.exit_layers.size() == 2);
    CHECK(c.model.exit_layers[0] < c.model.exit_layers[1]);
    CHECK(c.model.exit_layers[1] < 3);
    CHECK_NOTHROW(candidate_architecture(c.model, base).validate());
  }
  auto again = enumerate_grid(g, base);
  REQUIRE(again.size() == configs.size());
  for (std::size_t i = 0; i < configs.size(); ++i) CHECK(again[i].id() == configs[i].id());

  g.tie_thresholds = false;
  g.thresholds = {0.3, 0.6};
  g.exit_layers = {1, 2};
  g.data_percentages = {20};
  configs = enumerate_grid(g, base);
  CHECK(configs.size() == 1 + 4);

  SweepGrid none = g;
  none.data_percentages = {50};
  CHECK_THROWS_AS(enumerate_grid(none, base), ConfigError);
  SweepGrid range = g;
  range.thresholds = {2.0};
  CHECK_THROWS_AS(enumerate_grid(range, base), ConfigError);
  range.allow_out_of_range = true;
  CHECK_NOTHROW(enumerate_grid(range, base));
  SweepGrid only_base = g;
  only_base.num_early_exits = {0};
  CHECK(enumerate_grid(only_base, base).size() == 1);
}

TEST_CASE("run_sweep: baseline-only grid gives one record at energy 1.0") {
  auto data = small_data(1);
  SweepGrid g;
  g.num_early_exits = {0};
  auto r = run_sweep(data.train, data.test, g, small_settings());
  REQUIRE(r.records.size() == 1);
  CHECK(r.records[0].baseline);
  CHECK(r.records[0].energy_ratio == 1.0);
  CHECK(r.models_trained == 1);
}

TEST_CASE("run_sweep: thresholds never retrain; pareto flags match an O(n^2) check") {
  auto data = small_data(2);
  SweepGrid g;
  g.data_percentages = {20, 40};
  g.num_early_exits = {1};
  g.thresholds = {0.1, 0.5, 0.8, 1.5};
  g.first_loss_weights = {2};
  g.exit_layers = {1};
  auto r = run_sweep(data.train, data.test, g, small_settings(), {3});
  std::set<std::string> models;
  for (const auto& x : r.records) models.insert(x.model_id);
  CHECK(r.models_trained == models.size());
  CHECK(r.records.size() == 1 + 2 * 4);
  for (const auto& a : r.records) {
    CHECK(a.ok());
    for (const auto& b : r.records) {
      if (a.model_id == b.model_id) CHECK(a.exit_accuracy == b.exit_accuracy);
    }
  }
  for (const auto& a : r.records) {
    bool dominated = false;
    for (const auto& b : r.records) {
      if (b.accuracy >= a.accuracy && b.energy_ratio <= a.energy_ratio &&
          (b.accuracy > a.accuracy || b.energy_ratio < a.energy_ratio)) {
        dominated = true;
      }
    }
    CHECK(a.pareto == !dominated);
  }
  // A larger threshold can only stop segments earlier.
  for (std::size_t i = 2; i < r.records.size(); ++i) {
    if (r.records[i].model_id == r.records[i - 1].model_id) {
      CHECK(r.records[i].energy_ratio <= r.records[i - 1].energy_ratio);
    }
  }
}

TEST_CASE("pareto marking on random records agrees with brute force") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<SweepRecord> rs;
    for (int i = 0; i < 30; ++i) {
      rs.push_back(rec("c" + std::to_string(i), static_cast<double>(rng() % 6) / 5.0,
                       static_cast<double>(rng() % 6) / 5.0));
    }
    rs[3].error = "failed";
    mark_pareto(rs);
    for (const auto& a : rs) {
      bool dominated = !a.ok();
      for (const auto& b : rs) {
        if (b.ok() && b.accuracy >= a.accuracy && b.energy_ratio <= a.energy_ratio &&
            (b.accuracy > a.accuracy || b.energy_ratio < a.energy_ratio)) {
          dominated = true;
        }
      }
      CHECK(a.pareto == !dominated);
    }
  }
}

TEST_CASE("run_sweep: interrupted then resumed equals uninterrupted, byte for byte") {
  auto data = small_data(4);
  SweepGrid g;
  g.data_percentages = {20, 30};
  g.num_early_exits = {1};
  g.thresholds = {0.3, 0.8};
  g.first_loss_weights = {1, 3};
  g.exit_layers = {1};
  const auto dir = std::filesystem::temp_directory_path() / "see_dse_resume";
  std::filesystem::create_directories(dir);
  const auto full_path = dir / "full.jsonl";
  const auto part_path = dir / "part.jsonl";
  std::filesystem::remove(full_path);
  std::filesystem::remove(part_path);

  SweepOptions full{7, 0, full_path};
  auto uninterrupted = run_sweep(data.train, data.test, g, small_settings(), full);

  SweepOptions part{7, 2, part_path};
  auto first = run_sweep(data.train, data.test, g, small_settings(), part);
  CHECK_FALSE(first.complete);
  CHECK(first.models_trained == 2);
  // Simulate a crash mid-write.
  std::ofstream(part_path, std::ios::app) << "{\"config_id\":\"cnn-p";
  part.max_models = 0;
  auto resumed = run_sweep(data.train, data.test, g, small_settings(), part);
  CHECK(resumed.complete);
  CHECK(resumed.models_reused == 2);
  CHECK(resumed.records == uninterrupted.records);
  CHECK(slurp(part_path) == slurp(full_path));
  auto third = run_sweep(data.train, data.test, g, small_settings(), part);
  CHECK(third.models_trained == 0);
  CHECK(slurp(part_path) == slurp(full_path));
  std::filesystem::remove_all(dir);
}

TEST_CASE("run_sweep forest: failures are recorded and the sweep continues") {
  auto data = small_data(5);
  SweepGrid g;
  g.family = ModelFamily::forest;
  g.data_percentages = {20, 40};
  g.num_early_exits = {1, 3};
  g.thresholds = {0.5};
  auto st = small_settings();
  st.stage_trees = 1;
  st.stage_depth = 2;
  st.final_stage = {2, 3};
  st.baseline_forest = {6, 5};
  auto r = run_sweep(data.train, data.test, g, st, {1});
  REQUIRE(r.baseline() != nullptr);
  CHECK(r.baseline()->ok());
  int ok = 0;
  for (const auto& x : r.records) ok += x.ok() ? 1 : 0;
  CHECK(ok >= 2);

  st.stage_trees = 40;
  auto failing = run_sweep(data.train, data.test, g, st, {1});
  int failed = 0;
  for (const auto& x : failing.records) {
    if (!x.ok()) {
      ++failed;
      CHECK(x.error.find("nodes") != std::string::npos);
      CHECK_FALSE(x.pareto);
    }
  }
  CHECK(failed > 0);
  CHECK(failing.baseline()->ok());
}

TEST_CASE("select_deployment rules") {
  SweepResult r;
  r.records = {rec("base", 0.90, 1.0, 5), rec("a", 0.895, 0.5, 6), rec("b", 0.92, 0.5, 7), rec("c", 0.80, 0.3)};
  r.records[0].baseline = true;
  auto s = select_deployment(r);
  REQUIRE(s.chosen);
  CHECK(s.chosen->config_id == "b");
  CHECK(s.accuracy_floor == doctest::Approx(0.89));

  SweepResult single;
  single.records = {rec("only", 0.7, 0.4)};
  CHECK(select_deployment(single, 0.5).chosen->config_id == "only");

  SweepResult mem;
  mem.records = {rec("z", 0.9, 0.5, 3), rec("y", 0.9, 0.5, 2), rec("x", 0.9, 0.5, 2)};
  CHECK(select_deployment(mem, 0.8).chosen->config_id == "x");

  auto none = select_deployment(r, 0.99);
  CHECK_FALSE(none.chosen);
  REQUIRE_FALSE(none.nearest_misses.empty());
  CHECK(none.nearest_misses.front().config_id == "b");
  CHECK(none.to_json().find("\"feasible\": false") != std::string::npos);
  CHECK(select_deployment(r, 0.89).chosen->config_id == select_deployment(r, 0.89).chosen->config_id);
}

TEST_CASE("average_sweeps and the pareto table") {
  SweepResult a, b;
  a.records = {rec("base", 0.9, 1.0), rec("x", 0.8, 0.4)};
  b.records = {rec("base", 0.8, 1.0), rec("x", 0.9, 0.6)};
  a.records[0].baseline = b.records[0].baseline = true;
  std::vector<SweepResult> both{a, b};
  auto avg = average_sweeps(both);
  REQUIRE(avg.records.size() == 2);
  CHECK(avg.records[0].accuracy == doctest::Approx(0.85));
  CHECK(avg.records[1].energy_ratio == doctest::Approx(0.5));
  const auto table = pareto_table(avg);
  CHECK(table.find("x") < table.find("base"));
  CHECK(SweepRecord::from_json_line(avg.records[1].to_json_line()) == avg.records[1]);
}
