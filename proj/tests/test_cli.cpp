#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "see/cli.hpp"
#include "see/dataset.hpp"
#include "see/energy.hpp"
#include "see/model.hpp"

using namespace see;
namespace fs = std::filesystem;

namespace {

struct Run {
  int status;
  std::string out;
  std::string err;
};

Run see_cmd(std::vector<std::string> args) {
  args.insert(args.begin(), "see");
  std::ostringstream out, err;
  const int status = run_cli(args, out, err);
  return {status, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& leaf) const { return (path / leaf).string(); }
};

const std::vector<std::string> kSmallData{"gen-data", "--classes", "3", "--easy-classes", "2", "--channels", "2",
                                          "--length", "64", "--per-class", "20"};
const std::vector<std::string> kSmallCnn{"--trunk-channels", "6,8,8", "--fc-hidden", "16", "--epochs", "2"};

std::vector<std::string> cat(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

TEST_CASE("gen-data: loadable, byte-identical per seed, invalid spec fails") {
  TempDir t("see_cli_gen");
  REQUIRE(see_cmd(cat({"--out", t / "a", "--seed", "4"}, kSmallData)).status == 0);
  REQUIRE(see_cmd(cat({"--out", t / "b", "--seed", "4"}, kSmallData)).status == 0);
  const auto ds = load_csv(t / "a/dataset.csv");
  CHECK(ds.size() == 60);
  CHECK(slurp(t / "a/dataset.csv") == slurp(t / "b/dataset.csv"));
  CHECK(fs::exists(t / "a/run-manifest.ini"));
  auto bad = see_cmd({"--out", t / "c", "gen-data", "--length", "4"});
  CHECK(bad.status != 0);
  CHECK_FALSE(bad.err.empty());
  CHECK(see_cmd({"--out", t / "c", "bogus"}).status != 0);
  CHECK(see_cmd({"--out", "/proc/forbidden/x", "gen-data"}).status != 0);
}

TEST_CASE("train/eval: CNN round trip, manifest replay, T=0 equals baseline data") {
  TempDir t("see_cli_train");
  REQUIRE(see_cmd(cat({"--out", t / "d"}, kSmallData)).status == 0);
  const std::string data = t / "d/dataset.csv";
  auto r = see_cmd(cat({"--out", t / "m", "train", "--dataset", data, "--exit-layers", "1", "--data-fractions",
                        "0.3", "--thresholds", "0.6"},
                       kSmallCnn));
  REQUIRE_MESSAGE(r.status == 0, r.err);
  const auto model = SeeCnnModel::load(t / "m/model.json");
  CHECK(model.num_exits() == 2);
  CHECK(SeeCnnModel::from_text(model.to_text()) == model);
  const std::string first = slurp(t / "m/model.json");
  REQUIRE(see_cmd({"--config", t / "m/run-manifest.ini", "train"}).status == 0);
  CHECK(slurp(t / "m/model.json") == first);

  REQUIRE(see_cmd({"--out", t / "e0", "eval", "--dataset", data, "--model", t / "m/model.json", "--thresholds",
                   "0"})
              .status == 0);
  const auto zero = EnergyReport::from_json(slurp(t / "e0/report.json"));
  CHECK(zero.mean_energy_ratio == 1.0);
  CHECK(zero.exit_usage == std::vector<std::size_t>{0, zero.segments});

  REQUIRE(see_cmd({"--out", t / "e1", "eval", "--dataset", data, "--model", t / "m/model.json"}).status == 0);
  REQUIRE(see_cmd({"--out", t / "e2", "eval", "--dataset", data, "--model", t / "m/model.json"}).status == 0);
  CHECK(slurp(t / "e1/report.json") == slurp(t / "e2/report.json"));
  CHECK(slurp(t / "e1/traces.jsonl") == slurp(t / "e2/traces.jsonl"));
  const auto rep = EnergyReport::from_json(slurp(t / "e1/report.json"));
  std::size_t used = 0;
  for (auto u : rep.exit_usage) used += u;
  CHECK(used == rep.segments);

  auto shown = see_cmd({"--out", t / "e1", "report"});
  CHECK(shown.status == 0);
  CHECK(shown.out.find("energy ratio") != std::string::npos);

  CHECK(see_cmd({"--out", t / "e3", "eval", "--dataset", data, "--model", t / "missing.json"}).status == 2);
  // A 4-channel spec cannot take the 2-channel data: refused before training.
  REQUIRE(see_cmd({"--out", t / "d4", "gen-data", "--per-class", "4", "--length", "64"}).status == 0);
  CHECK(see_cmd({"--out", t / "m4", "eval", "--dataset", t / "d4/dataset.csv", "--model", t / "m/model.json"})
            .status != 0);
}

TEST_CASE("train: baseline CNN and forest cascades, oversized cascade refused") {
  TempDir t("see_cli_forest");
  REQUIRE(see_cmd(cat({"--out", t / "d"}, kSmallData)).status == 0);
  const std::string data = t / "d/dataset.csv";
  CHECK(see_cmd(cat({"--out", t / "b", "train", "--dataset", data}, kSmallCnn)).status == 0);
  CHECK(SeeCnnModel::load(t / "b/model.json").num_exits() == 1);

  auto ok = see_cmd({"--out", t / "f", "train", "--family", "forest", "--dataset", data, "--data-fractions",
                     "0.3", "--stage-trees", "2,3", "--stage-depths", "3,4", "--thresholds", "0.4"});
  REQUIRE_MESSAGE(ok.status == 0, ok.err);
  REQUIRE(see_cmd({"--out", t / "fe", "eval", "--dataset", data, "--model", t / "f/model.json"}).status == 0);
  auto big = see_cmd({"--out", t / "g", "train", "--family", "forest", "--dataset", data, "--data-fractions",
                      "0.3", "--stage-trees", "40,40", "--stage-depths", "8,8", "--baseline-trees", "2"});
  CHECK(big.status == 1);
  CHECK(big.err.find("nodes") != std::string::npos);
}

TEST_CASE("sweep: pareto sorted by energy, resume, infeasible grid") {
  TempDir t("see_cli_sweep");
  REQUIRE(see_cmd(cat({"--out", t / "d"}, kSmallData)).status == 0);
  const std::string data = t / "d/dataset.csv";
  const std::vector<std::string> grid{"--percentages", "20,40", "--early-exits", "1", "--exit-layers", "1",
                                      "--loss-weights", "2", "--trunk-channels", "6,8,8", "--fc-hidden", "16",
                                      "--epochs", "2", "--thresholds", "0.3,1.5"};
  auto full = see_cmd(cat({"--out", t / "full", "sweep", "--dataset", data}, grid));
  REQUIRE(full.status != 1);
  auto part = see_cmd(cat(cat({"--out", t / "part", "sweep", "--dataset", data}, grid), {"--max-models", "1"}));
  CHECK(part.status == kExitIncomplete);
  auto rest = see_cmd(cat({"--out", t / "part", "sweep", "--dataset", data}, grid));
  CHECK(rest.status == full.status);
  CHECK(slurp(t / "part/sweep.jsonl") == slurp(t / "full/sweep.jsonl"));
  CHECK(slurp(t / "part/selection.json") == slurp(t / "full/selection.json"));

  std::istringstream table(slurp(t / "full/pareto.txt"));
  std::string line;
  std::getline(table, line);
  double previous = -1;
  while (std::getline(table, line)) {
    std::istringstream row(line);
    std::string id, acc;
    double energy;
    row >> id >> acc >> energy;
    CHECK(energy >= previous);
    previous = energy;
  }
  auto none = see_cmd({"--out", t / "x", "sweep", "--dataset", data, "--percentages", "50", "--early-exits", "2"});
  CHECK(none.status == 1);
  CHECK(none.err.find("no feasible") != std::string::npos);
}
