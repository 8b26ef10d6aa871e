#pragma once

// Grid design-space exploration over early-exit placement, data fractions,
// loss weights and entropy thresholds. Each distinct model is trained once;
// thresholds only change inference and are swept on the trained model.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "see/dataset.hpp"
#include "see/forest.hpp"
#include "see/model.hpp"
#include "see/trainer.hpp"

namespace see {

enum class ModelFamily { cnn, forest };
std::string to_string(ModelFamily family);
ModelFamily model_family_from_string(const std::string& text);

struct SweepGrid {
  ModelFamily family = ModelFamily::cnn;
  // Share of the window added at each early exit, in percent.
  std::vector<int> data_percentages{10, 20, 30, 40, 50};
  std::vector<int> num_early_exits{1, 2};
  std::vector<double> thresholds{0.1, 0.3, 0.5, 0.8, 1.0, 1.5};
  // Weight of the first exit; later exits fall linearly to 1 at the terminal.
  std::vector<double> first_loss_weights{1, 2, 3, 4};
  // Candidate trunk stages for exit attachment (CNN only).
  std::vector<int> exit_layers{1, 2, 3, 4};
  // One shared threshold for every early exit instead of all combinations.
  bool tie_thresholds = true;
  // Lift the range checks (percent 10-50, thresholds 0.1-1.5, weights 1-4,
  // at most 2 CNN / 4 forest early exits).
  bool allow_out_of_range = false;

  void validate() const;
};

// Fixed parts of every candidate.
struct SweepSettings {
  // Channels, length and classes are overwritten from the dataset.
  ArchitectureSpec base_architecture;
  TrainConfig training;
  // Forest: early stage j (1-based) gets stage_trees * j trees.
  int stage_trees = 2;
  int stage_depth = 4;
  ForestConfig final_stage{8, 6};
  ForestConfig baseline_forest{20, 8};
  FeatureMode feature_mode = FeatureMode::summary;
};

// One trainable model: everything except the thresholds.
struct ModelCandidate {
  ModelFamily family = ModelFamily::cnn;
  std::vector<int> percentages;  // per early exit
  std::vector<int> exit_layers;  // CNN only
  double first_loss_weight = 1.0;
  bool baseline = false;

  std::vector<double> data_fractions() const;  // cumulative, terminal 1.0 included
  std::vector<double> loss_weights() const;    // one per exit
  std::string id() const;
};

struct SweepConfig {
  ModelCandidate model;
  std::vector<double> thresholds;  // one per early exit
  std::string id() const;
};

// Loss weights for `exits` exits: w1 at the first, linear down to 1 at the last.
std::vector<double> tapered_loss_weights(double first, int exits);

ArchitectureSpec candidate_architecture(const ModelCandidate& model, const ArchitectureSpec& base);

// Baseline first, then the Cartesian product in grid order, minus infeasible
// combinations (fractions not below 1, non-increasing layers, invalid shapes).
// ConfigError when early exits were requested but none is feasible.
std::vector<SweepConfig> enumerate_grid(const SweepGrid& grid, const ArchitectureSpec& base);

struct SweepRecord {
  std::string config_id;
  std::string model_id;
  ModelFamily family = ModelFamily::cnn;
  bool baseline = false;
  std::vector<double> data_fractions;
  std::vector<int> exit_layers;
  std::vector<double> loss_weights;
  std::vector<double> thresholds;
  std::vector<double> exit_accuracy;
  double accuracy = 0.0;
  double energy_ratio = 1.0;
  double memory_kb = 0.0;
  double baseline_memory_kb = 0.0;
  std::vector<std::size_t> exit_usage;
  // Empty on success.
  std::string error;
  bool pareto = false;

  bool ok() const { return error.empty(); }
  std::string to_json_line() const;
  static SweepRecord from_json_line(const std::string& line);

  friend bool operator==(const SweepRecord&, const SweepRecord&) = default;
};

struct SweepOptions {
  std::uint64_t seed = 0;
  // Models trained by this call before it stops; 0 means no limit.
  std::size_t max_models = 0;
  // JSONL results file: completed records are reused, new ones appended,
  // and the file is rewritten in canonical order when the sweep finishes.
  std::optional<std::filesystem::path> results_path;
};

struct SweepResult {
  std::vector<SweepRecord> records;
  std::size_t models_trained = 0;
  std::size_t models_reused = 0;
  bool complete = true;

  const SweepRecord* baseline() const;
  std::string to_jsonl() const;
};

// `train` fits models (and the normalizer); `test` scores them.
SweepResult run_sweep(const Dataset& train, const Dataset& test, const SweepGrid& grid,
                      const SweepSettings& settings, const SweepOptions& options = {});

// Marks records no other record beats on both accuracy (higher) and energy
// ratio (lower). Failed records are never on the front.
void mark_pareto(std::vector<SweepRecord>& records);

// Per-config mean accuracy / energy over sweeps with identical grids.
SweepResult average_sweeps(std::span<const SweepResult> sweeps);

struct Selection {
  std::optional<SweepRecord> chosen;
  double accuracy_floor = 0.0;
  // Best-accuracy records below the floor, when nothing qualifies.
  std::vector<SweepRecord> nearest_misses;

  std::string to_json() const;
};

// Lowest energy ratio with accuracy >= floor; ties go to higher accuracy,
// then lower memory, then the lexicographically smaller config id.
Selection select_deployment(const SweepResult& result, double accuracy_floor);
// Floor defaults to the baseline accuracy minus one point.
Selection select_deployment(const SweepResult& result);

// Pareto records sorted by energy ratio as a plain-text table.
std::string pareto_table(const SweepResult& result);

}  // namespace see
