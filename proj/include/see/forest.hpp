#pragma once

// Random forests over window-prefix features and the entropy-gated cascade
// of successively larger forests on growing prefixes.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "see/dataset.hpp"
#include "see/staged.hpp"

namespace see {

enum class FeatureMode {
  // Per channel: mean, population std, min, max, first, last (6 * C values).
  summary,
  // The prefix samples flattened channel-major (C * floor(c * L) values).
  raw,
};

std::string to_string(FeatureMode mode);
FeatureMode feature_mode_from_string(const std::string& text);

// Features of all samples in `window`.
std::vector<double> featurize(const Tensor2& window, FeatureMode mode = FeatureMode::summary);
// Features of the first floor(fraction * L) samples; UsageError when empty.
std::vector<double> featurize_prefix(const Tensor2& segment, double fraction,
                                     FeatureMode mode = FeatureMode::summary);

struct TreeNode {
  // -1 marks a leaf.
  int feature = -1;
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  // Leaves only: training-sample count per class.
  std::vector<double> histogram;

  bool is_leaf() const { return feature < 0; }
  friend bool operator==(const TreeNode&, const TreeNode&) = default;
};

struct DecisionTree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root
  int max_depth = 0;

  const TreeNode& leaf_for(std::span<const double> features) const;
  // Normalized class histogram of the leaf reached by `features`.
  std::vector<double> predict_proba(std::span<const double> features) const;
  std::size_t node_count() const { return nodes.size(); }
  int depth() const;

  friend bool operator==(const DecisionTree&, const DecisionTree&) = default;
};

struct ForestConfig {
  int num_trees = 10;
  int max_depth = 6;
  int min_samples_split = 2;
  bool bootstrap = true;
  // Features tried per split; 0 means floor(sqrt(d)). Candidates are always
  // scanned in ascending feature order and the first best split wins.
  int max_features = 0;

  friend bool operator==(const ForestConfig&, const ForestConfig&) = default;
};

// Fully deterministic single tree: no bootstrap, every feature tried.
ForestConfig exhaustive_tree_config(int max_depth);

struct Forest {
  std::vector<DecisionTree> trees;
  int num_classes = 0;
  int num_features = 0;

  // Mean of the per-tree leaf distributions.
  std::vector<double> predict_proba(std::span<const double> features) const;
  int predict(std::span<const double> features) const;
  std::size_t node_count() const;

  friend bool operator==(const Forest&, const Forest&) = default;
};

// Gini splits with strictly positive impurity decrease; per-tree seeds derive
// from `seed`, so the result is deterministic.
Forest train_forest(const std::vector<std::vector<double>>& features, std::span<const int> labels,
                    int num_classes, const ForestConfig& config, std::uint64_t seed);

// 32 bytes per node.
double forest_memory_kb(std::size_t node_count);

struct CascadeStage {
  Forest forest;
  double data_fraction = 1.0;
  // Unused on the final stage.
  double threshold = 0.0;

  friend bool operator==(const CascadeStage&, const CascadeStage&) = default;
};

class ForestCascade final : public StagedClassifier {
 public:
  ForestCascade() = default;
  ForestCascade(std::vector<CascadeStage> stages, int channels, int segment_length, FeatureMode mode,
                std::optional<std::size_t> baseline_node_count);

  const std::vector<CascadeStage>& stages() const { return stages_; }
  std::vector<double> thresholds() const;
  void set_thresholds(std::span<const double> thresholds);
  FeatureMode feature_mode() const { return mode_; }
  int channels() const { return channels_; }
  std::size_t node_count() const;
  std::optional<std::size_t> baseline_node_count() const { return baseline_nodes_; }
  double memory_kb() const { return forest_memory_kb(node_count()); }

  int num_exits() const override { return static_cast<int>(stages_.size()); }
  int num_classes() const override;
  std::vector<double> data_fractions() const override;
  int segment_length() const override { return segment_length_; }
  std::unique_ptr<StagedSession> start() const override;

  void save(const std::filesystem::path& path) const;
  static ForestCascade load(const std::filesystem::path& path);
  std::string to_text() const;
  static ForestCascade from_text(const std::string& text);

  friend bool operator==(const ForestCascade& a, const ForestCascade& b) {
    return a.stages_ == b.stages_ && a.channels_ == b.channels_ && a.segment_length_ == b.segment_length_ &&
           a.mode_ == b.mode_ && a.baseline_nodes_ == b.baseline_nodes_;
  }

 private:
  std::vector<CascadeStage> stages_;
  int channels_ = 0;
  int segment_length_ = 0;
  FeatureMode mode_ = FeatureMode::summary;
  std::optional<std::size_t> baseline_nodes_;
};

struct CascadeConfig {
  // Cumulative, strictly increasing, ending at 1.0; at most five stages.
  std::vector<double> data_fractions{1.0};
  std::vector<ForestConfig> stages{ForestConfig{}};
  // One per early stage.
  std::vector<double> thresholds;
  FeatureMode mode = FeatureMode::summary;
};

// Trains one forest per stage on its prefix features. When a baseline node
// count is given, the stages together must use strictly fewer nodes, else
// ConfigError listing the counts.
ForestCascade build_cascade(const Dataset& train, const CascadeConfig& config, std::uint64_t seed,
                            std::optional<std::size_t> baseline_node_count = std::nullopt);

// Forest on full-window features.
Forest train_baseline_forest(const Dataset& train, const ForestConfig& config, std::uint64_t seed,
                             FeatureMode mode = FeatureMode::summary);

// Entropy-gated inference through the cascade with its stored thresholds.
InferenceTrace cascade_infer(const ForestCascade& cascade, SegmentSource& source, int segment_id = 0,
                             std::optional<int> true_label = std::nullopt);

}  // namespace see
