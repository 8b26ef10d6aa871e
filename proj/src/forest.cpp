#include "see/forest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "see/errors.hpp"
#include "see/inference.hpp"
#include "see/kernels.hpp"

namespace see {

std::string to_string(FeatureMode mode) { return mode == FeatureMode::raw ? "raw" : "summary"; }

FeatureMode feature_mode_from_string(const std::string& text) {
  if (text == "summary") return FeatureMode::summary;
  if (text == "raw") return FeatureMode::raw;
  throw ConfigError("unknown feature mode '" + text + "' (expected summary or raw)");
}

std::vector<double> featurize(const Tensor2& window, FeatureMode mode) {
  if (window.length() < 1 || window.channels() < 1) throw UsageError("cannot featurize an empty window");
  if (mode == FeatureMode::raw) return {window.values().begin(), window.values().end()};
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(6 * window.channels()));
  const auto n = static_cast<double>(window.length());
  for (int c = 0; c < window.channels(); ++c) {
    const auto row = window.row(c);
    const double mean = std::accumulate(row.begin(), row.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : row) ss += (v - mean) * (v - mean);
    const auto [lo, hi] = std::minmax_element(row.begin(), row.end());
    out.insert(out.end(), {mean, std::sqrt(ss / n), *lo, *hi, row.front(), row.back()});
  }
  return out;
}

std::vector<double> featurize_prefix(const Tensor2& segment, double fraction, FeatureMode mode) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw UsageError("prefix fraction " + std::to_string(fraction) + " outside (0, 1]");
  }
  const int n = fraction == 1.0 ? segment.length() : fraction_to_samples(fraction, segment.length());
  if (n < 1) {
    throw UsageError("prefix fraction " + std::to_string(fraction) + " of a " +
                     std::to_string(segment.length()) + "-sample window is empty");
  }
  return featurize(segment.slice_time(0, n), mode);
}

const TreeNode& DecisionTree::leaf_for(std::span<const double> features) const {
  if (nodes.empty()) throw UsageError("empty decision tree");
  std::size_t i = 0;
  while (!nodes[i].is_leaf()) {
    const auto& node = nodes[i];
    i = static_cast<std::size_t>(features[static_cast<std::size_t>(node.feature)] <= node.threshold ? node.left
                                                                                                      : node.right);
  }
  return nodes[i];
}

std::vector<double> DecisionTree::predict_proba(std::span<const double> features) const {
  std::vector<double> p = leaf_for(features).histogram;
  const double total = std::accumulate(p.begin(), p.end(), 0.0);
  for (double& v : p) v /= total;
  return p;
}

int DecisionTree::depth() const {
  if (nodes.empty()) return 0;
  std::vector<int> d(nodes.size(), 0);
  int best = 0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    best = std::max(best, d[i]);
    if (!nodes[i].is_leaf()) {
      d[static_cast<std::size_t>(nodes[i].left)] = d[i] + 1;
      d[static_cast<std::size_t>(nodes[i].right)] = d[i] + 1;
    }
  }
  return best;
}

ForestConfig exhaustive_tree_config(int max_depth) {
  ForestConfig c;
  c.num_trees = 1;
  c.max_depth = max_depth;
  c.bootstrap = false;
  c.max_features = -1;
  return c;
}

std::vector<double> Forest::predict_proba(std::span<const double> features) const {
  if (static_cast<int>(features.size()) != num_features) {
    throw UsageError("forest expects " + std::to_string(num_features) + " features, got " +
                     std::to_string(features.size()));
  }
  if (trees.empty()) throw UsageError("forest has no trees");
  std::vector<double> p(static_cast<std::size_t>(num_classes), 0.0);
  for (const auto& t : trees) {
    const auto q = t.predict_proba(features);
    for (std::size_t k = 0; k < p.size(); ++k) p[k] += q[k];
  }
  for (double& v : p) v /= static_cast<double>(trees.size());
  return p;
}

int Forest::predict(std::span<const double> features) const {
  return static_cast<int>(nn::argmax(predict_proba(features)));
}

std::size_t Forest::node_count() const {
  std::size_t n = 0;
  for (const auto& t : trees) n += t.node_count();
  return n;
}

double forest_memory_kb(std::size_t node_count) { return static_cast<double>(node_count) * 32.0 / 1024.0; }

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

double gini_sum(std::span<const double> counts, double n) {
  double s = 0.0;
  for (double c : counts) s += c * c;
  return 1.0 - s / (n * n);
}

class TreeBuilder {
 public:
  TreeBuilder(const std::vector<std::vector<double>>& x, std::span<const int> y, int classes,
              const ForestConfig& cfg, std::uint64_t seed)
      : x_(x), y_(y), classes_(classes), cfg_(cfg), rng_(seed) {
    const int d = static_cast<int>(x.front().size());
    mtry_ = cfg.max_features < 0 ? d
            : cfg.max_features == 0 ? std::max(1, static_cast<int>(std::floor(std::sqrt(static_cast<double>(d)))))
                                    : std::min(d, cfg.max_features);
  }

  DecisionTree build() {
    const std::size_t n = x_.size();
    std::vector<std::size_t> idx(n);
    if (cfg_.bootstrap) {
      std::uniform_int_distribution<std::size_t> pick(0, n - 1);
      for (auto& i : idx) i = pick(rng_);
    } else {
      std::iota(idx.begin(), idx.end(), std::size_t{0});
    }
    tree_.max_depth = cfg_.max_depth;
    grow(idx, 0);
    return std::move(tree_);
  }

 private:
  int grow(const std::vector<std::size_t>& idx, int depth) {
    const int id = static_cast<int>(tree_.nodes.size());
    tree_.nodes.emplace_back();
    std::vector<double> hist(static_cast<std::size_t>(classes_), 0.0);
    for (auto i : idx) hist[static_cast<std::size_t>(y_[i])] += 1.0;
    const bool pure = std::count_if(hist.begin(), hist.end(), [](double c) { return c > 0.0; }) <= 1;
    if (pure || depth >= cfg_.max_depth || static_cast<int>(idx.size()) < cfg_.min_samples_split) {
      tree_.nodes[static_cast<std::size_t>(id)].histogram = std::move(hist);
      return id;
    }
    const auto split = best_split(idx, hist);
    if (!split) {
      tree_.nodes[static_cast<std::size_t>(id)].histogram = std::move(hist);
      return id;
    }
    std::vector<std::size_t> left, right;
    for (auto i : idx) (x_[i][static_cast<std::size_t>(split->feature)] <= split->threshold ? left : right).push_back(i);
    const int l = grow(left, depth + 1);
    const int r = grow(right, depth + 1);
    auto& node = tree_.nodes[static_cast<std::size_t>(id)];
    node.feature = split->feature;
    node.threshold = split->threshold;
    node.left = l;
    node.right = r;
    return id;
  }

  struct Split {
    int feature;
    double threshold;
  };

  std::vector<int> candidate_features() {
    const int d = static_cast<int>(x_.front().size());
    std::vector<int> f(static_cast<std::size_t>(d));
    std::iota(f.begin(), f.end(), 0);
    if (mtry_ < d) {
      for (int i = 0; i < mtry_; ++i) {
        std::uniform_int_distribution<int> pick(i, d - 1);
        std::swap(f[static_cast<std::size_t>(i)], f[static_cast<std::size_t>(pick(rng_))]);
      }
      f.resize(static_cast<std::size_t>(mtry_));
      std::sort(f.begin(), f.end());
    }
    return f;
  }

  std::optional<Split> best_split(const std::vector<std::size_t>& idx, const std::vector<double>& hist) {
    const double n = static_cast<double>(idx.size());
    const double parent = gini_sum(hist, n);
    // Gains within kTie of the best so far count as ties; the earlier
    // candidate keeps the slot.
    constexpr double kTie = 1e-12;
    double best_gain = 0.0;
    std::optional<Split> best;
    std::vector<std::pair<double, int>> column(idx.size());
    std::vector<double> left(hist.size());
    std::vector<double> right(hist.size());
    for (int f : candidate_features()) {
      for (std::size_t k = 0; k < idx.size(); ++k) {
        column[k] = {x_[idx[k]][static_cast<std::size_t>(f)], y_[idx[k]]};
      }
      std::sort(column.begin(), column.end(),
                [](const auto& a, const auto& b) { return a.first < b.first; });
      std::fill(left.begin(), left.end(), 0.0);
      right = hist;
      for (std::size_t k = 0; k + 1 < column.size(); ++k) {
        left[static_cast<std::size_t>(column[k].second)] += 1.0;
        right[static_cast<std::size_t>(column[k].second)] -= 1.0;
        const double a = column[k].first;
        const double b = column[k + 1].first;
        if (!(a < b)) continue;
        const double nl = static_cast<double>(k + 1);
        const double nr = n - nl;
        const double gain = parent - (nl / n) * gini_sum(left, nl) - (nr / n) * gini_sum(right, nr);
        if (gain > best_gain + kTie) {
          double thr = a + (b - a) / 2.0;
          if (!(thr < b)) thr = a;
          best_gain = gain;
          best = Split{f, thr};
        }
      }
    }
    return best;
  }

  const std::vector<std::vector<double>>& x_;
  std::span<const int> y_;
  int classes_;
  ForestConfig cfg_;
  std::mt19937_64 rng_;
  int mtry_ = 1;
  DecisionTree tree_;
};

}  // namespace

Forest train_forest(const std::vector<std::vector<double>>& features, std::span<const int> labels,
                    int num_classes, const ForestConfig& config, std::uint64_t seed) {
  if (features.empty()) throw UsageError("cannot train a forest on zero samples");
  if (features.size() != labels.size()) {
    throw UsageError(std::to_string(features.size()) + " feature rows but " + std::to_string(labels.size()) +
                     " labels");
  }
  if (config.num_trees < 1 || config.max_depth < 0 || config.min_samples_split < 2) {
    throw ConfigError("forest needs num_trees >= 1, max_depth >= 0, min_samples_split >= 2");
  }
  if (num_classes < 1) throw ConfigError("forest needs at least one class");
  const std::size_t d = features.front().size();
  if (d == 0) throw UsageError("feature vectors are empty");
  for (const auto& row : features) {
    if (row.size() != d) throw UsageError("feature rows differ in length");
    for (double v : row) {
      if (!std::isfinite(v)) throw DataError("non-finite feature value");
    }
  }
  for (int y : labels) {
    if (y < 0 || y >= num_classes) {
      throw UsageError("label " + std::to_string(y) + " outside 0.." + std::to_string(num_classes - 1));
    }
  }
  Forest forest;
  forest.num_classes = num_classes;
  forest.num_features = static_cast<int>(d);
  for (int t = 0; t < config.num_trees; ++t) {
    const std::uint64_t tree_seed = splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(t)));
    forest.trees.push_back(TreeBuilder(features, labels, num_classes, config, tree_seed).build());
  }
  return forest;
}

// ---------------------------------------------------------------------------
// Cascade

namespace {

class CascadeSession final : public StagedSession {
 public:
  explicit CascadeSession(const ForestCascade& cascade) : cascade_(cascade) {}

  std::vector<double> advance(const Tensor2& slice) override {
    if (next_ >= cascade_.num_exits()) throw UsageError("cascade session already finished");
    prefix_ = prefix_.empty() ? slice : Tensor2::concat_time(prefix_, slice);
    const auto& stage = cascade_.stages()[static_cast<std::size_t>(next_++)];
    return stage.forest.predict_proba(featurize(prefix_, cascade_.feature_mode()));
  }

 private:
  const ForestCascade& cascade_;
  Tensor2 prefix_;
  int next_ = 0;
};

}  // namespace

ForestCascade::ForestCascade(std::vector<CascadeStage> stages, int channels, int segment_length,
                             FeatureMode mode, std::optional<std::size_t> baseline_node_count)
    : stages_(std::move(stages)),
      channels_(channels),
      segment_length_(segment_length),
      mode_(mode),
      baseline_nodes_(baseline_node_count) {
  if (stages_.empty() || stages_.size() > 5) {
    throw ConfigError("a cascade has 1 to 5 stages (at most four early ones), got " +
                      std::to_string(stages_.size()));
  }
  if (channels_ < 1 || segment_length_ < 1) throw ConfigError("cascade needs channels and segment length >= 1");
  slice_ends_for(data_fractions(), segment_length_);
  for (const auto& s : stages_) {
    if (s.forest.num_classes != stages_.front().forest.num_classes) {
      throw ConfigError("cascade stages disagree on the number of classes");
    }
  }
  set_thresholds(thresholds());
}

std::vector<double> ForestCascade::thresholds() const {
  std::vector<double> t;
  for (std::size_t i = 0; i + 1 < stages_.size(); ++i) t.push_back(stages_[i].threshold);
  return t;
}

void ForestCascade::set_thresholds(std::span<const double> thresholds) {
  if (thresholds.size() + 1 != stages_.size()) {
    throw ConfigError(std::to_string(thresholds.size()) + " thresholds for " +
                      std::to_string(stages_.size() - 1) + " early stages");
  }
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    if (!std::isfinite(thresholds[i]) || thresholds[i] < 0.0) {
      throw ConfigError("stage thresholds must be finite and >= 0");
    }
    stages_[i].threshold = thresholds[i];
  }
}

std::size_t ForestCascade::node_count() const {
  std::size_t n = 0;
  for (const auto& s : stages_) n += s.forest.node_count();
  return n;
}

int ForestCascade::num_classes() const { return stages_.empty() ? 0 : stages_.front().forest.num_classes; }

std::vector<double> ForestCascade::data_fractions() const {
  std::vector<double> f;
  for (const auto& s : stages_) f.push_back(s.data_fraction);
  return f;
}

std::unique_ptr<StagedSession> ForestCascade::start() const { return std::make_unique<CascadeSession>(*this); }

namespace {

nlohmann::json tree_to_json(const DecisionTree& t) {
  nlohmann::json nodes = nlohmann::json::array();
  for (const auto& n : t.nodes) {
    if (n.is_leaf()) {
      nodes.push_back({{"hist", n.histogram}});
    } else {
      nodes.push_back({{"feature", n.feature}, {"threshold", n.threshold}, {"left", n.left}, {"right", n.right}});
    }
  }
  return {{"max_depth", t.max_depth}, {"nodes", nodes}};
}

DecisionTree tree_from_json(const nlohmann::json& j, int classes, int features) {
  DecisionTree t;
  t.max_depth = j.at("max_depth").get<int>();
  const auto& nodes = j.at("nodes");
  const int count = static_cast<int>(nodes.size());
  if (count == 0) throw ParseError("tree without nodes");
  for (const auto& n : nodes) {
    TreeNode node;
    if (n.contains("hist")) {
      node.histogram = n.at("hist").get<std::vector<double>>();
      if (static_cast<int>(node.histogram.size()) != classes) throw ParseError("leaf histogram size mismatch");
    } else {
      node.feature = n.at("feature").get<int>();
      node.threshold = n.at("threshold").get<double>();
      node.left = n.at("left").get<int>();
      node.right = n.at("right").get<int>();
      const int self = static_cast<int>(t.nodes.size());
      if (node.feature < 0 || node.feature >= features || node.left <= self || node.right <= self ||
          node.left >= count || node.right >= count) {
        throw ParseError("malformed tree node " + std::to_string(self));
      }
    }
    t.nodes.push_back(std::move(node));
  }
  return t;
}

}  // namespace

std::string ForestCascade::to_text() const {
  nlohmann::json stages = nlohmann::json::array();
  for (const auto& s : stages_) {
    nlohmann::json trees = nlohmann::json::array();
    for (const auto& t : s.forest.trees) trees.push_back(tree_to_json(t));
    stages.push_back({{"data_fraction", s.data_fraction},
                      {"threshold", s.threshold},
                      {"num_classes", s.forest.num_classes},
                      {"num_features", s.forest.num_features},
                      {"trees", trees}});
  }
  nlohmann::json j{{"format", "see-forest-cascade"},
                   {"version", 1},
                   {"channels", channels_},
                   {"segment_length", segment_length_},
                   {"feature_mode", to_string(mode_)},
                   {"baseline_node_count",
                    baseline_nodes_ ? nlohmann::json(*baseline_nodes_) : nlohmann::json(nullptr)},
                   {"stages", stages}};
  return j.dump(1) + "\n";
}

ForestCascade ForestCascade::from_text(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    if (j.at("format") != "see-forest-cascade") throw ParseError("not a forest cascade file");
    if (j.at("version") != 1) throw ParseError("unsupported forest cascade version " + j.at("version").dump());
    std::vector<CascadeStage> stages;
    for (const auto& s : j.at("stages")) {
      CascadeStage st;
      st.data_fraction = s.at("data_fraction").get<double>();
      st.threshold = s.at("threshold").get<double>();
      st.forest.num_classes = s.at("num_classes").get<int>();
      st.forest.num_features = s.at("num_features").get<int>();
      for (const auto& t : s.at("trees")) {
        st.forest.trees.push_back(tree_from_json(t, st.forest.num_classes, st.forest.num_features));
      }
      stages.push_back(std::move(st));
    }
    std::optional<std::size_t> baseline;
    if (!j.at("baseline_node_count").is_null()) baseline = j.at("baseline_node_count").get<std::size_t>();
    return ForestCascade(std::move(stages), j.at("channels").get<int>(), j.at("segment_length").get<int>(),
                         feature_mode_from_string(j.at("feature_mode").get<std::string>()), baseline);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("forest cascade: ") + e.what());
  } catch (const ConfigError& e) {
    throw ParseError(std::string("forest cascade: ") + e.what());
  }
}

void ForestCascade::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << to_text();
  if (!out) throw IoError("failed writing " + path.string());
}

ForestCascade ForestCascade::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_text(ss.str());
}

namespace {

std::vector<int> labels_of(const Dataset& ds) {
  std::vector<int> y;
  for (const auto& s : ds.segments) y.push_back(s.label);
  return y;
}

std::vector<std::vector<double>> prefix_features(const Dataset& ds, double fraction, FeatureMode mode) {
  std::vector<std::vector<double>> x;
  x.reserve(ds.size());
  for (const auto& s : ds.segments) x.push_back(featurize_prefix(s.data, fraction, mode));
  return x;
}

}  // namespace

Forest train_baseline_forest(const Dataset& train, const ForestConfig& config, std::uint64_t seed,
                             FeatureMode mode) {
  if (train.empty()) throw UsageError("training split is empty");
  return train_forest(prefix_features(train, 1.0, mode), labels_of(train), train.num_classes(), config,
                      splitmix64(seed));
}

ForestCascade build_cascade(const Dataset& train, const CascadeConfig& config, std::uint64_t seed,
                            std::optional<std::size_t> baseline_node_count) {
  if (train.empty()) throw UsageError("training split is empty");
  if (config.stages.size() != config.data_fractions.size()) {
    throw ConfigError(std::to_string(config.data_fractions.size()) + " stage fractions but " +
                      std::to_string(config.stages.size()) + " stage forest configs");
  }
  if (config.thresholds.size() + 1 != config.data_fractions.size()) {
    throw ConfigError(std::to_string(config.thresholds.size()) + " thresholds for " +
                      std::to_string(config.data_fractions.size()) + " stages (need one per early stage)");
  }
  if (config.data_fractions.empty() || config.data_fractions.size() > 5) {
    throw ConfigError("a cascade has 1 to 5 stages");
  }
  slice_ends_for(config.data_fractions, train.length());
  const auto y = labels_of(train);
  std::vector<CascadeStage> stages;
  std::size_t total = 0;
  for (std::size_t i = 0; i < config.stages.size(); ++i) {
    CascadeStage st;
    st.data_fraction = config.data_fractions[i];
    st.threshold = i < config.thresholds.size() ? config.thresholds[i] : 0.0;
    st.forest = train_forest(prefix_features(train, st.data_fraction, config.mode), y, train.num_classes(),
                             config.stages[i], splitmix64(seed + i));
    total += st.forest.node_count();
    stages.push_back(std::move(st));
  }
  if (baseline_node_count && total >= *baseline_node_count) {
    std::string counts;
    for (std::size_t i = 0; i < stages.size(); ++i) {
      counts += (i ? " + " : "") + std::to_string(stages[i].forest.node_count());
    }
    throw ConfigError("cascade uses " + counts + " = " + std::to_string(total) +
                      " nodes, not fewer than the baseline forest's " + std::to_string(*baseline_node_count));
  }
  return ForestCascade(std::move(stages), train.channels(), train.length(), config.mode, baseline_node_count);
}

InferenceTrace cascade_infer(const ForestCascade& cascade, SegmentSource& source, int segment_id,
                             std::optional<int> true_label) {
  const auto t = cascade.thresholds();
  return infer_segment(cascade, source, t, segment_id, true_label);
}

}  // namespace see
