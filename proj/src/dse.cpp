#include "see/dse.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <tuple>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "see/energy.hpp"
#include "see/errors.hpp"
#include "see/inference.hpp"

namespace see {

std::string to_string(ModelFamily family) { return family == ModelFamily::forest ? "forest" : "cnn"; }

ModelFamily model_family_from_string(const std::string& text) {
  if (text == "cnn") return ModelFamily::cnn;
  if (text == "forest") return ModelFamily::forest;
  throw ConfigError("unknown model family '" + text + "' (expected cnn or forest)");
}

void SweepGrid::validate() const {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError("sweep grid: " + msg);
  };
  require(!data_percentages.empty() && !num_early_exits.empty() && !thresholds.empty() &&
              !first_loss_weights.empty(),
          "every list must be non-empty");
  require(family == ModelFamily::forest || !exit_layers.empty(), "exit_layers must be non-empty");
  const int max_exits = family == ModelFamily::cnn ? 2 : 4;
  for (int p : data_percentages) {
    require(p >= 1 && p <= 99, "data percentage " + std::to_string(p) + " outside 1..99");
    require(allow_out_of_range || (p >= 10 && p <= 50),
            "data percentage " + std::to_string(p) + " outside 10..50");
  }
  for (int e : num_early_exits) {
    require(e >= 0, "negative early-exit count");
    require(allow_out_of_range || e <= max_exits,
            std::to_string(e) + " early exits exceeds " + std::to_string(max_exits) + " for " + to_string(family));
    require(family == ModelFamily::cnn || e <= 4, "a forest cascade has at most 4 early stages");
  }
  for (double t : thresholds) {
    require(std::isfinite(t) && t >= 0.0, "thresholds must be finite and >= 0");
    require(allow_out_of_range || (t >= 0.1 && t <= 1.5), "threshold " + fmt::format("{}", t) + " outside 0.1..1.5");
  }
  for (double w : first_loss_weights) {
    require(std::isfinite(w) && w > 0.0, "loss weights must be > 0");
    require(allow_out_of_range || (w >= 1.0 && w <= 4.0), "loss weight " + fmt::format("{}", w) + " outside 1..4");
  }
  for (int l : exit_layers) require(l >= 1, "exit layers are 1-based");
}

std::vector<double> tapered_loss_weights(double first, int exits) {
  if (exits < 1) throw ConfigError("at least one exit required");
  if (exits == 1) return {1.0};
  std::vector<double> w;
  for (int n = 0; n < exits; ++n) w.push_back(first + (1.0 - first) * n / (exits - 1));
  return w;
}

std::vector<double> ModelCandidate::data_fractions() const {
  std::vector<double> f;
  int total = 0;
  for (int p : percentages) {
    total += p;
    f.push_back(total / 100.0);
  }
  f.push_back(1.0);
  return f;
}

std::vector<double> ModelCandidate::loss_weights() const {
  return tapered_loss_weights(first_loss_weight, static_cast<int>(percentages.size()) + 1);
}

namespace {

template <typename T>
std::string joined(const std::vector<T>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "+" : "") + fmt::format("{}", v[i]);
  return s;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

std::string ModelCandidate::id() const {
  const std::string fam = to_string(family);
  if (baseline) return fam + "-baseline";
  std::string s = fam + "-p" + joined(percentages);
  if (family == ModelFamily::cnn) s += "-l" + joined(exit_layers) + "-w" + fmt::format("{}", first_loss_weight);
  return s;
}

std::string SweepConfig::id() const {
  return thresholds.empty() ? model.id() : model.id() + "-t" + joined(thresholds);
}

ArchitectureSpec candidate_architecture(const ModelCandidate& model, const ArchitectureSpec& base) {
  ArchitectureSpec s = base;
  s.early_exits.clear();
  const auto fractions = model.data_fractions();
  const auto weights = model.loss_weights();
  for (std::size_t e = 0; e < model.percentages.size(); ++e) {
    s.early_exits.push_back({model.exit_layers.at(e), fractions[e], 0.0, weights[e]});
  }
  s.terminal_loss_weight = weights.back();
  return s;
}

namespace {

// All length-k tuples over `values` (repetition allowed), in lexicographic
// position order.
template <typename T>
std::vector<std::vector<T>> tuples(const std::vector<T>& values, int k) {
  std::vector<std::vector<T>> out{{}};
  for (int i = 0; i < k; ++i) {
    std::vector<std::vector<T>> next;
    for (const auto& prefix : out) {
      for (const auto& v : values) {
        auto t = prefix;
        t.push_back(v);
        next.push_back(std::move(t));
      }
    }
    out = std::move(next);
  }
  return out;
}

bool feasible(const ModelCandidate& m, const ArchitectureSpec& base) {
  int total = 0;
  for (int p : m.percentages) total += p;
  if (total >= 100) return false;
  try {
    if (m.family == ModelFamily::cnn) {
      for (std::size_t i = 1; i < m.exit_layers.size(); ++i) {
        if (m.exit_layers[i] <= m.exit_layers[i - 1]) return false;
      }
      candidate_architecture(m, base).validate();
    } else {
      slice_ends_for(m.data_fractions(), base.segment_length);
    }
  } catch (const ConfigError&) {
    return false;
  }
  return true;
}

}  // namespace

std::vector<SweepConfig> enumerate_grid(const SweepGrid& grid, const ArchitectureSpec& base) {
  grid.validate();
  std::vector<SweepConfig> out;
  ModelCandidate baseline;
  baseline.family = grid.family;
  baseline.baseline = true;
  out.push_back({baseline, {}});

  std::vector<int> layers = grid.exit_layers;
  std::sort(layers.begin(), layers.end());
  layers.erase(std::unique(layers.begin(), layers.end()), layers.end());
  std::set<std::string> seen{baseline.id()};

  for (int e : grid.num_early_exits) {
    if (e == 0) continue;
    const auto threshold_sets =
        grid.tie_thresholds ? [&] {
          std::vector<std::vector<double>> t;
          for (double v : grid.thresholds) t.push_back(std::vector<double>(static_cast<std::size_t>(e), v));
          return t;
        }()
                            : tuples(grid.thresholds, e);
    for (const auto& pct : tuples(grid.data_percentages, e)) {
      std::vector<std::vector<int>> layer_sets{{}};
      std::vector<double> weights{1.0};
      if (grid.family == ModelFamily::cnn) {
        layer_sets = tuples(layers, e);
        weights = grid.first_loss_weights;
      }
      for (const auto& ls : layer_sets) {
        for (double w : weights) {
          ModelCandidate m;
          m.family = grid.family;
          m.percentages = pct;
          m.exit_layers = ls;
          m.first_loss_weight = w;
          if (!seen.insert(m.id()).second || !feasible(m, base)) continue;
          for (const auto& t : threshold_sets) out.push_back({m, t});
        }
      }
    }
  }
  const bool wants_exits = std::any_of(grid.num_early_exits.begin(), grid.num_early_exits.end(),
                                       [](int e) { return e > 0; });
  if (wants_exits && out.size() == 1) {
    throw ConfigError("sweep grid has no feasible early-exit configuration for a " +
                      std::to_string(base.segment_length) + "-sample window");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Records

std::string SweepRecord::to_json_line() const {
  nlohmann::json j{{"config_id", config_id},
                   {"model_id", model_id},
                   {"family", to_string(family)},
                   {"baseline", baseline},
                   {"data_fractions", data_fractions},
                   {"exit_layers", exit_layers},
                   {"loss_weights", loss_weights},
                   {"thresholds", thresholds},
                   {"exit_accuracy", exit_accuracy},
                   {"accuracy", accuracy},
                   {"energy_ratio", energy_ratio},
                   {"memory_kb", memory_kb},
                   {"baseline_memory_kb", baseline_memory_kb},
                   {"exit_usage", exit_usage},
                   {"error", error},
                   {"pareto", pareto}};
  return j.dump();
}

SweepRecord SweepRecord::from_json_line(const std::string& line) {
  try {
    const auto j = nlohmann::json::parse(line);
    SweepRecord r;
    r.config_id = j.at("config_id").get<std::string>();
    r.model_id = j.at("model_id").get<std::string>();
    r.family = model_family_from_string(j.at("family").get<std::string>());
    r.baseline = j.at("baseline").get<bool>();
    r.data_fractions = j.at("data_fractions").get<std::vector<double>>();
    r.exit_layers = j.at("exit_layers").get<std::vector<int>>();
    r.loss_weights = j.at("loss_weights").get<std::vector<double>>();
    r.thresholds = j.at("thresholds").get<std::vector<double>>();
    r.exit_accuracy = j.at("exit_accuracy").get<std::vector<double>>();
    r.accuracy = j.at("accuracy").get<double>();
    r.energy_ratio = j.at("energy_ratio").get<double>();
    r.memory_kb = j.at("memory_kb").get<double>();
    r.baseline_memory_kb = j.at("baseline_memory_kb").get<double>();
    r.exit_usage = j.at("exit_usage").get<std::vector<std::size_t>>();
    r.error = j.at("error").get<std::string>();
    r.pareto = j.at("pareto").get<bool>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("sweep record: ") + e.what());
  }
}

const SweepRecord* SweepResult::baseline() const {
  for (const auto& r : records) {
    if (r.baseline) return &r;
  }
  return nullptr;
}

std::string SweepResult::to_jsonl() const {
  std::string out;
  for (const auto& r : records) out += r.to_json_line() + "\n";
  return out;
}

void mark_pareto(std::vector<SweepRecord>& records) {
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < records.size(); ++i) {
    records[i].pareto = false;
    if (records[i].ok()) order.push_back(i);
  }
  // Ascending energy, descending accuracy: a record is on the front iff it
  // beats the best accuracy seen at strictly lower energy, or ties the best
  // record of its own energy level.
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (records[a].energy_ratio != records[b].energy_ratio) return records[a].energy_ratio < records[b].energy_ratio;
    return records[a].accuracy > records[b].accuracy;
  });
  double best = -1.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    const double e = records[order[i]].energy_ratio;
    const double top = records[order[i]].accuracy;
    while (j < order.size() && records[order[j]].energy_ratio == e) {
      if (records[order[j]].accuracy == top && top > best) records[order[j]].pareto = true;
      ++j;
    }
    best = std::max(best, top);
    i = j;
  }
}

// ---------------------------------------------------------------------------
// Running

namespace {

SweepRecord make_record(const SweepConfig& c) {
  SweepRecord r;
  r.config_id = c.id();
  r.model_id = c.model.id();
  r.family = c.model.family;
  r.baseline = c.model.baseline;
  r.data_fractions = c.model.data_fractions();
  r.exit_layers = c.model.exit_layers;
  r.loss_weights = c.model.family == ModelFamily::cnn ? c.model.loss_weights() : std::vector<double>{};
  r.thresholds = c.thresholds;
  return r;
}

void fill_from_traces(SweepRecord& r, const std::vector<InferenceTrace>& traces, int exits) {
  r.accuracy = overall_accuracy(traces);
  r.energy_ratio = energy_ratio(traces);
  r.exit_usage.assign(static_cast<std::size_t>(exits), 0);
  for (const auto& t : traces) ++r.exit_usage[static_cast<std::size_t>(t.exit_taken - 1)];
}

std::vector<double> stage_accuracy(const ForestCascade& cascade, const Dataset& test) {
  std::vector<double> acc;
  for (const auto& stage : cascade.stages()) {
    std::size_t correct = 0;
    for (const auto& s : test.segments) {
      const auto f = featurize_prefix(s.data, stage.data_fraction, cascade.feature_mode());
      if (stage.forest.predict(f) == s.label) ++correct;
    }
    acc.push_back(static_cast<double>(correct) / static_cast<double>(test.size()));
  }
  return acc;
}

std::map<std::string, SweepRecord> load_existing(const std::filesystem::path& path) {
  std::map<std::string, SweepRecord> existing;
  std::ifstream in(path);
  if (!in) return existing;
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) lines.push_back(line);
  }
  for (std::size_t i = 0; i < lines.size(); ++i) {
    try {
      auto r = SweepRecord::from_json_line(lines[i]);
      existing[r.config_id] = std::move(r);
    } catch (const ParseError&) {
      // A torn final line from an interrupted run is dropped; anything else
      // is a corrupt file.
      if (i + 1 != lines.size()) throw;
    }
  }
  return existing;
}

}  // namespace

SweepResult run_sweep(const Dataset& train, const Dataset& test, const SweepGrid& grid,
                      const SweepSettings& settings, const SweepOptions& options) {
  if (train.empty() || test.empty()) throw UsageError("sweep needs non-empty train and test splits");
  if (train.channels() != test.channels() || train.length() != test.length()) {
    throw ConfigError("train and test segments differ in shape");
  }
  ArchitectureSpec base = settings.base_architecture;
  base.channels = train.channels();
  base.segment_length = train.length();
  base.num_classes = train.num_classes();
  base.early_exits.clear();
  const auto configs = enumerate_grid(grid, base);

  std::map<std::string, SweepRecord> existing;
  std::ofstream journal;
  if (options.results_path) {
    existing = load_existing(*options.results_path);
    // Rewrite what survives so the journal never keeps a torn line.
    std::ofstream rewrite(*options.results_path, std::ios::trunc);
    if (!rewrite) throw IoError("cannot write " + options.results_path->string());
    for (const auto& c : configs) {
      auto it = existing.find(c.id());
      if (it != existing.end()) rewrite << it->second.to_json_line() << "\n";
    }
    rewrite.close();
    journal.open(*options.results_path, std::ios::app);
    if (!journal) throw IoError("cannot append to " + options.results_path->string());
  }

  const auto norm = fit_normalizer(train);
  const Dataset train_n = normalized(train, norm);
  const Dataset test_n = normalized(test, norm);
  std::optional<Forest> baseline_forest;
  std::size_t baseline_cnn_params = 0;
  if (grid.family == ModelFamily::cnn) baseline_cnn_params = SeeCnnModel::assemble(base, 0).parameter_count();

  SweepResult result;
  std::map<std::string, SweepRecord> done;
  std::size_t start = 0;
  while (start < configs.size()) {
    std::size_t end = start;
    while (end < configs.size() && configs[end].model.id() == configs[start].model.id()) ++end;
    const ModelCandidate& m = configs[start].model;
    const std::string model_id = m.id();

    bool all_present = true;
    for (std::size_t i = start; i < end; ++i) all_present = all_present && existing.count(configs[i].id());
    if (all_present) {
      for (std::size_t i = start; i < end; ++i) done[configs[i].id()] = existing[configs[i].id()];
      ++result.models_reused;
      start = end;
      continue;
    }
    if (options.max_models != 0 && result.models_trained >= options.max_models) {
      result.complete = false;
      break;
    }

    const std::uint64_t seed = options.seed ^ fnv1a(model_id);
    std::vector<SweepRecord> recs;
    for (std::size_t i = start; i < end; ++i) recs.push_back(make_record(configs[i]));
    try {
      if (m.family == ModelFamily::cnn) {
        auto model = SeeCnnModel::assemble(candidate_architecture(m, base), seed);
        model.normalizer = norm;
        TrainConfig cfg = settings.training;
        cfg.loss_weights = m.loss_weights();
        cfg.seed = seed;
        see::train(model, train_n, cfg);
        const auto exit_acc = evaluate_exits(model, test_n).accuracy;
        for (auto& r : recs) {
          fill_from_traces(r, infer_dataset(model, test_n, r.thresholds), model.num_exits());
          r.exit_accuracy = exit_acc;
          r.memory_kb = parameter_memory_kb(model.parameter_count());
          r.baseline_memory_kb = parameter_memory_kb(baseline_cnn_params);
        }
      } else {
        if (!baseline_forest) {
          baseline_forest = train_baseline_forest(train, settings.baseline_forest,
                                                  options.seed ^ fnv1a(to_string(ModelFamily::forest) + "-baseline"),
                                                  settings.feature_mode);
        }
        const std::size_t base_nodes = baseline_forest->node_count();
        ForestCascade cascade;
        if (m.baseline) {
          cascade = ForestCascade({CascadeStage{*baseline_forest, 1.0, 0.0}}, train.channels(), train.length(),
                                  settings.feature_mode, std::nullopt);
        } else {
          CascadeConfig cc;
          cc.data_fractions = m.data_fractions();
          cc.mode = settings.feature_mode;
          cc.stages.clear();
          for (std::size_t j = 0; j < m.percentages.size(); ++j) {
            cc.stages.push_back({settings.stage_trees * static_cast<int>(j + 1), settings.stage_depth});
          }
          cc.stages.push_back(settings.final_stage);
          cc.thresholds.assign(m.percentages.size(), 0.0);
          cascade = build_cascade(train, cc, seed, base_nodes);
        }
        const auto exit_acc = stage_accuracy(cascade, test);
        for (auto& r : recs) {
          cascade.set_thresholds(r.thresholds);
          fill_from_traces(r, infer_dataset(cascade, test, r.thresholds), cascade.num_exits());
          r.exit_accuracy = exit_acc;
          r.memory_kb = cascade.memory_kb();
          r.baseline_memory_kb = forest_memory_kb(base_nodes);
        }
      }
    } catch (const Error& e) {
      for (auto& r : recs) {
        r.accuracy = 0.0;
        r.energy_ratio = 1.0;
        r.exit_accuracy.clear();
        r.exit_usage.clear();
        r.error = e.what();
      }
    }
    ++result.models_trained;
    for (auto& r : recs) {
      if (journal.is_open()) journal << r.to_json_line() << "\n" << std::flush;
      done[r.config_id] = std::move(r);
    }
    start = end;
  }

  for (const auto& c : configs) {
    auto it = done.find(c.id());
    if (it != done.end()) result.records.push_back(it->second);
  }
  mark_pareto(result.records);
  if (options.results_path && result.complete) {
    journal.close();
    std::ofstream out(*options.results_path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + options.results_path->string());
    out << result.to_jsonl();
  }
  return result;
}

SweepResult average_sweeps(std::span<const SweepResult> sweeps) {
  if (sweeps.empty()) throw UsageError("nothing to average");
  SweepResult avg;
  const double n = static_cast<double>(sweeps.size());
  for (const auto& first : sweeps.front().records) {
    SweepRecord r = first;
    std::vector<const SweepRecord*> matches;
    for (const auto& s : sweeps) {
      for (const auto& cand : s.records) {
        if (cand.config_id == first.config_id) {
          matches.push_back(&cand);
          break;
        }
      }
    }
    if (matches.size() != sweeps.size()) continue;
    r.accuracy = 0.0;
    r.energy_ratio = 0.0;
    r.memory_kb = 0.0;
    r.baseline_memory_kb = 0.0;
    std::fill(r.exit_accuracy.begin(), r.exit_accuracy.end(), 0.0);
    std::fill(r.exit_usage.begin(), r.exit_usage.end(), 0);
    for (std::size_t s = 0; s < matches.size(); ++s) {
      const auto& m = *matches[s];
      if (!m.ok()) {
        r.error = "seed " + std::to_string(s) + ": " + m.error;
        continue;
      }
      r.accuracy += m.accuracy / n;
      r.energy_ratio += m.energy_ratio / n;
      r.memory_kb += m.memory_kb / n;
      r.baseline_memory_kb += m.baseline_memory_kb / n;
      for (std::size_t k = 0; k < r.exit_accuracy.size() && k < m.exit_accuracy.size(); ++k) {
        r.exit_accuracy[k] += m.exit_accuracy[k] / n;
      }
      for (std::size_t k = 0; k < r.exit_usage.size() && k < m.exit_usage.size(); ++k) {
        r.exit_usage[k] += m.exit_usage[k];
      }
    }
    avg.records.push_back(std::move(r));
  }
  for (const auto& s : sweeps) {
    avg.models_trained += s.models_trained;
    avg.models_reused += s.models_reused;
    avg.complete = avg.complete && s.complete;
  }
  mark_pareto(avg.records);
  return avg;
}

// ---------------------------------------------------------------------------
// Selection

std::string Selection::to_json() const {
  nlohmann::json misses = nlohmann::json::array();
  for (const auto& r : nearest_misses) misses.push_back(nlohmann::json::parse(r.to_json_line()));
  nlohmann::json j{{"accuracy_floor", accuracy_floor},
                   {"feasible", chosen.has_value()},
                   {"chosen", chosen ? nlohmann::json::parse(chosen->to_json_line()) : nlohmann::json(nullptr)},
                   {"nearest_misses", misses}};
  return j.dump(1) + "\n";
}

Selection select_deployment(const SweepResult& result, double accuracy_floor) {
  if (result.records.empty()) throw UsageError("no sweep records to select from");
  Selection sel;
  sel.accuracy_floor = accuracy_floor;
  // Absorbs rounding in floors derived as "baseline - 0.01".
  constexpr double kSlack = 1e-12;
  const SweepRecord* best = nullptr;
  for (const auto& r : result.records) {
    if (!r.ok() || r.accuracy < accuracy_floor - kSlack) continue;
    if (best == nullptr) {
      best = &r;
      continue;
    }
    const auto key = [](const SweepRecord& x) {
      return std::make_tuple(x.energy_ratio, -x.accuracy, x.memory_kb, x.config_id);
    };
    if (key(r) < key(*best)) best = &r;
  }
  if (best != nullptr) {
    sel.chosen = *best;
    return sel;
  }
  std::vector<SweepRecord> ok;
  for (const auto& r : result.records) {
    if (r.ok()) ok.push_back(r);
  }
  std::sort(ok.begin(), ok.end(), [](const SweepRecord& a, const SweepRecord& b) {
    return std::make_tuple(-a.accuracy, a.energy_ratio, a.config_id) <
           std::make_tuple(-b.accuracy, b.energy_ratio, b.config_id);
  });
  if (ok.size() > 5) ok.resize(5);
  sel.nearest_misses = std::move(ok);
  return sel;
}

Selection select_deployment(const SweepResult& result) {
  const auto* b = result.baseline();
  if (b == nullptr || !b->ok()) throw UsageError("sweep has no successful baseline record for the default floor");
  return select_deployment(result, b->accuracy - 0.01);
}

std::string pareto_table(const SweepResult& result) {
  std::vector<const SweepRecord*> front;
  for (const auto& r : result.records) {
    if (r.pareto) front.push_back(&r);
  }
  std::sort(front.begin(), front.end(), [](const SweepRecord* a, const SweepRecord* b) {
    return std::make_tuple(a->energy_ratio, -a->accuracy, a->config_id) <
           std::make_tuple(b->energy_ratio, -b->accuracy, b->config_id);
  });
  std::size_t width = 6;
  for (const auto* r : front) width = std::max(width, r->config_id.size());
  std::string out = fmt::format("{:<{}}  {:>8}  {:>7}  {:>10}\n", "config", width, "accuracy", "energy", "memory_kb");
  for (const auto* r : front) {
    out += fmt::format("{:<{}}  {:7.2f}%  {:7.4f}  {:10.2f}\n", r->config_id, width, 100.0 * r->accuracy,
                       r->energy_ratio, r->memory_kb);
  }
  return out;
}

}  // namespace see
