#include "see/energy.hpp"

#include <cmath>
#include <map>

#include <fmt/format.h>
#include <json.hpp>

#include "see/errors.hpp"
#include "see/forest.hpp"
#include "see/model.hpp"

namespace see {

void SensorPowerModel::validate() const {
  double total = 0.0;
  for (double w : channel_weights) {
    if (!std::isfinite(w) || w < 0.0) throw ConfigError("sensor power weights must be finite and >= 0");
    total += w;
  }
  if (!channel_weights.empty() && !(total > 0.0)) throw ConfigError("sensor power weights sum to zero");
}

double energy_ratio(std::span<const InferenceTrace> traces, const SensorPowerModel& power) {
  if (traces.empty()) throw UsageError("energy ratio of zero traces");
  power.validate();
  // Every channel stops at the same slice, so the channel weights cancel and a
  // segment costs its sensed fraction. Grouping by fraction keeps the uniform
  // cases exact: all segments at c gives exactly c.
  std::map<double, std::size_t> groups;
  for (const auto& t : traces) ++groups[t.sensed_fraction];
  const auto n = static_cast<double>(traces.size());
  double sum = 0.0;
  for (const auto& [fraction, count] : groups) sum += static_cast<double>(count) / n * fraction;
  return sum;
}

std::vector<ClassAccuracy> per_class_accuracy(std::span<const InferenceTrace> traces, int num_classes) {
  std::vector<ClassAccuracy> table(static_cast<std::size_t>(num_classes));
  for (int k = 0; k < num_classes; ++k) table[static_cast<std::size_t>(k)].label = k;
  for (const auto& t : traces) {
    if (!t.true_label) throw UsageError("trace for segment " + std::to_string(t.segment_id) + " has no label");
    const int y = *t.true_label;
    if (y < 0 || y >= num_classes) throw UsageError("trace label " + std::to_string(y) + " out of range");
    auto& row = table[static_cast<std::size_t>(y)];
    ++row.count;
    if (t.predicted_label == y) ++row.correct;
  }
  for (auto& row : table) {
    row.absent = row.count == 0;
    row.accuracy = row.absent ? 0.0 : static_cast<double>(row.correct) / static_cast<double>(row.count);
  }
  return table;
}

double overall_accuracy(std::span<const InferenceTrace> traces) {
  if (traces.empty()) throw UsageError("accuracy of zero traces");
  std::size_t correct = 0;
  for (const auto& t : traces) {
    if (!t.true_label) throw UsageError("trace for segment " + std::to_string(t.segment_id) + " has no label");
    if (t.predicted_label == *t.true_label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(traces.size());
}

double parameter_memory_kb(std::size_t parameter_count) {
  return static_cast<double>(parameter_count) * 8.0 / 1024.0;
}

MemoryOverhead memory_overhead(const SeeCnnModel& model) {
  return {parameter_memory_kb(model.baseline_parameter_count()), parameter_memory_kb(model.parameter_count())};
}

MemoryOverhead memory_overhead(const ForestCascade& cascade, std::size_t baseline_node_count) {
  return {forest_memory_kb(baseline_node_count), cascade.memory_kb()};
}

EnergyReport make_energy_report(std::span<const InferenceTrace> traces, const StagedClassifier& classifier,
                                std::span<const double> thresholds, const MemoryOverhead& memory,
                                const SensorPowerModel& power) {
  EnergyReport r;
  r.segments = traces.size();
  r.accuracy = overall_accuracy(traces);
  r.mean_energy_ratio = energy_ratio(traces, power);
  r.data_fractions = classifier.data_fractions();
  r.thresholds.assign(thresholds.begin(), thresholds.end());
  r.exit_usage.assign(static_cast<std::size_t>(classifier.num_exits()), 0);
  for (const auto& t : traces) {
    if (t.exit_taken < 1 || t.exit_taken > classifier.num_exits()) {
      throw UsageError("trace exit " + std::to_string(t.exit_taken) + " out of range");
    }
    ++r.exit_usage[static_cast<std::size_t>(t.exit_taken - 1)];
  }
  r.per_class = per_class_accuracy(traces, classifier.num_classes());
  r.memory = memory;
  return r;
}

std::string EnergyReport::to_json() const {
  nlohmann::json classes = nlohmann::json::array();
  for (const auto& c : per_class) {
    nlohmann::json row{{"label", c.label}, {"count", c.count}, {"correct", c.correct}, {"absent", c.absent}};
    row["accuracy"] = c.absent ? nlohmann::json(nullptr) : nlohmann::json(c.accuracy);
    classes.push_back(row);
  }
  nlohmann::json j{{"family", family},
                   {"segments", segments},
                   {"accuracy", accuracy},
                   {"mean_energy_ratio", mean_energy_ratio},
                   {"data_fractions", data_fractions},
                   {"thresholds", thresholds},
                   {"exit_usage", exit_usage},
                   {"per_class", classes},
                   {"class_names", class_names},
                   {"memory_kb", {{"baseline", memory.baseline_kb}, {"see", memory.see_kb}}},
                   {"macs_to_exit", macs_to_exit}};
  return j.dump(1) + "\n";
}

EnergyReport EnergyReport::from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    EnergyReport r;
    r.family = j.at("family").get<std::string>();
    r.segments = j.at("segments").get<std::size_t>();
    r.accuracy = j.at("accuracy").get<double>();
    r.mean_energy_ratio = j.at("mean_energy_ratio").get<double>();
    r.data_fractions = j.at("data_fractions").get<std::vector<double>>();
    r.thresholds = j.at("thresholds").get<std::vector<double>>();
    r.exit_usage = j.at("exit_usage").get<std::vector<std::size_t>>();
    for (const auto& c : j.at("per_class")) {
      ClassAccuracy row;
      row.label = c.at("label").get<int>();
      row.count = c.at("count").get<std::size_t>();
      row.correct = c.at("correct").get<std::size_t>();
      row.absent = c.at("absent").get<bool>();
      row.accuracy = row.absent ? 0.0 : c.at("accuracy").get<double>();
      r.per_class.push_back(row);
    }
    r.class_names = j.at("class_names").get<std::vector<std::string>>();
    r.memory.baseline_kb = j.at("memory_kb").at("baseline").get<double>();
    r.memory.see_kb = j.at("memory_kb").at("see").get<double>();
    r.macs_to_exit = j.at("macs_to_exit").get<std::vector<std::uint64_t>>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("energy report: ") + e.what());
  }
}

std::string EnergyReport::to_table() const {
  std::string out;
  out += fmt::format("{} classifier, {} segments\n", family.empty() ? "SEE" : family, segments);
  out += fmt::format("  accuracy            {:8.2f} %\n", 100.0 * accuracy);
  out += fmt::format("  energy ratio        {:8.4f}\n", mean_energy_ratio);
  out += fmt::format("  memory baseline     {:8.2f} KB\n", memory.baseline_kb);
  out += fmt::format("  memory SEE          {:8.2f} KB\n", memory.see_kb);
  out += "\n  exit  fraction  threshold  segments  share\n";
  for (std::size_t n = 0; n < exit_usage.size(); ++n) {
    const std::string thr = n < thresholds.size() ? fmt::format("{:9.3f}", thresholds[n]) : "        -";
    const double share = segments ? static_cast<double>(exit_usage[n]) / static_cast<double>(segments) : 0.0;
    out += fmt::format("  {:4}  {:8.3f}  {}  {:8}  {:5.1f}%", n + 1,
                       n < data_fractions.size() ? data_fractions[n] : 1.0, thr, exit_usage[n], 100.0 * share);
    if (n < macs_to_exit.size()) out += fmt::format("  {} MACs", macs_to_exit[n]);
    out += "\n";
  }
  out += "\n  class                 count  accuracy\n";
  for (const auto& c : per_class) {
    const auto idx = static_cast<std::size_t>(c.label);
    const std::string name = idx < class_names.size() ? class_names[idx] : std::to_string(c.label);
    out += fmt::format("  {:<20}  {:5}  {}\n", name, c.count,
                       c.absent ? std::string("  absent") : fmt::format("{:7.2f}%", 100.0 * c.accuracy));
  }
  return out;
}

}  // namespace see
