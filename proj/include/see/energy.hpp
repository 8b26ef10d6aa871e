#pragma once

// Sensor-energy and memory accounting over inference traces. Sensors draw
// constant power while on and none after shutdown, so a segment's energy
// relative to the always-on baseline is its sensed fraction.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "see/staged.hpp"

namespace see {

struct SensorPowerModel {
  // Relative power per channel; empty means equal weights.
  std::vector<double> channel_weights;

  // Throws ConfigError on negative / non-finite weights or a zero total.
  void validate() const;
};

// Mean over segments of the power-weighted sensed fraction. Every channel is
// on for the same share of the window, so the weights only matter once
// channels are gated separately. UsageError on empty input.
double energy_ratio(std::span<const InferenceTrace> traces, const SensorPowerModel& power = {});

struct ClassAccuracy {
  int label = 0;
  std::size_t count = 0;
  std::size_t correct = 0;
  // No trace of this class: accuracy is undefined, not zero.
  bool absent = true;
  double accuracy = 0.0;

  friend bool operator==(const ClassAccuracy&, const ClassAccuracy&) = default;
};

// UsageError if any trace lacks a true label.
std::vector<ClassAccuracy> per_class_accuracy(std::span<const InferenceTrace> traces, int num_classes);
double overall_accuracy(std::span<const InferenceTrace> traces);

// 8-byte parameters / 32-byte tree nodes, in KB of 1024 bytes.
double parameter_memory_kb(std::size_t parameter_count);

struct MemoryOverhead {
  double baseline_kb = 0.0;
  double see_kb = 0.0;

  friend bool operator==(const MemoryOverhead&, const MemoryOverhead&) = default;
};

class SeeCnnModel;
class ForestCascade;
MemoryOverhead memory_overhead(const SeeCnnModel& model);
MemoryOverhead memory_overhead(const ForestCascade& cascade, std::size_t baseline_node_count);

struct EnergyReport {
  std::string family;  // "cnn" or "forest"
  std::size_t segments = 0;
  double accuracy = 0.0;
  double mean_energy_ratio = 1.0;
  std::vector<double> data_fractions;
  std::vector<double> thresholds;
  std::vector<std::size_t> exit_usage;
  std::vector<ClassAccuracy> per_class;
  std::vector<std::string> class_names;
  MemoryOverhead memory;
  // Multiply-accumulates from the first slice to each exit (CNN only).
  std::vector<std::uint64_t> macs_to_exit;

  std::string to_json() const;
  static EnergyReport from_json(const std::string& text);
  // Plain-text tables: summary, per-exit usage, per-class accuracy.
  std::string to_table() const;

  friend bool operator==(const EnergyReport&, const EnergyReport&) = default;
};

EnergyReport make_energy_report(std::span<const InferenceTrace> traces, const StagedClassifier& classifier,
                                std::span<const double> thresholds, const MemoryOverhead& memory,
                                const SensorPowerModel& power = {});

}  // namespace see
