#pragma once

// Entropy-gated staged inference: slices are requested from the sensor one at
// a time and sensing stops at the first exit whose prediction entropy falls
// strictly below that exit's threshold.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "see/dataset.hpp"
#include "see/staged.hpp"

namespace see {

// -sum p log p (natural log, 0 log 0 = 0). Throws UsageError unless the
// entries are non-negative and sum to 1 within 1e-9.
double entropy(std::span<const double> probs);

// Thresholds for the early exits only (num_exits - 1 values, finite, >= 0).
void validate_thresholds(const StagedClassifier& classifier, std::span<const double> thresholds);

InferenceTrace infer_segment(const StagedClassifier& classifier, SegmentSource& source,
                             std::span<const double> thresholds, int segment_id = 0,
                             std::optional<int> true_label = std::nullopt);

// One trace per segment, in input order. Windows are used as given (apply
// any normalization beforehand).
std::vector<InferenceTrace> infer_dataset(const StagedClassifier& classifier, const Dataset& split,
                                          std::span<const double> thresholds);

// One JSON object per trace per line.
std::string traces_to_jsonl(std::span<const InferenceTrace> traces);
std::vector<InferenceTrace> traces_from_jsonl(const std::string& text);

}  // namespace see
