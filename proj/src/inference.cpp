#include "see/inference.hpp"

#include <cmath>
#include <sstream>

#include <json.hpp>

#include "see/errors.hpp"
#include "see/kernels.hpp"

namespace see {

double entropy(std::span<const double> probs) {
  if (probs.empty()) throw UsageError("entropy of an empty distribution");
  double sum = 0.0;
  double h = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0) || !std::isfinite(p)) {
      throw UsageError("entropy: probability " + std::to_string(p) + " is not a finite value >= 0");
    }
    sum += p;
    if (p > 0.0) h -= p * std::log(p);
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw UsageError("entropy: probabilities sum to " + std::to_string(sum) + ", not 1");
  }
  return h < 0.0 ? 0.0 : h;
}

void validate_thresholds(const StagedClassifier& classifier, std::span<const double> thresholds) {
  const auto expected = static_cast<std::size_t>(classifier.num_exits() - 1);
  if (thresholds.size() != expected) {
    throw ConfigError(std::to_string(thresholds.size()) + " thresholds given for " +
                      std::to_string(expected) + " early exits");
  }
  for (double t : thresholds) {
    if (!std::isfinite(t) || t < 0.0) {
      throw ConfigError("threshold " + std::to_string(t) + " must be finite and >= 0");
    }
  }
}

InferenceTrace infer_segment(const StagedClassifier& classifier, SegmentSource& source,
                             std::span<const double> thresholds, int segment_id,
                             std::optional<int> true_label) {
  validate_thresholds(classifier, thresholds);
  const int exits = classifier.num_exits();
  const auto fractions = classifier.data_fractions();
  auto session = classifier.start();
  InferenceTrace trace;
  trace.segment_id = segment_id;
  trace.true_label = true_label;
  for (int n = 1; n <= exits; ++n) {
    const auto probs = session->advance(source.next_slice());
    const double e = entropy(probs);
    const bool terminal = n == exits;
    if (terminal || e < thresholds[static_cast<std::size_t>(n - 1)]) {
      trace.predicted_label = static_cast<int>(nn::argmax(probs));
      trace.exit_taken = n;
      trace.entropy_at_exit = e;
      trace.sensed_fraction = terminal ? 1.0 : fractions[static_cast<std::size_t>(n - 1)];
      break;
    }
  }
  return trace;
}

std::vector<InferenceTrace> infer_dataset(const StagedClassifier& classifier, const Dataset& split,
                                          std::span<const double> thresholds) {
  validate_thresholds(classifier, thresholds);
  std::vector<InferenceTrace> traces;
  traces.reserve(split.size());
  const auto ends = slice_ends_for(classifier.data_fractions(), classifier.segment_length());
  for (const auto& seg : split.segments) {
    try {
      if (seg.data.length() != classifier.segment_length()) {
        throw DataError("window has " + std::to_string(seg.data.length()) + " samples, classifier expects " +
                        std::to_string(classifier.segment_length()));
      }
      WindowSource source(seg.data, ends);
      traces.push_back(infer_segment(classifier, source, thresholds, seg.segment_id, seg.label));
    } catch (const DataError& e) {
      throw DataError("segment " + std::to_string(seg.segment_id) + ": " + e.what());
    } catch (const ConfigError& e) {
      throw ConfigError("segment " + std::to_string(seg.segment_id) + ": " + e.what());
    }
  }
  return traces;
}

std::string traces_to_jsonl(std::span<const InferenceTrace> traces) {
  std::string out;
  for (const auto& t : traces) {
    nlohmann::json j{{"segment_id", t.segment_id},
                     {"label", t.true_label ? nlohmann::json(*t.true_label) : nlohmann::json(nullptr)},
                     {"prediction", t.predicted_label},
                     {"exit", t.exit_taken},
                     {"entropy", t.entropy_at_exit},
                     {"sensed_fraction", t.sensed_fraction}};
    out += j.dump() + "\n";
  }
  return out;
}

std::vector<InferenceTrace> traces_from_jsonl(const std::string& text) {
  std::vector<InferenceTrace> traces;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      InferenceTrace t;
      t.segment_id = j.at("segment_id").get<int>();
      if (!j.at("label").is_null()) t.true_label = j.at("label").get<int>();
      t.predicted_label = j.at("prediction").get<int>();
      t.exit_taken = j.at("exit").get<int>();
      t.entropy_at_exit = j.at("entropy").get<double>();
      t.sensed_fraction = j.at("sensed_fraction").get<double>();
      traces.push_back(t);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("trace line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return traces;
}

}  // namespace see
