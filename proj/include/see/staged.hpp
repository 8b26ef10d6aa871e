#pragma once

// Common surface of the two early-exit classifier families (CNN and forest
// cascade) and the sensor abstraction they read from.

#include <cstddef>
#include <memory>
#include <optional>
#include <vector>

#include "see/tensor.hpp"

namespace see {

// One pass through a staged classifier. Each advance() call hands over the
// next slice of the window and returns class probabilities of the next exit.
class StagedSession {
 public:
  virtual ~StagedSession() = default;
  virtual std::vector<double> advance(const Tensor2& slice) = 0;
};

class StagedClassifier {
 public:
  virtual ~StagedClassifier() = default;

  virtual int num_exits() const = 0;
  virtual int num_classes() const = 0;
  // Cumulative window share available at each exit; last entry is 1.0.
  virtual std::vector<double> data_fractions() const = 0;
  virtual int segment_length() const = 0;
  virtual std::unique_ptr<StagedSession> start() const = 0;
};

// floor(c * L) with a small tolerance so that e.g. 0.29 * 100 yields 29.
int fraction_to_samples(double fraction, int length);

// Slice ends for cumulative fractions; throws ConfigError unless strictly
// increasing, non-empty, and ending at `length`.
std::vector<int> slice_ends_for(const std::vector<double>& fractions, int length);

// Simulated sensor: delivers a window slice by slice, on request only.
class SegmentSource {
 public:
  virtual ~SegmentSource() = default;
  virtual int num_slices() const = 0;
  // Next slice; throws DataError once exhausted.
  virtual Tensor2 next_slice() = 0;
  virtual int slices_served() const = 0;
};

// Serves slices of an in-memory segment and counts every read.
class WindowSource final : public SegmentSource {
 public:
  WindowSource(const Tensor2& segment, std::vector<int> slice_ends);

  int num_slices() const override { return static_cast<int>(ends_.size()); }
  Tensor2 next_slice() override;
  int slices_served() const override { return served_; }
  // Samples of the window handed out so far.
  int samples_served() const;

 private:
  const Tensor2& segment_;
  std::vector<int> ends_;
  int served_ = 0;
};

struct InferenceTrace {
  int segment_id = 0;
  int predicted_label = 0;
  std::optional<int> true_label;
  // 1-based.
  int exit_taken = 1;
  double entropy_at_exit = 0.0;
  double sensed_fraction = 1.0;

  friend bool operator==(const InferenceTrace&, const InferenceTrace&) = default;
};

}  // namespace see
