#include "see/staged.hpp"

#include <cmath>

#include "see/errors.hpp"
#include "see/normalize.hpp"

namespace see {

int fraction_to_samples(double fraction, int length) {
  return static_cast<int>(std::floor(fraction * static_cast<double>(length) + 1e-9));
}

std::vector<int> slice_ends_for(const std::vector<double>& fractions, int length) {
  if (fractions.empty()) throw ConfigError("at least one data fraction is required");
  if (fractions.back() != 1.0) throw ConfigError("the last data fraction must be 1.0");
  std::vector<int> ends;
  int previous = 0;
  for (std::size_t i = 0; i < fractions.size(); ++i) {
    const double c = fractions[i];
    if (!(c > 0.0 && c <= 1.0)) {
      throw ConfigError("data fraction " + std::to_string(c) + " outside (0, 1]");
    }
    const int end = i + 1 == fractions.size() ? length : fraction_to_samples(c, length);
    if (end <= previous) {
      throw ConfigError("data fraction " + std::to_string(c) + " of a " + std::to_string(length) +
                        "-sample window adds no samples after the previous exit");
    }
    ends.push_back(end);
    previous = end;
  }
  return ends;
}

WindowSource::WindowSource(const Tensor2& segment, std::vector<int> slice_ends)
    : segment_(segment), ends_(std::move(slice_ends)) {
  if (ends_.empty() || ends_.back() > segment.length()) {
    throw DataError("window of " + std::to_string(segment.length()) +
                    " samples cannot serve the requested slices");
  }
}

Tensor2 WindowSource::next_slice() {
  if (served_ >= num_slices()) {
    throw DataError("segment source exhausted after " + std::to_string(served_) + " slices");
  }
  const int begin = served_ == 0 ? 0 : ends_[static_cast<std::size_t>(served_ - 1)];
  const int end = ends_[static_cast<std::size_t>(served_)];
  ++served_;
  return segment_.slice_time(begin, end);
}

int WindowSource::samples_served() const {
  return served_ == 0 ? 0 : ends_[static_cast<std::size_t>(served_ - 1)];
}

void ChannelNormalizer::apply(Tensor2& window) const {
  if (empty()) return;
  if (static_cast<int>(mean.size()) != window.channels() || scale.size() != mean.size()) {
    throw ShapeError("normalizer fitted on " + std::to_string(mean.size()) +
                     " channels applied to " + window.shape_string());
  }
  for (int c = 0; c < window.channels(); ++c) {
    const double m = mean[static_cast<std::size_t>(c)];
    const double s = scale[static_cast<std::size_t>(c)];
    for (int t = 0; t < window.length(); ++t) window(c, t) = (window(c, t) - m) / s;
  }
}

}  // namespace see
