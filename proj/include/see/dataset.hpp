#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "see/normalize.hpp"
#include "see/tensor.hpp"

namespace see {

struct Segment {
  int segment_id = 0;
  Tensor2 data;  // channels x samples
  int label = 0;

  friend bool operator==(const Segment&, const Segment&) = default;
};

struct Dataset {
  std::vector<Segment> segments;
  std::vector<std::string> class_names;
  std::vector<std::string> channel_names;
  double sample_rate = 0.0;  // metadata only

  int channels() const;
  int length() const;
  int num_classes() const { return static_cast<int>(class_names.size()); }
  std::size_t size() const { return segments.size(); }
  bool empty() const { return segments.empty(); }
  std::vector<int> class_counts() const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

// CSV layout, one row per sample:
//   segment_id,t,ch_0,...,ch_{C-1},label
// Rows sorted by (segment_id, t); t runs 0..L-1 inside each segment; label
// is a non-negative class index, constant within a segment. LF line endings.
Dataset load_csv(const std::filesystem::path& path);
Dataset parse_csv(const std::string& text);
void save_csv(const Dataset& dataset, const std::filesystem::path& path);
std::string to_csv(const Dataset& dataset);

struct SplitResult {
  Dataset train;
  Dataset test;
  std::vector<std::string> warnings;
};

// Stratified split: each class contributes round(train_fraction * n_c)
// segments to train. Classes with a single segment go to train with a
// warning. Both halves keep segment_id order.
SplitResult split(const Dataset& dataset, double train_fraction, std::uint64_t seed);

// Keeps the first floor(fraction * L) samples and repeats each channel's last
// observed value over the rest of the window.
Segment impute_hold_last(const Segment& segment, double observed_fraction);

struct SyntheticSpec {
  int num_classes = 6;
  int easy_class_count = 3;
  int channels = 4;
  int length = 128;
  int per_class = 300;
  double noise_sigma = 0.3;
  std::uint64_t seed = 1;
};

// Classes 0..easy-1 carry a constant per-class channel offset over the whole
// window, so a short prefix identifies them. The remaining "hard" classes
// are plain noise until the middle of the window, after which each adds its
// own pattern (sine burst, rising or falling ramp) on one shared channel, the
// first channel no easy class uses when there is one. Their early samples are
// statistically identical.
Dataset generate_synthetic(const SyntheticSpec& spec);

// Per-channel mean / population std over every sample of `train`
// (scale 1 where the std vanishes).
ChannelNormalizer fit_normalizer(const Dataset& train);
Dataset normalized(const Dataset& dataset, const ChannelNormalizer& normalizer);

}  // namespace see
