#pragma once

#include <vector>

#include "see/tensor.hpp"

namespace see {

// Per-channel z-score transform fitted on training data. An empty normalizer
// is the identity.
struct ChannelNormalizer {
  std::vector<double> mean;
  std::vector<double> scale;

  bool empty() const { return mean.empty(); }
  void apply(Tensor2& window) const;

  friend bool operator==(const ChannelNormalizer&, const ChannelNormalizer&) = default;
};

}  // namespace see
