#pragma once

// Central finite-difference oracle for the weighted multi-exit loss. Kept in
// test code so it never shares a path with SeeCnnModel::backward.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "see/errors.hpp"
#include "see/kernels.hpp"
#include "see/model.hpp"

namespace see::testing {

inline double total_loss(const SeeCnnModel& model, const Tensor2& x, int label,
                         const std::vector<double>& weights, ForwardCache* cache = nullptr) {
  auto logits = model.forward_all_exits(x, cache);
  double loss = 0.0;
  for (std::size_t n = 0; n < logits.size(); ++n) {
    loss += weights[n] * nn::cross_entropy_loss(label, nn::softmax(logits[n]));
  }
  return loss;
}

// Every piecewise-linear decision taken by a forward pass: ReLU signs and
// max-pool winners. Finite differences are only meaningful when this does
// not change between the +h and -h evaluations.
inline std::vector<std::uint32_t> activation_pattern(const ForwardCache& cache) {
  std::vector<std::uint32_t> sig;
  auto stage = [&](const StageCache& s) {
    if (s.output.empty()) return;
    sig.insert(sig.end(), s.pool.argmax.begin(), s.pool.argmax.end());
    for (double v : s.pool.output.values()) sig.push_back(v > 0.0 ? 1u : 0u);
  };
  auto dense = [&](const DenseHeadCache& d) {
    for (double v : d.hidden_pre) sig.push_back(v > 0.0 ? 1u : 0u);
  };
  for (const auto& s : cache.trunk) stage(s);
  for (const auto& s : cache.heads) stage(s);
  for (const auto& s : cache.late) stage(s);
  for (const auto& d : cache.head_dense) dense(d);
  dense(cache.terminal);
  return sig;
}

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped_at_kinks = 0;
};

// Relative error |a - n| / max(|a|, |n|, floor). The floor keeps parameters
// whose true gradient is (near) zero from being judged on round-off alone.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

inline GradCheckResult gradient_check(SeeCnnModel& model, const Tensor2& x, int label,
                                      const std::vector<double>& weights, double h = 1e-5) {
  ForwardCache cache;
  auto logits = model.forward_all_exits(x, &cache);
  std::vector<std::vector<double>> dz;
  for (std::size_t n = 0; n < logits.size(); ++n) {
    auto g = nn::softmax_cross_entropy_grad(label, nn::softmax(logits[n]));
    for (double& v : g) v *= weights[n];
    dz.push_back(std::move(g));
  }
  std::vector<double> analytic(model.parameter_count(), 0.0);
  model.backward(cache, dz, analytic);

  GradCheckResult result;
  auto params = model.parameters();
  ForwardCache plus_cache, minus_cache;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double saved = params[i];
    params[i] = saved + h;
    const double lp = total_loss(model, x, label, weights, &plus_cache);
    params[i] = saved - h;
    const double lm = total_loss(model, x, label, weights, &minus_cache);
    params[i] = saved;
    if (activation_pattern(plus_cache) != activation_pattern(minus_cache)) {
      ++result.skipped_at_kinks;
      continue;
    }
    const double numeric = (lp - lm) / (2.0 * h);
    result.max_relative_error =
        std::max(result.max_relative_error, relative_error(analytic[i], numeric));
    ++result.checked;
  }
  return result;
}

// Small random SEE architecture (<= max_params parameters) with the given
// number of early exits; retries until the shape walk succeeds.
inline ArchitectureSpec random_small_spec(std::mt19937_64& rng, int early_exits,
                                          std::size_t max_params = 5000) {
  std::uniform_int_distribution<int> pick(0, 1 << 30);
  auto between = [&](int lo, int hi) { return lo + pick(rng) % (hi - lo + 1); };
  for (int attempt = 0; attempt < 10000; ++attempt) {
    ArchitectureSpec s;
    s.channels = between(1, 3);
    s.segment_length = between(48, 96);
    s.num_classes = between(2, 4);
    s.trunk.clear();
    const int stages = between(std::max(3, early_exits + 1), 4);
    for (int l = 0; l < stages; ++l) s.trunk.push_back({between(2, 4), between(2, 3), 1, 2, 2});
    s.fc_hidden = between(4, 8);
    s.head = {between(2, 3), 2, 2, 2, between(3, 6)};
    s.late_kernel_width = between(2, 3);
    std::vector<int> layers;
    for (int l = 1; l < stages; ++l) layers.push_back(l);
    std::shuffle(layers.begin(), layers.end(), rng);
    layers.resize(static_cast<std::size_t>(early_exits));
    std::sort(layers.begin(), layers.end());
    double fraction = 0.0;
    for (int e = 0; e < early_exits; ++e) {
      fraction += 0.1 * between(2, 4);
      s.early_exits.push_back({layers[static_cast<std::size_t>(e)], fraction, 0.5,
                               1.0 + 0.5 * between(0, 4)});
    }
    if (fraction >= 1.0) continue;
    try {
      auto m = SeeCnnModel::assemble(s, 0);
      if (m.parameter_count() <= max_params) return s;
    } catch (const ConfigError&) {
    }
  }
  throw ConfigError("could not draw a small SEE architecture");
}

}  // namespace see::testing
