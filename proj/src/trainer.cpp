#include "see/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <json.hpp>

#include "see/errors.hpp"
#include "see/kernels.hpp"

namespace see {

std::vector<double> default_loss_weights(int exits) {
  static constexpr double kDefaults[] = {2.0, 1.5, 1.0};
  std::vector<double> w;
  for (int n = 0; n < exits; ++n) w.push_back(n < 3 ? kDefaults[n] : 1.0);
  return w;
}

double see_loss(std::span<const std::vector<double>> exit_probs, int label,
                std::span<const double> loss_weights) {
  if (exit_probs.empty()) throw ConfigError("see_loss needs at least one exit");
  if (exit_probs.size() != loss_weights.size()) {
    throw ConfigError("see_loss: " + std::to_string(loss_weights.size()) + " loss weights for " +
                      std::to_string(exit_probs.size()) + " exits");
  }
  double total = 0.0;
  for (std::size_t n = 0; n < exit_probs.size(); ++n) {
    total += loss_weights[n] * nn::cross_entropy_loss(label, exit_probs[n]);
  }
  return total;
}

namespace {

void check_compatible(const SeeCnnModel& model, const Dataset& data, const char* what) {
  const auto& s = model.spec();
  if (data.empty()) throw UsageError(std::string(what) + " split is empty");
  if (data.channels() != s.channels || data.length() != s.segment_length) {
    throw ConfigError(std::string(what) + " segments are [" + std::to_string(data.channels()) + "x" +
                      std::to_string(data.length()) + "], model expects [" +
                      std::to_string(s.channels) + "x" + std::to_string(s.segment_length) + "]");
  }
  for (const auto& seg : data.segments) {
    if (seg.label < 0 || seg.label >= s.num_classes) {
      throw ConfigError(std::string(what) + " segment " + std::to_string(seg.segment_id) +
                        " has label " + std::to_string(seg.label) + " but the model has " +
                        std::to_string(s.num_classes) + " classes");
    }
  }
}

}  // namespace

ExitMetrics evaluate_exits(const SeeCnnModel& model, const Dataset& split) {
  check_compatible(model, split, "evaluation");
  const auto exits = static_cast<std::size_t>(model.num_exits());
  ExitMetrics m{std::vector<double>(exits, 0.0), std::vector<double>(exits, 0.0)};
  for (const auto& seg : split.segments) {
    const auto logits = model.forward_all_exits(seg.data);
    for (std::size_t n = 0; n < exits; ++n) {
      const auto p = nn::softmax(logits[n]);
      m.loss[n] += nn::cross_entropy_loss(seg.label, p);
      if (static_cast<int>(nn::argmax(logits[n])) == seg.label) m.accuracy[n] += 1.0;
    }
  }
  const auto count = static_cast<double>(split.size());
  for (std::size_t n = 0; n < exits; ++n) {
    m.loss[n] /= count;
    m.accuracy[n] /= count;
  }
  return m;
}

double evaluate_exit(const SeeCnnModel& model, const Dataset& split, int exit_index) {
  if (exit_index < 1 || exit_index > model.num_exits()) {
    throw UsageError("exit index " + std::to_string(exit_index) + " outside 1.." +
                     std::to_string(model.num_exits()));
  }
  check_compatible(model, split, "evaluation");
  std::size_t correct = 0;
  for (const auto& seg : split.segments) {
    const auto slices = model.slice_segment(seg.data);
    const auto z = model.forward_to_exit(slices, exit_index);
    if (static_cast<int>(nn::argmax(z)) == seg.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(split.size());
}

TrainReport train(SeeCnnModel& model, const Dataset& train_set, const TrainConfig& config,
                  const Dataset* heldout) {
  if (config.epochs < 0 || config.batch_size < 1 || !(config.learning_rate > 0.0) ||
      config.patience < 0) {
    throw ConfigError("epochs >= 0, batch_size >= 1, learning_rate > 0 and patience >= 0 required");
  }
  const int exits = model.num_exits();
  const std::vector<double> weights =
      config.loss_weights.empty() ? model.spec().loss_weights() : config.loss_weights;
  if (static_cast<int>(weights.size()) != exits) {
    throw ConfigError(std::to_string(weights.size()) + " loss weights given for " +
                      std::to_string(exits) + " exits");
  }
  for (double w : weights) {
    if (!(w > 0.0) || !std::isfinite(w)) throw ConfigError("loss weights must be finite and > 0");
  }
  TrainReport report;
  if (config.epochs == 0) return report;
  check_compatible(model, train_set, "training");
  if (heldout != nullptr) check_compatible(model, *heldout, "held-out");

  std::mt19937_64 rng(config.seed);
  nn::AdamState adam(model.parameter_count(), nn::AdamConfig{config.learning_rate});
  const auto blocks = model.parameter_blocks();
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<double> grads(model.parameter_count());
  ForwardCache cache;
  const auto n_exits = static_cast<std::size_t>(exits);

  double best_loss = std::numeric_limits<double>::infinity();
  std::vector<double> best_params;
  int since_best = 0;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_exit_loss.assign(n_exits, 0.0);
    rec.train_exit_accuracy.assign(n_exits, 0.0);
    int batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      const double scale = 1.0 / static_cast<double>(end - start);
      std::fill(grads.begin(), grads.end(), 0.0);
      ++batch_index;
      for (std::size_t b = start; b < end; ++b) {
        const auto& seg = train_set.segments[order[b]];
        const auto logits = model.forward_all_exits(seg.data, &cache);
        std::vector<std::vector<double>> dz(n_exits);
        for (std::size_t n = 0; n < n_exits; ++n) {
          const auto p = nn::softmax(logits[n]);
          const double loss = nn::cross_entropy_loss(seg.label, p);
          if (!std::isfinite(loss) || !std::all_of(logits[n].begin(), logits[n].end(),
                                                   [](double v) { return std::isfinite(v); })) {
            throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                std::to_string(batch_index) + ", exit " + std::to_string(n + 1));
          }
          rec.train_exit_loss[n] += loss;
          rec.train_loss += weights[n] * loss;
          if (static_cast<int>(nn::argmax(logits[n])) == seg.label) rec.train_exit_accuracy[n] += 1.0;
          dz[n] = nn::softmax_cross_entropy_grad(seg.label, p);
          for (double& v : dz[n]) v *= weights[n] * scale;
        }
        model.backward(cache, dz, grads);
      }
      nn::adam_step(model.parameters(), grads, adam, blocks);
    }
    const auto count = static_cast<double>(train_set.size());
    rec.train_loss /= count;
    for (std::size_t n = 0; n < n_exits; ++n) {
      rec.train_exit_loss[n] /= count;
      rec.train_exit_accuracy[n] /= count;
    }
    bool stop = false;
    if (heldout != nullptr) {
      const auto m = evaluate_exits(model, *heldout);
      rec.heldout_exit_loss = m.loss;
      rec.heldout_exit_accuracy = m.accuracy;
      for (std::size_t n = 0; n < n_exits; ++n) rec.heldout_loss += weights[n] * m.loss[n];
      if (config.patience > 0) {
        if (rec.heldout_loss < best_loss) {
          best_loss = rec.heldout_loss;
          best_params.assign(model.parameters().begin(), model.parameters().end());
          report.best_epoch = epoch;
          since_best = 0;
        } else if (++since_best >= config.patience) {
          stop = true;
        }
      }
    }
    report.epochs.push_back(std::move(rec));
    if (stop) break;
  }
  if (!best_params.empty()) {
    std::copy(best_params.begin(), best_params.end(), model.parameters().begin());
  } else {
    report.best_epoch = static_cast<int>(report.epochs.size());
  }
  report.final_exit_accuracy = evaluate_exits(model, heldout != nullptr ? *heldout : train_set).accuracy;
  return report;
}

std::string TrainReport::to_jsonl() const {
  std::string out;
  for (const auto& e : epochs) {
    nlohmann::json j{{"epoch", e.epoch},
                     {"train_loss", e.train_loss},
                     {"train_exit_loss", e.train_exit_loss},
                     {"train_exit_accuracy", e.train_exit_accuracy}};
    if (!e.heldout_exit_loss.empty()) {
      j["heldout_loss"] = e.heldout_loss;
      j["heldout_exit_loss"] = e.heldout_exit_loss;
      j["heldout_exit_accuracy"] = e.heldout_exit_accuracy;
    }
    out += j.dump() + "\n";
  }
  return out;
}

}  // namespace see
