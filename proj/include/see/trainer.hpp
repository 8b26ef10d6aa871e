#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "see/dataset.hpp"
#include "see/model.hpp"

namespace see {

struct TrainConfig {
  int epochs = 20;
  int batch_size = 32;
  double learning_rate = 1e-3;
  // One weight per exit; empty means the weights stored in the model spec.
  std::vector<double> loss_weights;
  std::uint64_t seed = 0;
  // Stop after this many epochs without held-out loss improvement and keep
  // the best parameters; 0 disables early stopping.
  int patience = 0;
};

// Decreasing defaults 2.0, 1.5, 1.0 (truncated to `exits` entries, padded
// with 1.0 beyond three exits).
std::vector<double> default_loss_weights(int exits);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  std::vector<double> train_exit_loss;
  std::vector<double> train_exit_accuracy;
  // Empty when no held-out split was supplied.
  std::vector<double> heldout_exit_loss;
  std::vector<double> heldout_exit_accuracy;
  double heldout_loss = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::vector<double> final_exit_accuracy;
  int best_epoch = 0;

  // One JSON object per line, one line per epoch.
  std::string to_jsonl() const;
};

// sum_n lambda_n * L(y, yhat_n): the weighted multi-exit loss for one segment.
double see_loss(std::span<const std::vector<double>> exit_probs, int label,
                std::span<const double> loss_weights);

// Mini-batch Adam on the weighted multi-exit loss. Every step runs every
// exit on the full segment. Deterministic for a fixed seed.
TrainReport train(SeeCnnModel& model, const Dataset& train_set, const TrainConfig& config,
                  const Dataset* heldout = nullptr);

// Fraction of segments whose exit-n (1-based) argmax matches the label.
double evaluate_exit(const SeeCnnModel& model, const Dataset& split, int exit_index);

// Mean per-exit loss and accuracy over a split, from one pass of all exits.
struct ExitMetrics {
  std::vector<double> loss;
  std::vector<double> accuracy;
};
ExitMetrics evaluate_exits(const SeeCnnModel& model, const Dataset& split);

}  // namespace see
