#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "see/errors.hpp"
#include "see/trainer.hpp"

using namespace see;

namespace {

ArchitectureSpec small_spec(int channels, int length, int classes) {
  ArchitectureSpec s;
  s.channels = channels;
  s.segment_length = length;
  s.num_classes = classes;
  s.trunk = {{6, 3, 1, 2, 2}, {8, 3, 1, 2, 2}, {8, 3, 1, 2, 2}};
  s.fc_hidden = 16;
  s.head = {4, 3, 2, 2, 8};
  return s;
}

// Two classes split by the sign of a constant offset on channel 0.
Dataset separable(int per_class, int length, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 0.3);
  Dataset ds;
  ds.class_names = {"neg", "pos"};
  ds.channel_names = {"ch_0", "ch_1"};
  for (int i = 0; i < 2 * per_class; ++i) {
    const int label = i % 2;
    Tensor2 x(2, length);
    for (int t = 0; t < length; ++t) {
      x(0, t) = (label == 1 ? 1.0 : -1.0) + noise(rng);
      x(1, t) = noise(rng);
    }
    ds.segments.push_back({i, std::move(x), label});
  }
  return ds;
}

std::size_t block_offset(const SeeCnnModel& m, const std::string& name) {
  for (const auto& b : m.blocks()) {
    if (b.block.name == name) return b.block.offset;
  }
  FAIL("no block " << name);
  return 0;
}

}  // namespace

TEST_CASE("see_loss examples") {
  // Exit probability of the true class p gives per-exit loss -ln(p)/K.
  const double p1 = std::exp(-0.5 * 2);
  const double p2 = std::exp(-0.3 * 2);
  std::vector<std::vector<double>> probs = {{p1, 1 - p1}, {p2, 1 - p2}};
  std::vector<double> w = {2.0, 1.0};
  CHECK(see_loss(probs, 0, w) == doctest::Approx(1.3).epsilon(1e-12));

  std::vector<std::vector<double>> one = {{0.25, 0.75}};
  std::vector<double> w1 = {1.0};
  CHECK(see_loss(one, 1, w1) == nn::cross_entropy_loss(1, one[0]));

  std::vector<std::vector<double>> perfect = {{0, 1, 0}, {0, 1, 0}, {0, 1, 0}};
  std::vector<double> w3 = {2, 1.5, 1};
  CHECK(see_loss(perfect, 1, w3) == 0.0);
  CHECK_THROWS_AS(see_loss(perfect, 1, w), ConfigError);
}

TEST_CASE("default loss weights decrease and truncate") {
  CHECK(default_loss_weights(1) == std::vector<double>{2.0});
  CHECK(default_loss_weights(3) == std::vector<double>{2.0, 1.5, 1.0});
  CHECK(default_loss_weights(4) == std::vector<double>{2.0, 1.5, 1.0, 1.0});
}

TEST_CASE("train: separable 2-class set reaches >= 99% terminal accuracy in 20 epochs") {
  auto data = separable(100, 48, 3);
  auto spec = small_spec(2, 48, 2);
  spec.early_exits = {{1, 0.5, 0.5, 2.0}};
  auto model = SeeCnnModel::assemble(spec, 11);
  TrainConfig cfg;
  cfg.epochs = 20;
  cfg.seed = 5;
  auto report = train(model, data, cfg);
  REQUIRE(report.epochs.size() == 20);
  CHECK(evaluate_exit(model, data, 2) >= 0.99);
  CHECK(report.final_exit_accuracy.back() >= 0.99);
  for (std::size_t i = 0; i < report.epochs.size(); ++i) {
    CHECK(report.epochs[i].epoch == static_cast<int>(i + 1));
    CHECK(std::isfinite(report.epochs[i].train_loss));
  }
}

TEST_CASE("train: zero epochs leaves the model unchanged") {
  auto data = separable(4, 48, 1);
  auto model = SeeCnnModel::assemble(small_spec(2, 48, 2), 2);
  const auto before = model;
  TrainConfig cfg;
  cfg.epochs = 0;
  auto report = train(model, data, cfg);
  CHECK(report.epochs.empty());
  CHECK(report.to_jsonl().empty());
  CHECK(model == before);
}

TEST_CASE("train: same seed and data give bit-identical parameters and reports") {
  auto data = separable(10, 48, 4);
  auto spec = small_spec(2, 48, 2);
  spec.early_exits = {{1, 0.4, 0.5, 2.0}};
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 8;
  cfg.seed = 9;
  auto a = SeeCnnModel::assemble(spec, 3);
  auto b = SeeCnnModel::assemble(spec, 3);
  auto ra = train(a, data, cfg, &data);
  auto rb = train(b, data, cfg, &data);
  CHECK(a == b);
  CHECK(ra.to_jsonl() == rb.to_jsonl());
  cfg.seed = 10;
  auto c = SeeCnnModel::assemble(spec, 3);
  train(c, data, cfg);
  CHECK_FALSE(a == c);
}

TEST_CASE("train: overfits 8 segments to loss < 0.01 within 500 steps") {
  auto data = separable(4, 48, 8);
  // Random labels make the task pure memorization.
  std::mt19937_64 rng(2);
  for (auto& s : data.segments) s.label = static_cast<int>(rng() % 2);
  auto spec = small_spec(2, 48, 2);
  spec.early_exits = {{1, 0.5, 0.5, 1.0}};
  auto model = SeeCnnModel::assemble(spec, 4);
  TrainConfig cfg;
  cfg.epochs = 500;
  cfg.batch_size = 8;
  cfg.learning_rate = 3e-3;
  auto report = train(model, data, cfg);
  double best = report.epochs.front().train_loss;
  int reached = -1;
  for (const auto& e : report.epochs) {
    best = std::min(best, e.train_loss);
    if (reached < 0 && e.train_loss < 0.01) reached = e.epoch;
  }
  CAPTURE(best);
  CHECK(reached > 0);
  CHECK(report.epochs.back().train_loss < report.epochs.front().train_loss);
}

TEST_CASE("train: rejects mismatched data and weights") {
  auto data = separable(4, 48, 1);
  auto model = SeeCnnModel::assemble(small_spec(2, 64, 2), 1);
  CHECK_THROWS_AS(train(model, data, TrainConfig{}), ConfigError);
  auto m2 = SeeCnnModel::assemble(small_spec(2, 48, 2), 1);
  TrainConfig cfg;
  cfg.loss_weights = {1.0, 1.0};
  CHECK_THROWS_AS(train(m2, data, cfg), ConfigError);
  CHECK_THROWS_AS(train(m2, Dataset{}, TrainConfig{}), UsageError);
}

TEST_CASE("train: non-finite loss aborts with epoch, batch and exit") {
  auto data = separable(4, 48, 1);
  auto model = SeeCnnModel::assemble(small_spec(2, 48, 2), 1);
  model.parameters()[block_offset(model, "fc.out.bias")] = std::numeric_limits<double>::infinity();
  TrainConfig cfg;
  cfg.epochs = 1;
  try {
    train(model, data, cfg);
    FAIL("expected TrainingError");
  } catch (const TrainingError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("epoch 1") != std::string::npos);
    CHECK(msg.find("batch 1") != std::string::npos);
    CHECK(msg.find("exit 1") != std::string::npos);
  }
}

TEST_CASE("train: patience restores the best held-out parameters") {
  auto data = separable(10, 48, 4);
  auto held = separable(10, 48, 40);
  auto model = SeeCnnModel::assemble(small_spec(2, 48, 2), 3);
  TrainConfig cfg;
  cfg.epochs = 30;
  cfg.batch_size = 4;
  cfg.learning_rate = 5e-2;
  cfg.patience = 2;
  auto report = train(model, data, cfg, &held);
  REQUIRE(report.best_epoch >= 1);
  double best = report.epochs.front().heldout_loss;
  for (const auto& e : report.epochs) best = std::min(best, e.heldout_loss);
  CHECK(report.epochs[static_cast<std::size_t>(report.best_epoch - 1)].heldout_loss == best);
  const auto m = evaluate_exits(model, held);
  CHECK(m.loss[0] == doctest::Approx(best).epsilon(1e-12));
}

TEST_CASE("evaluate_exit: all-correct, chance level and logit rescaling") {
  auto spec = small_spec(2, 48, 4);
  auto model = SeeCnnModel::assemble(spec, 6);
  std::fill(model.parameters().begin(), model.parameters().end(), 0.0);
  model.parameters()[block_offset(model, "fc.out.bias") + 2] = 1.0;
  Dataset all2 = separable(5, 48, 1);
  all2.class_names = {"a", "b", "c", "d"};
  for (auto& s : all2.segments) s.label = 2;
  CHECK(evaluate_exit(model, all2, 1) == 1.0);

  // Untrained model, balanced labels unrelated to the inputs: about 1/k.
  auto fresh = SeeCnnModel::assemble(spec, 6);
  Dataset noise = separable(500, 48, 2);
  noise.class_names = all2.class_names;
  std::mt19937_64 rng(7);
  std::vector<int> labels;
  for (std::size_t i = 0; i < noise.size(); ++i) labels.push_back(static_cast<int>(i % 4));
  std::shuffle(labels.begin(), labels.end(), rng);
  for (std::size_t i = 0; i < noise.size(); ++i) noise.segments[i].label = labels[i];
  const double acc = evaluate_exit(fresh, noise, 1);
  CHECK(std::abs(acc - 0.25) <= 0.05);

  // Scaling the output layer scales the logits; argmax is unchanged.
  auto scaled = fresh;
  const auto w = block_offset(scaled, "fc.out.weight");
  const auto end = block_offset(scaled, "fc.out.bias") + 4;
  for (std::size_t i = w; i < end; ++i) scaled.parameters()[i] *= 3.5;
  CHECK(evaluate_exit(scaled, noise, 1) == acc);

  CHECK_THROWS_AS(evaluate_exit(fresh, Dataset{}, 1), UsageError);
  CHECK_THROWS_AS(evaluate_exit(fresh, noise, 2), UsageError);
}
