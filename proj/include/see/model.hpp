#pragma once

// Sensor-aware early-exit 1-D CNN.
//
// A trunk of conv -> maxpool -> ReLU stages ends in two fully connected layers
// (the terminal exit). Early exits hang off intermediate trunk stages; each is
// a single conv -> maxpool -> ReLU stage plus two fully connected layers. The
// input window arrives in contiguous slices: slice 1 feeds the first trunk
// stage, and every later slice passes through a late-input block (conv ->
// maxpool -> ReLU into the trunk's channel count, pooled down to the trunk's
// time resolution) whose output is appended along the time axis to the trunk
// feature map right after the preceding exit's attachment stage.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "see/kernels.hpp"
#include "see/normalize.hpp"
#include "see/staged.hpp"
#include "see/tensor.hpp"

namespace see {

struct ConvStageSpec {
  int out_channels = 8;
  int kernel_width = 3;
  int stride = 1;
  int pool_width = 2;
  int pool_stride = 2;

  friend bool operator==(const ConvStageSpec&, const ConvStageSpec&) = default;
};

struct ExitHeadSpec {
  int filters = 8;
  int kernel_width = 3;
  int pool_width = 2;
  int pool_stride = 2;
  int hidden = 32;

  friend bool operator==(const ExitHeadSpec&, const ExitHeadSpec&) = default;
};

struct ExitSpec {
  // 1-based trunk stage whose output feeds the exit.
  int attach_after_layer = 1;
  // Cumulative share of the window available at this exit, in (0, 1].
  double data_fraction = 1.0;
  double entropy_threshold = 0.0;
  double loss_weight = 1.0;

  friend bool operator==(const ExitSpec&, const ExitSpec&) = default;
};

std::vector<ConvStageSpec> default_trunk();

struct ArchitectureSpec {
  int channels = 4;
  int segment_length = 128;
  int num_classes = 2;
  std::vector<ConvStageSpec> trunk = default_trunk();
  int fc_hidden = 64;
  ExitHeadSpec head;
  int late_kernel_width = 3;
  // Early exits only, ordered; the terminal exit is implicit.
  std::vector<ExitSpec> early_exits;
  double terminal_loss_weight = 1.0;

  int num_exits() const { return static_cast<int>(early_exits.size()) + 1; }
  // Early exits followed by the terminal exit (attached after the last
  // stage, fraction 1.0, threshold unused).
  std::vector<ExitSpec> exits() const;
  std::vector<double> data_fractions() const;
  std::vector<double> loss_weights() const;
  std::vector<double> thresholds() const;
  // Exclusive end sample of each slice: floor(c_n * L), last == L.
  std::vector<int> slice_ends() const;

  // Checks ordering, ranges and all derived feature lengths; throws
  // ConfigError / ShapeError.
  void validate() const;

  // Same trunk and terminal head, no early exits.
  ArchitectureSpec baseline() const;

  friend bool operator==(const ArchitectureSpec&, const ArchitectureSpec&) = default;
};

enum class BlockRole { baseline, early_exit, late_input };

struct NamedBlock {
  nn::ParameterBlock block;
  BlockRole role = BlockRole::baseline;
};

// Activations of one conv -> pool -> ReLU stage, kept for the backward pass.
struct StageCache {
  Tensor2 input;
  Tensor2 conv_out;
  nn::PoolResult pool;
  Tensor2 output;
};

struct DenseHeadCache {
  std::vector<double> flat_input;
  std::vector<double> hidden_pre;
  std::vector<double> hidden_post;
};

// Everything a staged forward pass touched. Filled by CnnSession when a cache
// is attached, consumed by SeeCnnModel::backward.
struct ForwardCache {
  std::vector<StageCache> trunk;
  std::vector<StageCache> heads;
  std::vector<DenseHeadCache> head_dense;
  std::vector<StageCache> late;
  // Trunk map length before each late-input splice.
  std::vector<int> splice_at;
  DenseHeadCache terminal;
  int exits_reached = 0;

  void clear();
};

class SeeCnnModel;

// Incremental forward pass: advance() consumes the next slice and returns the
// logits of the next exit.
class CnnSession final : public StagedSession {
 public:
  CnnSession(const SeeCnnModel& model, ForwardCache* cache = nullptr);

  std::vector<double> advance(const Tensor2& slice) override;
  std::vector<double> advance_logits(const Tensor2& slice);
  int exits_done() const { return next_exit_; }

 private:
  const SeeCnnModel& model_;
  ForwardCache* cache_;
  Tensor2 map_;
  int stages_done_ = 0;
  int next_exit_ = 0;
};

class SeeCnnModel final : public StagedClassifier {
 public:
  // Validates `spec`, lays out every parameter block in one flat buffer and
  // fills it with seeded fan-in uniform values.
  static SeeCnnModel assemble(const ArchitectureSpec& spec, std::uint64_t seed);

  const ArchitectureSpec& spec() const { return spec_; }

  std::span<double> parameters() { return params_; }
  std::span<const double> parameters() const { return params_; }
  const std::vector<NamedBlock>& blocks() const { return blocks_; }
  std::vector<nn::ParameterBlock> parameter_blocks() const;

  std::size_t parameter_count() const { return params_.size(); }
  std::size_t baseline_parameter_count() const;
  std::size_t see_parameter_count() const { return parameter_count() - baseline_parameter_count(); }
  // count * 8 bytes / 1024.
  double memory_kb() const;
  double baseline_memory_kb() const;

  // Multiply-accumulate count from slice 1 up to and including exit n
  // (1-based), for every layer on the path.
  std::uint64_t macs_to_exit(int exit_index) const;

  // Time length of the trunk map after stage `layer` (1-based), including
  // any late-input splices at or before it.
  int trunk_map_length(int layer) const { return trunk_out_len_.at(static_cast<std::size_t>(layer - 1)); }
  int late_output_length(int early_exit) const { return late_out_len_.at(static_cast<std::size_t>(early_exit)); }
  int head_feature_size(int early_exit) const;
  int terminal_feature_size() const;

  // Splits a full segment into its slices.
  std::vector<Tensor2> slice_segment(const Tensor2& segment) const;

  // Logits of exit n (1-based) given slices 1..n (extra slices ignored).
  std::vector<double> forward_to_exit(std::span<const Tensor2> slices, int exit_index) const;
  std::vector<std::vector<double>> forward_all_exits(const Tensor2& segment,
                                                     ForwardCache* cache = nullptr) const;

  // Accumulates dL/dtheta into `grads` given dL/dlogits for every exit
  // reached by the cached forward pass (empty vectors mean zero gradient).
  void backward(const ForwardCache& cache, std::span<const std::vector<double>> logit_grads,
                std::span<double> grads) const;

  // StagedClassifier: probabilities per exit.
  int num_exits() const override { return spec_.num_exits(); }
  int num_classes() const override { return spec_.num_classes; }
  std::vector<double> data_fractions() const override { return spec_.data_fractions(); }
  int segment_length() const override { return spec_.segment_length; }
  std::unique_ptr<StagedSession> start() const override;

  void save(const std::filesystem::path& path) const;
  static SeeCnnModel load(const std::filesystem::path& path);
  std::string to_text() const;
  static SeeCnnModel from_text(const std::string& text);

  // Input transform fitted at training time; stored alongside the weights.
  // Sessions do not apply it; callers normalize windows before inference.
  ChannelNormalizer normalizer;

  friend bool operator==(const SeeCnnModel& a, const SeeCnnModel& b) {
    return a.spec_ == b.spec_ && a.params_ == b.params_ && a.normalizer == b.normalizer;
  }

 private:
  friend class CnnSession;

  struct ConvRef {
    nn::ConvShape conv;
    nn::PoolShape pool;
    std::size_t offset = 0;
  };
  struct DenseRef {
    nn::DenseShape shape;
    std::size_t offset = 0;
  };
  struct HeadRef {
    ConvRef stage;
    DenseRef hidden;
    DenseRef out;
  };

  explicit SeeCnnModel(ArchitectureSpec spec);

  std::span<const double> weights(const ConvRef& r) const;
  std::span<const double> bias(const ConvRef& r) const;
  std::span<const double> weights(const DenseRef& r) const;
  std::span<const double> bias(const DenseRef& r) const;

  Tensor2 run_stage(const ConvRef& ref, const Tensor2& input, StageCache* cache) const;
  std::vector<double> run_dense_head(const DenseRef& hidden, const DenseRef& out,
                                     std::span<const double> flat, DenseHeadCache* cache) const;
  Tensor2 backward_stage(const ConvRef& ref, const StageCache& cache, const Tensor2& grad_out,
                         std::span<double> grads) const;
  std::vector<double> backward_dense_head(const DenseRef& hidden, const DenseRef& out,
                                          const DenseHeadCache& cache,
                                          std::span<const double> grad_logits,
                                          std::span<double> grads) const;

  ArchitectureSpec spec_;
  std::vector<double> params_;
  std::vector<NamedBlock> blocks_;
  std::vector<ConvRef> trunk_;
  std::vector<HeadRef> heads_;
  std::vector<ConvRef> late_;
  DenseRef fc_hidden_;
  DenseRef fc_out_;
  std::vector<int> trunk_out_len_;
  std::vector<int> late_out_len_;
  std::vector<int> attach_;
};

}  // namespace see
