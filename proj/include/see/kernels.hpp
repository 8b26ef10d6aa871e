#pragma once

// Dense layer primitives with analytical backward passes. Everything here is
// a pure function over caller-owned buffers; backward functions accumulate
// into the gradient spans they are handed.

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "see/tensor.hpp"

namespace see::nn {

inline constexpr double kProbabilityFloor = 1e-12;

struct ConvShape {
  int in_channels = 1;
  int out_channels = 1;
  int kernel_width = 1;
  int stride = 1;

  std::size_t weight_count() const {
    return static_cast<std::size_t>(out_channels) * static_cast<std::size_t>(in_channels) *
           static_cast<std::size_t>(kernel_width);
  }
  std::size_t bias_count() const { return static_cast<std::size_t>(out_channels); }
  std::size_t parameter_count() const { return weight_count() + bias_count(); }

  // Valid (unpadded) output length, or 0 when the input is shorter than the kernel.
  int output_length(int input_length) const;
};

struct PoolShape {
  int width = 2;
  int stride = 2;

  int output_length(int input_length) const;
};

struct DenseShape {
  int in_dim = 1;
  int out_dim = 1;

  std::size_t weight_count() const {
    return static_cast<std::size_t>(out_dim) * static_cast<std::size_t>(in_dim);
  }
  std::size_t bias_count() const { return static_cast<std::size_t>(out_dim); }
  std::size_t parameter_count() const { return weight_count() + bias_count(); }
};

// Owning parameter bundles. Weights are [out][in][width] and [out][in].
struct ConvLayerParams {
  ConvShape shape;
  std::vector<double> weights;
  std::vector<double> bias;
};

struct DenseLayerParams {
  DenseShape shape;
  std::vector<double> weights;
  std::vector<double> bias;
};

// ---- convolution -----------------------------------------------------------

Tensor2 conv1d_forward(const Tensor2& input, const ConvShape& shape,
                       std::span<const double> weights, std::span<const double> bias);
Tensor2 conv1d_forward(const Tensor2& input, const ConvLayerParams& params);

// Returns dL/dinput and accumulates dL/dweights, dL/dbias.
Tensor2 conv1d_backward(const Tensor2& input, const ConvShape& shape,
                        std::span<const double> weights, const Tensor2& grad_output,
                        std::span<double> grad_weights, std::span<double> grad_bias);

// ---- max pooling -----------------------------------------------------------

struct PoolResult {
  Tensor2 output;
  // Flat index into the input values of the max for each output element.
  std::vector<std::uint32_t> argmax;
};

PoolResult maxpool1d_forward(const Tensor2& input, int width = 2, int stride = 2);
Tensor2 maxpool1d_backward(const Tensor2& grad_output, std::span<const std::uint32_t> argmax,
                           int input_channels, int input_length);

// ---- activations -----------------------------------------------------------

Tensor2 relu_forward(const Tensor2& input);
// Gradient passes only where the forward input was strictly positive.
Tensor2 relu_backward(const Tensor2& forward_input, const Tensor2& grad_output);

void relu_inplace(std::span<double> values);
void relu_backward_inplace(std::span<const double> forward_input, std::span<double> grad);

// ---- fully connected -------------------------------------------------------

std::vector<double> dense_forward(std::span<const double> input, const DenseShape& shape,
                                  std::span<const double> weights, std::span<const double> bias);
std::vector<double> dense_forward(std::span<const double> input, const DenseLayerParams& params);

std::vector<double> dense_backward(std::span<const double> input, const DenseShape& shape,
                                   std::span<const double> weights,
                                   std::span<const double> grad_output,
                                   std::span<double> grad_weights, std::span<double> grad_bias);

// ---- classification --------------------------------------------------------

// Max-subtracted softmax.
std::vector<double> softmax(std::span<const double> logits);

// -(1/K) * sum_i y_i * ln(max(p_i, 1e-12)) with K = number of classes. The 1/K
// factor is kept on purpose; it rescales the usual one-hot cross-entropy.
double cross_entropy_loss(std::span<const double> one_hot, std::span<const double> probs);
double cross_entropy_loss(int label, std::span<const double> probs);

// d(cross_entropy_loss(label, softmax(z)))/dz = (softmax(z) - y) / K.
std::vector<double> softmax_cross_entropy_grad(int label, std::span<const double> probs);

std::size_t argmax(std::span<const double> values);

// ---- optimizer -------------------------------------------------------------

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  explicit AdamState(std::size_t parameter_count, AdamConfig config = {});

  AdamConfig config;
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  std::uint64_t step_count = 0;
};

// Names a contiguous range of a flat parameter vector, used in diagnostics.
struct ParameterBlock {
  std::string name;
  std::size_t offset = 0;
  std::size_t size = 0;
};

// Bias-corrected Adam update in place. A non-finite gradient throws
// TrainingError naming the block (from `blocks`, when given) that holds it;
// nothing is modified in that case.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               std::span<const ParameterBlock> blocks = {});

// Uniform(-sqrt(1/fan_in), +sqrt(1/fan_in)) fill, the usual default for
// conv and dense layers.
void init_uniform_fan_in(std::span<double> values, int fan_in, std::mt19937_64& rng);

}  // namespace see::nn
