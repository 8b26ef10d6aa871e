#include "see/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "see/errors.hpp"

namespace see::nn {

namespace {

std::string conv_shape_string(const ConvShape& s) {
  std::ostringstream os;
  os << "conv(in=" << s.in_channels << ", out=" << s.out_channels << ", width=" << s.kernel_width
     << ", stride=" << s.stride << ")";
  return os.str();
}

void check_conv(const Tensor2& input, const ConvShape& shape, std::size_t weights,
                std::size_t bias) {
  if (shape.stride < 1 || shape.kernel_width < 1) {
    throw ConfigError("invalid " + conv_shape_string(shape));
  }
  if (input.channels() != shape.in_channels || input.length() < shape.kernel_width) {
    throw ShapeError("input " + input.shape_string() + " does not fit " +
                     conv_shape_string(shape));
  }
  if (weights != shape.weight_count() || bias != shape.bias_count()) {
    throw ShapeError("parameter buffers do not match " + conv_shape_string(shape));
  }
}

}  // namespace

int ConvShape::output_length(int input_length) const {
  if (input_length < kernel_width || stride < 1) return 0;
  return (input_length - kernel_width) / stride + 1;
}

int PoolShape::output_length(int input_length) const {
  if (input_length < width || stride < 1) return 0;
  return (input_length - width) / stride + 1;
}

Tensor2 conv1d_forward(const Tensor2& input, const ConvShape& shape,
                       std::span<const double> weights, std::span<const double> bias) {
  check_conv(input, shape, weights.size(), bias.size());
  const int out_len = shape.output_length(input.length());
  const int in_len = input.length();
  const int width = shape.kernel_width;
  const int stride = shape.stride;
  Tensor2 out(shape.out_channels, out_len);
  auto in = input.values();
  auto dst = out.values();
  for (int o = 0; o < shape.out_channels; ++o) {
    double* y = dst.data() + static_cast<std::size_t>(o) * out_len;
    std::fill(y, y + out_len, bias[o]);
    for (int i = 0; i < shape.in_channels; ++i) {
      const double* x = in.data() + static_cast<std::size_t>(i) * in_len;
      const double* w = weights.data() + (static_cast<std::size_t>(o) * shape.in_channels + i) * width;
      for (int k = 0; k < width; ++k) {
        const double wk = w[k];
        for (int t = 0; t < out_len; ++t) y[t] += wk * x[t * stride + k];
      }
    }
  }
  return out;
}

Tensor2 conv1d_forward(const Tensor2& input, const ConvLayerParams& params) {
  return conv1d_forward(input, params.shape, params.weights, params.bias);
}

Tensor2 conv1d_backward(const Tensor2& input, const ConvShape& shape,
                        std::span<const double> weights, const Tensor2& grad_output,
                        std::span<double> grad_weights, std::span<double> grad_bias) {
  check_conv(input, shape, weights.size(), shape.bias_count());
  const int out_len = shape.output_length(input.length());
  if (grad_output.channels() != shape.out_channels || grad_output.length() != out_len) {
    throw ShapeError("conv1d_backward: upstream gradient " + grad_output.shape_string() +
                     " does not match output of " + conv_shape_string(shape));
  }
  if (grad_weights.size() != shape.weight_count() || grad_bias.size() != shape.bias_count()) {
    throw ShapeError("conv1d_backward: gradient buffers do not match " + conv_shape_string(shape));
  }
  const int in_len = input.length();
  const int width = shape.kernel_width;
  const int stride = shape.stride;
  Tensor2 grad_in(shape.in_channels, in_len);
  auto x_all = input.values();
  auto g_all = grad_output.values();
  auto gi_all = grad_in.values();
  for (int o = 0; o < shape.out_channels; ++o) {
    const double* g = g_all.data() + static_cast<std::size_t>(o) * out_len;
    double bsum = 0.0;
    for (int t = 0; t < out_len; ++t) bsum += g[t];
    grad_bias[o] += bsum;
    for (int i = 0; i < shape.in_channels; ++i) {
      const double* x = x_all.data() + static_cast<std::size_t>(i) * in_len;
      double* gx = gi_all.data() + static_cast<std::size_t>(i) * in_len;
      const std::size_t wbase = (static_cast<std::size_t>(o) * shape.in_channels + i) * width;
      for (int k = 0; k < width; ++k) {
        const double wk = weights[wbase + k];
        double acc = 0.0;
        for (int t = 0; t < out_len; ++t) {
          acc += g[t] * x[t * stride + k];
          gx[t * stride + k] += wk * g[t];
        }
        grad_weights[wbase + k] += acc;
      }
    }
  }
  return grad_in;
}

PoolResult maxpool1d_forward(const Tensor2& input, int width, int stride) {
  if (width < 1 || stride < 1) {
    throw ConfigError("maxpool width and stride must be >= 1, got " + std::to_string(width) +
                      "/" + std::to_string(stride));
  }
  if (input.length() < width) {
    throw ShapeError("maxpool width " + std::to_string(width) + " exceeds input " +
                     input.shape_string());
  }
  const int out_len = PoolShape{width, stride}.output_length(input.length());
  PoolResult result{Tensor2(input.channels(), out_len), {}};
  result.argmax.resize(result.output.size());
  auto x = input.values();
  auto y = result.output.values();
  for (int c = 0; c < input.channels(); ++c) {
    const std::size_t base = static_cast<std::size_t>(c) * input.length();
    for (int t = 0; t < out_len; ++t) {
      std::size_t best = base + static_cast<std::size_t>(t) * stride;
      for (int k = 1; k < width; ++k) {
        const std::size_t idx = base + static_cast<std::size_t>(t) * stride + k;
        if (x[idx] > x[best]) best = idx;
      }
      const std::size_t o = static_cast<std::size_t>(c) * out_len + t;
      y[o] = x[best];
      result.argmax[o] = static_cast<std::uint32_t>(best);
    }
  }
  return result;
}

Tensor2 maxpool1d_backward(const Tensor2& grad_output, std::span<const std::uint32_t> argmax,
                           int input_channels, int input_length) {
  if (argmax.size() != grad_output.size()) {
    throw UsageError("maxpool1d_backward: argmax cache does not match upstream gradient");
  }
  Tensor2 grad_in(input_channels, input_length);
  auto g = grad_output.values();
  auto gi = grad_in.values();
  for (std::size_t o = 0; o < g.size(); ++o) {
    if (argmax[o] >= gi.size()) throw UsageError("maxpool1d_backward: argmax out of range");
    gi[argmax[o]] += g[o];
  }
  return grad_in;
}

Tensor2 relu_forward(const Tensor2& input) {
  Tensor2 out = input;
  relu_inplace(out.values());
  return out;
}

Tensor2 relu_backward(const Tensor2& forward_input, const Tensor2& grad_output) {
  if (forward_input.channels() != grad_output.channels() ||
      forward_input.length() != grad_output.length()) {
    throw ShapeError("relu_backward: " + forward_input.shape_string() + " vs " +
                     grad_output.shape_string());
  }
  Tensor2 grad = grad_output;
  relu_backward_inplace(forward_input.values(), grad.values());
  return grad;
}

void relu_inplace(std::span<double> values) {
  for (double& v : values) v = v > 0.0 ? v : 0.0;
}

void relu_backward_inplace(std::span<const double> forward_input, std::span<double> grad) {
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!(forward_input[i] > 0.0)) grad[i] = 0.0;
  }
}

std::vector<double> dense_forward(std::span<const double> input, const DenseShape& shape,
                                  std::span<const double> weights,
                                  std::span<const double> bias) {
  if (static_cast<int>(input.size()) != shape.in_dim) {
    throw ShapeError("dense layer expects " + std::to_string(shape.in_dim) + " inputs, got " +
                     std::to_string(input.size()));
  }
  if (weights.size() != shape.weight_count() || bias.size() != shape.bias_count()) {
    throw ShapeError("dense parameter buffers do not match " + std::to_string(shape.in_dim) +
                     "->" + std::to_string(shape.out_dim));
  }
  std::vector<double> out(bias.begin(), bias.end());
  for (int o = 0; o < shape.out_dim; ++o) {
    const double* w = weights.data() + static_cast<std::size_t>(o) * shape.in_dim;
    double acc = 0.0;
    for (int i = 0; i < shape.in_dim; ++i) acc += w[i] * input[i];
    out[o] += acc;
  }
  return out;
}

std::vector<double> dense_forward(std::span<const double> input, const DenseLayerParams& params) {
  return dense_forward(input, params.shape, params.weights, params.bias);
}

std::vector<double> dense_backward(std::span<const double> input, const DenseShape& shape,
                                   std::span<const double> weights,
                                   std::span<const double> grad_output,
                                   std::span<double> grad_weights, std::span<double> grad_bias) {
  if (static_cast<int>(input.size()) != shape.in_dim ||
      static_cast<int>(grad_output.size()) != shape.out_dim) {
    throw ShapeError("dense_backward: dimension mismatch");
  }
  if (grad_weights.size() != shape.weight_count() || grad_bias.size() != shape.bias_count()) {
    throw ShapeError("dense_backward: gradient buffers do not match layer");
  }
  std::vector<double> grad_in(static_cast<std::size_t>(shape.in_dim), 0.0);
  for (int o = 0; o < shape.out_dim; ++o) {
    const double g = grad_output[o];
    grad_bias[o] += g;
    const std::size_t base = static_cast<std::size_t>(o) * shape.in_dim;
    for (int i = 0; i < shape.in_dim; ++i) {
      grad_weights[base + i] += g * input[i];
      grad_in[i] += weights[base + i] * g;
    }
  }
  return grad_in;
}

std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) throw UsageError("softmax of an empty vector");
  const double peak = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - peak);
    total += out[i];
  }
  for (double& v : out) v /= total;
  return out;
}

double cross_entropy_loss(std::span<const double> one_hot, std::span<const double> probs) {
  if (one_hot.size() != probs.size() || probs.empty()) {
    throw ShapeError("cross_entropy_loss: label vector has " + std::to_string(one_hot.size()) +
                     " entries, prediction has " + std::to_string(probs.size()));
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (one_hot[i] != 0.0) sum += one_hot[i] * std::log(std::max(probs[i], kProbabilityFloor));
  }
  return -sum / static_cast<double>(probs.size());
}

double cross_entropy_loss(int label, std::span<const double> probs) {
  if (label < 0 || static_cast<std::size_t>(label) >= probs.size()) {
    throw UsageError("cross_entropy_loss: label " + std::to_string(label) + " outside " +
                     std::to_string(probs.size()) + " classes");
  }
  return -std::log(std::max(probs[static_cast<std::size_t>(label)], kProbabilityFloor)) /
         static_cast<double>(probs.size());
}

std::vector<double> softmax_cross_entropy_grad(int label, std::span<const double> probs) {
  if (label < 0 || static_cast<std::size_t>(label) >= probs.size()) {
    throw UsageError("softmax_cross_entropy_grad: label out of range");
  }
  const double scale = 1.0 / static_cast<double>(probs.size());
  std::vector<double> grad(probs.begin(), probs.end());
  grad[static_cast<std::size_t>(label)] -= 1.0;
  for (double& g : grad) g *= scale;
  return grad;
}

std::size_t argmax(std::span<const double> values) {
  if (values.empty()) throw UsageError("argmax of an empty vector");
  return static_cast<std::size_t>(std::max_element(values.begin(), values.end()) -
                                  values.begin());
}

AdamState::AdamState(std::size_t parameter_count, AdamConfig cfg)
    : config(cfg), first_moment(parameter_count, 0.0), second_moment(parameter_count, 0.0) {
  if (!(cfg.learning_rate > 0) || !(cfg.beta1 > 0 && cfg.beta1 < 1) ||
      !(cfg.beta2 > 0 && cfg.beta2 < 1) || !(cfg.epsilon > 0)) {
    throw ConfigError("Adam hyperparameters out of range");
  }
}

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               std::span<const ParameterBlock> blocks) {
  if (grads.size() != params.size() || state.first_moment.size() != params.size()) {
    throw ShapeError("adam_step: gradient/state size does not match parameters");
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (std::isfinite(grads[i])) continue;
    std::string where = "index " + std::to_string(i);
    for (const auto& b : blocks) {
      if (i >= b.offset && i < b.offset + b.size) {
        where = "block '" + b.name + "' (index " + std::to_string(i - b.offset) + ")";
        break;
      }
    }
    throw TrainingError("non-finite gradient in parameter " + where);
  }
  const auto& cfg = state.config;
  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  const double correction1 = 1.0 - std::pow(cfg.beta1, t);
  const double correction2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    double& m = state.first_moment[i];
    double& v = state.second_moment[i];
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
    const double m_hat = m / correction1;
    const double v_hat = v / correction2;
    params[i] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
  }
}

void init_uniform_fan_in(std::span<double> values, int fan_in, std::mt19937_64& rng) {
  if (fan_in < 1) throw ConfigError("fan_in must be positive");
  const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& v : values) v = dist(rng);
}

}  // namespace see::nn
