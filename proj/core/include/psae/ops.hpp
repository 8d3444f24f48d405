#pragma once

#include <array>
#include <cstddef>

#include "psae/tape.hpp"
#include "psae/tensor.hpp"

namespace psae {

/// Geometry of one transposed-convolution layer. Weights are (in, out, kh, kw).
struct ConvTransposeSpec {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::array<std::size_t, 2> kernel{1, 1};
  std::array<std::size_t, 2> stride{1, 1};
  std::array<std::size_t, 2> padding{0, 0};
  std::array<std::size_t, 2> output_padding{0, 0};

  /// Throws ConfigError when output_padding >= stride or a kernel/stride is zero.
  void validate() const;
  /// (H_in - 1) * s - 2 p + k + op per axis; throws ConfigError when not positive.
  std::array<std::size_t, 2> output_size(std::size_t h_in, std::size_t w_in) const;
  Shape weight_shape() const { return {in_channels, out_channels, kernel[0], kernel[1]}; }
  std::size_t parameter_count() const {
    return in_channels * out_channels * kernel[0] * kernel[1] + out_channels;
  }

  bool operator==(const ConvTransposeSpec&) const = default;
};

enum class BatchNormMode { train, infer };

struct BatchNormOptions {
  double epsilon = 1e-5;
  /// running = momentum * running + (1 - momentum) * batch
  double momentum = 0.99;
};

template <typename T>
struct BatchNormState {
  Tensor<T> running_mean;
  Tensor<T> running_var;

  explicit BatchNormState(std::size_t channels = 0)
      : running_mean(Shape{channels}, T{0}), running_var(Shape{channels}, T{1}) {}
};

/// Which trailing row/column avg_pool2 had to replicate.
struct PoolPadding {
  bool row = false;
  bool col = false;
};

constexpr double kDefaultLeakySlope = 0.2;

// Plain-tensor kernels. The tape ops below wrap these.

template <typename T>
Tensor<T> avg_pool2(const Tensor<T>& input, PoolPadding* padding = nullptr);

/// Adjoint of avg_pool2: spreads each pooled gradient over its source block.
template <typename T>
Tensor<T> avg_pool2_backward(const Tensor<T>& grad_out, const Shape& input_shape);

// Tape ops. Shapes: dense (B,m)x(m,n)+(n); images are (B,C,H,W).

template <typename T>
Var dense(Tape<T>& tape, Var input, Var weights, Var bias);

template <typename T>
Var conv_transpose2d(Tape<T>& tape, Var input, Var weights, Var bias, const ConvTransposeSpec& spec);

/// Per-channel normalization over (B,H,W). Train mode needs B >= 2 and updates `state`.
template <typename T>
Var batch_norm(Tape<T>& tape, Var input, Var gamma, Var beta, BatchNormState<T>& state,
               BatchNormMode mode, const BatchNormOptions& options = {});

template <typename T>
Var leaky_relu(Tape<T>& tape, Var input, T slope = T(kDefaultLeakySlope));

template <typename T>
Var sigmoid(Tape<T>& tape, Var input);

template <typename T>
Var avg_pool2(Tape<T>& tape, Var input, PoolPadding* padding = nullptr);

template <typename T>
Var reshape(Tape<T>& tape, Var input, Shape shape);

/// Scalar sum(input * weights); handy for probing gradients with a random cotangent.
template <typename T>
Var weighted_sum(Tape<T>& tape, Var input, const Tensor<T>& weights);

}  // namespace psae
