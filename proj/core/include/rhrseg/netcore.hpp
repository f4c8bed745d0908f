#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "rhrseg/autograd.hpp"
#include "rhrseg/tensor.hpp"

namespace rhrseg {

enum class Mode { kTrain, kEval };

struct ConvSpec {
  int in_channels = 1;
  int out_channels = 1;
  int kernel = 3;
  int stride = 1;
  int padding = 0;
  bool transposed = false;
  bool has_bias = false;

  // Throws InvalidConfig unless kernel >= 1, stride >= 1, padding >= 0 and
  // both channel counts are >= 1.
  void validate() const;

  friend bool operator==(const ConvSpec&, const ConvSpec&) = default;
};

// floor((H + 2p - k) / s) + 1 on both spatial axes.
TensorShape conv_output_shape(const TensorShape& in, const ConvSpec& spec);
// (H - 1) * s - 2p + k on both spatial axes.
TensorShape transconv_output_shape(const TensorShape& in, const ConvSpec& spec);

inline constexpr double kBatchNormEpsilon = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

// Per-channel batch-normalization state. scale/shift are trainable leaves;
// the running statistics are buffers updated in train mode.
template <typename T>
struct NormState {
  std::vector<T> running_mean;
  std::vector<T> running_var;
  Var<T> scale;
  Var<T> shift;
  double momentum = kBatchNormMomentum;
  double epsilon = kBatchNormEpsilon;

  // mean 0, var 1, scale 1, shift 0.
  static NormState identity(int channels);
  int channels() const { return static_cast<int>(running_mean.size()); }
  // Throws ChannelMismatch / InvalidConfig on inconsistent vectors.
  void validate() const;
};

namespace ops {

// weight: (out, in, k, k); bias: (1, out, 1, 1) or null.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias,
              int stride, int padding);

// weight: (in, out, k, k); bias: (1, out, 1, 1) or null.
template <typename T>
Var<T> conv_transpose2d(const Var<T>& x, const Var<T>& weight,
                        const Var<T>& bias, int stride, int padding);

// Train mode normalizes with batch statistics (biased variance) and folds
// them into the running buffers; eval mode uses the running buffers.
template <typename T>
Var<T> batch_norm(const Var<T>& x, NormState<T>& state, Mode mode);

template <typename T>
Var<T> relu(const Var<T>& x);

template <typename T>
Var<T> leaky_relu(const Var<T>& x, double slope);

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> scale(const Var<T>& x, double factor);

// align_corners = false: source = (dst + 0.5) * in / out - 0.5, clamped at 0.
template <typename T>
Var<T> bilinear_resize(const Var<T>& x, int height, int width);

template <typename T>
Var<T> concat_channels(std::span<const Var<T>> parts);

template <typename T>
Var<T> softmax_channels(const Var<T>& x);

// Mean pixel cross-entropy over labels != ignore. labels are laid out
// (batch, height, width). Returns a zero scalar when no pixel is valid.
template <typename T>
Var<T> cross_entropy(const Var<T>& logits, std::span<const std::uint8_t> labels,
                     int ignore_index, std::int64_t* valid_pixels = nullptr);

// Mean binary cross-entropy of every element against a constant target.
template <typename T>
Var<T> bce_with_logits(const Var<T>& x, double target);

// sum_i x_i * w_i; scalar probe for gradient checks.
template <typename T>
Var<T> weighted_sum(const Var<T>& x, const Tensor<T>& weights);

}  // namespace ops

// Graph-free conveniences over plain tensors.
template <typename T>
Tensor<T> batchnorm_forward(const Tensor<T>& x, NormState<T>& state, Mode mode);

template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& x, int height, int width);

}  // namespace rhrseg
