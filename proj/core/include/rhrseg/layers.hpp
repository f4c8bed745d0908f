#pragma once

#include <optional>
#include <random>
#include <string>
#include <vector>

#include "rhrseg/netcore.hpp"

namespace rhrseg {

// Named handle onto a trainable leaf. `decay` is false for BN scale/shift
// and biases, which the optimizer exempts from weight decay.
template <typename T>
struct ParamRef {
  std::string name;
  Var<T> var;
  bool decay = true;
};

// Named handle onto a non-trainable buffer (BN running statistics).
template <typename T>
struct BufferRef {
  std::string name;
  std::vector<T>* values = nullptr;
};

template <typename T>
struct ParamSet {
  std::vector<ParamRef<T>> params;
  std::vector<BufferRef<T>> buffers;

  std::size_t num_scalars() const;
  void zero_grad();
  void set_requires_grad(bool on);
};

using InitRng = std::mt19937_64;

// Plain or transposed convolution with optional bias.
template <typename T>
class ConvLayer {
 public:
  ConvLayer() = default;
  // Weights ~ N(0, 2 / fan_in) with fan_in = in_channels * k * k; biases 0.
  ConvLayer(const ConvSpec& spec, InitRng& rng);

  Var<T> forward(const Var<T>& x) const;
  TensorShape output_shape(const TensorShape& in) const;

  const ConvSpec& spec() const { return spec_; }
  Var<T>& weight() { return weight_; }
  const Var<T>& weight() const { return weight_; }
  Var<T>& bias() { return bias_; }
  const Var<T>& bias() const { return bias_; }

  void collect(const std::string& prefix, ParamSet<T>& out);

 private:
  ConvSpec spec_;
  Var<T> weight_;
  Var<T> bias_;
};

// conv -> optional BN -> optional ReLU; the conv carries no bias when BN follows.
template <typename T>
class ConvBnAct {
 public:
  ConvBnAct() = default;
  ConvBnAct(ConvSpec spec, bool batch_norm, bool relu, InitRng& rng);

  Var<T> forward(const Var<T>& x, Mode mode);

  const ConvSpec& spec() const { return conv_.spec(); }
  ConvLayer<T>& conv() { return conv_; }
  const ConvLayer<T>& conv() const { return conv_; }
  std::optional<NormState<T>>& norm() { return norm_; }
  const std::optional<NormState<T>>& norm() const { return norm_; }
  bool has_relu() const { return relu_; }

  void collect(const std::string& prefix, ParamSet<T>& out);

 private:
  ConvLayer<T> conv_;
  std::optional<NormState<T>> norm_;
  bool relu_ = false;
};

// Two 3x3 stride-1 conv+BN stages with an identity skip, then ReLU.
template <typename T>
class BasicBlock {
 public:
  BasicBlock() = default;
  BasicBlock(int channels, InitRng& rng);

  Var<T> forward(const Var<T>& x, Mode mode);
  int channels() const { return first_.spec().in_channels; }

  ConvBnAct<T>& first() { return first_; }
  ConvBnAct<T>& second() { return second_; }

  void collect(const std::string& prefix, ParamSet<T>& out);

 private:
  ConvBnAct<T> first_;
  ConvBnAct<T> second_;
};

extern template struct ParamSet<float>;
extern template struct ParamSet<double>;
extern template class ConvLayer<float>;
extern template class ConvLayer<double>;
extern template class ConvBnAct<float>;
extern template class ConvBnAct<double>;
extern template class BasicBlock<float>;
extern template class BasicBlock<double>;

}  // namespace rhrseg
