#include "rhrseg/layers.hpp"

#include <cmath>

namespace rhrseg {

template <typename T>
std::size_t ParamSet<T>::num_scalars() const {
  std::size_t n = 0;
  for (const auto& p : params) n += p.var->value.size();
  return n;
}

template <typename T>
void ParamSet<T>::zero_grad() {
  for (auto& p : params) p.var->zero_grad();
}

template <typename T>
void ParamSet<T>::set_requires_grad(bool on) {
  for (auto& p : params) p.var->requires_grad = on;
}

template <typename T>
ConvLayer<T>::ConvLayer(const ConvSpec& spec, InitRng& rng) : spec_(spec) {
  spec_.validate();
  const int k = spec_.kernel;
  const TensorShape ws = spec_.transposed
                             ? TensorShape{spec_.in_channels, spec_.out_channels, k, k}
                             : TensorShape{spec_.out_channels, spec_.in_channels, k, k};
  Tensor<T> w(ws);
  const double fan_in = static_cast<double>(spec_.in_channels) * k * k;
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
  for (auto& v : w.data()) v = static_cast<T>(dist(rng));
  weight_ = make_leaf(std::move(w), true);
  if (spec_.has_bias) {
    bias_ = make_leaf(Tensor<T>(TensorShape{1, spec_.out_channels, 1, 1}), true);
  }
}

template <typename T>
Var<T> ConvLayer<T>::forward(const Var<T>& x) const {
  if (spec_.transposed) {
    return ops::conv_transpose2d(x, weight_, bias_, spec_.stride, spec_.padding);
  }
  return ops::conv2d(x, weight_, bias_, spec_.stride, spec_.padding);
}

template <typename T>
TensorShape ConvLayer<T>::output_shape(const TensorShape& in) const {
  return spec_.transposed ? transconv_output_shape(in, spec_)
                          : conv_output_shape(in, spec_);
}

template <typename T>
void ConvLayer<T>::collect(const std::string& prefix, ParamSet<T>& out) {
  out.params.push_back({prefix + ".weight", weight_, true});
  if (bias_) out.params.push_back({prefix + ".bias", bias_, false});
}

template <typename T>
ConvBnAct<T>::ConvBnAct(ConvSpec spec, bool batch_norm, bool relu, InitRng& rng)
    : relu_(relu) {
  if (batch_norm) spec.has_bias = false;
  conv_ = ConvLayer<T>(spec, rng);
  if (batch_norm) norm_ = NormState<T>::identity(spec.out_channels);
}

template <typename T>
Var<T> ConvBnAct<T>::forward(const Var<T>& x, Mode mode) {
  Var<T> y = conv_.forward(x);
  if (norm_) y = ops::batch_norm(y, *norm_, mode);
  if (relu_) y = ops::relu(y);
  return y;
}

template <typename T>
void ConvBnAct<T>::collect(const std::string& prefix, ParamSet<T>& out) {
  conv_.collect(prefix + ".conv", out);
  if (norm_) {
    out.params.push_back({prefix + ".bn.scale", norm_->scale, false});
    out.params.push_back({prefix + ".bn.shift", norm_->shift, false});
    out.buffers.push_back({prefix + ".bn.running_mean", &norm_->running_mean});
    out.buffers.push_back({prefix + ".bn.running_var", &norm_->running_var});
  }
}

template <typename T>
BasicBlock<T>::BasicBlock(int channels, InitRng& rng)
    : first_(ConvSpec{channels, channels, 3, 1, 1}, true, true, rng),
      second_(ConvSpec{channels, channels, 3, 1, 1}, true, false, rng) {}

template <typename T>
Var<T> BasicBlock<T>::forward(const Var<T>& x, Mode mode) {
  Var<T> y = second_.forward(first_.forward(x, mode), mode);
  return ops::relu(ops::add(y, x));
}

template <typename T>
void BasicBlock<T>::collect(const std::string& prefix, ParamSet<T>& out) {
  first_.collect(prefix + ".conv1", out);
  second_.collect(prefix + ".conv2", out);
}

template struct ParamSet<float>;
template struct ParamSet<double>;
template class ConvLayer<float>;
template class ConvLayer<double>;
template class ConvBnAct<float>;
template class ConvBnAct<double>;
template class BasicBlock<float>;
template class BasicBlock<double>;

}  // namespace rhrseg
