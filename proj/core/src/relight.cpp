#include "rhrseg/relight.hpp"

#include <string>

namespace rhrseg {

void RelightConfig::validate() const {
  if (base_channels < 1) throw InvalidConfig("relight base_channels must be >= 1");
  if (num_res_blocks < 0) throw InvalidConfig("relight num_res_blocks must be >= 0");
}

template <typename T>
RelightNet<T> RelightNet<T>::build(const RelightConfig& config, std::uint64_t seed) {
  config.validate();
  RelightNet net;
  net.config_ = config;
  InitRng rng(seed);
  const int c = config.base_channels;
  net.encoder_.emplace_back(ConvSpec{3, c, 3, 1, 1}, true, true, rng);
  net.encoder_.emplace_back(ConvSpec{c, 2 * c, 3, 2, 1}, true, true, rng);
  net.encoder_.emplace_back(ConvSpec{2 * c, 4 * c, 3, 2, 1}, true, true, rng);
  net.encoder_.emplace_back(ConvSpec{4 * c, 4 * c, 3, 1, 1}, true, true, rng);
  for (int i = 0; i < config.num_res_blocks; ++i) net.blocks_.emplace_back(4 * c, rng);
  net.decoder_.emplace_back(ConvSpec{4 * c, 2 * c, 4, 2, 1, true}, true, true, rng);
  net.decoder_.emplace_back(ConvSpec{2 * c, 3, 4, 2, 1, true}, true, false, rng);
  if (config.zero_init_last) net.decoder_.back().conv().weight()->value.fill(T(0));
  return net;
}

template <typename T>
void RelightNet<T>::check_input(const TensorShape& s) const {
  if (s.channels != 3) throw ShapeError("relight expects 3 channels, got " + s.str());
  if (s.height % 4 != 0 || s.width % 4 != 0) {
    throw ShapeError("relight input " + s.str() + " must have H and W divisible by 4");
  }
}

template <typename T>
Var<T> RelightNet<T>::residual(const Var<T>& images) {
  check_input(images->value.shape());
  Var<T> y = images;
  for (auto& stage : encoder_) y = stage.forward(y, mode_);
  for (auto& block : blocks_) y = block.forward(y, mode_);
  for (auto& stage : decoder_) y = stage.forward(y, mode_);
  return y;
}

template <typename T>
Var<T> RelightNet<T>::forward(const Var<T>& images) {
  return ops::add(images, residual(images));
}

template <typename T>
Tensor<T> RelightNet<T>::relight_residual(const Tensor<T>& images) {
  NoGradGuard guard;
  return residual(make_leaf(images))->value;
}

template <typename T>
Tensor<T> RelightNet<T>::relight_forward(const Tensor<T>& images) {
  NoGradGuard guard;
  return forward(make_leaf(images))->value;
}

template <typename T>
std::vector<ConvSpec> RelightNet<T>::layer_specs() const {
  std::vector<ConvSpec> specs;
  for (const auto& s : encoder_) specs.push_back(s.spec());
  for (const auto& b : blocks_) {
    const int ch = b.channels();
    specs.push_back(ConvSpec{ch, ch, 3, 1, 1});
    specs.push_back(ConvSpec{ch, ch, 3, 1, 1});
  }
  for (const auto& s : decoder_) specs.push_back(s.spec());
  return specs;
}

template <typename T>
int RelightNet<T>::num_weighted_stages() const {
  return static_cast<int>(encoder_.size() + decoder_.size() + 2 * blocks_.size());
}

template <typename T>
ParamSet<T> RelightNet<T>::parameters() {
  ParamSet<T> set;
  for (std::size_t i = 0; i < encoder_.size(); ++i) {
    encoder_[i].collect("relight.enc" + std::to_string(i), set);
  }
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    blocks_[i].collect("relight.res" + std::to_string(i), set);
  }
  for (std::size_t i = 0; i < decoder_.size(); ++i) {
    decoder_[i].collect("relight.dec" + std::to_string(i), set);
  }
  return set;
}

template class RelightNet<float>;
template class RelightNet<double>;

}  // namespace rhrseg
