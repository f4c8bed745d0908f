#pragma once

#include <cstdint>
#include <vector>

#include "rhrseg/layers.hpp"

namespace rhrseg {

struct RelightConfig {
  int base_channels = 32;
  int num_res_blocks = 3;
  bool zero_init_last = true;

  void validate() const;
};

// Residual encoder-decoder. forward(I) = I + residual(I): the skip sits
// outside every normalization so a zeroed final stage is the identity.
//
//   conv(3->C, k3 s1) conv(C->2C, k3 s2) conv(2C->4C, k3 s2) conv(4C->4C, k3 s1)
//   num_res_blocks x BasicBlock(4C)
//   transconv(4C->2C, k4 s2 p1)+BN+ReLU  transconv(2C->3, k4 s2 p1)+BN
template <typename T>
class RelightNet {
 public:
  // Deterministic in (config, seed). Throws InvalidConfig.
  static RelightNet build(const RelightConfig& config, std::uint64_t seed);

  RelightNet(RelightNet&&) noexcept = default;
  RelightNet& operator=(RelightNet&&) noexcept = default;
  RelightNet(const RelightNet&) = delete;
  RelightNet& operator=(const RelightNet&) = delete;

  // images: (B, 3, H, W) with H, W divisible by 4, else ShapeError.
  Var<T> residual(const Var<T>& images);
  Var<T> forward(const Var<T>& images);

  Tensor<T> relight_residual(const Tensor<T>& images);
  Tensor<T> relight_forward(const Tensor<T>& images);

  void set_mode(Mode mode) { mode_ = mode; }
  Mode mode() const { return mode_; }
  const RelightConfig& config() const { return config_; }

  // Encoder, block and decoder convolutions in execution order.
  std::vector<ConvSpec> layer_specs() const;
  // Weighted conv stages, two per residual block.
  int num_weighted_stages() const;

  std::vector<ConvBnAct<T>>& encoder() { return encoder_; }
  std::vector<BasicBlock<T>>& blocks() { return blocks_; }
  std::vector<ConvBnAct<T>>& decoder() { return decoder_; }

  ParamSet<T> parameters();

 private:
  RelightNet() = default;
  void check_input(const TensorShape& s) const;

  RelightConfig config_;
  Mode mode_ = Mode::kTrain;
  std::vector<ConvBnAct<T>> encoder_;
  std::vector<BasicBlock<T>> blocks_;
  std::vector<ConvBnAct<T>> decoder_;
};

extern template class RelightNet<float>;
extern template class RelightNet<double>;

}  // namespace rhrseg
