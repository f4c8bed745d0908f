#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "rhrseg/layers.hpp"

namespace rhrseg {

inline constexpr int kNumStages = 4;

struct SegConfig {
  int stem_channels = 64;
  std::array<int, kNumStages> branch_channels{32, 64, 128, 256};
  int blocks_per_branch = 2;
  std::array<int, kNumStages> modules_per_stage{1, 1, 2, 1};
  int head_mid_channels = 128;
  int num_classes = 19;

  void validate() const;
  int concat_channels() const;
};

// Connector from branch i to branch j. Empty chain = identity (i == j).
// i < j: (j - i) stride-2 3x3 conv+BN, ReLU between links.
// i > j: 1x1 conv+BN, then bilinear resize to branch j.
template <typename T>
struct FuseConnector {
  std::vector<ConvBnAct<T>> chain;
  bool upsample = false;
};

// One exchange unit: residual blocks per branch, then fusion.
template <typename T>
class ExchangeModule {
 public:
  ExchangeModule() = default;
  ExchangeModule(const SegConfig& config, int num_branches, InitRng& rng);

  std::vector<Var<T>> forward(std::vector<Var<T>> branches, Mode mode);
  std::vector<Var<T>> fuse(const std::vector<Var<T>>& branches, Mode mode);

  int num_branches() const { return static_cast<int>(blocks_.size()); }
  FuseConnector<T>& connector(int from, int to) { return fuse_[to][from]; }
  std::vector<BasicBlock<T>>& branch_blocks(int branch) { return blocks_[branch]; }

  void collect(const std::string& prefix, ParamSet<T>& out);

 private:
  std::vector<std::vector<BasicBlock<T>>> blocks_;
  std::vector<std::vector<FuseConnector<T>>> fuse_;  // [to][from]
};

// Four-stage multi-resolution segmenter with a concatenation head.
// Branch j runs at 1/(4 * 2^j) of the input with branch_channels[j] channels.
template <typename T>
class SegNet {
 public:
  static SegNet build(const SegConfig& config, std::uint64_t seed);

  SegNet(SegNet&&) noexcept = default;
  SegNet& operator=(SegNet&&) noexcept = default;
  SegNet(const SegNet&) = delete;
  SegNet& operator=(const SegNet&) = delete;

  // images: (B, 3, H, W) with H, W divisible by 32 -> (B, K, H, W) logits.
  Var<T> forward(const Var<T>& images);
  Tensor<T> seg_forward(const Tensor<T>& images);

  // Stem + stages; returns the stage-4 branches. When `per_stage` is set it
  // receives the branch list leaving every stage.
  std::vector<Var<T>> backbone(const Var<T>& images,
                               std::vector<std::vector<Var<T>>>* per_stage = nullptr);

  // prev: branches leaving stage `stage_index - 1` (1-based stage numbers,
  // stage_index in 2..4). Returns `stage_index` branches.
  std::vector<Var<T>> transition_forward(const std::vector<Var<T>>& prev,
                                         int stage_index);
  // Fusion of exchange module `module_index` (0-based) of a stage (1-based).
  std::vector<Var<T>> fuse_branches(const std::vector<Var<T>>& branches,
                                    int stage_index, int module_index = 0);
  Var<T> head_forward(const std::vector<Var<T>>& branches, int out_height,
                      int out_width);

  void set_mode(Mode mode) { mode_ = mode; }
  Mode mode() const { return mode_; }
  const SegConfig& config() const { return config_; }

  ExchangeModule<T>& exchange(int stage_index, int module_index) {
    return stages_[stage_index - 1][module_index];
  }
  ConvBnAct<T>& head_mid() { return head_mid_; }
  ConvLayer<T>& head_out() { return head_out_; }

  ParamSet<T> parameters();

 private:
  SegNet() = default;
  void check_branches(const std::vector<Var<T>>& branches, int count,
                      const char* what) const;

  SegConfig config_;
  Mode mode_ = Mode::kTrain;
  std::vector<ConvBnAct<T>> stem_;
  ConvBnAct<T> stage1_adapter_;
  std::vector<std::vector<ExchangeModule<T>>> stages_;
  // transitions_[s] feeds stage s + 2; [branch] is empty when the channel
  // count is unchanged, last entry spawns the new branch.
  std::vector<std::vector<std::optional<ConvBnAct<T>>>> transitions_;
  ConvBnAct<T> head_mid_;
  ConvLayer<T> head_out_;
};

extern template class ExchangeModule<float>;
extern template class ExchangeModule<double>;
extern template class SegNet<float>;
extern template class SegNet<double>;

}  // namespace rhrseg
