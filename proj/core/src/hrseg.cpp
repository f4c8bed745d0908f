#include "rhrseg/hrseg.hpp"

#include <numeric>
#include <string>

namespace rhrseg {

void SegConfig::validate() const {
  if (stem_channels < 1) throw InvalidConfig("seg stem_channels must be >= 1");
  for (int i = 0; i < kNumStages; ++i) {
    if (branch_channels[i] < 1) throw InvalidConfig("seg branch_channels must be >= 1");
    if (i > 0 && branch_channels[i] <= branch_channels[i - 1]) {
      throw InvalidConfig("seg branch_channels must be strictly increasing");
    }
    if (modules_per_stage[i] < 1) throw InvalidConfig("seg modules_per_stage must be >= 1");
  }
  if (blocks_per_branch < 0) throw InvalidConfig("seg blocks_per_branch must be >= 0");
  if (head_mid_channels < 1) throw InvalidConfig("seg head_mid_channels must be >= 1");
  if (num_classes < 2) throw InvalidConfig("seg num_classes must be >= 2");
}

int SegConfig::concat_channels() const {
  return std::accumulate(branch_channels.begin(), branch_channels.end(), 0);
}

template <typename T>
ExchangeModule<T>::ExchangeModule(const SegConfig& config, int num_branches,
                                  InitRng& rng) {
  const auto& ch = config.branch_channels;
  blocks_.resize(num_branches);
  for (int j = 0; j < num_branches; ++j) {
    for (int b = 0; b < config.blocks_per_branch; ++b) blocks_[j].emplace_back(ch[j], rng);
  }
  fuse_.resize(num_branches);
  for (int to = 0; to < num_branches; ++to) {
    fuse_[to].resize(num_branches);
    for (int from = 0; from < num_branches; ++from) {
      auto& conn = fuse_[to][from];
      if (from > to) {
        conn.upsample = true;
        conn.chain.emplace_back(ConvSpec{ch[from], ch[to], 1, 1, 0}, true, false, rng);
      } else if (from < to) {
        for (int link = from; link < to; ++link) {
          const bool last = (link + 1 == to);
          conn.chain.emplace_back(
              ConvSpec{ch[from], last ? ch[to] : ch[from], 3, 2, 1}, true, !last, rng);
        }
      }
    }
  }
}

template <typename T>
std::vector<Var<T>> ExchangeModule<T>::forward(std::vector<Var<T>> branches,
                                               Mode mode) {
  if (static_cast<int>(branches.size()) != num_branches()) {
    throw ShapeError("exchange module expects " + std::to_string(num_branches()) +
                     " branches, got " + std::to_string(branches.size()));
  }
  for (int j = 0; j < num_branches(); ++j) {
    for (auto& block : blocks_[j]) branches[j] = block.forward(branches[j], mode);
  }
  return fuse(branches, mode);
}

template <typename T>
std::vector<Var<T>> ExchangeModule<T>::fuse(const std::vector<Var<T>>& branches,
                                            Mode mode) {
  const int n = num_branches();
  if (static_cast<int>(branches.size()) != n) {
    throw ShapeError("fuse expects " + std::to_string(n) + " branches, got " +
                     std::to_string(branches.size()));
  }
  std::vector<Var<T>> out(n);
  for (int to = 0; to < n; ++to) {
    const TensorShape target = branches[to]->value.shape();
    Var<T> sum;
    for (int from = 0; from < n; ++from) {
      auto& conn = fuse_[to][from];
      Var<T> term = branches[from];
      for (auto& link : conn.chain) term = link.forward(term, mode);
      if (conn.upsample) term = ops::bilinear_resize(term, target.height, target.width);
      if (!(term->value.shape() == target)) {
        throw ShapeError("fuse " + std::to_string(from) + "->" + std::to_string(to) +
                         " produced " + term->value.shape().str() + ", expected " +
                         target.str());
      }
      sum = sum ? ops::add(sum, term) : term;
    }
    out[to] = ops::relu(sum);
  }
  return out;
}

template <typename T>
void ExchangeModule<T>::collect(const std::string& prefix, ParamSet<T>& out) {
  for (std::size_t j = 0; j < blocks_.size(); ++j) {
    for (std::size_t b = 0; b < blocks_[j].size(); ++b) {
      blocks_[j][b].collect(prefix + ".b" + std::to_string(j) + ".blk" + std::to_string(b),
                            out);
    }
  }
  for (std::size_t to = 0; to < fuse_.size(); ++to) {
    for (std::size_t from = 0; from < fuse_[to].size(); ++from) {
      auto& chain = fuse_[to][from].chain;
      for (std::size_t l = 0; l < chain.size(); ++l) {
        chain[l].collect(prefix + ".fuse" + std::to_string(from) + "to" +
                             std::to_string(to) + ".l" + std::to_string(l),
                         out);
      }
    }
  }
}

template <typename T>
SegNet<T> SegNet<T>::build(const SegConfig& config, std::uint64_t seed) {
  config.validate();
  SegNet net;
  net.config_ = config;
  InitRng rng(seed);
  const auto& ch = config.branch_channels;
  net.stem_.emplace_back(ConvSpec{3, config.stem_channels, 3, 2, 1}, true, true, rng);
  net.stem_.emplace_back(ConvSpec{config.stem_channels, config.stem_channels, 3, 2, 1},
                         true, true, rng);
  net.stage1_adapter_ =
      ConvBnAct<T>(ConvSpec{config.stem_channels, ch[0], 1, 1, 0}, true, true, rng);
  net.stages_.resize(kNumStages);
  for (int m = 0; m < config.modules_per_stage[0]; ++m) {
    net.stages_[0].emplace_back(config, 1, rng);
  }
  for (int s = 1; s < kNumStages; ++s) {
    std::vector<std::optional<ConvBnAct<T>>> trans;
    // Existing branches already carry branch_channels[j], so their bridge
    // is the identity; only the spawned branch gets a conv.
    for (int j = 0; j < s; ++j) trans.emplace_back(std::nullopt);
    trans.emplace_back(ConvBnAct<T>(ConvSpec{ch[s - 1], ch[s], 3, 2, 1}, true, true, rng));
    net.transitions_.push_back(std::move(trans));
    for (int m = 0; m < config.modules_per_stage[s]; ++m) {
      net.stages_[s].emplace_back(config, s + 1, rng);
    }
  }
  net.head_mid_ = ConvBnAct<T>(
      ConvSpec{config.concat_channels(), config.head_mid_channels, 1, 1, 0}, true, true, rng);
  net.head_out_ = ConvLayer<T>(
      ConvSpec{config.head_mid_channels, config.num_classes, 1, 1, 0, false, true}, rng);
  return net;
}

template <typename T>
void SegNet<T>::check_branches(const std::vector<Var<T>>& branches, int count,
                               const char* what) const {
  if (static_cast<int>(branches.size()) != count) {
    throw ShapeError(std::string(what) + ": expected " + std::to_string(count) +
                     " branches, got " + std::to_string(branches.size()));
  }
  const TensorShape top = branches[0]->value.shape();
  for (int j = 0; j < count; ++j) {
    const TensorShape s = branches[j]->value.shape();
    if (s.channels != config_.branch_channels[j]) {
      throw ShapeError(std::string(what) + ": branch " + std::to_string(j) + " has " +
                       s.str() + ", expected " +
                       std::to_string(config_.branch_channels[j]) + " channels");
    }
    if (s.batch != top.batch || (j > 0 && (s.height * (1 << j) != top.height ||
                                           s.width * (1 << j) != top.width))) {
      throw ShapeError(std::string(what) + ": branch " + std::to_string(j) + " shape " +
                       s.str() + " is off the resolution ladder of " + top.str());
    }
  }
}

template <typename T>
std::vector<Var<T>> SegNet<T>::transition_forward(const std::vector<Var<T>>& prev,
                                                  int stage_index) {
  if (stage_index < 2 || stage_index > kNumStages) {
    throw ShapeError("transition stage index must be in 2..4");
  }
  check_branches(prev, stage_index - 1, "transition");
  auto& trans = transitions_[stage_index - 2];
  std::vector<Var<T>> out;
  for (int j = 0; j < stage_index - 1; ++j) {
    out.push_back(trans[j] ? trans[j]->forward(prev[j], mode_) : prev[j]);
  }
  out.push_back(trans.back()->forward(prev.back(), mode_));
  return out;
}

template <typename T>
std::vector<Var<T>> SegNet<T>::fuse_branches(const std::vector<Var<T>>& branches,
                                             int stage_index, int module_index) {
  if (stage_index < 1 || stage_index > kNumStages) {
    throw ShapeError("fuse stage index must be in 1..4");
  }
  check_branches(branches, stage_index, "fuse");
  return stages_[stage_index - 1].at(module_index).fuse(branches, mode_);
}

template <typename T>
std::vector<Var<T>> SegNet<T>::backbone(const Var<T>& images,
                                        std::vector<std::vector<Var<T>>>* per_stage) {
  const TensorShape s = images->value.shape();
  if (s.channels != 3) throw ShapeError("segmenter expects 3 channels, got " + s.str());
  if (s.height % 32 != 0 || s.width % 32 != 0) {
    throw ShapeError("segmenter input " + s.str() + " must have H and W divisible by 32");
  }
  Var<T> x = images;
  for (auto& stage : stem_) x = stage.forward(x, mode_);
  std::vector<Var<T>> branches{stage1_adapter_.forward(x, mode_)};
  for (int stage = 1; stage <= kNumStages; ++stage) {
    if (stage > 1) branches = transition_forward(branches, stage);
    for (auto& module : stages_[stage - 1]) branches = module.forward(branches, mode_);
    if (per_stage) per_stage->push_back(branches);
  }
  return branches;
}

template <typename T>
Var<T> SegNet<T>::head_forward(const std::vector<Var<T>>& branches, int out_height,
                               int out_width) {
  check_branches(branches, kNumStages, "head");
  const TensorShape top = branches[0]->value.shape();
  std::vector<Var<T>> parts{branches[0]};
  for (int j = 1; j < kNumStages; ++j) {
    parts.push_back(ops::bilinear_resize(branches[j], top.height, top.width));
  }
  Var<T> y = ops::concat_channels<T>(parts);
  y = head_mid_.forward(y, mode_);
  y = head_out_.forward(y);
  return ops::bilinear_resize(y, out_height, out_width);
}

template <typename T>
Var<T> SegNet<T>::forward(const Var<T>& images) {
  auto branches = backbone(images);
  const TensorShape s = images->value.shape();
  return head_forward(branches, s.height, s.width);
}

template <typename T>
Tensor<T> SegNet<T>::seg_forward(const Tensor<T>& images) {
  NoGradGuard guard;
  return forward(make_leaf(images))->value;
}

template <typename T>
ParamSet<T> SegNet<T>::parameters() {
  ParamSet<T> set;
  for (std::size_t i = 0; i < stem_.size(); ++i) {
    stem_[i].collect("seg.stem" + std::to_string(i), set);
  }
  stage1_adapter_.collect("seg.stage1.adapter", set);
  for (int s = 0; s < kNumStages; ++s) {
    if (s > 0) {
      auto& trans = transitions_[s - 1];
      for (std::size_t j = 0; j < trans.size(); ++j) {
        if (trans[j]) {
          trans[j]->collect("seg.trans" + std::to_string(s + 1) + ".b" + std::to_string(j),
                            set);
        }
      }
    }
    for (std::size_t m = 0; m < stages_[s].size(); ++m) {
      stages_[s][m].collect("seg.stage" + std::to_string(s + 1) + ".m" + std::to_string(m),
                            set);
    }
  }
  head_mid_.collect("seg.head.mid", set);
  head_out_.collect("seg.head.out", set);
  return set;
}

template class ExchangeModule<float>;
template class ExchangeModule<double>;
template class SegNet<float>;
template class SegNet<double>;

}  // namespace rhrseg
