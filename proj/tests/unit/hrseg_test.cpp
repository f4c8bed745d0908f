#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "rhrseg/errors.hpp"
#include "rhrseg/hrseg.hpp"
#include "test_support.hpp"

namespace rhrseg {
namespace {

using testing::random_tensor;

SegConfig reduced_config() {
  SegConfig c;
  c.stem_channels = 8;
  c.branch_channels = {4, 8, 16, 32};
  c.blocks_per_branch = 1;
  c.modules_per_stage = {1, 1, 1, 1};
  c.head_mid_channels = 8;
  return c;
}

template <typename T>
bool same_parameters(SegNet<T>& a, SegNet<T>& b) {
  auto pa = a.parameters(), pb = b.parameters();
  if (pa.params.size() != pb.params.size()) return false;
  for (std::size_t i = 0; i < pa.params.size(); ++i) {
    if (pa.params[i].name != pb.params[i].name ||
        !bitwise_equal(pa.params[i].var->value, pb.params[i].var->value)) {
      return false;
    }
  }
  return true;
}

TEST(SegBuild, DeterministicInSeed) {
  auto a = SegNet<float>::build(SegConfig{}, 3);
  auto b = SegNet<float>::build(SegConfig{}, 3);
  auto c = SegNet<float>::build(SegConfig{}, 4);
  EXPECT_TRUE(same_parameters(a, b));
  EXPECT_FALSE(same_parameters(a, c));
}

TEST(SegBuild, InvalidConfigIsRejected) {
  SegConfig c = reduced_config();
  c.branch_channels = {4, 4, 16, 32};
  EXPECT_THROW(SegNet<float>::build(c, 1), InvalidConfig);
  c = reduced_config();
  c.num_classes = 1;
  EXPECT_THROW(SegNet<float>::build(c, 1), InvalidConfig);
  c = reduced_config();
  c.modules_per_stage = {1, 0, 1, 1};
  EXPECT_THROW(SegNet<float>::build(c, 1), InvalidConfig);
}

TEST(SegBuild, ConcatWidth) {
  EXPECT_EQ(reduced_config().concat_channels(), 60);
  SegConfig c;
  c.branch_channels = {8, 16, 32, 64};
  EXPECT_EQ(c.concat_channels(), 120);
  EXPECT_EQ(SegConfig{}.concat_channels(), 480);
  auto net = SegNet<float>::build(c, 1);
  EXPECT_EQ(net.head_mid().spec().in_channels, 120);
  EXPECT_EQ(net.head_out().spec().out_channels, 19);
  EXPECT_TRUE(net.head_out().spec().has_bias);
}

TEST(SegBuild, StageModuleCounts) {
  auto net = SegNet<float>::build(SegConfig{}, 1);
  for (int s = 1; s <= 4; ++s) EXPECT_EQ(net.exchange(s, 0).num_branches(), s);
  EXPECT_EQ(net.exchange(3, 1).num_branches(), 3);
}

TEST(SegBackbone, BranchCountsPerStage) {
  std::mt19937_64 rng(1);
  auto net = SegNet<float>::build(reduced_config(), 2);
  std::vector<std::vector<Var<float>>> stages;
  NoGradGuard guard;
  net.backbone(make_leaf(random_tensor<float>({1, 3, 64, 64}, rng)), &stages);
  ASSERT_EQ(stages.size(), 4u);
  for (std::size_t s = 0; s < 4; ++s) EXPECT_EQ(stages[s].size(), s + 1);
}

TEST(SegBackbone, ResolutionAndChannelLadder) {
  std::mt19937_64 rng(2);
  auto net = SegNet<float>::build(reduced_config(), 2);
  NoGradGuard guard;
  for (auto [h, w] : {std::pair{32, 32}, {64, 64}, {96, 96}, {64, 96}, {32, 128}}) {
    std::vector<std::vector<Var<float>>> stages;
    net.backbone(make_leaf(random_tensor<float>({2, 3, h, w}, rng)), &stages);
    for (const auto& branches : stages) {
      for (std::size_t j = 0; j < branches.size(); ++j) {
        const auto& s = branches[j]->value.shape();
        EXPECT_EQ(s.batch, 2);
        EXPECT_EQ(s.channels, reduced_config().branch_channels[j]);
        EXPECT_EQ(s.height, h / (4 << j)) << h << "x" << w << " branch " << j;
        EXPECT_EQ(s.width, w / (4 << j)) << h << "x" << w << " branch " << j;
      }
    }
  }
}

TEST(SegBackbone, DefaultStageFourShapesAtSixtyFour) {
  std::mt19937_64 rng(3);
  auto net = SegNet<float>::build(SegConfig{}, 2);
  NoGradGuard guard;
  const auto out = net.backbone(make_leaf(random_tensor<float>({1, 3, 64, 64}, rng)));
  const std::vector<TensorShape> expected{
      {1, 32, 16, 16}, {1, 64, 8, 8}, {1, 128, 4, 4}, {1, 256, 2, 2}};
  ASSERT_EQ(out.size(), 4u);
  for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(out[j]->value.shape(), expected[j]);
}

TEST(SegTransition, StageOneToTwo) {
  std::mt19937_64 rng(4);
  auto net = SegNet<float>::build(SegConfig{}, 5);
  auto b0 = make_leaf(random_tensor<float>({1, 32, 16, 16}, rng));
  const auto out = net.transition_forward({b0}, 2);
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out[0]->value.shape(), (TensorShape{1, 32, 16, 16}));
  EXPECT_EQ(out[1]->value.shape(), (TensorShape{1, 64, 8, 8}));
  // Matching channels: the same tensor object passes through.
  EXPECT_EQ(out[0].get(), b0.get());
}

TEST(SegTransition, StageThreeToFourAddsLowestBranch) {
  std::mt19937_64 rng(5);
  auto net = SegNet<float>::build(reduced_config(), 5);
  std::vector<Var<float>> prev{make_leaf(random_tensor<float>({1, 4, 16, 16}, rng)),
                               make_leaf(random_tensor<float>({1, 8, 8, 8}, rng)),
                               make_leaf(random_tensor<float>({1, 16, 4, 4}, rng))};
  const auto out = net.transition_forward(prev, 4);
  ASSERT_EQ(out.size(), 4u);
  for (int j = 0; j < 3; ++j) EXPECT_EQ(out[j].get(), prev[j].get());
  EXPECT_EQ(out[3]->value.shape(), (TensorShape{1, 32, 2, 2}));
}

TEST(SegTransition, RejectsOffLadderInputs) {
  std::mt19937_64 rng(6);
  auto net = SegNet<float>::build(reduced_config(), 5);
  std::vector<Var<float>> wrong_count{make_leaf(random_tensor<float>({1, 4, 16, 16}, rng))};
  EXPECT_THROW(net.transition_forward(wrong_count, 3), ShapeError);
  std::vector<Var<float>> wrong_res{make_leaf(random_tensor<float>({1, 4, 16, 16}, rng)),
                                    make_leaf(random_tensor<float>({1, 8, 4, 4}, rng))};
  EXPECT_THROW(net.transition_forward(wrong_res, 3), ShapeError);
  std::vector<Var<float>> wrong_ch{make_leaf(random_tensor<float>({1, 5, 16, 16}, rng))};
  EXPECT_THROW(net.transition_forward(wrong_ch, 2), ShapeError);
}

TEST(SegFuse, SingleBranchIsRelu) {
  std::mt19937_64 rng(7);
  auto net = SegNet<float>::build(reduced_config(), 5);
  const auto x = random_tensor<float>({1, 4, 8, 8}, rng, -1, 1);
  const auto out = net.fuse_branches({make_leaf(x)}, 1);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(out[0]->value[i], std::max(0.0f, x[i]));
  const auto positive = random_tensor<float>({1, 4, 8, 8}, rng, 0, 2);
  EXPECT_TRUE(bitwise_equal(net.fuse_branches({make_leaf(positive)}, 1)[0]->value, positive));
}

TEST(SegFuse, ZeroBranchContributesNothing) {
  std::mt19937_64 rng(8);
  auto net = SegNet<float>::build(reduced_config(), 5);
  net.set_mode(Mode::kEval);
  for (auto& link : net.exchange(2, 0).connector(1, 0).chain) link.conv().weight()->value.fill(0);
  const auto x = random_tensor<float>({1, 4, 8, 8}, rng);
  const auto out =
      net.fuse_branches({make_leaf(x), make_leaf(Tensor<float>({1, 8, 4, 4}))}, 2);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(out[0]->value[i], std::max(0.0f, x[i]));
}

TEST(SegFuse, PreservesBranchShapes) {
  std::mt19937_64 rng(9);
  auto net = SegNet<float>::build(reduced_config(), 5);
  std::vector<Var<float>> in;
  for (int j = 0; j < 4; ++j) {
    in.push_back(make_leaf(random_tensor<float>(
        {2, reduced_config().branch_channels[j], 32 >> j, 16 >> j}, rng)));
  }
  const auto out = net.fuse_branches(in, 4);
  for (int j = 0; j < 4; ++j) EXPECT_EQ(out[j]->value.shape(), in[j]->value.shape());
}

// Two branches, 1 channel at 2x2 and 2 channels at 1x1, with hand-set
// connectors and identity BN in eval mode.
TEST(SegFuse, TwoBranchToyMatchesScalarOracle) {
  SegConfig c = reduced_config();
  c.branch_channels = {1, 2, 3, 4};
  auto net = SegNet<double>::build(c, 1);
  net.set_mode(Mode::kEval);
  auto& up = net.exchange(2, 0).connector(1, 0).chain.at(0);    // 1x1, 2 -> 1
  auto& down = net.exchange(2, 0).connector(0, 1).chain.at(0);  // 3x3 s2, 1 -> 2
  up.conv().weight()->value = Tensor<double>({1, 2, 1, 1}, std::vector<double>{0.5, -1.5});
  Tensor<double> wd({2, 1, 3, 3});
  for (std::size_t i = 0; i < 18; ++i) wd[i] = 0.25 * static_cast<double>(i % 5) - 0.5;
  down.conv().weight()->value = wd;

  const Tensor<double> b0({1, 1, 2, 2}, std::vector<double>{1.0, -2.0, 0.5, 3.0});
  const Tensor<double> b1({1, 2, 1, 1}, std::vector<double>{0.4, -0.2});
  const auto out = net.fuse_branches({make_leaf(b0), make_leaf(b1)}, 2);

  const double k = 1.0 / std::sqrt(1.0 + kBatchNormEpsilon);
  // 1x1 -> 2x2 bilinear resize replicates the single value.
  const double lifted = k * (0.5 * 0.4 + -1.5 * -0.2);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_NEAR(out[0]->value[i], std::max(0.0, b0[i] + lifted), 1e-12);
  }
  const auto conv = testing::naive_conv2d(b0, wd, nullptr, 2, 1);
  for (std::size_t o = 0; o < 2; ++o) {
    EXPECT_NEAR(out[1]->value[o], std::max(0.0, k * conv[o] + b1[o]), 1e-12);
  }
}

TEST(SegHead, DefaultConfigEmitsNineteenChannels) {
  std::mt19937_64 rng(10);
  auto net = SegNet<float>::build(SegConfig{}, 1);
  net.set_mode(Mode::kEval);
  EXPECT_EQ(net.seg_forward(random_tensor<float>({1, 3, 64, 64}, rng)).shape(),
            (TensorShape{1, 19, 64, 64}));
}

TEST(SegHead, ConcatOrderIsFixed) {
  std::mt19937_64 rng(11);
  auto net = SegNet<double>::build(reduced_config(), 1);
  net.set_mode(Mode::kEval);
  std::vector<Var<double>> br;
  for (int j = 0; j < 4; ++j) {
    br.push_back(make_leaf(
        random_tensor<double>({1, reduced_config().branch_channels[j], 8 >> j, 8 >> j}, rng)));
  }
  const auto head = net.head_forward(br, 32, 32)->value;

  auto manual = [&](const std::vector<int>& order) {
    std::vector<Var<double>> parts;
    for (int j : order) parts.push_back(ops::bilinear_resize(br[j], 8, 8));
    auto y = ops::concat_channels(std::span<const Var<double>>(parts));
    y = net.head_mid().forward(y, Mode::kEval);
    y = net.head_out().forward(y);
    return ops::bilinear_resize(y, 32, 32)->value;
  };
  EXPECT_TRUE(bitwise_equal(manual({0, 1, 2, 3}), head));
  // Same total width but F2 and F3 swapped.
  const auto permuted = manual({0, 2, 1, 3});
  double diff = 0;
  for (std::size_t i = 0; i < head.size(); ++i) diff = std::max(diff, std::abs(permuted[i] - head[i]));
  EXPECT_GT(diff, 1e-6);
}

TEST(SegForward, ShapeContract) {
  std::mt19937_64 rng(12);
  auto net = SegNet<float>::build(reduced_config(), 1);
  for (int h : {32, 64, 96}) {
    for (int w : {32, 64, 96}) {
      EXPECT_EQ(net.seg_forward(random_tensor<float>({2, 3, h, w}, rng)).shape(),
                (TensorShape{2, 19, h, w}));
    }
  }
}

TEST(SegForward, RejectsIndivisibleInput) {
  auto net = SegNet<float>::build(reduced_config(), 1);
  EXPECT_THROW(net.seg_forward(Tensor<float>({1, 3, 48, 64})), ShapeError);
  EXPECT_THROW(net.seg_forward(Tensor<float>({1, 3, 64, 40})), ShapeError);
  EXPECT_THROW(net.seg_forward(Tensor<float>({1, 4, 64, 64})), ShapeError);
}

TEST(SegForward, EvalRepeatsBitwise) {
  std::mt19937_64 rng(13);
  auto net = SegNet<float>::build(reduced_config(), 1);
  net.set_mode(Mode::kEval);
  const auto x = random_tensor<float>({2, 3, 64, 64}, rng);
  EXPECT_TRUE(bitwise_equal(net.seg_forward(x), net.seg_forward(x)));
}

TEST(SegForward, ConstantInputGivesFlatInterior) {
  std::mt19937_64 rng(14);
  auto net = SegNet<double>::build(reduced_config(), 1);
  auto set = net.parameters();
  testing::randomize_norm_state(set, rng);
  net.set_mode(Mode::kEval);
  const int size = 512;
  const auto y = net.seg_forward(Tensor<double>({1, 3, size, size}, 0.3));
  const int lo = size / 2 - 32, hi = size / 2 + 32;
  for (int c = 0; c < 19; ++c) {
    const double ref = y.at(0, c, size / 2, size / 2);
    for (int yy = lo; yy < hi; ++yy) {
      for (int xx = lo; xx < hi; ++xx) ASSERT_NEAR(y.at(0, c, yy, xx), ref, 1e-5) << c;
    }
  }
}

TEST(SegGradCheck, ReducedConfigEvalMode) {
  std::mt19937_64 rng(15);
  auto net = SegNet<double>::build(reduced_config(), 21);
  auto set = net.parameters();
  testing::randomize_norm_state(set, rng);
  net.set_mode(Mode::kEval);
  const auto x = make_leaf(random_tensor<double>({1, 3, 32, 32}, rng));
  const auto weights = random_tensor<double>({1, 19, 32, 32}, rng);
  const auto probes = testing::sampled_probes(set, 200, rng);
  const auto r = testing::check_gradients(
      [&] { return ops::weighted_sum(net.forward(x), weights); }, probes);
  EXPECT_EQ(r.checked, 200u);
  EXPECT_LT(r.max_relative_error, 1e-3) << r.worst;
}

TEST(SegGradCheck, ReducedConfigTrainMode) {
  std::mt19937_64 rng(16);
  auto net = SegNet<double>::build(reduced_config(), 22);
  net.set_mode(Mode::kTrain);
  const auto x = make_leaf(random_tensor<double>({2, 3, 64, 64}, rng));
  const auto weights = random_tensor<double>({2, 19, 64, 64}, rng);
  auto set = net.parameters();
  const auto probes = testing::sampled_probes(set, 100, rng);
  const auto r = testing::check_gradients(
      [&] { return ops::weighted_sum(net.forward(x), weights); }, probes);
  EXPECT_LT(r.max_relative_error, 1e-3) << r.worst;
}

}  // namespace
}  // namespace rhrseg
