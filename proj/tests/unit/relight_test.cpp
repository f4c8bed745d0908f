#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "rhrseg/errors.hpp"
#include "rhrseg/relight.hpp"
#include "test_support.hpp"

namespace rhrseg {
namespace {

using testing::random_tensor;

RelightConfig small_config(int base = 4, int blocks = 1, bool zero_last = true) {
  RelightConfig c;
  c.base_channels = base;
  c.num_res_blocks = blocks;
  c.zero_init_last = zero_last;
  return c;
}

template <typename T>
bool same_parameters(RelightNet<T>& a, RelightNet<T>& b) {
  auto pa = a.parameters(), pb = b.parameters();
  if (pa.params.size() != pb.params.size()) return false;
  for (std::size_t i = 0; i < pa.params.size(); ++i) {
    if (pa.params[i].name != pb.params[i].name) return false;
    if (!bitwise_equal(pa.params[i].var->value, pb.params[i].var->value)) return false;
  }
  return true;
}

TEST(RelightBuild, DeterministicInSeed) {
  auto a = RelightNet<float>::build(RelightConfig{}, 7);
  auto b = RelightNet<float>::build(RelightConfig{}, 7);
  auto c = RelightNet<float>::build(RelightConfig{}, 8);
  EXPECT_TRUE(same_parameters(a, b));
  EXPECT_FALSE(same_parameters(a, c));
}

TEST(RelightBuild, ChannelSequenceForBaseEight) {
  auto net = RelightNet<float>::build(small_config(8, 3), 1);
  const auto specs = net.layer_specs();
  ASSERT_EQ(specs.size(), 4u + 6u + 2u);
  const std::vector<std::pair<int, int>> expected{
      {3, 8}, {8, 16}, {16, 32}, {32, 32}, {32, 32}, {32, 32}, {32, 32},
      {32, 32}, {32, 32}, {32, 32}, {32, 16}, {16, 3}};
  for (std::size_t i = 0; i < specs.size(); ++i) {
    EXPECT_EQ(specs[i].in_channels, expected[i].first) << i;
    EXPECT_EQ(specs[i].out_channels, expected[i].second) << i;
  }
  EXPECT_FALSE(specs[3].transposed);
  EXPECT_TRUE(specs[10].transposed);
  EXPECT_TRUE(specs[11].transposed);
  EXPECT_EQ(specs[1].stride, 2);
  EXPECT_EQ(specs[2].stride, 2);
  EXPECT_EQ(specs[11].kernel, 4);
}

TEST(RelightBuild, ZeroBlocksGivesSixStages) {
  auto net = RelightNet<float>::build(small_config(4, 0), 1);
  EXPECT_EQ(net.num_weighted_stages(), 6);
  EXPECT_EQ(RelightNet<float>::build(RelightConfig{}, 1).num_weighted_stages(), 12);
}

TEST(RelightBuild, InvalidConfigIsRejected) {
  EXPECT_THROW(RelightNet<float>::build(small_config(0, 1), 1), InvalidConfig);
  EXPECT_THROW(RelightNet<float>::build(small_config(4, -1), 1), InvalidConfig);
}

TEST(RelightBuild, ConvFollowedByNormHasNoBias) {
  auto net = RelightNet<float>::build(small_config(), 1);
  for (const auto& p : net.parameters().params) {
    EXPECT_EQ(p.name.find(".bias"), std::string::npos) << p.name;
  }
}

TEST(RelightResidual, ZeroAtInitInEval) {
  std::mt19937_64 rng(1);
  auto net = RelightNet<float>::build(small_config(), 3);
  net.set_mode(Mode::kEval);
  const auto r = net.relight_residual(random_tensor<float>({2, 3, 16, 16}, rng));
  for (float v : r.storage()) EXPECT_EQ(v, 0.0f);
}

TEST(RelightResidual, PreservesShape) {
  std::mt19937_64 rng(2);
  auto net = RelightNet<float>::build(small_config(4, 1, false), 3);
  const auto r = net.relight_residual(random_tensor<float>({2, 3, 64, 64}, rng));
  EXPECT_EQ(r.shape(), (TensorShape{2, 3, 64, 64}));
  for (int h : {4, 8, 12, 20}) {
    for (int w : {4, 16, 36}) {
      EXPECT_EQ(net.relight_forward(random_tensor<float>({1, 3, h, w}, rng)).shape(),
                (TensorShape{1, 3, h, w}));
    }
  }
}

TEST(RelightResidual, RejectsBadInputs) {
  auto net = RelightNet<float>::build(small_config(), 3);
  EXPECT_THROW(net.relight_residual(Tensor<float>({1, 3, 6, 8})), ShapeError);
  EXPECT_THROW(net.relight_residual(Tensor<float>({1, 3, 8, 10})), ShapeError);
  EXPECT_THROW(net.relight_forward(Tensor<float>({1, 1, 8, 8})), ShapeError);
}

// conv k3 s2 p1 + BN + ReLU, then transconv k4 s2 p1 + BN, on a 4x4 input
// with hand-set weights; the reference composes scalar oracles.
TEST(RelightResidual, TwoStageToyMatchesScalarOracle) {
  InitRng rng(0);
  ConvSpec down{1, 1, 3, 2, 1};
  ConvSpec up{1, 1, 4, 2, 1, true};
  ConvBnAct<double> first(down, true, true, rng);
  ConvBnAct<double> second(up, true, false, rng);
  Tensor<double> w1({1, 1, 3, 3}, std::vector<double>{1, -1, 0.5, 0, 2, 0, -0.5, 1, 1});
  Tensor<double> w2({1, 1, 4, 4});
  for (std::size_t i = 0; i < 16; ++i) w2[i] = 0.1 * static_cast<double>(i) - 0.7;
  first.conv().weight()->value = w1;
  second.conv().weight()->value = w2;
  first.norm()->running_mean = {0.25};
  first.norm()->running_var = {2.0};
  second.norm()->running_mean = {-0.1};
  second.norm()->running_var = {0.5};

  Tensor<double> x({1, 1, 4, 4});
  for (std::size_t i = 0; i < 16; ++i) x[i] = std::sin(static_cast<double>(i));
  const auto y =
      second.forward(first.forward(make_leaf(x), Mode::kEval), Mode::kEval)->value;

  const double eps = kBatchNormEpsilon;
  auto inner = testing::naive_conv2d(x, w1, nullptr, 2, 1);
  Tensor<double> mid({1, 1, 2, 2});
  for (std::size_t i = 0; i < 4; ++i) {
    mid[i] = std::max(0.0, (inner[i] - 0.25) / std::sqrt(2.0 + eps));
  }
  const auto outer = testing::naive_conv_transpose2d(mid, w2, 2, 1);
  ASSERT_EQ(y.size(), 16u);
  for (std::size_t i = 0; i < 16; ++i) {
    EXPECT_NEAR(y[i], (outer[i] + 0.1) / std::sqrt(0.5 + eps), 1e-12) << i;
  }
}

TEST(RelightForward, IdentityAtInitForAnyInput) {
  std::mt19937_64 rng(4);
  auto net = RelightNet<float>::build(RelightConfig{}, 11);
  net.set_mode(Mode::kEval);
  for (int trial = 0; trial < 3; ++trial) {
    const auto x = random_tensor<float>({1, 3, 32, 32}, rng, -3, 3);
    EXPECT_TRUE(bitwise_equal(net.relight_forward(x), x));
  }
}

TEST(RelightForward, IsInputPlusResidual) {
  std::mt19937_64 rng(5);
  auto net = RelightNet<float>::build(small_config(4, 2, false), 5);
  net.set_mode(Mode::kEval);
  const auto x = random_tensor<float>({2, 3, 16, 16}, rng);
  const auto f = net.relight_forward(x);
  const auto r = net.relight_residual(x);
  for (std::size_t i = 0; i < x.size(); ++i) {
    EXPECT_EQ(f[i], x[i] + r[i]);
    EXPECT_NEAR(f[i] - r[i], x[i], 1e-6);
  }
}

TEST(RelightForward, EvalRepeatsBitwiseAndKeepsWeights) {
  std::mt19937_64 rng(6);
  auto net = RelightNet<float>::build(small_config(4, 1, false), 5);
  auto reference = RelightNet<float>::build(small_config(4, 1, false), 5);
  net.set_mode(Mode::kEval);
  const auto source = random_tensor<float>({1, 3, 16, 16}, rng);
  const auto target = random_tensor<float>({1, 3, 16, 16}, rng, -2, 0);
  const auto a = net.relight_forward(source);
  net.relight_forward(target);
  const auto b = net.relight_forward(source);
  EXPECT_TRUE(bitwise_equal(a, b));
  EXPECT_TRUE(same_parameters(net, reference));
  auto pa = net.parameters(), pb = reference.parameters();
  for (std::size_t i = 0; i < pa.buffers.size(); ++i) {
    EXPECT_EQ(*pa.buffers[i].values, *pb.buffers[i].values);
  }
}

TEST(RelightForward, TrainModeUpdatesRunningStats) {
  std::mt19937_64 rng(7);
  auto net = RelightNet<float>::build(small_config(), 5);
  net.relight_forward(random_tensor<float>({2, 3, 16, 16}, rng));
  const auto set = net.parameters();
  EXPECT_NE((*set.buffers.front().values)[0], 0.0f);
}

TEST(RelightGradCheck, EndToEndOnFourByFour) {
  std::mt19937_64 rng(8);
  auto net = RelightNet<double>::build(small_config(2, 1, false), 9);
  auto set = net.parameters();
  testing::randomize_norm_state(set, rng);
  net.set_mode(Mode::kEval);
  auto x = make_leaf(random_tensor<double>({1, 3, 4, 4}, rng), true);
  const auto weights = random_tensor<double>({1, 3, 4, 4}, rng);
  std::vector<std::pair<std::string, Var<double>>> vars{{"input", x}};
  for (const auto& p : set.params) vars.emplace_back(p.name, p.var);
  const auto r = testing::check_gradients(
      [&] { return ops::weighted_sum(net.forward(x), weights); }, testing::all_probes(vars));
  EXPECT_GT(r.checked, 200u);
  EXPECT_LT(r.max_relative_error, 1e-3) << r.worst;
}

}  // namespace
}  // namespace rhrseg
