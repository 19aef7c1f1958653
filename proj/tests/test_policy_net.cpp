#include <gtest/gtest.h>

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <random>

#include "agile_pilot/policy_net.hpp"
#include "gradient_oracle.hpp"

using namespace agile;
using agile::testing::NetD;

TEST(PolicyNet, DefaultShapesAndParameterCount) {
  const ActorCritic<float> net;
  const std::vector<LayerShape> expected{{21, 512}, {512, 512}, {512, 256}, {256, 128}, {128, 4}, {128, 1}};
  EXPECT_EQ(net.shapes(), expected);
  long count = 4;  // log_std
  for (const auto& s : expected) count += static_cast<long>(s.in) * s.out + s.out;
  EXPECT_EQ(net.num_params(), count);
  EXPECT_EQ(count, 21 * 512 + 512 + 512 * 512 + 512 + 512 * 256 + 256 + 256 * 128 + 128 + 128 * 4 + 4 + 128 + 1 + 4);
}

TEST(PolicyNet, ZeroNetworkOutputsZero) {
  ActorCritic<double> net;
  const auto out = net.forward(NetD::Mat::Ones(21, 3));
  EXPECT_EQ(out.mean, NetD::Mat::Zero(4, 3));
  EXPECT_EQ(out.value, NetD::RowVec::Zero(3));
}

TEST(PolicyNet, HandComputedTinyNet) {
  NetD net({2, 2}, 1);
  net.weight(0) << 1.0, -1.0, 0.5, 2.0;
  net.bias(0) << 0.1, -0.2;
  net.weight(1) << 0.3, 0.2;   // actor
  net.weight(2) << 1.0, -0.5;  // critic
  net.bias(2) << 0.2;
  NetD::Mat x(2, 1);
  x << 1.0, 0.5;
  const auto out = net.forward(x);
  // hidden = relu([0.6, 1.3]); value = 0.6 - 0.65 + 0.2; mean = tanh(0.18 + 0.26)
  EXPECT_NEAR(out.value(0), 0.15, 1e-15);
  EXPECT_NEAR(out.mean(0, 0), std::tanh(0.44), 1e-15);

  x << -1.0, 0.0;  // both hidden units dead
  const auto dead = net.forward(x);
  EXPECT_NEAR(dead.value(0), 0.2, 1e-15);
}

TEST(PolicyNet, ForwardIsDeterministic) {
  std::mt19937_64 rng(4);
  ActorCritic<float> net;
  net.initialize(rng);
  ActorCritic<float>::Mat x = ActorCritic<float>::Mat::Random(21, 5);
  const auto a = net.forward(x), b = net.forward(x);
  EXPECT_EQ(a.mean, b.mean);
  EXPECT_EQ(a.value, b.value);
}

TEST(PolicyNet, RejectsWrongInputSize) {
  ActorCritic<float> net;
  EXPECT_THROW(net.forward(ActorCritic<float>::Mat::Zero(20, 1)), std::invalid_argument);
}

TEST(PolicyNet, LogStdClamped) {
  ActorCritic<double> net;
  net.log_std() << -9, 3, 0, -1;
  const auto out = net.forward(NetD::Mat::Zero(21, 1));
  EXPECT_EQ(out.log_std(0), kLogStdMin);
  EXPECT_EQ(out.log_std(1), kLogStdMax);
  EXPECT_EQ(out.log_std(2), 0.0);
}

TEST(SampleAction, DegenerateGaussianReturnsMean) {
  std::mt19937_64 rng(1);
  const Eigen::Vector4d mean(0.1, -0.2, 0.3, 0.9), ls = Eigen::Vector4d::Constant(-40.0);
  const auto s = sample_action(mean, ls, rng);
  EXPECT_NEAR((s.action - mean).norm(), 0.0, 1e-12);
  const auto d = sample_action(mean, Eigen::Vector4d::Zero(), rng, true);
  EXPECT_EQ(d.action, mean);
}

TEST(SampleAction, LogProbAtMeanUnitStd) {
  std::mt19937_64 rng(1);
  const auto s = sample_action(Eigen::Vector4d::Zero(), Eigen::Vector4d::Zero(), rng, true);
  EXPECT_NEAR(s.log_prob, -2.0 * std::log(2.0 * kPi), 1e-12);
  EXPECT_NEAR(s.log_prob, -3.6758, 1e-4);
}

TEST(SampleAction, MonteCarloMean) {
  std::mt19937_64 rng(77);
  const Eigen::Vector4d mean(0.1, -0.3, 0.0, 0.2);
  const Eigen::Vector4d ls = Eigen::Vector4d::Constant(std::log(0.2));
  const int n = 100000;
  Eigen::Vector4d sum = Eigen::Vector4d::Zero();
  for (int i = 0; i < n; ++i) sum += sample_action(mean, ls, rng).raw;
  const Eigen::Vector4d emp = sum / n;
  for (int j = 0; j < 4; ++j) EXPECT_LT(std::abs(emp(j) - mean(j)), 4 * 0.2 / std::sqrt(n));
}

TEST(SampleAction, SamplesClippedLogProbOnRaw) {
  std::mt19937_64 rng(3);
  const Eigen::Vector4d mean(0.95, -0.95, 0, 0), ls = Eigen::Vector4d::Zero();
  for (int i = 0; i < 1000; ++i) {
    const auto s = sample_action(mean, ls, rng);
    ASSERT_LE(s.action.cwiseAbs().maxCoeff(), 1.0);
    ASSERT_NEAR(s.log_prob, gaussian_log_prob(s.raw, mean, ls), 1e-12);
  }
}

TEST(Backward, ZeroUpstreamGivesZeroGradient) {
  std::mt19937_64 rng(2);
  NetD net({6, 8, 5}, 4);
  net.initialize(rng);
  NetD::Cache cache;
  const NetD::Mat x = NetD::Mat::Random(6, 7);
  net.forward(x, &cache);
  NetD::Vec g = NetD::Vec::Zero(net.num_params());
  net.backward(cache, NetD::Mat::Zero(4, 7), NetD::RowVec::Zero(7), NetD::Vec::Zero(4), g);
  EXPECT_EQ(g.norm(), 0.0);
}

TEST(Backward, MatchesFiniteDifferences) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 10; ++trial) {
    auto [net, prob] = agile::testing::random_problem(rng, LossCoefficients{0.2, 0.5, 0.01});
    const auto a = agile::testing::analytic_gradient(net, prob);
    const auto n = agile::testing::numeric_gradient(net, prob);
    EXPECT_LT(agile::testing::max_relative_error(a, n), 1e-4) << "trial " << trial;
  }
}

TEST(Backward, ValueLossLeavesActorHeadUntouched) {
  std::mt19937_64 rng(8);
  NetD net({5, 7, 6}, 4);
  net.initialize(rng, 1.0, 1.0);
  NetD::Cache cache;
  net.forward(NetD::Mat::Random(5, 4), &cache);
  NetD::Vec g = NetD::Vec::Zero(net.num_params());
  NetD::RowVec dv(4);
  dv << 0.3, -1.0, 0.2, 0.5;
  net.backward(cache, NetD::Mat::Zero(4, 4), dv, NetD::Vec::Zero(4), g);
  const int actor = net.actor_layer();
  const auto n_actor = net.shapes()[actor].in * net.shapes()[actor].out + net.shapes()[actor].out;
  EXPECT_EQ(g.segment(net.weight_offset(actor), n_actor).norm(), 0.0);
  EXPECT_GT(g.segment(net.weight_offset(net.critic_layer()), 7).norm(), 0.0);
}

TEST(Backward, DeadReluLayerBlocksGradient) {
  std::mt19937_64 rng(8);
  NetD net({3, 4, 4}, 4);
  net.initialize(rng, 1.0, 1.0);
  net.bias(1).setConstant(-100.0);  // second trunk layer always off
  NetD::Cache cache;
  net.forward(NetD::Mat::Random(3, 5), &cache);
  NetD::Vec g = NetD::Vec::Zero(net.num_params());
  net.backward(cache, NetD::Mat::Ones(4, 5), NetD::RowVec::Ones(5), NetD::Vec::Zero(4), g);
  for (int l = 0; l < 2; ++l) {
    EXPECT_EQ(g.segment(net.weight_offset(l), 4 * net.shapes()[l].in + 4).norm(), 0.0) << "layer " << l;
  }
}

TEST(Checkpoint, BitExactRoundTrip) {
  std::mt19937_64 rng(5);
  ActorCritic<float> a;
  a.initialize(rng);
  a.log_std() << -0.5f, -0.25f, 0.125f, 1.0e-7f;
  const auto path = (std::filesystem::temp_directory_path() / "agile_ckpt_test.txt").string();
  a.save(path);
  ActorCritic<float> b;
  b.load(path);
  EXPECT_EQ(std::memcmp(a.params().data(), b.params().data(), sizeof(float) * a.num_params()), 0);
  std::remove(path.c_str());
}

TEST(Checkpoint, ShapeMismatchNamesExpectedShapes) {
  std::mt19937_64 rng(5);
  ActorCritic<float> small({21, 8}, 4);
  small.initialize(rng);
  const auto path = (std::filesystem::temp_directory_path() / "agile_ckpt_small.txt").string();
  small.save(path);
  ActorCritic<float> full;
  try {
    full.load(path);
    FAIL() << "expected a shape error";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("21x512"), std::string::npos) << e.what();
  }
  std::remove(path.c_str());
  EXPECT_THROW(full.load("/nonexistent/ckpt"), std::runtime_error);
}
