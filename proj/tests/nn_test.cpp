#include "metasets/nn.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "metasets/error.hpp"
#include "reference_model.hpp"

namespace metasets::nn {
namespace {

PointCloud random_cloud(std::size_t n, int label, Rng& rng) {
  PointCloud c{.points = {}, .label = label};
  for (std::size_t i = 0; i < n; ++i) {
    c.points.emplace_back(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
  }
  return c;
}

std::vector<PointCloud> random_batch(std::size_t b, std::size_t n, int classes, Rng& rng) {
  std::vector<PointCloud> out;
  for (std::size_t i = 0; i < b; ++i) {
    out.push_back(random_cloud(n, static_cast<int>(rng.uniform_index(classes)), rng));
  }
  return out;
}

double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

TEST(ModelShape, LayoutCoversEveryParameter) {
  const ModelShape s{3};
  EXPECT_EQ(s.weight_offset(0), 0u);
  EXPECT_EQ(s.bias_offset(0), 3u * 64u);
  EXPECT_EQ(s.size(), (3 * 64 + 64) + (64 * 128 + 128) + (128 * 256 + 256) + (256 * 128 + 128) +
                          (128 * 3 + 3));
}

TEST(InitParams, DeterministicPerSeed) {
  EXPECT_EQ(init_params(5, 17), init_params(5, 17));
  EXPECT_NE(init_params(5, 17), init_params(5, 18));
}

TEST(InitParams, BiasesAreZero) {
  const auto p = init_params(4, 3);
  for (std::size_t l = 0; l < ModelShape::kLayerCount; ++l) {
    for (double b : p.bias(l)) EXPECT_EQ(b, 0.0);
  }
}

TEST(InitParams, FirstLayerSpreadMatchesUniformBound) {
  // U(-a, a) with a = 1/sqrt(3) has standard deviation a / sqrt(3) = 1/3.
  const auto p = init_params(5, 99);
  const auto w = p.weight(0);
  const double mean = std::accumulate(w.begin(), w.end(), 0.0) / w.size();
  double var = 0.0;
  for (double v : w) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / w.size());
  const double expected = (1.0 / std::sqrt(3.0)) / std::sqrt(3.0);
  EXPECT_NEAR(sd, expected, 0.2 * expected);
}

TEST(InitParams, RejectsFewerThanTwoClasses) {
  EXPECT_THROW(init_params(1, 1), InvalidInput);
}

TEST(Forward, PermutationInvariantBitExact) {
  Rng rng(5);
  const auto p = init_params(5, 1);
  for (int trial = 0; trial < 20; ++trial) {
    PointCloud c = random_cloud(37 + trial, 0, rng);
    const auto base = forward(p, c);
    for (std::size_t i = c.size(); i > 1; --i) std::swap(c.points[i - 1], c.points[rng.uniform_index(i)]);
    EXPECT_EQ(forward(p, c), base);
  }
}

TEST(Forward, DuplicatedPointsGiveIdenticalLogits) {
  Rng rng(6);
  const auto p = init_params(3, 2);
  PointCloud c = random_cloud(21, 1, rng);
  PointCloud doubled = c;
  doubled.points.insert(doubled.points.end(), c.points.begin(), c.points.end());
  EXPECT_EQ(forward(p, doubled), forward(p, c));
}

TEST(Forward, SinglePointPoolsToItsOwnFeature) {
  Rng rng(7);
  const auto p = init_params(3, 4);
  const PointCloud c = random_cloud(1, 0, rng);
  EXPECT_EQ(pooled_feature(p, c), point_feature(p, c.points[0]));
}

TEST(Forward, EmptyCloudIsRejected) {
  EXPECT_THROW(forward(init_params(3, 1), PointCloud{}), InvalidInput);
}

TEST(Forward, MatchesReferenceModel) {
  Rng rng(8);
  const auto p = init_params(4, 8);
  const testing::ReferenceModel ref(p.values(), 4);
  for (int t = 0; t < 5; ++t) {
    const auto c = random_cloud(30, 0, rng);
    const auto got = forward(p, c);
    const auto want = ref.logits(c);
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t j = 0; j < got.size(); ++j) EXPECT_NEAR(got[j], want[j], 1e-12);
  }
}

TEST(LossBatch, UniformLogitsGiveLogC) {
  ModelParams zero(ModelShape{7});
  Rng rng(9);
  const auto batch = random_batch(6, 10, 7, rng);
  EXPECT_NEAR(loss_batch(zero, batch), std::log(7.0), 1e-15);
}

TEST(LossBatch, SaturatedCorrectExampleApproachesZero) {
  // Only the output bias is set, so the margin is exactly the bias gap.
  ModelParams p(ModelShape{3});
  Rng rng(10);
  const std::vector<PointCloud> batch{random_cloud(4, 2, rng)};
  double previous = loss_batch(p, batch);
  for (double margin : {1.0, 5.0, 20.0, 50.0}) {
    p.bias(4)[2] = margin;
    const double l = loss_batch(p, batch);
    EXPECT_LT(l, previous);
    previous = l;
  }
  EXPECT_LT(previous, 1e-20);
}

TEST(LossBatch, MatchesIndependentScalarEvaluation) {
  Rng rng(11);
  const auto p = init_params(3, 12);
  const auto batch = random_batch(4, 9, 3, rng);
  const testing::ReferenceModel ref(p.values(), 3);
  const double want = ref.loss(batch);
  EXPECT_NEAR(loss_batch(p, batch), want, 1e-12 * std::max(1.0, std::abs(want)));
}

TEST(LossBatch, InvariantToBatchOrder) {
  Rng rng(12);
  const auto p = init_params(3, 13);
  auto batch = random_batch(8, 12, 3, rng);
  const double base = loss_batch(p, batch);
  std::reverse(batch.begin(), batch.end());
  EXPECT_NEAR(loss_batch(p, batch), base, 1e-14);
}

TEST(LossBatch, RejectsOutOfRangeLabel) {
  Rng rng(13);
  const auto p = init_params(3, 1);
  EXPECT_THROW(loss_batch(p, std::vector<PointCloud>{random_cloud(3, 3, rng)}), InvalidInput);
  EXPECT_THROW(loss_batch(p, std::vector<PointCloud>{random_cloud(3, -1, rng)}), InvalidInput);
  EXPECT_THROW(loss_batch(p, std::vector<PointCloud>{}), InvalidInput);
}

TEST(LossAndGrad, LossAgreesWithLossBatch) {
  Rng rng(14);
  const auto p = init_params(5, 15);
  const auto batch = random_batch(5, 20, 5, rng);
  EXPECT_NEAR(loss_and_grad(p, batch).loss, loss_batch(p, batch), 1e-14);
}

// Gradient check over every coordinate for small instances.
TEST(LossAndGrad, MatchesFiniteDifferencesEverywhere) {
  Rng rng(15);
  for (int instance = 0; instance < 2; ++instance) {
    const auto p = init_params(3, 100 + instance);
    const auto batch = random_batch(2, 5, 3, rng);
    const auto analytic = loss_and_grad(p, batch);
    const testing::PerturbationOracle oracle(p.values(), 3, batch);
    EXPECT_NEAR(oracle.base_loss(), analytic.loss, 1e-12);
    double worst = 0.0;
    for (std::size_t i = 0; i < oracle.parameter_count(); ++i) {
      const double fd = oracle.region_central_difference(i, 1e-5, 1e-9).value;
      worst = std::max(worst, relative_error(analytic.grad.values()[i], fd));
    }
    EXPECT_LT(worst, 1e-4) << "instance " << instance;
  }
}

// 100 random coordinates per seed on larger clouds, against plain
// full-recompute finite differences.
TEST(LossAndGrad, RandomCoordinatesMatchFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(200 + seed);
    auto p = init_params(4, seed);
    const auto batch = random_batch(3, 16, 4, rng);
    const auto analytic = loss_and_grad(p, batch);
    for (int draw = 0; draw < 100; ++draw) {
      const std::size_t i = rng.uniform_index(p.size());
      const double theta = p.values()[i];
      p.values()[i] = theta + 1e-5;
      const double up = loss_batch(p, batch);
      p.values()[i] = theta - 1e-5;
      const double down = loss_batch(p, batch);
      p.values()[i] = theta;
      const double fd = (up - down) / 2e-5;
      EXPECT_LT(relative_error(analytic.grad.values()[i], fd), 1e-4)
          << "seed " << seed << " coordinate " << i;
    }
  }
}

TEST(LossAndGrad, DeadPathHasExactlyZeroGradient) {
  Rng rng(16);
  auto p = init_params(3, 17);
  // Unit 0 of the first layer can never activate.
  for (std::size_t d = 0; d < 3; ++d) p.weight(0)[d * 64 + 0] = 0.0;
  p.bias(0)[0] = -1.0;
  const auto batch = random_batch(3, 8, 3, rng);
  const auto g = loss_and_grad(p, batch).grad;
  for (std::size_t d = 0; d < 3; ++d) EXPECT_EQ(g.weight(0)[d * 64 + 0], 0.0);
  EXPECT_EQ(g.bias(0)[0], 0.0);
  for (std::size_t o = 0; o < 128; ++o) EXPECT_EQ(g.weight(1)[0 * 128 + o], 0.0);
}

TEST(LossAndGrad, DuplicatedBatchGivesSameGradient) {
  Rng rng(17);
  const auto p = init_params(3, 18);
  auto batch = random_batch(4, 10, 3, rng);
  const auto single = loss_and_grad(p, batch);
  const auto copy = batch;
  batch.insert(batch.end(), copy.begin(), copy.end());
  const auto doubled = loss_and_grad(p, batch);
  EXPECT_NEAR(doubled.loss, single.loss, 1e-14);
  for (std::size_t i = 0; i < single.grad.size(); ++i) {
    EXPECT_NEAR(doubled.grad.values()[i], single.grad.values()[i], 1e-15);
  }
}

TEST(SgdStep, ZeroRateIsIdentity) {
  Rng rng(18);
  const auto p = init_params(3, 19);
  const auto g = loss_and_grad(p, random_batch(2, 6, 3, rng)).grad;
  EXPECT_EQ(sgd_step(p, g, 0.0), p);
}

TEST(SgdStep, Arithmetic) {
  const ModelParams zero(ModelShape{3});
  Gradients ones(ModelShape{3});
  std::fill(ones.values().begin(), ones.values().end(), 1.0);
  const auto next = sgd_step(zero, ones, 0.5);
  for (double v : next.values()) EXPECT_EQ(v, -0.5);
  // Input untouched.
  for (double v : zero.values()) EXPECT_EQ(v, 0.0);
}

TEST(SgdStep, TwoStepsEqualOneDoubleStep) {
  Rng rng(19);
  const auto p = init_params(3, 20);
  const auto g = loss_and_grad(p, random_batch(2, 6, 3, rng)).grad;
  const auto twice = sgd_step(sgd_step(p, g, 0.01), g, 0.01);
  const auto once = sgd_step(p, g, 0.02);
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(twice.values()[i], once.values()[i], 1e-15);
}

TEST(SgdStep, ShapeMismatchIsRejected) {
  EXPECT_THROW(sgd_step(ModelParams(ModelShape{3}), Gradients(ModelShape{4}), 0.1), InvalidInput);
}

TEST(AdamStep, FirstStepMovesBySignTimesRate) {
  const auto p = init_params(3, 21);
  Gradients g(p.shape());
  Rng rng(20);
  for (double& v : g.values()) v = rng.uniform(-2.0, 2.0);
  const double lr = 0.001;
  const auto r = adam_step(AdamState::zeros(p.shape()), p, g, lr);
  EXPECT_EQ(r.state.step, 1u);
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double gi = g.values()[i];
    // m_hat = g, v_hat = g^2: step = lr * g / (|g| + eps).
    const double expected = -lr * gi / (std::abs(gi) + r.state.epsilon);
    EXPECT_NEAR(r.params.values()[i] - p.values()[i], expected, 1e-15);
  }
}

TEST(AdamStep, ZeroGradientNeverMoves) {
  const auto p = init_params(3, 22);
  AdamState s = AdamState::zeros(p.shape());
  ModelParams cur = p;
  const Gradients zero(p.shape());
  for (int i = 0; i < 50; ++i) {
    auto r = adam_step(s, cur, zero, 0.01);
    s = std::move(r.state);
    cur = std::move(r.params);
  }
  EXPECT_EQ(cur, p);
  EXPECT_EQ(s.step, 50u);
}

TEST(AdamStep, DeterministicTrajectory) {
  auto run = [] {
    Rng rng(21);
    auto p = init_params(3, 23);
    AdamState s = AdamState::zeros(p.shape());
    for (int i = 0; i < 5; ++i) {
      const auto g = loss_and_grad(p, random_batch(3, 8, 3, rng)).grad;
      auto r = adam_step(s, p, g, 0.001);
      s = std::move(r.state);
      p = std::move(r.params);
    }
    return std::make_pair(p, s);
  };
  EXPECT_EQ(run(), run());
}

TEST(AdamStep, ShapeMismatchIsRejected) {
  const auto p = init_params(3, 1);
  EXPECT_THROW(adam_step(AdamState::zeros(ModelShape{4}), p, Gradients(p.shape()), 0.1),
               InvalidInput);
}

TEST(Training, ParametersStayFiniteOverManySteps) {
  Rng rng(22);
  auto p = init_params(4, 24);
  AdamState s = AdamState::zeros(p.shape());
  for (int step = 0; step < 500; ++step) {
    const auto batch = random_batch(4, 12, 4, rng);
    auto r = adam_step(s, p, loss_and_grad(p, batch).grad, 0.01);
    s = std::move(r.state);
    p = std::move(r.params);
    ASSERT_TRUE(all_finite(p.values())) << "step " << step;
  }
  EXPECT_TRUE(all_finite(s.first.values()));
  EXPECT_TRUE(all_finite(s.second.values()));
}

TEST(Evaluate, PredictionsAreArgmaxWithLowIndexTies) {
  ModelParams p(ModelShape{3});
  Rng rng(23);
  const std::vector<PointCloud> batch{random_cloud(3, 0, rng), random_cloud(3, 1, rng)};
  const auto eval = evaluate(p, batch);
  EXPECT_EQ(eval.predictions, (std::vector<int>{0, 0}));
  EXPECT_EQ(eval.correct, 1u);
  EXPECT_DOUBLE_EQ(eval.accuracy(), 0.5);
}

}  // namespace
}  // namespace metasets::nn
