// Copyright 2026 The obikit Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <cmath>

#include "obikit/infometrics.hpp"
#include "test_support.hpp"

namespace obikit {
namespace {

using testing::coin;
using testing::coin_ensemble;
using testing::coin_family;
using testing::kCoinX;

Dataset coin_data(std::vector<std::size_t> labels) {
  std::vector<LabeledExample> ex;
  for (auto y : labels) {
    ex.push_back(coin(y));
  }
  return {std::move(ex), 1, 2};
}

// OLL(n) of the uniform coin prior on iid Bernoulli(q) labels, by counting heads.
double coin_oll_oracle(std::size_t n, double q) {
  double total = 0.0;
  for (std::size_t h = 0; h <= n; ++h) {
    const double comb = std::tgamma(n + 1.0) / (std::tgamma(h + 1.0) * std::tgamma(n - h + 1.0));
    const double prob = comb * std::pow(q, static_cast<double>(h)) * std::pow(1 - q, static_cast<double>(n - h));
    double marginal = 0.0;
    for (double b : {0.2, 0.5, 0.8}) {
      marginal += std::pow(b, static_cast<double>(h)) * std::pow(1 - b, static_cast<double>(n - h)) / 3.0;
    }
    if (prob > 0) {
      total -= prob * std::log(marginal);
    }
  }
  return total;
}

TEST(MarginalCrossEntropy, UniformAndCoinPrior) {
  const auto balanced = coin_data({0, 1, 1, 0});
  const auto half = GridFamily::from_probabilities({kCoinX}, {{{0.5, 0.5}}});
  const auto uniform = PosteriorEnsemble::uniform(half);
  const PredictFn f = [&](std::span<const double> x) { return marginal_predictive(uniform, x); };
  EXPECT_NEAR(marginal_cross_entropy(f, balanced).value, std::log(2.0), 1e-15);
  const auto e = coin_ensemble();
  const auto lp = forward_log_probs(e, balanced);
  EXPECT_NEAR(marginal_cross_entropy(e.log_weights(), lp, balanced.examples()).value, std::log(2.0), 1e-12);
}

TEST(MarginalCrossEntropy, PerfectPredictorAndInfinity) {
  const auto sure = GridFamily::from_probabilities({kCoinX}, {{{0.0, 1.0}}});
  const auto e = PosteriorEnsemble::uniform(sure);
  const auto heads = coin_data({1, 1});
  const auto lp = forward_log_probs(e, heads);
  EXPECT_EQ(marginal_cross_entropy(e.log_weights(), lp, heads.examples()).value, 0.0);
  EXPECT_EQ(accuracy(e.log_weights(), lp, heads.examples()), 1.0);
  const auto tails = coin_data({0});
  const auto r = marginal_cross_entropy(e.log_weights(), forward_log_probs(e, tails), tails.examples());
  EXPECT_TRUE(r.infinite);
  EXPECT_EQ(r.value, kInf);
  EXPECT_THROW((void)marginal_cross_entropy(e.log_weights(), lp, tails.examples()), ValidationError);
}

TEST(Accuracy, TieBreakAndCoin) {
  const auto half = GridFamily::from_probabilities({kCoinX}, {{{0.5, 0.5}}});
  const auto uniform = PosteriorEnsemble::uniform(half);
  const auto data = coin_data({0, 1, 1, 1, 0});
  EXPECT_NEAR(accuracy(uniform.log_weights(), forward_log_probs(uniform, data), data.examples()), 0.4, 1e-15);
  const std::vector<LabeledExample> obs{coin(1)};
  const auto post = exact_grid_posterior(coin_family(), std::vector<double>(3, 0.0), obs);
  const auto heads = coin_data({1, 1, 1});
  EXPECT_EQ(accuracy(post.log_weights(), forward_log_probs(post, heads), heads.examples()), 1.0);
}

TEST(JointCrossEntropySequence, CoinTwoHeads) {
  const std::vector<LabeledExample> seq{coin(1), coin(1)};
  const auto r = joint_cross_entropy_sequence(coin_ensemble(), seq);
  ASSERT_EQ(r.per_step.size(), 2U);
  EXPECT_NEAR(r.per_step[0], std::log(2.0), 1e-12);
  EXPECT_NEAR(r.per_step[1], -std::log(0.62), 1e-12);
  EXPECT_NEAR(r.total, -std::log(0.31), 1e-12);
  EXPECT_NEAR(r.total, 1.1712, 1e-4);
  EXPECT_FALSE(r.collapse_position.has_value());
}

TEST(JointCrossEntropySequence, SingleSampleAndLengthOne) {
  const auto one = coin_ensemble().subset(std::vector<std::size_t>{1});
  const std::vector<LabeledExample> seq{coin(1), coin(0), coin(1)};
  EXPECT_NEAR(joint_cross_entropy_sequence(one, seq).total, 3 * std::log(2.0), 1e-12);
  const std::vector<LabeledExample> single{coin(1)};
  const auto d = coin_data({1});
  EXPECT_NEAR(joint_cross_entropy_sequence(coin_ensemble(), single).total,
              marginal_cross_entropy(coin_ensemble().log_weights(), forward_log_probs(coin_ensemble(), d), d.examples())
                  .value,
              1e-15);
}

TEST(JointCrossEntropySequence, CollapseFlagged) {
  const auto sure = GridFamily::from_probabilities({kCoinX}, {{{0.0, 1.0}}, {{0.0, 1.0}}});
  const std::vector<LabeledExample> seq{coin(1), coin(0), coin(1)};
  const auto r = joint_cross_entropy_sequence(PosteriorEnsemble::uniform(sure), seq);
  EXPECT_EQ(r.total, kInf);
  ASSERT_TRUE(r.collapse_position.has_value());
  EXPECT_EQ(*r.collapse_position, 1U);
}

TEST(OnlineLearningLoss, OneEqualsMarginal) {
  const auto data = coin_data({0, 1, 1});
  const auto e = coin_ensemble();
  const double ce = marginal_cross_entropy(e.log_weights(), forward_log_probs(e, data), data.examples()).value;
  EXPECT_NEAR(online_learning_loss_exhaustive(e, data, 1), ce, 1e-15);
  EXPECT_NEAR(cross_entropy_rate_exhaustive(e, data, 1)[0], ce, 1e-15);
}

TEST(OnlineLearningLoss, CoinBalancedExact) {
  const auto data = coin_data({0, 1});
  const auto e = coin_ensemble();
  const double oll2 = online_learning_loss_exhaustive(e, data, 2);
  EXPECT_NEAR(oll2, -(0.5 * std::log(0.31) + 0.5 * std::log(0.19)), 1e-12);
  EXPECT_NEAR(oll2, coin_oll_oracle(2, 0.5), 1e-12);
  for (std::size_t n : {1U, 2U, 4U, 8U}) {
    EXPECT_NEAR(online_learning_loss_exhaustive(e, data, n), coin_oll_oracle(n, 0.5), 1e-10);
  }
  const auto rate = cross_entropy_rate_exhaustive(e, data, 2);
  EXPECT_NEAR(rate[1], coin_oll_oracle(2, 0.5) / 2, 1e-12);
}

TEST(OnlineLearningLoss, DeterministicDataRateDecreases) {
  const auto data = coin_data({1});
  const auto e = coin_ensemble();
  double prev = kInf;
  for (std::size_t n : {1U, 2U, 4U, 8U}) {
    const double r = online_learning_loss_exhaustive(e, data, n) / static_cast<double>(n);
    EXPECT_NEAR(r, coin_oll_oracle(n, 1.0) / static_cast<double>(n), 1e-12);
    EXPECT_LT(r, prev);
    prev = r;
  }
}

TEST(OnlineLearningLoss, MonteCarloCoversExact) {
  const auto data = coin_data({0, 1, 1, 0, 1});
  const auto e = coin_ensemble();
  const double exact = online_learning_loss_exhaustive(e, data, 3);
  const auto est = online_learning_loss(e, data, 3, 20000, RngStream(4, 0));
  EXPECT_LE(std::abs(est.mean - exact), 4 * est.standard_error);
  const auto curve = cross_entropy_rate_estimate(e, data, 3, 100, RngStream(4, 0));
  const auto curve2 = cross_entropy_rate_estimate(e, data, 3, 100, RngStream(4, 0));
  ASSERT_EQ(curve.size(), 3U);
  EXPECT_EQ(curve[2].mean, curve2[2].mean);
  EXPECT_THROW((void)online_learning_loss(e, data, 0, 1, RngStream()), ValidationError);
}

TEST(TotalCorrelation, CoinAndDegenerate) {
  const std::vector<std::vector<double>> two{kCoinX, kCoinX};
  const double tc = total_correlation(coin_ensemble(), two);
  const double h = -2 * 0.31 * std::log(0.31) - 2 * 0.19 * std::log(0.19);
  EXPECT_NEAR(tc, 2 * std::log(2.0) - h, 1e-12);
  EXPECT_NEAR(tc, 0.0290, 1e-4);
  EXPECT_EQ(total_correlation(coin_ensemble().subset(std::vector<std::size_t>{0}), two), 0.0);
  EXPECT_EQ(total_correlation(coin_ensemble(), std::vector<std::vector<double>>{kCoinX}), 0.0);
  const auto lp = forward_log_probs(coin_ensemble(), two);
  const auto mc = total_correlation_mc(coin_ensemble().log_weights(), lp, 100000, RngStream(8, 0));
  EXPECT_LE(std::abs(mc.mean - tc), 4 * mc.standard_error);
}

}  // namespace
}  // namespace obikit
