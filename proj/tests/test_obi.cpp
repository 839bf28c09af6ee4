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

#include "obikit/obi.hpp"
#include "obikit/oracle.hpp"
#include "test_support.hpp"

namespace obikit {
namespace {

using testing::coin;
using testing::coin_ensemble;
using testing::coin_family;
using testing::kCoinX;

TEST(ObiInit, UniformState) {
  const auto s = obi_init(coin_ensemble());
  EXPECT_NEAR(s.ess(), 3.0, 1e-12);
  for (double w : normalized_weights(s.normalized_log_weights())) {
    EXPECT_NEAR(w, 1.0 / 3.0, 1e-15);
  }
  const auto data = testing::small_clusters(3, 1);
  auto cfg = testing::quick_train();
  cfg.epochs = 2;
  const auto mc = train_mc_dropout(data, testing::small_arch(), cfg, 8, RngStream(0, 0));
  EXPECT_NEAR(obi_init(mc).ess(), 8.0, 1e-12);
  const auto s8 = obi_init(mc);
  for (const auto& e : data.examples()) {
    const auto a = obi_predict(s8, e.x);
    const auto b = marginal_predictive(mc, e.x);
    for (std::size_t c = 0; c < 4; ++c) {
      EXPECT_EQ(a[c], b[c]);
    }
  }
}

TEST(ObiObserve, CoinOneHead) {
  const auto s = obi_observe(obi_init(coin_ensemble()), coin(1));
  const auto w = normalized_weights(s.normalized_log_weights());
  EXPECT_NEAR(w[0], 0.2 / 1.5, 1e-12);
  EXPECT_NEAR(w[1], 0.5 / 1.5, 1e-12);
  EXPECT_NEAR(w[2], 0.8 / 1.5, 1e-12);
  EXPECT_NEAR(s.ess(), 225.0 / 93.0, 1e-12);
  EXPECT_NEAR(obi_predict(s, kCoinX).prob(1), 0.62, 1e-12);
}

TEST(ObiObserve, RepeatedAndCommuting) {
  const auto base = obi_init(coin_ensemble());
  const auto twice = obi_observe(obi_observe(base, coin(1)), coin(1));
  const auto w = normalized_weights(twice.normalized_log_weights());
  EXPECT_NEAR(w[0], 0.04 / 0.93, 1e-12);
  EXPECT_NEAR(w[2], 0.64 / 0.93, 1e-12);
  const auto ab = obi_observe(obi_observe(base, coin(1)), coin(0));
  const auto ba = obi_observe(obi_observe(base, coin(0)), coin(1));
  const auto wa = ab.normalized_log_weights();
  const auto wb = ba.normalized_log_weights();
  for (std::size_t j = 0; j < 3; ++j) {
    EXPECT_NEAR(wa[j], wb[j], 1e-14);
  }
  const std::vector<LabeledExample> both{coin(1), coin(0)};
  const auto all = obi_observe_all(base, both);
  for (std::size_t j = 0; j < 3; ++j) {
    EXPECT_NEAR(all.normalized_log_weights()[j], wa[j], 1e-14);
  }
}

TEST(ObiObserve, MatchesExactGridPosterior) {
  RngStream rng(5, 0);
  for (int trial = 0; trial < 20; ++trial) {
    const auto world = oracle::random_world(1 + rng.uniform_index(8), 2 + rng.uniform_index(3), 3,
                                            rng.derive(StreamPurpose::kTrial, static_cast<std::uint64_t>(trial)));
    const auto [fam, prior] = oracle::to_family(world);
    const auto data = oracle::sample_dataset(world, 6, rng.derive(StreamPurpose::kData, static_cast<std::uint64_t>(trial)));
    auto state = obi_init(PosteriorEnsemble(fam, [&] {
      std::vector<std::size_t> ids(world.hypotheses());
      for (std::size_t j = 0; j < ids.size(); ++j) {
        ids[j] = j;
      }
      return ids;
    }(), prior));
    for (const auto& e : data.examples()) {
      state = obi_observe(state, e);
    }
    const auto exact = exact_grid_posterior(fam, prior, data.examples());
    const auto w = state.normalized_log_weights();
    for (std::size_t j = 0; j < w.size(); ++j) {
      EXPECT_NEAR(std::exp(w[j]), std::exp(exact.log_weights()[j]), 1e-12);
    }
  }
}

TEST(ObiObserve, CollapseIsReported) {
  const auto fam = GridFamily::from_probabilities({kCoinX}, {{{1.0, 0.0}}, {{1.0, 0.0}}});
  const auto s = obi_init(PosteriorEnsemble::uniform(fam));
  try {
    (void)obi_observe(s, coin(1));
    FAIL();
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("posterior collapse"), std::string::npos);
  }
  EXPECT_THROW((void)obi_observe(s, {kCoinX, 5}), ValidationError);
}

TEST(ObiPredict, RatioIdentity) {
  const std::vector<LabeledExample> obs{coin(1), coin(0), coin(1)};
  const auto s = obi_observe_all(obi_init(coin_ensemble()), obs);
  std::vector<std::vector<double>> xs(3, kCoinX);
  const std::vector<std::size_t> ys{1, 0, 1};
  const double denom = joint_log_prob(coin_ensemble(), xs, ys);
  xs.push_back(kCoinX);
  for (std::size_t c = 0; c < 2; ++c) {
    auto yc = ys;
    yc.push_back(c);
    EXPECT_NEAR(obi_predict(s, kCoinX).prob(c), std::exp(joint_log_prob(coin_ensemble(), xs, yc) - denom), 1e-10);
  }
}

TEST(ObiBootstrap, FullSubsetKeepsPredictions) {
  const auto s = obi_observe(obi_init(coin_ensemble()), coin(1));
  const auto b = obi_bootstrap(s, 3, RngStream(1, 0));
  EXPECT_NEAR(obi_predict(b, kCoinX).prob(1), obi_predict(s, kCoinX).prob(1), 1e-12);
}

TEST(ObiBootstrap, TwoOfThreeHypotheses) {
  // Find a seed whose subset is {0.2, 0.8}.
  const auto s = obi_observe(obi_init(coin_ensemble()), coin(1));
  bool found = false;
  for (std::uint64_t seed = 0; seed < 50 && !found; ++seed) {
    const auto pos = bootstrap_positions(3, 2, RngStream(seed, 0));
    if (pos == std::vector<std::size_t>{0, 2}) {
      found = true;
      const auto b = obi_bootstrap(s, 2, RngStream(seed, 0));
      EXPECT_NEAR(obi_predict(b, kCoinX).prob(1), 0.68, 1e-12);
    }
  }
  EXPECT_TRUE(found);
  EXPECT_THROW((void)obi_bootstrap(s, 0, RngStream()), ValidationError);
  EXPECT_THROW((void)obi_bootstrap(s, 4, RngStream()), ValidationError);
}

TEST(ObiBootstrap, SubsetOfLargeDropoutEnsemble) {
  const auto data = testing::small_clusters(3, 2);
  auto cfg = testing::quick_train();
  cfg.epochs = 2;
  const auto mc = train_mc_dropout(data, testing::small_arch(), cfg, 400, RngStream(0, 0));
  const auto s = obi_observe_all(obi_init(mc), std::span(data.examples()).first(3));
  for (std::uint64_t sub = 0; sub < 5; ++sub) {
    const auto b = obi_bootstrap(s, 200, RngStream(sub, 3));
    EXPECT_EQ(b.base().size(), 200U);
    EXPECT_LE(b.ess(), 200.0 + 1e-9);
  }
}

}  // namespace
}  // namespace obikit
