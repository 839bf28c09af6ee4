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

#include "obikit/oracle.hpp"
#include "obikit/predictive.hpp"
#include "test_support.hpp"

namespace obikit::oracle {
namespace {

using obikit::testing::coin;

TEST(OraclePosterior, CoinAndPrior) {
  const auto w = coin_world();
  const std::vector<LabeledExample> obs{coin(1)};
  const auto p = oracle_posterior_probs(w, obs);
  EXPECT_NEAR(p[0], 0.2 / 1.5, 1e-15);
  EXPECT_NEAR(p[1], 0.5 / 1.5, 1e-15);
  EXPECT_NEAR(p[2], 0.8 / 1.5, 1e-15);
  const auto prior = oracle_posterior_probs(w, {});
  for (double v : prior) {
    EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
  }
}

TEST(OraclePosterior, PermutationInvariant) {
  const auto w = random_world(5, 3, 4, RngStream(1, 0));
  auto data = sample_dataset(w, 8, RngStream(2, 0)).examples();
  const auto a = oracle_posterior_probs(w, data);
  std::reverse(data.begin(), data.end());
  const auto b = oracle_posterior_probs(w, data);
  for (std::size_t k = 0; k < a.size(); ++k) {
    EXPECT_NEAR(a[k], b[k], 1e-15);
  }
}

TEST(OraclePosterior, ImpossibleData) {
  GridWorld w = coin_world();
  w.tables = {{{1.0, 0.0}}};
  w.prior_log_weights = {0.0};
  w.truth = 0;
  const std::vector<LabeledExample> obs{coin(1)};
  EXPECT_THROW((void)oracle_posterior(w, obs), NumericalError);
}

TEST(OracleJointPredictive, CoinPairs) {
  const auto w = coin_world();
  const std::vector<std::vector<double>> xs{{0.0}, {0.0}};
  const auto t = oracle_joint_predictive(w, xs);
  ASSERT_EQ(t.size(), 4U);
  EXPECT_NEAR(t[0], 0.31, 1e-15);
  EXPECT_NEAR(t[1], 0.19, 1e-15);
  EXPECT_NEAR(t[2], 0.19, 1e-15);
  EXPECT_NEAR(t[3], 0.31, 1e-15);
}

TEST(OracleJointPredictive, SumsToOneAndSpecialCases) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto w = random_world(1 + seed % 8, 2 + seed % 3, 3, RngStream(seed, 7));
    std::vector<std::vector<double>> xs;
    for (std::size_t i = 0; i < 1 + seed % 6; ++i) {
      xs.push_back(w.vocabulary[i % 3]);
    }
    const auto t = oracle_joint_predictive(w, xs);
    double s = 0.0;
    for (double v : t) {
      s += v;
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
  const auto w = random_world(1, 3, 2, RngStream(3, 3));
  const std::vector<std::vector<double>> xs{w.vocabulary[0], w.vocabulary[1]};
  const auto t = oracle_joint_predictive(w, xs);
  for (std::size_t a = 0; a < 3; ++a) {
    for (std::size_t b = 0; b < 3; ++b) {
      EXPECT_NEAR(t[a * 3 + b], w.tables[0][0][a] * w.tables[0][1][b], 1e-15);
    }
  }
  const std::vector<std::vector<double>> one{w.vocabulary[1]};
  const auto m = oracle_joint_predictive(w, one);
  for (std::size_t c = 0; c < 3; ++c) {
    EXPECT_NEAR(m[c], w.tables[0][1][c], 1e-15);
  }
}

TEST(OracleInfo, CoinValues) {
  const auto w = coin_world();
  const std::vector<std::vector<double>> xs{{0.0}, {0.0}};
  const std::vector<std::pair<std::size_t, std::size_t>> pairs{{0, 1}};
  const auto q = oracle_info_quantities(w, xs, pairs);
  EXPECT_NEAR(q.bald[0], 0.128497, 1e-6);
  EXPECT_NEAR(q.total_correlation, 0.029083, 1e-6);
  EXPECT_NEAR(q.epig[0], q.total_correlation, 1e-15);
  EXPECT_NEAR(q.joint_entropy, 1.357211, 1e-6);
}

TEST(OracleInfo, SingleHypothesisHasNoEpistemicTerms) {
  const auto w = random_world(1, 4, 3, RngStream(5, 5));
  const std::vector<std::pair<std::size_t, std::size_t>> pairs{{0, 1}, {2, 2}};
  const auto q = oracle_info_quantities(w, w.vocabulary, pairs);
  EXPECT_NEAR(q.total_correlation, 0.0, 1e-12);
  EXPECT_NEAR(q.joint_mutual_information, 0.0, 1e-12);
  for (double b : q.bald) {
    EXPECT_NEAR(b, 0.0, 1e-12);
  }
  for (double e : q.epig) {
    EXPECT_NEAR(e, 0.0, 1e-12);
  }
}

TEST(OracleInfo, DeterministicHypotheses) {
  GridWorld w;
  w.vocabulary = {{0.0}, {1.0}};
  w.classes = 3;
  w.tables = {{{1, 0, 0}, {0, 1, 0}}, {{0, 1, 0}, {0, 1, 0}}, {{0, 0, 1}, {1, 0, 0}}};
  w.prior_log_weights = {std::log(0.5), std::log(0.3), std::log(0.2)};
  const auto q = oracle_info_quantities(w, w.vocabulary);
  const double prior_entropy = -(0.5 * std::log(0.5) + 0.3 * std::log(0.3) + 0.2 * std::log(0.2));
  EXPECT_NEAR(q.joint_entropy, prior_entropy, 1e-12);
}

TEST(Fixture, RoundTripAndValidation) {
  const auto w = random_world(4, 3, 5, RngStream(6, 6));
  const auto path = obikit::testing::temp_path("world.json");
  save_world(w, path);
  const auto back = load_world(path);
  EXPECT_EQ(back.tables, w.tables);
  EXPECT_EQ(back.prior_log_weights, w.prior_log_weights);
  EXPECT_EQ(back.vocabulary, w.vocabulary);
  auto bad = to_json(w);
  bad["tables"][0][0][0] = 5.0;
  EXPECT_THROW((void)from_json(bad), ValidationError);
  EXPECT_THROW((void)from_json(nlohmann::json::object()), ValidationError);
}

TEST(WorldFromEnsemble, ReproducesMainPathQuantities) {
  const auto w = random_world(6, 3, 4, RngStream(2, 9));
  const auto [fam, prior] = to_family(w);
  std::vector<std::size_t> ids{0, 1, 2, 3, 4, 5};
  const PosteriorEnsemble e(fam, ids, prior);
  const std::vector<std::vector<double>> xs{w.vocabulary[0], w.vocabulary[2], w.vocabulary[0]};
  const auto snap = world_from_ensemble(e, xs);
  EXPECT_EQ(snap.vocabulary.size(), 2U);
  const auto q = oracle_info_quantities(snap, xs);
  EXPECT_NEAR(q.joint_entropy, joint_entropy_exact(e, xs), 1e-12);
}

}  // namespace
}  // namespace obikit::oracle
