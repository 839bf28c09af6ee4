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

#ifndef OBIKIT_ACQUISITION_HPP
#define OBIKIT_ACQUISITION_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "obikit/data.hpp"
#include "obikit/error.hpp"
#include "obikit/infometrics.hpp"
#include "obikit/models.hpp"
#include "obikit/numerics.hpp"
#include "obikit/predictive.hpp"

/**
 * \file
 * \brief Acquisition functions over a pool and the sequential acquisition loop.
 *
 * Scores are information-theoretic quantities in nats computed from the
 * ensemble's joint predictive. Selection is greedy with ties broken towards
 * the lowest pool index, which keeps every campaign reproducible.
 */

namespace obikit {

enum class Strategy { kRandom, kBald, kBatchBald, kEpig, kActiveSampling };

inline std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::kRandom:
      return "random";
    case Strategy::kBald:
      return "bald";
    case Strategy::kBatchBald:
      return "batch_bald";
    case Strategy::kEpig:
      return "epig";
    case Strategy::kActiveSampling:
      return "active_sampling";
  }
  return "unknown";
}

inline Strategy parse_strategy(const std::string& name) {
  for (auto s : {Strategy::kRandom, Strategy::kBald, Strategy::kBatchBald, Strategy::kEpig, Strategy::kActiveSampling}) {
    if (to_string(s) == name) {
      return s;
    }
  }
  throw ValidationError("unknown strategy '" + name + "'");
}

struct AcquisitionStep {
  std::size_t pool_index = 0;
  std::size_t original_index = 0;
  std::vector<double> x;
  std::size_t y = 0;
  double score = 0.0;
  std::string strategy;
};

/// Acquired points in acquisition order.
struct AcquisitionSequence {
  std::vector<AcquisitionStep> steps;
  std::uint64_t origin = 0;
  std::uint64_t seed = 0;

  [[nodiscard]] std::vector<LabeledExample> examples() const {
    std::vector<LabeledExample> out;
    out.reserve(steps.size());
    for (const auto& s : steps) {
      out.push_back({s.x, s.y});
    }
    return out;
  }
};

/// Pool indices of a batch with the greedy (incremental) score of each pick.
struct CandidateBatch {
  std::vector<std::size_t> indices;
  std::vector<double> scores;
};

struct JointEstimatorOptions {
  std::size_t enumeration_limit = kDefaultEnumerationLimit;
  /// Label configurations sampled when enumeration is infeasible; 0 disables Monte Carlo.
  std::size_t mc_draws = 1024;
};

// ---------------------------------------------------------------------------
// BALD

/// I[Omega; Y | x_i] = H[Y | x_i] - E_omega H[Y | x_i, omega] for every point of `lp`.
inline std::vector<double> bald_scores(std::span<const double> log_weights, const LogProbTensor& lp) {
  std::vector<double> out(lp.points());
  for (std::size_t i = 0; i < lp.points(); ++i) {
    out[i] = categorical_entropy(mixture_log_probs(log_weights, lp, i)) -
             expected_conditional_entropy(log_weights, lp, i);
  }
  return out;
}

inline double bald_score(const PosteriorEnsemble& ensemble, std::span<const double> x) {
  const std::vector<std::vector<double>> xs{std::vector<double>(x.begin(), x.end())};
  return bald_scores(ensemble.log_weights(), forward_log_probs(ensemble, xs)).front();
}

namespace detail {

/// Rows of exp(L) for fast linear-space mixtures: p[(j * N + i) * C + c].
inline std::vector<double> exp_tensor(const LogProbTensor& lp) {
  std::vector<double> out(lp.samples() * lp.points() * lp.classes());
  std::size_t k = 0;
  for (std::size_t j = 0; j < lp.samples(); ++j) {
    for (std::size_t i = 0; i < lp.points(); ++i) {
      for (std::size_t c = 0; c < lp.classes(); ++c) {
        out[k++] = std::exp(lp.at(j, i, c));
      }
    }
  }
  return out;
}

/**
 * Label configurations of a set of points, each stored as scaled per-sample
 * masses u[j] = w_j prod_i p(y_i | x_i, omega_j) * exp(-shift) and a
 * coefficient turning sums over configurations into expectations.
 *
 * Exact mode enumerates all C^b configurations (coefficient 1). Monte Carlo
 * mode draws M configurations from the joint predictive and uses coefficient
 * 1 / (M q(config)), the importance weight of the standard batch estimator.
 */
struct ConfigurationTable {
  std::size_t samples = 0;
  std::vector<double> mass;        // configs x S
  std::vector<double> log_shift;   // per config
  std::vector<double> coefficient; // per config
  bool exact = true;

  [[nodiscard]] std::size_t size() const { return log_shift.size(); }
  [[nodiscard]] std::span<const double> row(std::size_t k) const { return {mass.data() + k * samples, samples}; }
};

inline void push_config(ConfigurationTable& t, std::span<const double> log_terms, double coefficient) {
  double shift = kNegInf;
  for (double v : log_terms) {
    shift = std::max(shift, v);
  }
  if (shift == kNegInf) {
    return;  // zero-probability configuration
  }
  for (double v : log_terms) {
    t.mass.push_back(std::exp(v - shift));
  }
  t.log_shift.push_back(shift);
  t.coefficient.push_back(coefficient);
}

/// Configurations of points `chosen`; `extra_factor` multiplies the count check
/// so that callers can reserve room for one more point.
inline ConfigurationTable build_configurations(std::span<const double> log_weights, const LogProbTensor& lp,
                                               std::span<const std::size_t> chosen, std::size_t extra_factor,
                                               const JointEstimatorOptions& options, RngStream rng) {
  ConfigurationTable t;
  t.samples = lp.samples();
  const std::size_t c = lp.classes();
  const auto count = assignment_count(c, chosen.size(), options.enumeration_limit);
  const bool exact = count <= options.enumeration_limit / std::max<std::size_t>(extra_factor, 1);
  const auto sub = lp.select_points(chosen);
  if (exact) {
    for_each_assignment(log_weights, sub, options.enumeration_limit,
                        [&](std::span<const std::size_t>, std::span<const double> per_sample, double) {
                          push_config(t, per_sample, 1.0);
                        });
    return t;
  }
  if (options.mc_draws == 0) {
    throw ValidationError("joint entropy needs enumeration or Monte Carlo; both unavailable");
  }
  t.exact = false;
  const auto w = normalized_weights(log_weights);
  std::vector<double> probs(c);
  std::vector<double> terms(lp.samples());
  LabelAssignment ys(chosen.size());
  for (std::size_t m = 0; m < options.mc_draws; ++m) {
    const std::size_t j = rng.categorical(w);
    for (std::size_t i = 0; i < chosen.size(); ++i) {
      for (std::size_t k = 0; k < c; ++k) {
        probs[k] = std::exp(sub.at(j, i, k));
      }
      ys[i] = rng.categorical(probs);
    }
    for (std::size_t s = 0; s < lp.samples(); ++s) {
      double v = log_weights[s];
      for (std::size_t i = 0; i < chosen.size(); ++i) {
        v += sub.at(s, i, ys[i]);
      }
      terms[s] = v;
    }
    const double log_q = log_sum_exp(terms);
    push_config(t, terms, std::exp(-log_q) / static_cast<double>(options.mc_draws));
  }
  return t;
}

/// H[Y_chosen, Y_x] from a configuration table of `chosen` and the exp-tensor of the pool.
inline double joint_entropy_with(const ConfigurationTable& t, std::span<const double> p_pool, std::size_t points,
                                 std::size_t classes, std::size_t x) {
  double h = 0.0;
  const std::size_t s = t.samples;
  for (std::size_t k = 0; k < t.size(); ++k) {
    const auto u = t.row(k);
    for (std::size_t c = 0; c < classes; ++c) {
      double r = 0.0;
      for (std::size_t j = 0; j < s; ++j) {
        r += u[j] * p_pool[(j * points + x) * classes + c];
      }
      if (r > 0.0) {
        const double log_r = std::log(r) + t.log_shift[k];
        h -= t.coefficient[k] * std::exp(log_r) * log_r;
      }
    }
  }
  return h;
}

}  // namespace detail

/**
 * Greedy batch BALD: repeatedly adds the point maximizing
 * H[Y_batch, Y_x] - sum_{i in batch + x} E_omega H[Y_i | omega].
 *
 * `pending` are points already in the batch (they count towards the joint but
 * are not returned). Joint entropies are exact when C^(b+1) fits the
 * enumeration limit, otherwise estimated from sampled configurations.
 */
inline CandidateBatch batch_bald_greedy(std::span<const double> log_weights, const LogProbTensor& lp, std::size_t m,
                                        bool allow_reselection, RngStream rng,
                                        std::span<const std::size_t> pending = {},
                                        std::span<const std::size_t> excluded = {},
                                        const JointEstimatorOptions& options = {}) {
  if (m == 0 || lp.points() == 0) {
    throw ValidationError("batch selection needs m >= 1 and a non-empty pool");
  }
  const std::size_t n = lp.points();
  const std::size_t c = lp.classes();
  const auto p_pool = detail::exp_tensor(lp);
  std::vector<double> cond_entropy(n);
  for (std::size_t i = 0; i < n; ++i) {
    cond_entropy[i] = expected_conditional_entropy(log_weights, lp, i);
  }
  std::vector<bool> taken(n, false);
  for (std::size_t i : excluded) {
    taken.at(i) = true;
  }
  std::vector<std::size_t> batch(pending.begin(), pending.end());
  for (std::size_t i : batch) {
    taken.at(i) = true;
  }
  double previous_objective = 0.0;
  if (!batch.empty()) {
    double sum_cond = 0.0;
    for (std::size_t i : batch) {
      sum_cond += cond_entropy[i];
    }
    const auto sub = lp.select_points(batch);
    const bool exact = assignment_count(c, batch.size(), options.enumeration_limit) <= options.enumeration_limit;
    previous_objective = (exact ? joint_entropy_exact(log_weights, sub, options.enumeration_limit)
                                : joint_entropy_mc(log_weights, sub, std::max<std::size_t>(options.mc_draws, 1),
                                                   rng.derive(StreamPurpose::kMonteCarlo, 0))
                                      .mean) -
                         sum_cond;
  }

  CandidateBatch out;
  for (std::size_t step = 0; step < m; ++step) {
    const auto table = detail::build_configurations(log_weights, lp, batch, c, options,
                                                    rng.derive(StreamPurpose::kMonteCarlo, step + 1));
    double sum_cond = 0.0;
    for (std::size_t i : batch) {
      sum_cond += cond_entropy[i];
    }
    std::optional<std::size_t> best;
    double best_objective = kNegInf;
    for (std::size_t x = 0; x < n; ++x) {
      if (taken[x] && !allow_reselection) {
        continue;
      }
      const double objective = detail::joint_entropy_with(table, p_pool, n, c, x) - sum_cond - cond_entropy[x];
      if (!best || objective > best_objective) {
        best = x;
        best_objective = objective;
      }
    }
    if (!best) {
      throw ValidationError("pool exhausted without reselection");
    }
    out.indices.push_back(*best);
    out.scores.push_back(best_objective - previous_objective);
    previous_objective = best_objective;
    batch.push_back(*best);
    taken[*best] = true;
  }
  return out;
}

inline CandidateBatch batch_bald_greedy(const PosteriorEnsemble& ensemble, const Dataset& pool, std::size_t m,
                                        bool allow_reselection, RngStream rng, const JointEstimatorOptions& options = {}) {
  if (pool.empty()) {
    throw ValidationError("batch selection needs m >= 1 and a non-empty pool");
  }
  return batch_bald_greedy(ensemble.log_weights(), forward_log_probs(ensemble, pool), m, allow_reselection, rng, {}, {},
                           options);
}

/// The m highest marginal BALD scores (distinct pool indices, lowest index on ties).
inline CandidateBatch top_k_bald(std::span<const double> log_weights, const LogProbTensor& lp, std::size_t m,
                                 std::span<const std::size_t> excluded = {}) {
  const auto scores = bald_scores(log_weights, lp);
  std::vector<bool> taken(scores.size(), false);
  for (std::size_t i : excluded) {
    taken.at(i) = true;
  }
  CandidateBatch out;
  for (std::size_t step = 0; step < m; ++step) {
    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (!taken[i] && (!best || scores[i] > scores[*best])) {
        best = i;
      }
    }
    if (!best) {
      throw ValidationError("pool exhausted without reselection");
    }
    taken[*best] = true;
    out.indices.push_back(*best);
    out.scores.push_back(scores[*best]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// EPIG

/**
 * EPIG of the joint candidate set (pending + x) for every pool point x:
 * mean over evaluation points of H[Y_e] - E_{y_cand} H[Y_e | y_cand], with the
 * conditional predictive obtained by reweighting the samples. Entries of
 * `restrict_to`, when given, are the only candidates scored (others are -inf).
 */
inline std::vector<double> epig_scores(std::span<const double> log_weights, const LogProbTensor& pool_lp,
                                       const LogProbTensor& eval_lp, std::span<const std::size_t> pending,
                                       const JointEstimatorOptions& options, RngStream rng,
                                       std::span<const std::size_t> restrict_to = {}) {
  const std::size_t n = pool_lp.points();
  const std::size_t c = pool_lp.classes();
  const std::size_t s = pool_lp.samples();
  const std::size_t e_count = eval_lp.points();
  if (e_count == 0) {
    throw ValidationError("EPIG needs evaluation points");
  }
  const auto p_pool = detail::exp_tensor(pool_lp);
  // Evaluation probabilities laid out sample-minor: p_eval[(e * C + y) * S + j].
  std::vector<double> p_eval(e_count * c * s);
  for (std::size_t j = 0; j < s; ++j) {
    for (std::size_t e = 0; e < e_count; ++e) {
      for (std::size_t y = 0; y < c; ++y) {
        p_eval[(e * c + y) * s + j] = std::exp(eval_lp.at(j, e, y));
      }
    }
  }
  std::vector<double> eval_entropy(e_count);
  for (std::size_t e = 0; e < e_count; ++e) {
    eval_entropy[e] = categorical_entropy(mixture_log_probs(log_weights, eval_lp, e));
  }
  const auto table = detail::build_configurations(log_weights, pool_lp, pending, c, options, rng);

  std::vector<double> out(n, kNegInf);
  std::vector<double> u(s);
  std::vector<double> r(c);
  auto score_point = [&](std::size_t x) {
    // Expected conditional entropy summed over evaluation points.
    double cond = 0.0;
    for (std::size_t k = 0; k < table.size(); ++k) {
      const auto base = table.row(k);
      for (std::size_t yc = 0; yc < c; ++yc) {
        double q = 0.0;
        for (std::size_t j = 0; j < s; ++j) {
          u[j] = base[j] * p_pool[(j * n + x) * c + yc];
          q += u[j];
        }
        if (q <= 0.0) {
          continue;
        }
        // Probability mass of this configuration, as used by the estimator.
        const double weight = table.coefficient[k] * q * std::exp(table.log_shift[k]);
        for (std::size_t e = 0; e < e_count; ++e) {
          double h = 0.0;
          for (std::size_t ye = 0; ye < c; ++ye) {
            const double* row = p_eval.data() + (e * c + ye) * s;
            double acc = 0.0;
            for (std::size_t j = 0; j < s; ++j) {
              acc += u[j] * row[j];
            }
            r[ye] = acc / q;
            if (r[ye] > 0.0) {
              h -= r[ye] * std::log(r[ye]);
            }
          }
          cond += weight * h;
        }
      }
    }
    double total = 0.0;
    for (double h : eval_entropy) {
      total += h;
    }
    out[x] = (total - cond) / static_cast<double>(e_count);
  };
  if (restrict_to.empty()) {
    for (std::size_t x = 0; x < n; ++x) {
      score_point(x);
    }
  } else {
    for (std::size_t x : restrict_to) {
      score_point(x);
    }
  }
  return out;
}

/// EPIG of a candidate batch with respect to `eval_points`.
inline double epig_score(const PosteriorEnsemble& ensemble, std::span<const std::vector<double>> candidates,
                         std::span<const std::vector<double>> eval_points, const JointEstimatorOptions& options = {},
                         RngStream rng = {}) {
  if (candidates.empty() || eval_points.empty()) {
    throw ValidationError("EPIG needs candidates and evaluation points");
  }
  const auto cand_lp = forward_log_probs(ensemble, candidates);
  const auto eval_lp = forward_log_probs(ensemble, eval_points);
  std::vector<std::size_t> pending(candidates.size() - 1);
  for (std::size_t i = 0; i + 1 < candidates.size(); ++i) {
    pending[i] = i;
  }
  const std::size_t last[1] = {candidates.size() - 1};
  return epig_scores(ensemble.log_weights(), cand_lp, eval_lp, pending, options, rng, last)[last[0]];
}

// ---------------------------------------------------------------------------
// Transductive active sampling

struct ActiveSamplingScore {
  double value = 0.0;
  bool collapsed = false;
};

/**
 * Negative conditioned cross-entropy on labeled evaluation points after
 * reweighting by the (known) candidate labels. Maximizing it maximizes the
 * cross mutual information with the evaluation labels.
 *
 * `extra_log_lik[j]` is added to every sample's weight (the pending labels).
 */
inline std::vector<ActiveSamplingScore> active_sampling_scores(std::span<const double> log_weights,
                                                               std::span<const double> extra_log_lik,
                                                               const LogProbTensor& pool_lp,
                                                               std::span<const LabeledExample> pool,
                                                               const LogProbTensor& eval_lp,
                                                               std::span<const LabeledExample> eval_set) {
  const std::size_t s = pool_lp.samples();
  const std::size_t e_count = eval_lp.points();
  if (e_count == 0 || eval_set.size() != e_count || pool.size() != pool_lp.points()) {
    throw ValidationError("active sampling needs labeled evaluation points matching the tensors");
  }
  // Eval log-likelihood per (sample, eval point) at the true label.
  std::vector<double> eval_ll(s * e_count);
  for (std::size_t j = 0; j < s; ++j) {
    for (std::size_t e = 0; e < e_count; ++e) {
      eval_ll[j * e_count + e] = eval_lp.at(j, e, eval_set[e].y);
    }
  }
  std::vector<ActiveSamplingScore> out(pool.size());
  std::vector<double> w(s);
  std::vector<double> terms(s);
  for (std::size_t x = 0; x < pool.size(); ++x) {
    for (std::size_t j = 0; j < s; ++j) {
      w[j] = log_weights[j] + (extra_log_lik.empty() ? 0.0 : extra_log_lik[j]) + pool_lp.at(j, x, pool[x].y);
    }
    const double z = log_sum_exp(w);
    if (z == kNegInf) {
      out[x] = {kNegInf, true};
      continue;
    }
    for (double& v : w) {
      v -= z;
    }
    double ce = 0.0;
    for (std::size_t e = 0; e < e_count; ++e) {
      for (std::size_t j = 0; j < s; ++j) {
        terms[j] = w[j] + eval_ll[j * e_count + e];
      }
      ce -= log_sum_exp(terms);
    }
    out[x] = {-ce / static_cast<double>(e_count), false};
  }
  return out;
}

/// Score of conditioning on the labeled `candidates` (empty = no conditioning).
inline ActiveSamplingScore active_sampling_score(const PosteriorEnsemble& ensemble,
                                                 std::span<const LabeledExample> candidates,
                                                 std::span<const LabeledExample> eval_set) {
  if (eval_set.empty()) {
    throw ValidationError("active sampling needs evaluation points");
  }
  std::vector<double> w(ensemble.log_weights().begin(), ensemble.log_weights().end());
  for (const auto& cand : candidates) {
    const auto lp = ensemble.sample_log_probs(cand.x);
    for (std::size_t j = 0; j < w.size(); ++j) {
      w[j] += lp[j * ensemble.num_classes() + cand.y];
    }
  }
  if (std::all_of(w.begin(), w.end(), [](double v) { return v == kNegInf; })) {
    return {kNegInf, true};
  }
  std::vector<std::vector<double>> xs;
  for (const auto& e : eval_set) {
    xs.push_back(e.x);
  }
  const auto ce = marginal_cross_entropy(w, forward_log_probs(ensemble, xs), eval_set);
  return {-ce.value, false};
}

// ---------------------------------------------------------------------------
// Acquisition loop

struct AcquisitionConfig {
  Strategy strategy = Strategy::kRandom;
  std::size_t steps = 70;
  std::size_t retrain_every = 1;
  bool allow_reselection = false;
  JointEstimatorOptions joint;
  /// Evaluation points used by EPIG and active sampling; 0 = all.
  std::size_t max_eval_points = 0;
  std::uint64_t origin = 0;
};

/// Trains a fresh ensemble on the given data; the stream seeds the training.
using EnsembleFactory = std::function<PosteriorEnsemble(const Dataset&, RngStream)>;

namespace detail {

inline std::vector<LabeledExample> eval_subset(const Dataset& eval_set, std::size_t max_points, RngStream rng) {
  if (max_points == 0 || max_points >= eval_set.size()) {
    return eval_set.examples();
  }
  auto perm = rng.permutation(eval_set.size());
  perm.resize(max_points);
  std::sort(perm.begin(), perm.end());
  std::vector<LabeledExample> out;
  for (std::size_t i : perm) {
    out.push_back(eval_set[i]);
  }
  return out;
}

/// Argmax over eligible points; strict comparison keeps the lowest index on ties.
inline std::optional<std::size_t> argmax_eligible(std::span<const double> scores, const std::vector<bool>& taken,
                                                  bool allow_reselection) {
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (taken[i] && !allow_reselection) {
      continue;
    }
    if (!best || scores[i] > scores[*best]) {
      best = i;
    }
  }
  return best;
}

}  // namespace detail

/**
 * Runs a sequential acquisition campaign over `pool`.
 *
 * Every `retrain_every` acquisitions the ensemble is rebuilt by `factory` on
 * `initial_train` plus everything acquired so far (stream
 * rng.derive(kRetrain, t)). Between retrains the points acquired since the
 * last retrain form a pending batch that joint strategies condition on;
 * marginal BALD ignores it.
 */
inline AcquisitionSequence run_acquisition(const AcquisitionConfig& cfg, const EnsembleFactory& factory,
                                           const Dataset& initial_train, const Dataset& pool, const Dataset& eval_set,
                                           RngStream rng) {
  if (cfg.retrain_every == 0) {
    throw ValidationError("retrain_every must be >= 1");
  }
  if (pool.empty()) {
    throw ValidationError("acquisition needs a non-empty pool");
  }
  if (!cfg.allow_reselection && cfg.steps > pool.size()) {
    throw ValidationError("pool exhausted without reselection");
  }
  AcquisitionSequence seq;
  seq.origin = cfg.origin;
  seq.seed = rng.seed();
  const auto tag = to_string(cfg.strategy);
  std::vector<bool> taken(pool.size(), false);
  std::vector<LabeledExample> acquired;
  std::vector<std::size_t> pending;

  auto record = [&](std::size_t index, double score) {
    const auto& e = pool[index];
    seq.steps.push_back({index, pool.original_index(index), e.x, e.y, score, tag});
    acquired.push_back(e);
    pending.push_back(index);
    taken[index] = true;
  };

  if (cfg.strategy == Strategy::kRandom) {
    auto select_rng = rng.derive(StreamPurpose::kSelection);
    const auto perm = select_rng.permutation(pool.size());
    for (std::size_t t = 0; t < cfg.steps; ++t) {
      record(cfg.allow_reselection ? static_cast<std::size_t>(select_rng.uniform_index(pool.size())) : perm[t], 0.0);
    }
    return seq;
  }

  const auto eval_points =
      detail::eval_subset(eval_set, cfg.max_eval_points, rng.derive(StreamPurpose::kSelection, 0));
  std::vector<std::vector<double>> eval_xs;
  for (const auto& e : eval_points) {
    eval_xs.push_back(e.x);
  }
  PosteriorEnsemble ensemble;
  LogProbTensor pool_lp;
  LogProbTensor eval_lp;
  for (std::size_t t = 0; t < cfg.steps; ++t) {
    if (t % cfg.retrain_every == 0) {
      ensemble = factory(initial_train.concat(acquired), rng.derive(StreamPurpose::kRetrain, t));
      pool_lp = forward_log_probs(ensemble, pool);
      if (cfg.strategy == Strategy::kEpig || cfg.strategy == Strategy::kActiveSampling) {
        eval_lp = forward_log_probs(ensemble, eval_xs);
      }
      pending.clear();
    }
    const auto w = ensemble.log_weights();
    std::vector<double> scores;
    switch (cfg.strategy) {
      case Strategy::kBald:
        scores = bald_scores(w, pool_lp);
        break;
      case Strategy::kBatchBald: {
        std::vector<std::size_t> excluded;
        if (!cfg.allow_reselection) {
          for (std::size_t i = 0; i < taken.size(); ++i) {
            if (taken[i]) {
              excluded.push_back(i);
            }
          }
        }
        // Pending points are part of the batch; previously acquired ones are excluded.
        const auto pick = batch_bald_greedy(w, pool_lp, 1, cfg.allow_reselection,
                                            rng.derive(StreamPurpose::kMonteCarlo, t), pending, excluded, cfg.joint);
        record(pick.indices.front(), pick.scores.front());
        continue;
      }
      case Strategy::kEpig:
        scores = epig_scores(w, pool_lp, eval_lp, pending, cfg.joint, rng.derive(StreamPurpose::kMonteCarlo, t));
        break;
      case Strategy::kActiveSampling: {
        std::vector<double> extra(ensemble.size(), 0.0);
        for (std::size_t p : pending) {
          for (std::size_t j = 0; j < extra.size(); ++j) {
            extra[j] += pool_lp.at(j, p, pool[p].y);
          }
        }
        const auto s = active_sampling_scores(w, extra, pool_lp, pool.examples(), eval_lp, eval_points);
        for (const auto& v : s) {
          scores.push_back(v.value);
        }
        break;
      }
      case Strategy::kRandom:
        break;
    }
    const auto best = detail::argmax_eligible(scores, taken, cfg.allow_reselection);
    if (!best) {
      throw ValidationError("pool exhausted without reselection");
    }
    record(*best, scores[*best]);
  }
  return seq;
}

// ---------------------------------------------------------------------------
// Serialization: CSV (step, pool_index, original_index, y, score, strategy, seed)
// plus a JSON sidecar holding the inputs and origin.

inline void write_sequence(const AcquisitionSequence& seq, const std::string& csv_path) {
  std::ofstream csv(csv_path);
  if (!csv) {
    throw IoError("cannot write " + csv_path);
  }
  csv << "step,pool_index,original_index,y,score,strategy,seed\n";
  nlohmann::json inputs = nlohmann::json::array();
  for (std::size_t t = 0; t < seq.steps.size(); ++t) {
    const auto& s = seq.steps[t];
    csv << t << ',' << s.pool_index << ',' << s.original_index << ',' << s.y << ',' << format_double(s.score) << ','
        << s.strategy << ',' << seq.seed << '\n';
    inputs.push_back(s.x);
  }
  std::ofstream side(csv_path + ".json");
  if (!side) {
    throw IoError("cannot write " + csv_path + ".json");
  }
  side << nlohmann::json{{"origin", seq.origin}, {"seed", seq.seed}, {"inputs", std::move(inputs)}}.dump(1) << '\n';
}

inline AcquisitionSequence read_sequence(const std::string& csv_path) {
  std::ifstream csv(csv_path);
  std::ifstream side(csv_path + ".json");
  if (!csv || !side) {
    throw IoError("cannot open " + csv_path + " and its .json sidecar");
  }
  const auto meta = nlohmann::json::parse(side);
  AcquisitionSequence seq;
  seq.origin = meta.at("origin").get<std::uint64_t>();
  seq.seed = meta.at("seed").get<std::uint64_t>();
  const auto& inputs = meta.at("inputs");
  std::string line;
  std::getline(csv, line);
  if (line != "step,pool_index,original_index,y,score,strategy,seed") {
    throw ValidationError("unexpected acquisition CSV header in " + csv_path);
  }
  while (std::getline(csv, line)) {
    if (line.empty()) {
      continue;
    }
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) {
      cells.push_back(cell);
    }
    if (cells.size() != 7) {
      throw ValidationError("malformed acquisition row in " + csv_path);
    }
    const std::size_t t = std::stoul(cells[0]);
    AcquisitionStep s;
    s.pool_index = std::stoul(cells[1]);
    s.original_index = std::stoul(cells[2]);
    s.y = std::stoul(cells[3]);
    s.score = std::stod(cells[4]);
    s.strategy = cells[5];
    s.x = inputs.at(t).get<std::vector<double>>();
    seq.steps.push_back(std::move(s));
  }
  return seq;
}

}  // namespace obikit

#endif  // OBIKIT_ACQUISITION_HPP
