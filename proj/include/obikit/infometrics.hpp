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

#ifndef OBIKIT_INFOMETRICS_HPP
#define OBIKIT_INFOMETRICS_HPP

#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "obikit/data.hpp"
#include "obikit/error.hpp"
#include "obikit/models.hpp"
#include "obikit/numerics.hpp"
#include "obikit/predictive.hpp"

/**
 * \file
 * \brief Evaluation quantities in nats: marginal and joint cross-entropies,
 * online learning loss, cross-entropy rate, total correlation and accuracy.
 */

namespace obikit {

/// One named scalar with its experiment coordinates. `value` is finite unless
/// `flag` explains why not (e.g. "inf" for an impossible prediction).
struct MetricRecord {
  std::string metric;
  std::string name;
  double value = 0.0;
  std::size_t trial = 0;
  std::size_t sub_trial = 0;
  std::size_t step = 0;
  std::size_t n = 0;
  std::string strategy;
  std::string branch;
  std::string flag;

  friend bool operator==(const MetricRecord& a, const MetricRecord& b) {
    const bool same_value = a.value == b.value || (std::isnan(a.value) && std::isnan(b.value));
    return same_value && a.metric == b.metric && a.name == b.name && a.trial == b.trial && a.sub_trial == b.sub_trial &&
           a.step == b.step && a.n == b.n && a.strategy == b.strategy && a.branch == b.branch && a.flag == b.flag;
  }
};

using PredictFn = std::function<CategoricalLogDist(std::span<const double>)>;

/// A cross-entropy that may be +inf when some label had zero predicted mass.
struct CrossEntropy {
  double value = 0.0;
  bool infinite = false;
};

/// Mean of -ln q(y | x) over `eval_set`.
inline CrossEntropy marginal_cross_entropy(const PredictFn& predict, const Dataset& eval_set) {
  if (eval_set.empty()) {
    throw ValidationError("cross-entropy over an empty evaluation set");
  }
  double sum = 0.0;
  for (const auto& e : eval_set.examples()) {
    const double lp = predict(e.x)[e.y];
    if (lp == kNegInf) {
      return {kInf, true};
    }
    sum -= lp;
  }
  return {sum / static_cast<double>(eval_set.size()), false};
}

/// Same, for an ensemble weighting over a precomputed tensor of the evaluation inputs.
inline CrossEntropy marginal_cross_entropy(std::span<const double> log_weights, const LogProbTensor& lp,
                                           std::span<const LabeledExample> eval_set) {
  if (eval_set.empty() || eval_set.size() != lp.points()) {
    throw ValidationError("evaluation set does not match the tensor");
  }
  const auto w = normalize_log_weights(log_weights).log_weights;
  std::vector<double> terms(lp.samples());
  double sum = 0.0;
  for (std::size_t i = 0; i < eval_set.size(); ++i) {
    const std::size_t y = eval_set[i].y;
    for (std::size_t j = 0; j < lp.samples(); ++j) {
      terms[j] = w[j] + lp.at(j, i, y);
    }
    const double l = log_sum_exp(terms);
    if (l == kNegInf) {
      return {kInf, true};
    }
    sum -= l;
  }
  return {sum / static_cast<double>(eval_set.size()), false};
}

/// Fraction of examples whose argmax prediction (lowest index on ties) equals the label.
inline double accuracy(const PredictFn& predict, const Dataset& eval_set) {
  if (eval_set.empty()) {
    throw ValidationError("accuracy over an empty evaluation set");
  }
  std::size_t hits = 0;
  for (const auto& e : eval_set.examples()) {
    hits += predict(e.x).argmax() == e.y ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(eval_set.size());
}

inline double accuracy(std::span<const double> log_weights, const LogProbTensor& lp,
                       std::span<const LabeledExample> eval_set) {
  if (eval_set.empty() || eval_set.size() != lp.points()) {
    throw ValidationError("evaluation set does not match the tensor");
  }
  const auto w = normalize_log_weights(log_weights).log_weights;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < eval_set.size(); ++i) {
    const auto probs = mixture_log_probs(w, lp, i);
    std::size_t best = 0;
    for (std::size_t c = 1; c < probs.size(); ++c) {
      if (probs[c] > probs[best]) {
        best = c;
      }
    }
    hits += best == eval_set[i].y ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(eval_set.size());
}

struct SequenceCrossEntropy {
  double total = 0.0;
  /// per_step[i] = -ln q(y_i | x_i, D_<i).
  std::vector<double> per_step;
  /// Index after which every sample had zero weight; per_step stops there.
  std::optional<std::size_t> collapse_position;
};

/// Chain-rule decomposition of the joint cross-entropy along points 0..n-1 of `lp`.
inline SequenceCrossEntropy joint_cross_entropy_sequence(std::span<const double> log_weights, const LogProbTensor& lp,
                                                         std::span<const std::size_t> labels) {
  if (labels.empty() || labels.size() != lp.points()) {
    throw ValidationError("sequence must be non-empty and match the tensor");
  }
  SequenceCrossEntropy out;
  std::vector<double> w = normalize_log_weights(log_weights).log_weights;
  std::vector<double> terms(lp.samples());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto pred = mixture_log_probs(w, lp, i);
    const double loss = -pred[labels[i]];
    out.per_step.push_back(loss);
    out.total += loss;
    for (std::size_t j = 0; j < w.size(); ++j) {
      terms[j] = w[j] + lp.at(j, i, labels[i]);
    }
    if (log_sum_exp(terms) == kNegInf) {
      out.total = kInf;
      out.collapse_position = i;
      return out;
    }
    w = normalize_log_weights(terms).log_weights;
  }
  return out;
}

inline SequenceCrossEntropy joint_cross_entropy_sequence(const PosteriorEnsemble& ensemble,
                                                         std::span<const LabeledExample> sequence) {
  if (sequence.empty()) {
    throw ValidationError("sequence must be non-empty");
  }
  std::vector<std::vector<double>> xs;
  LabelAssignment ys;
  for (const auto& e : sequence) {
    xs.push_back(e.x);
    ys.push_back(e.y);
  }
  return joint_cross_entropy_sequence(ensemble.log_weights(), forward_log_probs(ensemble, xs), ys);
}

namespace detail {

inline double sequence_total(std::span<const double> log_weights, const LogProbTensor& all,
                             std::span<const std::size_t> picks, std::span<const LabeledExample> data) {
  const auto lp = all.select_points(picks);
  LabelAssignment ys;
  ys.reserve(picks.size());
  for (std::size_t p : picks) {
    ys.push_back(data[p].y);
  }
  return joint_cross_entropy_sequence(log_weights, lp, ys).total;
}

inline Estimate mean_and_se(std::span<const double> values) {
  double sum = 0.0;
  for (double v : values) {
    sum += v;
  }
  const double mean = sum / static_cast<double>(values.size());
  if (values.size() < 2 || !std::isfinite(mean)) {
    return {mean, 0.0};
  }
  double ss = 0.0;
  for (double v : values) {
    ss += (v - mean) * (v - mean);
  }
  return {mean, std::sqrt(ss / static_cast<double>(values.size() - 1) / static_cast<double>(values.size()))};
}

}  // namespace detail

/**
 * OLL(n): expected joint cross-entropy of n examples drawn iid (uniformly with
 * replacement) from the empirical distribution `data`, over `trials` draws.
 */
inline Estimate online_learning_loss(const PosteriorEnsemble& ensemble, const Dataset& data, std::size_t n,
                                     std::size_t trials, RngStream rng) {
  if (n == 0 || trials == 0 || data.empty()) {
    throw ValidationError("OLL needs n >= 1, trials >= 1 and data");
  }
  const auto all = forward_log_probs(ensemble, data);
  std::vector<double> totals;
  std::vector<std::size_t> picks(n);
  for (std::size_t t = 0; t < trials; ++t) {
    for (auto& p : picks) {
      p = static_cast<std::size_t>(rng.uniform_index(data.size()));
    }
    totals.push_back(detail::sequence_total(ensemble.log_weights(), all, picks, data.examples()));
  }
  return detail::mean_and_se(totals);
}

/// Exact OLL(n) by enumerating all N^n sequences with weight N^-n.
inline double online_learning_loss_exhaustive(const PosteriorEnsemble& ensemble, const Dataset& data, std::size_t n,
                                              std::size_t limit = kDefaultEnumerationLimit) {
  if (n == 0 || data.empty()) {
    throw ValidationError("OLL needs n >= 1 and data");
  }
  if (assignment_count(data.size(), n, limit) > limit) {
    throw ValidationError("enumeration limit exceeded for exhaustive OLL");
  }
  const auto all = forward_log_probs(ensemble, data);
  std::vector<std::size_t> picks(n, 0);
  double sum = 0.0;
  std::size_t count = 0;
  while (true) {
    sum += detail::sequence_total(ensemble.log_weights(), all, picks, data.examples());
    ++count;
    std::size_t pos = n;
    while (pos > 0 && ++picks[pos - 1] == data.size()) {
      picks[pos - 1] = 0;
      --pos;
    }
    if (pos == 0) {
      break;
    }
  }
  return sum / static_cast<double>(count);
}

/// OLL(n) / n for n = 1..n_max, each with its standard error scaled by 1/n.
inline std::vector<Estimate> cross_entropy_rate_estimate(const PosteriorEnsemble& ensemble, const Dataset& data,
                                                         std::size_t n_max, std::size_t trials, RngStream rng) {
  if (n_max == 0) {
    throw ValidationError("cross-entropy rate needs n_max >= 1");
  }
  std::vector<Estimate> curve;
  for (std::size_t n = 1; n <= n_max; ++n) {
    const auto oll = online_learning_loss(ensemble, data, n, trials, rng.derive(StreamPurpose::kTrial, n));
    const double scale = 1.0 / static_cast<double>(n);
    curve.push_back({oll.mean * scale, oll.standard_error * scale});
  }
  return curve;
}

/// Exact variant of the rate curve for tiny supports.
inline std::vector<double> cross_entropy_rate_exhaustive(const PosteriorEnsemble& ensemble, const Dataset& data,
                                                         std::size_t n_max) {
  std::vector<double> curve;
  for (std::size_t n = 1; n <= n_max; ++n) {
    curve.push_back(online_learning_loss_exhaustive(ensemble, data, n) / static_cast<double>(n));
  }
  return curve;
}

/// sum_i H[Y_i | x_i] - H[Y_1..Y_n | x_1..x_n], by exact enumeration.
inline double total_correlation(std::span<const double> log_weights, const LogProbTensor& lp,
                                std::size_t limit = kDefaultEnumerationLimit) {
  // One point, or one parameter sample: the joint factorizes exactly.
  if (lp.points() <= 1 || lp.samples() == 1) {
    return 0.0;
  }
  return sum_marginal_entropies(log_weights, lp) - joint_entropy_exact(log_weights, lp, limit);
}

inline double total_correlation(const PosteriorEnsemble& ensemble, std::span<const std::vector<double>> xs,
                                std::size_t limit = kDefaultEnumerationLimit) {
  if (xs.size() <= 1) {
    return 0.0;
  }
  return total_correlation(ensemble.log_weights(), forward_log_probs(ensemble, xs), limit);
}

/// Total correlation with a Monte Carlo joint entropy, for batches beyond the enumeration limit.
inline Estimate total_correlation_mc(std::span<const double> log_weights, const LogProbTensor& lp, std::size_t draws,
                                     RngStream rng) {
  const auto h = joint_entropy_mc(log_weights, lp, draws, rng);
  return {sum_marginal_entropies(log_weights, lp) - h.mean, h.standard_error};
}

}  // namespace obikit

#endif  // OBIKIT_INFOMETRICS_HPP
