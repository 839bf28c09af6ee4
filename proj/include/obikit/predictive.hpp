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

#ifndef OBIKIT_PREDICTIVE_HPP
#define OBIKIT_PREDICTIVE_HPP

#include <cmath>
#include <span>
#include <vector>

#include "obikit/error.hpp"
#include "obikit/models.hpp"
#include "obikit/numerics.hpp"

/**
 * \file
 * \brief Marginal and joint predictives of a parameter ensemble.
 *
 * Joint predictives use a shared parameter draw for all points:
 * q(y_1..y_n | x_1..x_n) = sum_j w_j prod_i p(y_i | x_i, omega_j).
 * Most functions come in two flavours: one on an ensemble, and one on
 * (log-weights, precomputed LogProbTensor) for callers that evaluate many
 * quantities on the same inputs.
 */

namespace obikit {

inline constexpr std::size_t kDefaultEnumerationLimit = 1'000'000;

/// Normalized categorical distribution over C classes in log space.
class CategoricalLogDist {
 public:
  CategoricalLogDist() = default;
  explicit CategoricalLogDist(std::vector<double> log_probs) : log_probs_(std::move(log_probs)) {
    if (log_probs_.empty() || std::abs(log_sum_exp(log_probs_)) > 1e-9) {
      throw NumericalError("categorical distribution is not normalized");
    }
  }

  [[nodiscard]] std::size_t size() const noexcept { return log_probs_.size(); }
  [[nodiscard]] double operator[](std::size_t c) const { return log_probs_.at(c); }
  [[nodiscard]] std::span<const double> log_probs() const noexcept { return log_probs_; }
  [[nodiscard]] double prob(std::size_t c) const { return std::exp(log_probs_.at(c)); }
  [[nodiscard]] double entropy() const { return categorical_entropy(log_probs_); }

  /// Most probable class; ties go to the lowest index.
  [[nodiscard]] std::size_t argmax() const {
    std::size_t best = 0;
    for (std::size_t c = 1; c < log_probs_.size(); ++c) {
      if (log_probs_[c] > log_probs_[best]) {
        best = c;
      }
    }
    return best;
  }

 private:
  std::vector<double> log_probs_;
};

/// Class indices aligned with a list of inputs.
using LabelAssignment = std::vector<std::size_t>;

/// Number of label assignments C^n, saturated at limit + 1.
inline std::size_t assignment_count(std::size_t classes, std::size_t n, std::size_t limit) {
  std::size_t count = 1;
  for (std::size_t i = 0; i < n; ++i) {
    if (count > limit / classes) {
      return limit + 1;
    }
    count *= classes;
  }
  return count;
}

/// log sum_j exp(log_w_j + L[j, i, c]) for every class c.
inline std::vector<double> mixture_log_probs(std::span<const double> log_weights, const LogProbTensor& lp, std::size_t i) {
  const std::size_t s = lp.samples();
  std::vector<double> out(lp.classes());
  std::vector<double> terms(s);
  for (std::size_t c = 0; c < lp.classes(); ++c) {
    for (std::size_t j = 0; j < s; ++j) {
      terms[j] = log_weights[j] + lp.at(j, i, c);
    }
    out[c] = log_sum_exp(terms);
  }
  return out;
}

inline CategoricalLogDist marginal_predictive(const PosteriorEnsemble& ensemble, std::span<const double> x) {
  const std::vector<std::vector<double>> xs{std::vector<double>(x.begin(), x.end())};
  const auto lp = forward_log_probs(ensemble, xs);
  return CategoricalLogDist(mixture_log_probs(ensemble.log_weights(), lp, 0));
}

/// ln q(ys | points 0..n-1 of `lp`) for normalized `log_weights`.
inline double joint_log_prob(std::span<const double> log_weights, const LogProbTensor& lp, std::span<const std::size_t> ys) {
  if (ys.empty() || ys.size() != lp.points()) {
    throw ValidationError("assignment length must equal the number of points (>= 1)");
  }
  std::vector<double> terms(lp.samples());
  for (std::size_t j = 0; j < lp.samples(); ++j) {
    double t = log_weights[j];
    for (std::size_t i = 0; i < ys.size(); ++i) {
      if (ys[i] >= lp.classes()) {
        throw ValidationError("label out of range");
      }
      t += lp.at(j, i, ys[i]);
    }
    terms[j] = t;
  }
  return log_sum_exp(terms);
}

inline double joint_log_prob(const PosteriorEnsemble& ensemble, std::span<const std::vector<double>> xs,
                             std::span<const std::size_t> assignment) {
  if (xs.size() != assignment.size()) {
    throw ValidationError("assignment length must equal the number of points (>= 1)");
  }
  return joint_log_prob(ensemble.log_weights(), forward_log_probs(ensemble, xs), assignment);
}

/**
 * Calls `visit(ys, per_sample, log_q)` for each of the C^n label assignments of
 * the points in `lp`, in lexicographic order. `per_sample[j]` is
 * log_w_j + sum_i L[j, i, y_i]; `log_q` is its log-sum-exp.
 */
template <class Visitor>
void for_each_assignment(std::span<const double> log_weights, const LogProbTensor& lp, std::size_t limit, Visitor&& visit) {
  const std::size_t n = lp.points();
  const std::size_t s = lp.samples();
  const std::size_t c = lp.classes();
  if (assignment_count(c, n, limit) > limit) {
    throw ValidationError("enumeration limit exceeded; use joint_entropy_mc");
  }
  // partial[l * s + j]: log-weight plus the log-likelihood of the first l labels.
  std::vector<double> partial((n + 1) * s);
  std::copy(log_weights.begin(), log_weights.end(), partial.begin());
  LabelAssignment ys(n, 0);
  std::size_t level = 0;
  while (true) {
    for (; level < n; ++level) {
      const double* prev = &partial[level * s];
      double* next = &partial[(level + 1) * s];
      for (std::size_t j = 0; j < s; ++j) {
        next[j] = prev[j] + lp.at(j, level, ys[level]);
      }
    }
    const std::span<const double> leaf(&partial[n * s], s);
    visit(std::span<const std::size_t>(ys), leaf, log_sum_exp(leaf));
    // Advance the odometer from the last position.
    std::size_t pos = n;
    while (pos > 0) {
      --pos;
      if (++ys[pos] < c) {
        break;
      }
      ys[pos] = 0;
      if (pos == 0) {
        return;
      }
    }
    if (n == 0) {
      return;
    }
    level = pos;
  }
}

/// H[Y_1..Y_n | x_1..x_n] by exhaustive enumeration; zero-probability terms contribute 0.
inline double joint_entropy_exact(std::span<const double> log_weights, const LogProbTensor& lp,
                                  std::size_t limit = kDefaultEnumerationLimit) {
  double h = 0.0;
  for_each_assignment(log_weights, lp, limit, [&](std::span<const std::size_t>, std::span<const double>, double log_q) {
    if (log_q > kNegInf) {
      h -= std::exp(log_q) * log_q;
    }
  });
  return h;
}

inline double joint_entropy_exact(const PosteriorEnsemble& ensemble, std::span<const std::vector<double>> xs,
                                  std::size_t limit = kDefaultEnumerationLimit) {
  if (assignment_count(ensemble.num_classes(), xs.size(), limit) > limit) {
    throw ValidationError("enumeration limit exceeded; use joint_entropy_mc");
  }
  return joint_entropy_exact(ensemble.log_weights(), forward_log_probs(ensemble, xs), limit);
}

struct Estimate {
  double mean = 0.0;
  double standard_error = 0.0;
};

/**
 * Plug-in Monte Carlo joint entropy: draw omega_j ~ w, then y_i ~ p(. | x_i,
 * omega_j); score each draw with the full-ensemble joint. Returns the mean of
 * -ln q and its standard error.
 */
inline Estimate joint_entropy_mc(std::span<const double> log_weights, const LogProbTensor& lp, std::size_t draws,
                                 RngStream rng) {
  if (draws == 0) {
    throw ValidationError("Monte Carlo estimate needs M >= 1");
  }
  const auto w = normalized_weights(log_weights);
  const std::size_t n = lp.points();
  LabelAssignment ys(n);
  std::vector<double> probs(lp.classes());
  double sum = 0.0;
  double sum_sq = 0.0;
  for (std::size_t m = 0; m < draws; ++m) {
    const std::size_t j = rng.categorical(w);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < lp.classes(); ++c) {
        probs[c] = std::exp(lp.at(j, i, c));
      }
      ys[i] = rng.categorical(probs);
    }
    const double v = -joint_log_prob(log_weights, lp, ys);
    sum += v;
    sum_sq += v * v;
  }
  const double mean = sum / static_cast<double>(draws);
  const double var = draws > 1 ? std::max(0.0, (sum_sq - sum * mean) / static_cast<double>(draws - 1)) : 0.0;
  return {mean, std::sqrt(var / static_cast<double>(draws))};
}

inline Estimate joint_entropy_mc(const PosteriorEnsemble& ensemble, std::span<const std::vector<double>> xs,
                                 std::size_t draws, RngStream rng) {
  return joint_entropy_mc(ensemble.log_weights(), forward_log_probs(ensemble, xs), draws, rng);
}

/// sum_i H[Y_i | x_i] of the marginal predictives of all points in `lp`.
inline double sum_marginal_entropies(std::span<const double> log_weights, const LogProbTensor& lp) {
  double h = 0.0;
  for (std::size_t i = 0; i < lp.points(); ++i) {
    h += categorical_entropy(mixture_log_probs(log_weights, lp, i));
  }
  return h;
}

/// E_omega H[Y_i | x_i, omega] for point i.
inline double expected_conditional_entropy(std::span<const double> log_weights, const LogProbTensor& lp, std::size_t i) {
  double h = 0.0;
  for (std::size_t j = 0; j < lp.samples(); ++j) {
    if (log_weights[j] > kNegInf) {
      h += std::exp(log_weights[j]) * categorical_entropy(lp.row(j, i));
    }
  }
  return h;
}

}  // namespace obikit

#endif  // OBIKIT_PREDICTIVE_HPP
