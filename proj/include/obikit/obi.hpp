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

#ifndef OBIKIT_OBI_HPP
#define OBIKIT_OBI_HPP

#include <algorithm>
#include <memory>
#include <span>
#include <vector>

#include "obikit/data.hpp"
#include "obikit/error.hpp"
#include "obikit/models.hpp"
#include "obikit/numerics.hpp"
#include "obikit/predictive.hpp"

/**
 * \file
 * \brief Online Bayesian inference by importance reweighting.
 *
 * Conditioning on observations (x_i, y_i) multiplies the weight of every
 * parameter sample by p(y_i | x_i, omega_j). The base ensemble is never
 * modified; every update returns a new immutable state so that callers can
 * branch from the same point.
 */

namespace obikit {

class ObiState {
 public:
  ObiState(std::shared_ptr<const PosteriorEnsemble> base, std::vector<LabeledExample> observed,
           std::vector<double> cumulative_log_weights)
      : base_(std::move(base)), observed_(std::move(observed)), cumulative_(std::move(cumulative_log_weights)) {
    if (!base_ || cumulative_.size() != base_->size()) {
      throw ValidationError("OBI state weights must match the base ensemble");
    }
    ess_ = effective_sample_size(cumulative_);
  }

  [[nodiscard]] const PosteriorEnsemble& base() const noexcept { return *base_; }
  [[nodiscard]] const std::shared_ptr<const PosteriorEnsemble>& base_ptr() const noexcept { return base_; }
  [[nodiscard]] const std::vector<LabeledExample>& observed() const noexcept { return observed_; }
  [[nodiscard]] std::span<const double> cumulative_log_weights() const noexcept { return cumulative_; }
  [[nodiscard]] double ess() const noexcept { return ess_; }

  /// Normalized log-weights of the implicitly reweighted posterior. With no
  /// observations these are the base weights, bit for bit.
  [[nodiscard]] std::vector<double> normalized_log_weights() const {
    if (observed_.empty()) {
      return cumulative_;
    }
    return normalize_log_weights(cumulative_).log_weights;
  }

  /// The conditioned posterior as an ensemble over the base samples.
  [[nodiscard]] PosteriorEnsemble posterior() const { return base_->reweighted(cumulative_); }

 private:
  std::shared_ptr<const PosteriorEnsemble> base_;
  std::vector<LabeledExample> observed_;
  std::vector<double> cumulative_;
  double ess_ = 0.0;
};

inline ObiState obi_init(std::shared_ptr<const PosteriorEnsemble> ensemble) {
  if (!ensemble) {
    throw ValidationError("OBI needs an ensemble");
  }
  std::vector<double> w(ensemble->log_weights().begin(), ensemble->log_weights().end());
  return {std::move(ensemble), {}, std::move(w)};
}

inline ObiState obi_init(const PosteriorEnsemble& ensemble) {
  return obi_init(std::make_shared<const PosteriorEnsemble>(ensemble));
}

namespace detail {

inline void accumulate_log_likelihood(const PosteriorEnsemble& base, const LabeledExample& e, std::span<double> weights) {
  if (e.y >= base.num_classes()) {
    throw ValidationError("label out of range");
  }
  const auto lp = base.sample_log_probs(e.x);
  const std::size_t c = base.num_classes();
  for (std::size_t j = 0; j < weights.size(); ++j) {
    weights[j] += lp[j * c + e.y];
  }
}

inline void require_not_collapsed(std::span<const double> weights) {
  if (std::all_of(weights.begin(), weights.end(), [](double w) { return w == kNegInf; })) {
    throw NumericalError("posterior collapse: observation impossible under all samples");
  }
}

}  // namespace detail

/// Conditions on one more observation; log-likelihoods are added unclamped.
inline ObiState obi_observe(const ObiState& state, const LabeledExample& example) {
  std::vector<double> w(state.cumulative_log_weights().begin(), state.cumulative_log_weights().end());
  detail::accumulate_log_likelihood(state.base(), example, w);
  detail::require_not_collapsed(w);
  auto observed = state.observed();
  observed.push_back(example);
  return {state.base_ptr(), std::move(observed), std::move(w)};
}

/// Conditions on several observations in a single weight update.
inline ObiState obi_observe_all(const ObiState& state, std::span<const LabeledExample> examples) {
  std::vector<double> total(state.base().size(), 0.0);
  for (const auto& e : examples) {
    detail::accumulate_log_likelihood(state.base(), e, total);
  }
  std::vector<double> w(state.cumulative_log_weights().begin(), state.cumulative_log_weights().end());
  for (std::size_t j = 0; j < w.size(); ++j) {
    w[j] += total[j];
  }
  detail::require_not_collapsed(w);
  auto observed = state.observed();
  observed.insert(observed.end(), examples.begin(), examples.end());
  return {state.base_ptr(), std::move(observed), std::move(w)};
}

/// q(y | x, observed) = sum_j w_hat_j p(y | x, omega_j).
inline CategoricalLogDist obi_predict(const ObiState& state, std::span<const double> x) {
  return marginal_predictive(state.posterior(), x);
}

/// Sorted uniform subset of [0, s) without replacement; shared by every bootstrap consumer.
inline std::vector<std::size_t> bootstrap_positions(std::size_t s, std::size_t subset_size, RngStream rng) {
  if (subset_size == 0 || subset_size > s) {
    throw ValidationError("bootstrap subset size must lie in [1, S]");
  }
  auto positions = rng.permutation(s);
  positions.resize(subset_size);
  std::sort(positions.begin(), positions.end());
  return positions;
}

/**
 * Restricts the state to `subset_size` parameter samples drawn uniformly
 * without replacement; base weights are renormalized over the subset and the
 * observations are re-applied.
 */
inline ObiState obi_bootstrap(const ObiState& state, std::size_t subset_size, RngStream rng) {
  const std::size_t s = state.base().size();
  if (subset_size == 0 || subset_size > s) {
    throw ValidationError("bootstrap subset size must lie in [1, S]");
  }
  const auto positions = bootstrap_positions(s, subset_size, rng);
  auto base = std::make_shared<const PosteriorEnsemble>(state.base().subset(positions));
  std::vector<double> w(base->log_weights().begin(), base->log_weights().end());
  for (const auto& e : state.observed()) {
    detail::accumulate_log_likelihood(*base, e, w);
  }
  if (std::all_of(w.begin(), w.end(), [](double v) { return v == kNegInf; })) {
    throw NumericalError("degenerate weights after bootstrap");
  }
  return {std::move(base), state.observed(), std::move(w)};
}

}  // namespace obikit

#endif  // OBIKIT_OBI_HPP
