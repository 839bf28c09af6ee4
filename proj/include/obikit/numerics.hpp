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

#ifndef OBIKIT_NUMERICS_HPP
#define OBIKIT_NUMERICS_HPP

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <utility>
#include <vector>

#include "obikit/error.hpp"

/**
 * \file
 * \brief Log-space probability arithmetic and counter-based random streams.
 *
 * Everything is in natural-log units. Reductions run in input order after
 * subtracting the maximum so that results are reproducible to the last bit.
 */

namespace obikit {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();
inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// A log-probability ln p, p in [0, 1].
class LogProb {
 public:
  static constexpr double kSlack = 1e-9;

  LogProb() = default;
  explicit LogProb(double value) : value_(value) {
    if (std::isnan(value) || value > kSlack) {
      throw ValidationError("LogProb out of range");
    }
  }

  [[nodiscard]] double value() const noexcept { return value_; }
  [[nodiscard]] double prob() const noexcept { return std::exp(value_); }

 private:
  double value_ = 0.0;
};

/// Returns ln sum_i exp(xs_i). Exact -inf when every input is -inf.
inline double log_sum_exp(std::span<const double> xs) {
  if (xs.empty()) {
    throw ValidationError("empty reduction");
  }
  double max_value = kNegInf;
  for (double x : xs) {
    if (std::isnan(x) || x == kInf) {
      throw ValidationError("non-finite input");
    }
    if (x > max_value) {
      max_value = x;
    }
  }
  if (max_value == kNegInf) {
    return kNegInf;
  }
  double sum = 0.0;
  for (double x : xs) {
    sum += std::exp(x - max_value);
  }
  return max_value + std::log(sum);
}

/// Unnormalized log importance weights; at least one entry must be > -inf.
class LogWeightVector {
 public:
  LogWeightVector() = default;
  explicit LogWeightVector(std::vector<double> weights) : weights_(std::move(weights)) { validate(); }

  static LogWeightVector uniform(std::size_t count) { return LogWeightVector(std::vector<double>(count, 0.0)); }

  [[nodiscard]] std::size_t size() const noexcept { return weights_.size(); }
  [[nodiscard]] std::span<const double> values() const noexcept { return weights_; }
  [[nodiscard]] double operator[](std::size_t j) const { return weights_[j]; }

 private:
  void validate() const {
    if (weights_.empty()) {
      throw ValidationError("empty weight vector");
    }
    bool any_finite = false;
    for (double w : weights_) {
      if (std::isnan(w) || w == kInf) {
        throw ValidationError("non-finite input");
      }
      any_finite = any_finite || w > kNegInf;
    }
    if (!any_finite) {
      throw NumericalError("degenerate weights");
    }
  }

  std::vector<double> weights_;
};

struct NormalizedLogWeights {
  std::vector<double> log_weights;
  double log_normalizer = 0.0;
};

/// Normalizes log-weights so that their exponentials sum to one. Order is preserved.
inline NormalizedLogWeights normalize_log_weights(std::span<const double> weights) {
  const double log_normalizer = log_sum_exp(weights);
  if (log_normalizer == kNegInf) {
    throw NumericalError("degenerate weights");
  }
  NormalizedLogWeights out;
  out.log_normalizer = log_normalizer;
  out.log_weights.reserve(weights.size());
  for (double w : weights) {
    out.log_weights.push_back(w == kNegInf ? kNegInf : w - log_normalizer);
  }
  return out;
}

inline NormalizedLogWeights normalize_log_weights(const LogWeightVector& weights) {
  return normalize_log_weights(weights.values());
}

/// Normalized linear-space weights from unnormalized log-weights.
inline std::vector<double> normalized_weights(std::span<const double> log_weights) {
  const auto normalized = normalize_log_weights(log_weights);
  std::vector<double> out(normalized.log_weights.size());
  for (std::size_t j = 0; j < out.size(); ++j) {
    out[j] = std::exp(normalized.log_weights[j]);
  }
  return out;
}

/// Kish effective sample size (sum w)^2 / sum w^2 of the normalized weights, in [1, S].
inline double effective_sample_size(std::span<const double> log_weights) {
  const auto weights = normalized_weights(log_weights);
  double sum = 0.0;
  double sum_sq = 0.0;
  for (double w : weights) {
    sum += w;
    sum_sq += w * w;
  }
  return sum * sum / sum_sq;
}

inline double effective_sample_size(const LogWeightVector& weights) { return effective_sample_size(weights.values()); }

/// Entropy in nats of a categorical distribution given by log-probabilities; 0 ln 0 = 0.
inline double categorical_entropy(std::span<const double> log_probs) {
  double h = 0.0;
  for (double lp : log_probs) {
    if (lp > kNegInf) {
      h -= std::exp(lp) * lp;
    }
  }
  return h;
}

namespace detail {

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t mix(std::uint64_t a, std::uint64_t b) noexcept {
  return splitmix64(splitmix64(a) ^ (b + 0x632be59bd9b4e019ULL + (a << 6) + (a >> 2)));
}

}  // namespace detail

/// Purposes for which independent child streams are derived from a root seed.
enum class StreamPurpose : std::uint64_t {
  kInit = 1,
  kDropout = 2,
  kBootstrap = 3,
  kData = 4,
  kBatchOrder = 5,
  kSelection = 6,
  kTrial = 7,
  kSubTrial = 8,
  kRetrain = 9,
  kMonteCarlo = 10,
};

/**
 * Counter-based pseudo-random stream.
 *
 * Draw k of stream (seed, id) is splitmix64(key(seed, id) + k * golden), so
 * sequences depend only on integer arithmetic and are identical on every
 * platform. Child streams are derived rather than shared between consumers.
 */
class RngStream {
 public:
  RngStream() : RngStream(0, 0) {}
  RngStream(std::uint64_t seed, std::uint64_t stream_id)
      : seed_(seed), stream_id_(stream_id), key_(detail::mix(seed, stream_id)) {}

  [[nodiscard]] std::uint64_t seed() const noexcept { return seed_; }
  [[nodiscard]] std::uint64_t stream_id() const noexcept { return stream_id_; }

  [[nodiscard]] RngStream derive(std::uint64_t child) const { return {seed_, detail::mix(stream_id_, child)}; }
  [[nodiscard]] RngStream derive(StreamPurpose purpose) const { return derive(static_cast<std::uint64_t>(purpose)); }
  [[nodiscard]] RngStream derive(StreamPurpose purpose, std::uint64_t index) const {
    return derive(purpose).derive(index);
  }

  std::uint64_t next_u64() noexcept { return detail::splitmix64(key_ + (counter_++) * 0x9e3779b97f4a7c15ULL); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n) without modulo bias.
  std::uint64_t uniform_index(std::uint64_t n) {
    if (n == 0) {
      throw ValidationError("uniform_index over empty range");
    }
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t r = next_u64();
    while (r >= limit) {
      r = next_u64();
    }
    return r % n;
  }

  /// Standard normal via Box-Muller (one draw per call).
  double normal() noexcept {
    double u1 = uniform();
    while (u1 <= 0.0) {
      u1 = uniform();
    }
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  bool bernoulli(double p) noexcept { return uniform() < p; }

  /// Index drawn from normalized linear weights.
  std::size_t categorical(std::span<const double> weights) {
    const double u = uniform();
    double acc = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      acc += weights[i];
      if (u < acc) {
        return i;
      }
    }
    // Rounding left u above the cumulative sum; take the last positive entry.
    for (std::size_t i = weights.size(); i-- > 0;) {
      if (weights[i] > 0.0) {
        return i;
      }
    }
    throw NumericalError("categorical draw over zero mass");
  }

  /// Fisher-Yates shuffle.
  template <class T>
  void shuffle(std::vector<T>& values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(uniform_index(i));
      std::swap(values[i - 1], values[j]);
    }
  }

  std::vector<std::size_t> permutation(std::size_t n) {
    std::vector<std::size_t> out(n);
    for (std::size_t i = 0; i < n; ++i) {
      out[i] = i;
    }
    shuffle(out);
    return out;
  }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace obikit

#endif  // OBIKIT_NUMERICS_HPP
