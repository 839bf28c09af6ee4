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

#ifndef OBIKIT_MODELS_HPP
#define OBIKIT_MODELS_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "obikit/data.hpp"
#include "obikit/error.hpp"
#include "obikit/numerics.hpp"

namespace obikit {

/// S x N x C block of log-probabilities ln p(y = c | x_i, omega_j), row-major.
class LogProbTensor {
 public:
  LogProbTensor() = default;
  LogProbTensor(std::size_t samples, std::size_t points, std::size_t classes)
      : samples_(samples), points_(points), classes_(classes), data_(samples * points * classes, 0.0) {}

  [[nodiscard]] std::size_t samples() const noexcept { return samples_; }
  [[nodiscard]] std::size_t points() const noexcept { return points_; }
  [[nodiscard]] std::size_t classes() const noexcept { return classes_; }

  [[nodiscard]] double at(std::size_t j, std::size_t i, std::size_t c) const {
    return data_[(j * points_ + i) * classes_ + c];
  }
  double& at(std::size_t j, std::size_t i, std::size_t c) { return data_[(j * points_ + i) * classes_ + c]; }

  [[nodiscard]] std::span<const double> row(std::size_t j, std::size_t i) const {
    return {data_.data() + (j * points_ + i) * classes_, classes_};
  }
  std::span<double> row(std::size_t j, std::size_t i) { return {data_.data() + (j * points_ + i) * classes_, classes_}; }

  /// Tensor restricted to the given point columns, in that order.
  [[nodiscard]] LogProbTensor select_points(std::span<const std::size_t> points) const {
    LogProbTensor out(samples_, points.size(), classes_);
    for (std::size_t j = 0; j < samples_; ++j) {
      for (std::size_t k = 0; k < points.size(); ++k) {
        const auto src = row(j, points[k]);
        std::copy(src.begin(), src.end(), out.row(j, k).begin());
      }
    }
    return out;
  }

  /// Tensor restricted to the given sample rows, in that order.
  [[nodiscard]] LogProbTensor select_samples(std::span<const std::size_t> samples) const {
    LogProbTensor out(samples.size(), points_, classes_);
    for (std::size_t k = 0; k < samples.size(); ++k) {
      for (std::size_t i = 0; i < points_; ++i) {
        const auto src = row(samples[k], i);
        std::copy(src.begin(), src.end(), out.row(k, i).begin());
      }
    }
    return out;
  }

 private:
  std::size_t samples_ = 0;
  std::size_t points_ = 0;
  std::size_t classes_ = 0;
  std::vector<double> data_;
};

/// Likelihood p(y | x, omega_j) over a fixed, indexable set of parameter samples.
class LikelihoodFamily {
 public:
  virtual ~LikelihoodFamily() = default;

  [[nodiscard]] virtual std::string tag() const = 0;
  [[nodiscard]] virtual std::size_t num_samples() const = 0;
  [[nodiscard]] virtual std::size_t dim() const = 0;
  [[nodiscard]] virtual std::size_t num_classes() const = 0;

  /// Writes the normalized log-probabilities of every class for sample j at x.
  virtual void log_probs(std::size_t j, std::span<const double> x, std::span<double> out) const = 0;

  /// Row k of `out` (C entries each) receives sample `sample_ids[k]` evaluated at x.
  virtual void log_probs_many(std::span<const std::size_t> sample_ids, std::span<const double> x,
                              std::span<double> out) const {
    const std::size_t c = num_classes();
    for (std::size_t k = 0; k < sample_ids.size(); ++k) {
      log_probs(sample_ids[k], x, out.subspan(k * c, c));
    }
  }

  [[nodiscard]] virtual nlohmann::json to_json() const = 0;
};

inline void log_softmax_inplace(std::span<double> logits) {
  const double lse = log_sum_exp(logits);
  for (double& z : logits) {
    z -= lse;
  }
}

/**
 * Finite hypothesis grid: explicit log-likelihood tables over a finite
 * vocabulary of inputs. Inputs outside the vocabulary are rejected.
 */
class GridFamily final : public LikelihoodFamily {
 public:
  /// `log_tables[k][v][c]` = ln p(y = c | vocabulary[v], hypothesis k).
  GridFamily(std::vector<std::vector<double>> vocabulary, std::vector<std::vector<std::vector<double>>> log_tables)
      : vocabulary_(std::move(vocabulary)), tables_(std::move(log_tables)) {
    if (tables_.empty() || vocabulary_.empty()) {
      throw ValidationError("grid needs at least one hypothesis and one input");
    }
    dim_ = vocabulary_.front().size();
    classes_ = tables_.front().front().size();
    for (std::size_t v = 0; v < vocabulary_.size(); ++v) {
      if (vocabulary_[v].size() != dim_) {
        throw ValidationError("grid vocabulary dimension mismatch");
      }
      if (!index_.emplace(vocabulary_[v], v).second) {
        throw ValidationError("duplicate grid vocabulary entry");
      }
    }
    for (const auto& table : tables_) {
      if (table.size() != vocabulary_.size()) {
        throw ValidationError("grid table does not cover the vocabulary");
      }
      for (const auto& row : table) {
        if (row.size() != classes_) {
          throw ValidationError("grid table class count mismatch");
        }
        if (std::abs(log_sum_exp(row)) > 1e-9) {
          throw ValidationError("grid table row is not normalized");
        }
      }
    }
  }

  /// Builds the family from probability tables `tables[k][v][c]`.
  static std::shared_ptr<GridFamily> from_probabilities(std::vector<std::vector<double>> vocabulary,
                                                        const std::vector<std::vector<std::vector<double>>>& tables) {
    std::vector<std::vector<std::vector<double>>> logs = tables;
    for (auto& table : logs) {
      for (auto& row : table) {
        for (double& p : row) {
          p = p > 0.0 ? std::log(p) : kNegInf;
        }
      }
    }
    return std::make_shared<GridFamily>(std::move(vocabulary), std::move(logs));
  }

  [[nodiscard]] std::string tag() const override { return "grid"; }
  [[nodiscard]] std::size_t num_samples() const override { return tables_.size(); }
  [[nodiscard]] std::size_t dim() const override { return dim_; }
  [[nodiscard]] std::size_t num_classes() const override { return classes_; }
  [[nodiscard]] const std::vector<std::vector<double>>& vocabulary() const noexcept { return vocabulary_; }
  [[nodiscard]] const std::vector<std::vector<std::vector<double>>>& log_tables() const noexcept { return tables_; }

  [[nodiscard]] std::size_t vocabulary_index(std::span<const double> x) const {
    const auto it = index_.find(std::vector<double>(x.begin(), x.end()));
    if (it == index_.end()) {
      throw ValidationError("input outside the grid vocabulary");
    }
    return it->second;
  }

  void log_probs(std::size_t j, std::span<const double> x, std::span<double> out) const override {
    const auto& row = tables_.at(j)[vocabulary_index(x)];
    std::copy(row.begin(), row.end(), out.begin());
  }

  [[nodiscard]] nlohmann::json to_json() const override;

 private:
  std::vector<std::vector<double>> vocabulary_;
  std::vector<std::vector<std::vector<double>>> tables_;
  std::map<std::vector<double>, std::size_t> index_;
  std::size_t dim_ = 0;
  std::size_t classes_ = 0;
};

/// Weighted set of parameter samples standing in for q(omega).
///
/// Holds a shared, immutable likelihood family plus the ids of the samples in
/// use and their normalized log-weights.
class PosteriorEnsemble {
 public:
  PosteriorEnsemble() = default;
  PosteriorEnsemble(std::shared_ptr<const LikelihoodFamily> family, std::vector<std::size_t> sample_ids,
                    std::span<const double> log_weights)
      : family_(std::move(family)), sample_ids_(std::move(sample_ids)) {
    if (!family_) {
      throw ValidationError("ensemble without likelihood family");
    }
    if (sample_ids_.empty() || sample_ids_.size() != log_weights.size()) {
      throw ValidationError("ensemble needs S >= 1 samples with one weight each");
    }
    for (std::size_t id : sample_ids_) {
      if (id >= family_->num_samples()) {
        throw ValidationError("sample id out of range");
      }
    }
    log_weights_ = normalize_log_weights(log_weights).log_weights;
  }

  /// Adopts weights that are already normalized (exp-sum within 1e-12) without
  /// re-normalizing, so checkpoints round-trip bitwise.
  static PosteriorEnsemble from_normalized(std::shared_ptr<const LikelihoodFamily> family,
                                           std::vector<std::size_t> sample_ids, std::vector<double> log_weights) {
    PosteriorEnsemble e(std::move(family), std::move(sample_ids), log_weights);
    if (std::abs(log_sum_exp(log_weights)) > 1e-12) {
      throw ValidationError("weights are not normalized");
    }
    e.log_weights_ = std::move(log_weights);
    return e;
  }

  /// All samples of `family`, uniformly weighted.
  static PosteriorEnsemble uniform(std::shared_ptr<const LikelihoodFamily> family) {
    const std::size_t s = family->num_samples();
    std::vector<std::size_t> ids(s);
    for (std::size_t j = 0; j < s; ++j) {
      ids[j] = j;
    }
    const std::vector<double> w(s, 0.0);
    return {std::move(family), std::move(ids), w};
  }

  [[nodiscard]] std::size_t size() const noexcept { return sample_ids_.size(); }
  [[nodiscard]] std::size_t num_classes() const { return family_->num_classes(); }
  [[nodiscard]] std::size_t dim() const { return family_->dim(); }
  [[nodiscard]] const LikelihoodFamily& family() const { return *family_; }
  [[nodiscard]] const std::shared_ptr<const LikelihoodFamily>& family_ptr() const noexcept { return family_; }
  [[nodiscard]] const std::vector<std::size_t>& sample_ids() const noexcept { return sample_ids_; }
  [[nodiscard]] std::span<const double> log_weights() const noexcept { return log_weights_; }
  [[nodiscard]] std::string model_family() const { return family_->tag(); }

  [[nodiscard]] std::vector<double> weights() const {
    std::vector<double> w(log_weights_.size());
    for (std::size_t j = 0; j < w.size(); ++j) {
      w[j] = std::exp(log_weights_[j]);
    }
    return w;
  }

  /// Same samples, new (unnormalized) log-weights.
  [[nodiscard]] PosteriorEnsemble reweighted(std::span<const double> log_weights) const {
    return {family_, sample_ids_, log_weights};
  }

  /// Samples at the given positions with their base weights renormalized.
  [[nodiscard]] PosteriorEnsemble subset(std::span<const std::size_t> positions) const {
    std::vector<std::size_t> ids;
    std::vector<double> w;
    for (std::size_t p : positions) {
      ids.push_back(sample_ids_.at(p));
      w.push_back(log_weights_.at(p));
    }
    return {family_, std::move(ids), w};
  }

  /// ln p(. | x, omega) for every sample, S rows of C entries.
  [[nodiscard]] std::vector<double> sample_log_probs(std::span<const double> x) const {
    if (x.size() != family_->dim()) {
      throw ValidationError("feature dimension mismatch");
    }
    std::vector<double> out(sample_ids_.size() * family_->num_classes());
    family_->log_probs_many(sample_ids_, x, out);
    return out;
  }

 private:
  std::shared_ptr<const LikelihoodFamily> family_;
  std::vector<std::size_t> sample_ids_;
  std::vector<double> log_weights_;
};

/// Evaluates every sample of the ensemble at every input.
inline LogProbTensor forward_log_probs(const PosteriorEnsemble& ensemble, std::span<const std::vector<double>> xs) {
  if (xs.empty()) {
    throw ValidationError("forward_log_probs needs at least one input");
  }
  const std::size_t s = ensemble.size();
  const std::size_t c = ensemble.num_classes();
  LogProbTensor out(s, xs.size(), c);
  std::vector<double> buf(s * c);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (xs[i].size() != ensemble.dim()) {
      throw ValidationError("feature dimension mismatch");
    }
    ensemble.family().log_probs_many(ensemble.sample_ids(), xs[i], buf);
    for (std::size_t j = 0; j < s; ++j) {
      std::copy_n(buf.begin() + static_cast<std::ptrdiff_t>(j * c), c, out.row(j, i).begin());
    }
  }
  return out;
}

inline LogProbTensor forward_log_probs(const PosteriorEnsemble& ensemble, const Dataset& data) {
  return forward_log_probs(ensemble, data.inputs());
}

/// Exact Bayes posterior on a grid: prior_k + sum_i ln p(y_i | x_i, k), normalized.
inline PosteriorEnsemble exact_grid_posterior(std::shared_ptr<const GridFamily> grid, std::span<const double> prior_log_weights,
                                              std::span<const LabeledExample> observed) {
  if (!grid) {
    throw ValidationError("grid posterior without hypotheses");
  }
  if (prior_log_weights.size() != grid->num_samples()) {
    throw ValidationError("prior length does not match hypothesis count");
  }
  std::vector<double> w(prior_log_weights.begin(), prior_log_weights.end());
  std::vector<double> row(grid->num_classes());
  for (const auto& e : observed) {
    if (e.y >= grid->num_classes()) {
      throw ValidationError("label out of range");
    }
    for (std::size_t k = 0; k < w.size(); ++k) {
      grid->log_probs(k, e.x, row);
      w[k] += row[e.y];
    }
  }
  if (std::all_of(w.begin(), w.end(), [](double v) { return v == kNegInf; })) {
    throw NumericalError("data impossible under all hypotheses");
  }
  std::vector<std::size_t> ids(w.size());
  for (std::size_t k = 0; k < ids.size(); ++k) {
    ids[k] = k;
  }
  return {std::move(grid), std::move(ids), w};
}

// ---------------------------------------------------------------------------
// Multilayer perceptron [d, H, C] with a rectifier hidden layer.

struct MlpArchitecture {
  std::size_t input_dim = 2;
  std::size_t hidden = 64;
  std::size_t classes = 4;
  double dropout_rate = 0.5;
  /// Multiplier on the He standard deviation sqrt(2 / fan_in).
  double init_scale = 1.0;

  void validate() const {
    if (input_dim == 0 || hidden == 0 || classes < 2) {
      throw ValidationError("MLP needs d >= 1, H >= 1, C >= 2");
    }
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
      throw ValidationError("dropout rate must lie in [0, 1)");
    }
    if (!(init_scale > 0.0)) {
      throw ValidationError("init scale must be positive");
    }
  }

  [[nodiscard]] std::size_t parameter_count() const { return hidden * input_dim + hidden + classes * hidden + classes; }

  friend bool operator==(const MlpArchitecture&, const MlpArchitecture&) = default;
};

/// Adam settings; weight decay enters the gradient as an L2 term.
struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
  double early_stop_tolerance = 1e-5;
  std::size_t early_stop_window = 5;
  std::uint64_t seed = 0;

  void validate() const {
    if (epochs == 0 || batch_size == 0 || !(learning_rate > 0.0) || !(beta1 >= 0.0 && beta1 < 1.0) ||
        !(beta2 >= 0.0 && beta2 < 1.0) || !(epsilon > 0.0) || weight_decay < 0.0) {
      throw ValidationError("invalid training configuration");
    }
  }
};

/// Flat parameter vector laid out as W1 (H x d), b1 (H), W2 (C x H), b2 (C).
class MlpParams {
 public:
  MlpParams() = default;
  explicit MlpParams(MlpArchitecture arch) : arch_(arch), values_(arch.parameter_count(), 0.0) { arch_.validate(); }
  MlpParams(MlpArchitecture arch, std::vector<double> values) : arch_(arch), values_(std::move(values)) {
    arch_.validate();
    if (values_.size() != arch_.parameter_count()) {
      throw ValidationError("parameter vector length does not match architecture");
    }
  }

  /// He-style initialization: weights ~ N(0, init_scale^2 * 2 / fan_in), zero biases.
  static MlpParams he_init(const MlpArchitecture& arch, RngStream rng) {
    MlpParams p(arch);
    const double s1 = arch.init_scale * std::sqrt(2.0 / static_cast<double>(arch.input_dim));
    const double s2 = arch.init_scale * std::sqrt(2.0 / static_cast<double>(arch.hidden));
    for (double& w : p.w1()) {
      w = s1 * rng.normal();
    }
    for (double& w : p.w2()) {
      w = s2 * rng.normal();
    }
    return p;
  }

  [[nodiscard]] const MlpArchitecture& arch() const noexcept { return arch_; }
  [[nodiscard]] std::span<const double> values() const noexcept { return values_; }
  std::span<double> values() noexcept { return values_; }

  [[nodiscard]] std::span<const double> w1() const { return span_at(0, arch_.hidden * arch_.input_dim); }
  [[nodiscard]] std::span<const double> b1() const { return span_at(off_b1(), arch_.hidden); }
  [[nodiscard]] std::span<const double> w2() const { return span_at(off_w2(), arch_.classes * arch_.hidden); }
  [[nodiscard]] std::span<const double> b2() const { return span_at(off_b2(), arch_.classes); }
  std::span<double> w1() { return mut_span_at(0, arch_.hidden * arch_.input_dim); }
  std::span<double> b1() { return mut_span_at(off_b1(), arch_.hidden); }
  std::span<double> w2() { return mut_span_at(off_w2(), arch_.classes * arch_.hidden); }
  std::span<double> b2() { return mut_span_at(off_b2(), arch_.classes); }

  [[nodiscard]] std::size_t off_b1() const { return arch_.hidden * arch_.input_dim; }
  [[nodiscard]] std::size_t off_w2() const { return off_b1() + arch_.hidden; }
  [[nodiscard]] std::size_t off_b2() const { return off_w2() + arch_.classes * arch_.hidden; }

  friend bool operator==(const MlpParams&, const MlpParams&) = default;

 private:
  [[nodiscard]] std::span<const double> span_at(std::size_t off, std::size_t n) const { return {values_.data() + off, n}; }
  std::span<double> mut_span_at(std::size_t off, std::size_t n) { return {values_.data() + off, n}; }

  MlpArchitecture arch_;
  std::vector<double> values_;
};

/// Binary keep-mask over hidden units; kept units are scaled by 1 / (1 - p).
using DropoutMask = std::vector<std::uint8_t>;

inline DropoutMask sample_dropout_mask(std::size_t hidden, double rate, RngStream& rng) {
  DropoutMask m(hidden);
  for (auto& bit : m) {
    bit = rng.uniform() >= rate ? 1 : 0;
  }
  return m;
}

namespace detail {

inline void hidden_activations(const MlpParams& p, std::span<const double> x, std::span<double> pre,
                               std::span<double> act) {
  const auto& a = p.arch();
  const auto w1 = p.w1();
  const auto b1 = p.b1();
  for (std::size_t h = 0; h < a.hidden; ++h) {
    double z = b1[h];
    for (std::size_t k = 0; k < a.input_dim; ++k) {
      z += w1[h * a.input_dim + k] * x[k];
    }
    pre[h] = z;
    act[h] = z > 0.0 ? z : 0.0;
  }
}

/// logits = W2 (act * mask * scale) + b2; an empty mask means no dropout.
inline void output_logits(const MlpParams& p, std::span<const double> act, const DropoutMask* mask,
                          std::span<double> logits) {
  const auto& a = p.arch();
  const auto w2 = p.w2();
  const auto b2 = p.b2();
  const double scale = mask ? 1.0 / (1.0 - a.dropout_rate) : 1.0;
  for (std::size_t c = 0; c < a.classes; ++c) {
    double z = 0.0;
    const double* wrow = w2.data() + c * a.hidden;
    if (mask) {
      for (std::size_t h = 0; h < a.hidden; ++h) {
        if ((*mask)[h]) {
          z += wrow[h] * act[h];
        }
      }
      z *= scale;
    } else {
      for (std::size_t h = 0; h < a.hidden; ++h) {
        z += wrow[h] * act[h];
      }
    }
    logits[c] = z + b2[c];
  }
}

}  // namespace detail

/// Log-softmax output of the network at x, optionally under a dropout mask.
inline std::vector<double> mlp_log_probs(const MlpParams& p, std::span<const double> x, const DropoutMask* mask = nullptr) {
  const auto& a = p.arch();
  if (x.size() != a.input_dim) {
    throw ValidationError("feature dimension mismatch");
  }
  std::vector<double> pre(a.hidden);
  std::vector<double> act(a.hidden);
  std::vector<double> logits(a.classes);
  detail::hidden_activations(p, x, pre, act);
  detail::output_logits(p, act, mask, logits);
  log_softmax_inplace(logits);
  return logits;
}

struct MlpGradient {
  double loss = 0.0;
  std::vector<double> grad;
};

/**
 * Mean cross-entropy loss over `batch` and its exact gradient by backprop.
 *
 * `masks`, when non-empty, holds one dropout mask per example.
 */
inline MlpGradient mlp_gradient(const MlpParams& p, std::span<const LabeledExample> batch,
                                std::span<const DropoutMask> masks = {}) {
  if (batch.empty()) {
    throw ValidationError("gradient of an empty batch");
  }
  if (!masks.empty() && masks.size() != batch.size()) {
    throw ValidationError("one dropout mask per example required");
  }
  const auto& a = p.arch();
  MlpGradient out;
  out.grad.assign(p.values().size(), 0.0);
  std::span<double> g = out.grad;
  auto gw1 = g.subspan(0, a.hidden * a.input_dim);
  auto gb1 = g.subspan(p.off_b1(), a.hidden);
  auto gw2 = g.subspan(p.off_w2(), a.classes * a.hidden);
  auto gb2 = g.subspan(p.off_b2(), a.classes);
  const auto w2 = p.w2();

  std::vector<double> pre(a.hidden);
  std::vector<double> act(a.hidden);
  std::vector<double> dropped(a.hidden);
  std::vector<double> logits(a.classes);
  std::vector<double> dz(a.classes);
  std::vector<double> dh(a.hidden);
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  const double scale = 1.0 / (1.0 - a.dropout_rate);

  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& e = batch[b];
    if (e.x.size() != a.input_dim || e.y >= a.classes) {
      throw ValidationError("batch example does not match architecture");
    }
    const DropoutMask* mask = masks.empty() ? nullptr : &masks[b];
    detail::hidden_activations(p, e.x, pre, act);
    for (std::size_t h = 0; h < a.hidden; ++h) {
      dropped[h] = mask ? ((*mask)[h] ? act[h] * scale : 0.0) : act[h];
    }
    detail::output_logits(p, act, mask, logits);
    const double lse = log_sum_exp(logits);
    if (!std::isfinite(lse)) {
      throw NumericalError("non-finite activations in MLP forward pass");
    }
    out.loss -= (logits[e.y] - lse) * inv_n;
    for (std::size_t c = 0; c < a.classes; ++c) {
      dz[c] = (std::exp(logits[c] - lse) - (c == e.y ? 1.0 : 0.0)) * inv_n;
      gb2[c] += dz[c];
      for (std::size_t h = 0; h < a.hidden; ++h) {
        gw2[c * a.hidden + h] += dz[c] * dropped[h];
      }
    }
    for (std::size_t h = 0; h < a.hidden; ++h) {
      if (pre[h] <= 0.0 || (mask && !(*mask)[h])) {
        dh[h] = 0.0;
        continue;
      }
      double s = 0.0;
      for (std::size_t c = 0; c < a.classes; ++c) {
        s += w2[c * a.hidden + h] * dz[c];
      }
      dh[h] = mask ? s * scale : s;
    }
    for (std::size_t h = 0; h < a.hidden; ++h) {
      gb1[h] += dh[h];
      for (std::size_t k = 0; k < a.input_dim; ++k) {
        gw1[h * a.input_dim + k] += dh[h] * e.x[k];
      }
    }
  }
  if (!std::isfinite(out.loss)) {
    throw NumericalError("non-finite loss in MLP gradient");
  }
  return out;
}

/// Mean cross-entropy of the deterministic (no-dropout) network on `data`.
inline double mlp_loss(const MlpParams& p, const Dataset& data) {
  double loss = 0.0;
  for (const auto& e : data.examples()) {
    loss -= mlp_log_probs(p, e.x)[e.y];
  }
  return loss / static_cast<double>(data.size());
}

struct TrainedMlp {
  MlpParams params;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  std::size_t epochs_run = 0;
};

/**
 * Minibatch Adam on mean cross-entropy.
 *
 * Stops early once the epoch-mean training loss moved less than
 * `early_stop_tolerance` over the last `early_stop_window` epochs. With
 * `use_dropout`, every example in every step gets a fresh dropout mask.
 */
inline TrainedMlp train_mlp(const Dataset& train, const MlpArchitecture& arch, const TrainConfig& cfg, RngStream rng,
                            bool use_dropout, std::size_t member = 0) {
  arch.validate();
  cfg.validate();
  if (train.empty()) {
    throw ValidationError("cannot train on an empty dataset");
  }
  if (train.dim() != arch.input_dim || train.num_classes() != arch.classes) {
    throw ValidationError("dataset does not match architecture");
  }
  TrainedMlp out{MlpParams::he_init(arch, rng.derive(StreamPurpose::kInit)), 0.0, 0.0, 0};
  out.initial_loss = mlp_loss(out.params, train);
  auto order_rng = rng.derive(StreamPurpose::kBatchOrder);
  auto dropout_rng = rng.derive(StreamPurpose::kDropout);

  const std::size_t n_params = arch.parameter_count();
  std::vector<double> m(n_params, 0.0);
  std::vector<double> v(n_params, 0.0);
  std::vector<double> epoch_losses;
  std::vector<LabeledExample> batch;
  std::vector<DropoutMask> masks;
  std::size_t step = 0;
  const auto& examples = train.examples();

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = order_rng.permutation(examples.size());
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      batch.clear();
      masks.clear();
      for (std::size_t i = start; i < end; ++i) {
        batch.push_back(examples[order[i]]);
        if (use_dropout) {
          masks.push_back(sample_dropout_mask(arch.hidden, arch.dropout_rate, dropout_rng));
        }
      }
      MlpGradient g;
      try {
        g = mlp_gradient(out.params, batch, masks);
      } catch (const NumericalError&) {
        throw NumericalError("training diverged: member " + std::to_string(member) + ", epoch " +
                             std::to_string(epoch));
      }
      epoch_loss += g.loss * static_cast<double>(end - start);
      ++step;
      const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
      const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
      auto theta = out.params.values();
      for (std::size_t k = 0; k < n_params; ++k) {
        const double grad = g.grad[k] + cfg.weight_decay * theta[k];
        m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * grad;
        v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * grad * grad;
        theta[k] -= cfg.learning_rate * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + cfg.epsilon);
      }
    }
    epoch_loss /= static_cast<double>(examples.size());
    if (!std::isfinite(epoch_loss)) {
      throw NumericalError("training diverged: member " + std::to_string(member) + ", epoch " + std::to_string(epoch));
    }
    epoch_losses.push_back(epoch_loss);
    out.epochs_run = epoch + 1;
    const std::size_t w = cfg.early_stop_window;
    if (w > 0 && epoch_losses.size() > w &&
        std::abs(epoch_losses.back() - epoch_losses[epoch_losses.size() - 1 - w]) < cfg.early_stop_tolerance) {
      break;
    }
  }
  out.final_loss = mlp_loss(out.params, train);
  return out;
}

/**
 * Parameter samples built from trained networks: either one network per sample
 * (deep ensemble) or one network with a fixed dropout mask per sample
 * (consistent MC dropout). A sample's mask is reused for every input.
 */
class MlpFamily final : public LikelihoodFamily {
 public:
  MlpFamily(MlpArchitecture arch, std::vector<MlpParams> members, std::vector<DropoutMask> masks,
            std::vector<std::size_t> sample_member, std::vector<std::int64_t> sample_mask,
            nlohmann::json seeds = nlohmann::json::object())
      : arch_(arch),
        members_(std::move(members)),
        masks_(std::move(masks)),
        sample_member_(std::move(sample_member)),
        sample_mask_(std::move(sample_mask)),
        seeds_(std::move(seeds)) {
    arch_.validate();
    if (members_.empty() || sample_member_.empty() || sample_member_.size() != sample_mask_.size()) {
      throw ValidationError("MLP family needs members and one (member, mask) pair per sample");
    }
    for (const auto& m : members_) {
      if (!(m.arch() == arch_)) {
        throw ValidationError("member architecture mismatch");
      }
    }
    for (const auto& mask : masks_) {
      if (mask.size() != arch_.hidden) {
        throw ValidationError("dropout mask length must equal hidden width");
      }
    }
    for (std::size_t j = 0; j < sample_member_.size(); ++j) {
      if (sample_member_[j] >= members_.size() || sample_mask_[j] >= static_cast<std::int64_t>(masks_.size()) ||
          sample_mask_[j] < -1) {
        throw ValidationError("sample refers to a missing member or mask");
      }
    }
  }

  [[nodiscard]] std::string tag() const override { return "mlp"; }
  [[nodiscard]] std::size_t num_samples() const override { return sample_member_.size(); }
  [[nodiscard]] std::size_t dim() const override { return arch_.input_dim; }
  [[nodiscard]] std::size_t num_classes() const override { return arch_.classes; }
  [[nodiscard]] const MlpArchitecture& arch() const noexcept { return arch_; }
  [[nodiscard]] const std::vector<MlpParams>& members() const noexcept { return members_; }
  [[nodiscard]] const std::vector<DropoutMask>& masks() const noexcept { return masks_; }

  void log_probs(std::size_t j, std::span<const double> x, std::span<double> out) const override {
    const std::size_t sample[1] = {j};
    log_probs_many(sample, x, out);
  }

  void log_probs_many(std::span<const std::size_t> sample_ids, std::span<const double> x,
                      std::span<double> out) const override {
    if (x.size() != arch_.input_dim) {
      throw ValidationError("feature dimension mismatch");
    }
    const std::size_t h = arch_.hidden;
    const std::size_t c = arch_.classes;
    std::vector<double> pre(h);
    std::vector<double> act(h);
    std::size_t cached_member = members_.size();
    for (std::size_t k = 0; k < sample_ids.size(); ++k) {
      const std::size_t j = sample_ids[k];
      const std::size_t member = sample_member_.at(j);
      if (member != cached_member) {
        detail::hidden_activations(members_[member], x, pre, act);
        cached_member = member;
      }
      const DropoutMask* mask = sample_mask_[j] >= 0 ? &masks_[static_cast<std::size_t>(sample_mask_[j])] : nullptr;
      auto row = out.subspan(k * c, c);
      detail::output_logits(members_[member], act, mask, row);
      log_softmax_inplace(row);
    }
  }

  [[nodiscard]] nlohmann::json to_json() const override;

 private:
  MlpArchitecture arch_;
  std::vector<MlpParams> members_;
  std::vector<DropoutMask> masks_;
  std::vector<std::size_t> sample_member_;
  std::vector<std::int64_t> sample_mask_;
  nlohmann::json seeds_;
};

/// K independently seeded networks, uniformly weighted. Members train without dropout.
inline PosteriorEnsemble train_deep_ensemble(const Dataset& train, MlpArchitecture arch, const TrainConfig& cfg,
                                             std::size_t members) {
  if (members == 0) {
    throw ValidationError("deep ensemble needs K >= 1");
  }
  arch.dropout_rate = 0.0;
  std::vector<MlpParams> params;
  const RngStream root(cfg.seed, 0);
  nlohmann::json seeds = nlohmann::json::array();
  for (std::size_t k = 0; k < members; ++k) {
    const auto member_rng = root.derive(StreamPurpose::kTrial, k);
    seeds.push_back({{"seed", member_rng.seed()}, {"stream", member_rng.stream_id()}});
    params.push_back(train_mlp(train, arch, cfg, member_rng, false, k).params);
  }
  std::vector<std::size_t> sample_member(members);
  for (std::size_t k = 0; k < members; ++k) {
    sample_member[k] = k;
  }
  auto family = std::make_shared<MlpFamily>(arch, std::move(params), std::vector<DropoutMask>{}, std::move(sample_member),
                                            std::vector<std::int64_t>(members, -1), std::move(seeds));
  return PosteriorEnsemble::uniform(std::move(family));
}

/// One network trained with dropout plus S fixed masks (consistent MC dropout).
inline PosteriorEnsemble train_mc_dropout(const Dataset& train, const MlpArchitecture& arch, const TrainConfig& cfg,
                                          std::size_t samples, RngStream rng) {
  if (samples == 0) {
    throw ValidationError("MC dropout needs S >= 1");
  }
  if (arch.dropout_rate == 0.0 && samples > 1) {
    throw ValidationError("degenerate dropout ensemble");
  }
  auto trained = train_mlp(train, arch, cfg, rng.derive(StreamPurpose::kTrial, 0), arch.dropout_rate > 0.0);
  auto mask_rng = rng.derive(StreamPurpose::kDropout);
  std::vector<DropoutMask> masks;
  masks.reserve(samples);
  for (std::size_t j = 0; j < samples; ++j) {
    masks.push_back(sample_dropout_mask(arch.hidden, arch.dropout_rate, mask_rng));
  }
  std::vector<std::int64_t> sample_mask(samples);
  for (std::size_t j = 0; j < samples; ++j) {
    sample_mask[j] = static_cast<std::int64_t>(j);
  }
  nlohmann::json seeds{{"seed", rng.seed()}, {"stream", rng.stream_id()}};
  auto family = std::make_shared<MlpFamily>(arch, std::vector<MlpParams>{std::move(trained.params)}, std::move(masks),
                                            std::vector<std::size_t>(samples, 0), std::move(sample_mask), std::move(seeds));
  return PosteriorEnsemble::uniform(std::move(family));
}

// ---------------------------------------------------------------------------
// Checkpoints: versioned JSON. Doubles are written as shortest round-trip
// decimals; infinities as the strings "inf" / "-inf".

namespace detail {

inline nlohmann::json encode_doubles(std::span<const double> xs) {
  auto arr = nlohmann::json::array();
  for (double x : xs) {
    if (std::isinf(x)) {
      arr.push_back(x > 0 ? "inf" : "-inf");
    } else {
      arr.push_back(x);
    }
  }
  return arr;
}

inline std::vector<double> decode_doubles(const nlohmann::json& arr) {
  std::vector<double> out;
  out.reserve(arr.size());
  for (const auto& v : arr) {
    if (v.is_string()) {
      out.push_back(v.get<std::string>() == "inf" ? kInf : kNegInf);
    } else {
      out.push_back(v.get<double>());
    }
  }
  return out;
}

inline nlohmann::json arch_to_json(const MlpArchitecture& a) {
  return {{"input_dim", a.input_dim}, {"hidden", a.hidden},         {"classes", a.classes},
          {"dropout_rate", a.dropout_rate}, {"init_scale", a.init_scale}};
}

inline MlpArchitecture arch_from_json(const nlohmann::json& j) {
  MlpArchitecture a;
  a.input_dim = j.at("input_dim").get<std::size_t>();
  a.hidden = j.at("hidden").get<std::size_t>();
  a.classes = j.at("classes").get<std::size_t>();
  a.dropout_rate = j.at("dropout_rate").get<double>();
  a.init_scale = j.at("init_scale").get<double>();
  return a;
}

}  // namespace detail

inline nlohmann::json GridFamily::to_json() const {
  nlohmann::json tables = nlohmann::json::array();
  for (const auto& table : tables_) {
    nlohmann::json t = nlohmann::json::array();
    for (const auto& row : table) {
      t.push_back(detail::encode_doubles(row));
    }
    tables.push_back(std::move(t));
  }
  nlohmann::json vocab = nlohmann::json::array();
  for (const auto& x : vocabulary_) {
    vocab.push_back(detail::encode_doubles(x));
  }
  return {{"tag", "grid"}, {"vocabulary", std::move(vocab)}, {"log_tables", std::move(tables)}};
}

inline nlohmann::json MlpFamily::to_json() const {
  nlohmann::json members = nlohmann::json::array();
  for (const auto& m : members_) {
    members.push_back(detail::encode_doubles(m.values()));
  }
  nlohmann::json masks = nlohmann::json::array();
  for (const auto& mask : masks_) {
    std::string bits(mask.size(), '0');
    for (std::size_t h = 0; h < mask.size(); ++h) {
      bits[h] = mask[h] ? '1' : '0';
    }
    masks.push_back(std::move(bits));
  }
  return {{"tag", "mlp"},
          {"arch", detail::arch_to_json(arch_)},
          {"members", std::move(members)},
          {"masks", std::move(masks)},
          {"sample_member", sample_member_},
          {"sample_mask", sample_mask_},
          {"seeds", seeds_}};
}

inline std::shared_ptr<const LikelihoodFamily> family_from_json(const nlohmann::json& j) {
  const auto tag = j.at("tag").get<std::string>();
  if (tag == "grid") {
    std::vector<std::vector<double>> vocab;
    for (const auto& x : j.at("vocabulary")) {
      vocab.push_back(detail::decode_doubles(x));
    }
    std::vector<std::vector<std::vector<double>>> tables;
    for (const auto& t : j.at("log_tables")) {
      std::vector<std::vector<double>> table;
      for (const auto& row : t) {
        table.push_back(detail::decode_doubles(row));
      }
      tables.push_back(std::move(table));
    }
    return std::make_shared<GridFamily>(std::move(vocab), std::move(tables));
  }
  if (tag == "mlp") {
    const auto arch = detail::arch_from_json(j.at("arch"));
    std::vector<MlpParams> members;
    for (const auto& m : j.at("members")) {
      members.emplace_back(arch, detail::decode_doubles(m));
    }
    std::vector<DropoutMask> masks;
    for (const auto& m : j.at("masks")) {
      const auto bits = m.get<std::string>();
      DropoutMask mask(bits.size());
      for (std::size_t h = 0; h < bits.size(); ++h) {
        mask[h] = bits[h] == '1' ? 1 : 0;
      }
      masks.push_back(std::move(mask));
    }
    return std::make_shared<MlpFamily>(arch, std::move(members), std::move(masks),
                                       j.at("sample_member").get<std::vector<std::size_t>>(),
                                       j.at("sample_mask").get<std::vector<std::int64_t>>(), j.value("seeds", nlohmann::json::object()));
  }
  throw ValidationError("unknown model family '" + tag + "'");
}

inline constexpr int kCheckpointVersion = 1;

inline nlohmann::json ensemble_to_json(const PosteriorEnsemble& e) {
  return {{"format", "obikit-ensemble"},
          {"version", kCheckpointVersion},
          {"family", e.family().to_json()},
          {"sample_ids", e.sample_ids()},
          {"log_weights", detail::encode_doubles(e.log_weights())}};
}

inline PosteriorEnsemble ensemble_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "obikit-ensemble" || j.value("version", 0) != kCheckpointVersion) {
    throw ValidationError("not an obikit ensemble checkpoint (version " + std::to_string(kCheckpointVersion) + ")");
  }
  return PosteriorEnsemble::from_normalized(family_from_json(j.at("family")),
                                            j.at("sample_ids").get<std::vector<std::size_t>>(),
                                            detail::decode_doubles(j.at("log_weights")));
}

inline void save_ensemble(const PosteriorEnsemble& e, const std::string& path) {
  std::ofstream out(path);
  if (!out) {
    throw IoError("cannot write " + path);
  }
  out << ensemble_to_json(e).dump() << '\n';
}

inline PosteriorEnsemble load_ensemble(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot open " + path);
  }
  try {
    return ensemble_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& ex) {
    throw ValidationError("malformed checkpoint " + path + ": " + ex.what());
  }
}

}  // namespace obikit

#endif  // OBIKIT_MODELS_HPP
