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

#ifndef OBIKIT_ORACLE_HPP
#define OBIKIT_ORACLE_HPP

#include <cmath>
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
#include "obikit/models.hpp"
#include "obikit/numerics.hpp"

/**
 * \file
 * \brief Brute-force Bayesian reference on finite hypothesis grids.
 *
 * Everything here is computed by direct summation in probability space. None
 * of it goes through the log-space estimators of the main path, so agreement
 * between the two is a meaningful check.
 */

namespace obikit::oracle {

/// K hypotheses, each a table p(y | x_v) over a finite input vocabulary.
struct GridWorld {
  std::vector<std::vector<double>> vocabulary;
  std::size_t classes = 2;
  /// tables[k][v][c] = p(y = c | vocabulary[v], hypothesis k).
  std::vector<std::vector<std::vector<double>>> tables;
  /// Prior log-weights, one per hypothesis.
  std::vector<double> prior_log_weights;
  /// Hypothesis that generates synthetic data.
  std::size_t truth = 0;

  [[nodiscard]] std::size_t hypotheses() const { return tables.size(); }

  void validate() const {
    if (tables.empty() || vocabulary.empty() || classes == 0) {
      throw ValidationError("grid world needs K >= 1, a vocabulary and classes");
    }
    if (prior_log_weights.size() != tables.size() || truth >= tables.size()) {
      throw ValidationError("grid world prior/truth do not match hypotheses");
    }
    for (const auto& table : tables) {
      if (table.size() != vocabulary.size()) {
        throw ValidationError("grid table does not cover the vocabulary");
      }
      for (const auto& row : table) {
        double s = 0.0;
        for (double p : row) {
          if (p < 0.0) {
            throw ValidationError("negative probability in grid table");
          }
          s += p;
        }
        if (row.size() != classes || std::abs(s - 1.0) > 1e-12) {
          throw ValidationError("grid table row is not a distribution");
        }
      }
    }
  }

  [[nodiscard]] std::size_t index_of(std::span<const double> x) const {
    for (std::size_t v = 0; v < vocabulary.size(); ++v) {
      if (vocabulary[v].size() == x.size() && std::equal(x.begin(), x.end(), vocabulary[v].begin())) {
        return v;
      }
    }
    throw ValidationError("input outside the grid vocabulary");
  }

  [[nodiscard]] std::vector<double> prior() const {
    std::vector<double> p(prior_log_weights.size());
    double z = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) {
      p[k] = std::exp(prior_log_weights[k]);
      z += p[k];
    }
    for (double& v : p) {
      v /= z;
    }
    return p;
  }
};

/// Three Bernoulli hypotheses with biases {0.2, 0.5, 0.8} on a single input, uniform prior.
inline GridWorld coin_world() {
  GridWorld w;
  w.vocabulary = {{0.0}};
  w.classes = 2;
  for (double b : {0.2, 0.5, 0.8}) {
    w.tables.push_back({{1.0 - b, b}});
  }
  w.prior_log_weights = {0.0, 0.0, 0.0};
  w.truth = 2;
  return w;
}

/// Random world: Dirichlet(1)-like rows via normalized exponentials, random prior.
inline GridWorld random_world(std::size_t hypotheses, std::size_t classes, std::size_t vocabulary, RngStream rng) {
  GridWorld w;
  w.classes = classes;
  for (std::size_t v = 0; v < vocabulary; ++v) {
    w.vocabulary.push_back({static_cast<double>(v)});
  }
  for (std::size_t k = 0; k < hypotheses; ++k) {
    std::vector<std::vector<double>> table;
    for (std::size_t v = 0; v < vocabulary; ++v) {
      std::vector<double> row(classes);
      double s = 0.0;
      for (double& p : row) {
        p = -std::log(1.0 - rng.uniform());
        s += p;
      }
      for (double& p : row) {
        p /= s;
      }
      // Exact normalization so the validity check holds to 1e-12.
      double t = 0.0;
      for (std::size_t c = 0; c + 1 < classes; ++c) {
        t += row[c];
      }
      row.back() = 1.0 - t;
      table.push_back(std::move(row));
    }
    w.tables.push_back(std::move(table));
    w.prior_log_weights.push_back(std::log(0.1 + rng.uniform()));
  }
  w.truth = static_cast<std::size_t>(rng.uniform_index(hypotheses));
  return w;
}

/// Grid likelihood family and prior for the main path.
inline std::pair<std::shared_ptr<GridFamily>, std::vector<double>> to_family(const GridWorld& world) {
  world.validate();
  return {GridFamily::from_probabilities(world.vocabulary, world.tables), world.prior_log_weights};
}

/// `n` examples drawn from the truth hypothesis with inputs uniform over the vocabulary.
inline Dataset sample_dataset(const GridWorld& world, std::size_t n, RngStream rng) {
  std::vector<LabeledExample> out;
  for (std::size_t i = 0; i < n; ++i) {
    const auto v = static_cast<std::size_t>(rng.uniform_index(world.vocabulary.size()));
    out.push_back({world.vocabulary[v], rng.categorical(world.tables[world.truth][v])});
  }
  return {std::move(out), world.vocabulary.front().size(), world.classes,
          Provenance{"grid", {{"hypotheses", world.hypotheses()}, {"truth", world.truth}}, {}}};
}

/// Exact posterior over hypotheses given observations, returned as normalized log-weights.
inline std::vector<double> oracle_posterior(const GridWorld& world, std::span<const LabeledExample> observations) {
  auto p = world.prior();
  for (const auto& e : observations) {
    const std::size_t v = world.index_of(e.x);
    for (std::size_t k = 0; k < p.size(); ++k) {
      p[k] *= world.tables[k][v].at(e.y);
    }
  }
  double z = 0.0;
  for (double v : p) {
    z += v;
  }
  if (z <= 0.0) {
    throw NumericalError("data impossible under all hypotheses");
  }
  std::vector<double> out(p.size());
  for (std::size_t k = 0; k < p.size(); ++k) {
    out[k] = p[k] > 0.0 ? std::log(p[k] / z) : kNegInf;
  }
  return out;
}

/// Exact posterior probabilities (linear space).
inline std::vector<double> oracle_posterior_probs(const GridWorld& world, std::span<const LabeledExample> observations) {
  auto p = world.prior();
  for (const auto& e : observations) {
    const std::size_t v = world.index_of(e.x);
    for (std::size_t k = 0; k < p.size(); ++k) {
      p[k] *= world.tables[k][v].at(e.y);
    }
  }
  double z = 0.0;
  for (double v : p) {
    z += v;
  }
  if (z <= 0.0) {
    throw NumericalError("data impossible under all hypotheses");
  }
  for (double& v : p) {
    v /= z;
  }
  return p;
}

/**
 * Full table of joint probabilities q(y_1..y_n | x_1..x_n) under the posterior
 * given `observations`. Entry a encodes labels in base C with y_1 most
 * significant.
 */
inline std::vector<double> oracle_joint_predictive(const GridWorld& world, std::span<const std::vector<double>> xs,
                                                   std::span<const LabeledExample> observations = {}) {
  std::size_t count = 1;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    count *= world.classes;
    if (count > 1'000'000) {
      throw ValidationError("oracle enumeration beyond 10^6 assignments");
    }
  }
  const auto post = oracle_posterior_probs(world, observations);
  std::vector<std::size_t> idx;
  for (const auto& x : xs) {
    idx.push_back(world.index_of(x));
  }
  std::vector<double> table(count, 0.0);
  for (std::size_t a = 0; a < count; ++a) {
    for (std::size_t k = 0; k < post.size(); ++k) {
      double p = post[k];
      std::size_t rest = a;
      for (std::size_t i = xs.size(); i-- > 0;) {
        p *= world.tables[k][idx[i]][rest % world.classes];
        rest /= world.classes;
      }
      table[a] += p;
    }
  }
  return table;
}

inline double entropy_of(std::span<const double> probs) {
  double h = 0.0;
  for (double p : probs) {
    if (p > 0.0) {
      h -= p * std::log(p);
    }
  }
  return h;
}

struct InfoQuantities {
  double joint_entropy = 0.0;
  std::vector<double> marginal_entropies;
  double total_correlation = 0.0;
  /// I[Omega; Y_i | x_i] per point.
  std::vector<double> bald;
  /// I[Omega; Y_1..Y_n | x_1..x_n].
  double joint_mutual_information = 0.0;
  /// I[Y_a; Y_b] for each requested (a, b) pair.
  std::vector<double> epig;
};

/// Entropies, TC, BALD and pairwise EPIG by direct enumeration.
inline InfoQuantities oracle_info_quantities(const GridWorld& world, std::span<const std::vector<double>> xs,
                                             std::span<const std::pair<std::size_t, std::size_t>> epig_pairs = {},
                                             std::span<const LabeledExample> observations = {}) {
  InfoQuantities out;
  const auto post = oracle_posterior_probs(world, observations);
  out.joint_entropy = entropy_of(oracle_joint_predictive(world, xs, observations));
  double expected_cond = 0.0;
  for (const auto& x : xs) {
    const std::vector<std::vector<double>> one{x};
    const double h = entropy_of(oracle_joint_predictive(world, one, observations));
    out.marginal_entropies.push_back(h);
    const std::size_t v = world.index_of(x);
    double cond = 0.0;
    for (std::size_t k = 0; k < post.size(); ++k) {
      cond += post[k] * entropy_of(world.tables[k][v]);
    }
    expected_cond += cond;
    out.bald.push_back(h - cond);
  }
  double sum_marginal = 0.0;
  for (double h : out.marginal_entropies) {
    sum_marginal += h;
  }
  out.total_correlation = sum_marginal - out.joint_entropy;
  out.joint_mutual_information = out.joint_entropy - expected_cond;
  for (const auto& [a, b] : epig_pairs) {
    const std::vector<std::vector<double>> pair{xs[a], xs[b]};
    const double h_ab = entropy_of(oracle_joint_predictive(world, pair, observations));
    out.epig.push_back(out.marginal_entropies[a] + out.marginal_entropies[b] - h_ab);
  }
  return out;
}

/// Posterior predictive p(y | x, observations), linear space.
inline std::vector<double> oracle_predictive(const GridWorld& world, std::span<const double> x,
                                             std::span<const LabeledExample> observations = {}) {
  const std::vector<std::vector<double>> one{std::vector<double>(x.begin(), x.end())};
  return oracle_joint_predictive(world, one, observations);
}

/**
 * Snapshot of an ensemble's likelihoods at `xs` as a grid world, so that the
 * oracle can audit quantities of arbitrary (e.g. neural) ensembles on a
 * finite set of inputs. Duplicate inputs share one vocabulary entry.
 */
inline GridWorld world_from_ensemble(const PosteriorEnsemble& ensemble, std::span<const std::vector<double>> xs) {
  GridWorld w;
  w.classes = ensemble.num_classes();
  for (const auto& x : xs) {
    bool seen = false;
    for (const auto& v : w.vocabulary) {
      seen = seen || v == x;
    }
    if (!seen) {
      w.vocabulary.push_back(x);
    }
  }
  const std::size_t c = w.classes;
  w.tables.assign(ensemble.size(), {});
  for (const auto& x : w.vocabulary) {
    const auto lp = ensemble.sample_log_probs(x);
    for (std::size_t j = 0; j < ensemble.size(); ++j) {
      std::vector<double> row(c);
      double s = 0.0;
      for (std::size_t k = 0; k < c; ++k) {
        row[k] = std::exp(lp[j * c + k]);
        s += row[k];
      }
      for (double& p : row) {
        p /= s;
      }
      w.tables[j].push_back(std::move(row));
    }
  }
  w.prior_log_weights.assign(ensemble.log_weights().begin(), ensemble.log_weights().end());
  return w;
}

// Fixture files: {"vocabulary": [[...]], "classes": C, "tables": [[[p..]..]..],
// "prior": [log-weights], "truth": k}.

inline nlohmann::json to_json(const GridWorld& w) {
  return {{"vocabulary", w.vocabulary}, {"classes", w.classes},        {"tables", w.tables},
          {"prior", w.prior_log_weights}, {"truth", w.truth}};
}

inline GridWorld from_json(const nlohmann::json& j) {
  GridWorld w;
  try {
    w.vocabulary = j.at("vocabulary").get<std::vector<std::vector<double>>>();
    w.classes = j.at("classes").get<std::size_t>();
    w.tables = j.at("tables").get<std::vector<std::vector<std::vector<double>>>>();
    w.prior_log_weights = j.at("prior").get<std::vector<double>>();
    w.truth = j.value("truth", std::size_t{0});
  } catch (const nlohmann::json::exception& ex) {
    throw ValidationError(std::string("malformed grid world: ") + ex.what());
  }
  w.validate();
  return w;
}

inline GridWorld load_world(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot open " + path);
  }
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& ex) {
    throw ValidationError("malformed grid world " + path + ": " + ex.what());
  }
}

inline void save_world(const GridWorld& w, const std::string& path) {
  std::ofstream out(path);
  if (!out) {
    throw IoError("cannot write " + path);
  }
  out << to_json(w).dump(1) << '\n';
}

}  // namespace obikit::oracle

#endif  // OBIKIT_ORACLE_HPP
