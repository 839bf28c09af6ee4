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

#ifndef OBIKIT_HARNESS_HPP
#define OBIKIT_HARNESS_HPP

#include <algorithm>
#include <array>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "json.hpp"
#include "obikit/acquisition.hpp"
#include "obikit/data.hpp"
#include "obikit/error.hpp"
#include "obikit/infometrics.hpp"
#include "obikit/models.hpp"
#include "obikit/numerics.hpp"
#include "obikit/obi.hpp"
#include "obikit/oracle.hpp"

/**
 * \file
 * \brief Experiment protocols: OBI versus retraining, the repeated-pool
 * benchmark, active learning with OBI, and result emission.
 *
 * Everything runs sequentially; every random choice comes from a stream
 * derived from the root seed, so a config and seed determine all CSV output.
 */

namespace obikit {

inline constexpr const char* kCodeVersion = "obikit-0.1.0";

// ---------------------------------------------------------------------------
// Configuration

struct DatasetSpec {
  /// clusters | idx | grid
  std::string kind = "clusters";
  std::size_t n_per_class = 200;
  std::size_t classes = 4;
  std::size_t dim = 2;
  double spread = 0.5;
  std::size_t initial_train = 8;
  std::size_t test_size = 400;
  /// 0 = everything not used for training or testing.
  std::size_t pool_size = 0;
  std::string idx_images;
  std::string idx_labels;
  std::size_t idx_limit = 0;
  /// coin | random | path to a grid world fixture.
  std::string world = "coin";
  std::size_t world_hypotheses = 6;
  std::size_t world_classes = 3;
  std::size_t world_vocabulary = 4;
  std::size_t grid_examples = 200;
};

struct ModelSpec {
  /// mc_dropout | deep_ensemble | grid
  std::string kind = "mc_dropout";
  MlpArchitecture arch;
  TrainConfig train;
  std::size_t samples = 128;
  std::size_t bootstrap = 64;
};

struct ExperimentConfig {
  DatasetSpec dataset;
  ModelSpec model;
  /// Acquisition rule for `acquire` and `al-obi`.
  std::string strategy = "bald";
  /// Rule that generates the non-random sequence for `obi-eval`.
  std::string sequence_strategy = "active_sampling";
  std::size_t T = 70;
  std::size_t k = 5;
  std::size_t t_min = 20;
  std::size_t trials = 5;
  std::size_t obi_subtrials = 5;
  double ess_retrain_threshold = 12.8;
  DuplicationSpec duplication;
  std::size_t batch_size = 4;
  std::size_t steps = 10;
  std::size_t random_batches = 100;
  std::size_t max_eval_points = 64;
  JointEstimatorOptions joint;
  std::uint64_t seed = 0;
  std::string out_dir;

  void validate() const {
    if (T == 0 || trials == 0 || obi_subtrials == 0 || batch_size == 0 || steps == 0 || model.samples == 0 ||
        model.bootstrap == 0) {
      throw ValidationError("experiment counts must be positive");
    }
    if (model.bootstrap > model.samples) {
      throw ValidationError("bootstrap size exceeds S");
    }
    if (!(ess_retrain_threshold > 0.0)) {
      throw ValidationError("ess retrain threshold must lie in (0, S]");
    }
    if (duplication.factor == 0) {
      throw ValidationError("duplication factor must be >= 1");
    }
    if (model.kind != "mc_dropout" && model.kind != "deep_ensemble" && model.kind != "grid") {
      throw ValidationError("unknown model kind: " + model.kind);
    }
    if (dataset.kind != "clusters" && dataset.kind != "idx" && dataset.kind != "grid") {
      throw ValidationError("unknown dataset kind: " + dataset.kind);
    }
    if ((model.kind == "grid") != (dataset.kind == "grid")) {
      throw ValidationError("grid models require grid datasets and vice versa");
    }
    (void)parse_strategy(strategy);
    (void)parse_strategy(sequence_strategy);
  }
};

inline nlohmann::json to_json(const ExperimentConfig& c) {
  const auto& d = c.dataset;
  const auto& m = c.model;
  return {
      {"dataset",
       {{"kind", d.kind},
        {"n_per_class", d.n_per_class},
        {"classes", d.classes},
        {"dim", d.dim},
        {"spread", d.spread},
        {"initial_train", d.initial_train},
        {"test_size", d.test_size},
        {"pool_size", d.pool_size},
        {"idx_images", d.idx_images},
        {"idx_labels", d.idx_labels},
        {"idx_limit", d.idx_limit},
        {"world", d.world},
        {"world_hypotheses", d.world_hypotheses},
        {"world_classes", d.world_classes},
        {"world_vocabulary", d.world_vocabulary},
        {"grid_examples", d.grid_examples}}},
      {"model",
       {{"kind", m.kind},
        {"hidden", m.arch.hidden},
        {"dropout_rate", m.arch.dropout_rate},
        {"init_scale", m.arch.init_scale},
        {"epochs", m.train.epochs},
        {"batch_size", m.train.batch_size},
        {"learning_rate", m.train.learning_rate},
        {"weight_decay", m.train.weight_decay},
        {"early_stop_tolerance", m.train.early_stop_tolerance},
        {"early_stop_window", m.train.early_stop_window},
        {"samples", m.samples},
        {"bootstrap", m.bootstrap}}},
      {"strategy", c.strategy},
      {"sequence_strategy", c.sequence_strategy},
      {"T", c.T},
      {"k", c.k},
      {"t_min", c.t_min},
      {"trials", c.trials},
      {"obi_subtrials", c.obi_subtrials},
      {"ess_retrain_threshold", c.ess_retrain_threshold},
      {"duplication", {{"factor", c.duplication.factor}, {"allow_reselection", c.duplication.allow_reselection}}},
      {"batch_size", c.batch_size},
      {"steps", c.steps},
      {"random_batches", c.random_batches},
      {"max_eval_points", c.max_eval_points},
      {"enumeration_limit", c.joint.enumeration_limit},
      {"mc_draws", c.joint.mc_draws},
      {"seed", c.seed},
      {"out_dir", c.out_dir},
  };
}

namespace detail {

template <typename T>
void read_field(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) {
    out = j.at(key).get<T>();
  }
}

}  // namespace detail

/// Missing keys keep their defaults; unknown keys are rejected so typos surface.
inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  static const std::set<std::string> top{"dataset", "model", "strategy", "sequence_strategy", "T", "k", "t_min",
                                         "trials", "obi_subtrials", "ess_retrain_threshold", "duplication",
                                         "batch_size", "steps", "random_batches", "max_eval_points",
                                         "enumeration_limit", "mc_draws", "seed", "out_dir"};
  if (!j.is_object()) {
    throw ValidationError("config must be a JSON object");
  }
  for (const auto& [key, value] : j.items()) {
    if (!top.contains(key)) {
      throw ValidationError("unknown config key: " + key);
    }
  }
  ExperimentConfig c;
  using detail::read_field;
  try {
    if (j.contains("dataset")) {
      const auto& d = j.at("dataset");
      read_field(d, "kind", c.dataset.kind);
      read_field(d, "n_per_class", c.dataset.n_per_class);
      read_field(d, "classes", c.dataset.classes);
      read_field(d, "dim", c.dataset.dim);
      read_field(d, "spread", c.dataset.spread);
      read_field(d, "initial_train", c.dataset.initial_train);
      read_field(d, "test_size", c.dataset.test_size);
      read_field(d, "pool_size", c.dataset.pool_size);
      read_field(d, "idx_images", c.dataset.idx_images);
      read_field(d, "idx_labels", c.dataset.idx_labels);
      read_field(d, "idx_limit", c.dataset.idx_limit);
      read_field(d, "world", c.dataset.world);
      read_field(d, "world_hypotheses", c.dataset.world_hypotheses);
      read_field(d, "world_classes", c.dataset.world_classes);
      read_field(d, "world_vocabulary", c.dataset.world_vocabulary);
      read_field(d, "grid_examples", c.dataset.grid_examples);
    }
    if (j.contains("model")) {
      const auto& m = j.at("model");
      read_field(m, "kind", c.model.kind);
      read_field(m, "hidden", c.model.arch.hidden);
      read_field(m, "dropout_rate", c.model.arch.dropout_rate);
      read_field(m, "init_scale", c.model.arch.init_scale);
      read_field(m, "epochs", c.model.train.epochs);
      read_field(m, "batch_size", c.model.train.batch_size);
      read_field(m, "learning_rate", c.model.train.learning_rate);
      read_field(m, "weight_decay", c.model.train.weight_decay);
      read_field(m, "early_stop_tolerance", c.model.train.early_stop_tolerance);
      read_field(m, "early_stop_window", c.model.train.early_stop_window);
      read_field(m, "samples", c.model.samples);
      read_field(m, "bootstrap", c.model.bootstrap);
    }
    read_field(j, "strategy", c.strategy);
    read_field(j, "sequence_strategy", c.sequence_strategy);
    read_field(j, "T", c.T);
    read_field(j, "k", c.k);
    read_field(j, "t_min", c.t_min);
    read_field(j, "trials", c.trials);
    read_field(j, "obi_subtrials", c.obi_subtrials);
    read_field(j, "ess_retrain_threshold", c.ess_retrain_threshold);
    if (j.contains("duplication")) {
      read_field(j.at("duplication"), "factor", c.duplication.factor);
      read_field(j.at("duplication"), "allow_reselection", c.duplication.allow_reselection);
    }
    read_field(j, "batch_size", c.batch_size);
    read_field(j, "steps", c.steps);
    read_field(j, "random_batches", c.random_batches);
    read_field(j, "max_eval_points", c.max_eval_points);
    read_field(j, "enumeration_limit", c.joint.enumeration_limit);
    read_field(j, "mc_draws", c.joint.mc_draws);
    read_field(j, "seed", c.seed);
    read_field(j, "out_dir", c.out_dir);
  } catch (const nlohmann::json::exception& ex) {
    throw ValidationError(std::string("malformed config: ") + ex.what());
  }
  c.validate();
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot open config " + path);
  }
  try {
    return config_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& ex) {
    throw ValidationError("malformed config " + path + ": " + ex.what());
  }
}

/// FNV-1a over the canonical JSON of everything except the output directory.
inline std::string config_hash(const ExperimentConfig& c) {
  auto j = to_json(c);
  j.erase("out_dir");
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : j.dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  std::array<char, 17> buf{};
  std::snprintf(buf.data(), buf.size(), "%016llx", static_cast<unsigned long long>(h));
  return buf.data();
}

struct RunManifest {
  std::string config_hash;
  nlohmann::json config;
  nlohmann::json seeds = nlohmann::json::object();
  std::vector<std::string> artifacts;
  std::string started_at;
  std::string finished_at;
  std::string code_version = kCodeVersion;
  nlohmann::json notes = nlohmann::json::object();
};

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::array<char, 32> buf{};
  std::strftime(buf.data(), buf.size(), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf.data();
}

inline RunManifest make_manifest(const ExperimentConfig& c, const std::string& command) {
  RunManifest m;
  m.config_hash = config_hash(c);
  m.config = to_json(c);
  m.seeds = {{"root", c.seed}};
  m.started_at = utc_timestamp();
  m.notes = {{"command", command},
             {"active_sequence_rule", c.sequence_strategy + " greedy, retrained after every acquisition"},
             {"execution", "sequential"}};
  return m;
}

inline nlohmann::json to_json(const RunManifest& m) {
  return {{"config_hash", m.config_hash}, {"config", m.config},           {"seeds", m.seeds},
          {"artifacts", m.artifacts},     {"started_at", m.started_at},   {"finished_at", m.finished_at},
          {"code_version", m.code_version}, {"notes", m.notes}};
}

// ---------------------------------------------------------------------------
// Data and models

struct ExperimentData {
  Dataset initial_train;
  Dataset pool;
  Dataset test;
  /// The pool before duplication.
  Dataset base_pool;
  std::optional<oracle::GridWorld> world;
};

/// Fixed disjoint split into initial training set, test set and pool (in that order of a shuffle).
inline ExperimentData partition(const Dataset& all, const DatasetSpec& spec, RngStream rng) {
  const std::size_t n = all.size();
  if (spec.initial_train + spec.test_size >= n) {
    throw ValidationError("dataset too small for the requested train/test sizes");
  }
  const auto perm = rng.permutation(n);
  auto take = [&](std::size_t from, std::size_t count, const char* source) {
    std::vector<std::size_t> idx(perm.begin() + static_cast<std::ptrdiff_t>(from),
                                 perm.begin() + static_cast<std::ptrdiff_t>(from + count));
    return all.subset(idx, source);
  };
  ExperimentData out;
  out.initial_train = take(0, spec.initial_train, "initial_train");
  out.test = take(spec.initial_train, spec.test_size, "test");
  const std::size_t rest = n - spec.initial_train - spec.test_size;
  const std::size_t pool = spec.pool_size == 0 ? rest : std::min(rest, spec.pool_size);
  out.pool = take(spec.initial_train + spec.test_size, pool, "pool");
  return out;
}

inline oracle::GridWorld resolve_world(const DatasetSpec& spec, RngStream rng) {
  if (spec.world == "coin") {
    return oracle::coin_world();
  }
  if (spec.world == "random") {
    return oracle::random_world(spec.world_hypotheses, spec.world_classes, spec.world_vocabulary, rng);
  }
  return oracle::load_world(spec.world);
}

/// Generates or loads the data, splits it, and duplicates the pool if requested.
inline ExperimentData prepare_data(const ExperimentConfig& c) {
  const RngStream root(c.seed, 0);
  const auto& spec = c.dataset;
  Dataset all;
  std::optional<oracle::GridWorld> world;
  if (spec.kind == "clusters") {
    all = generate_cluster_dataset(spec.n_per_class, spec.classes, spec.dim, spec.spread,
                                   root.derive(StreamPurpose::kData, 0));
  } else if (spec.kind == "idx") {
    all = load_idx_dataset(spec.idx_images, spec.idx_labels,
                           spec.idx_limit == 0 ? std::nullopt : std::optional<std::size_t>(spec.idx_limit));
  } else {
    world = resolve_world(spec, root.derive(StreamPurpose::kData, 3));
    all = oracle::sample_dataset(*world, spec.grid_examples, root.derive(StreamPurpose::kData, 0));
  }
  auto out = partition(all, spec, root.derive(StreamPurpose::kData, 1));
  out.world = std::move(world);
  out.base_pool = out.pool;
  if (c.duplication.factor > 1) {
    out.pool = duplicate_pool(out.pool, c.duplication, root.derive(StreamPurpose::kData, 2));
  }
  return out;
}

/// Architecture with input/output sizes taken from the data.
inline MlpArchitecture resolved_arch(const ExperimentConfig& c, const ExperimentData& data) {
  auto arch = c.model.arch;
  arch.input_dim = data.pool.dim();
  arch.classes = data.pool.num_classes();
  return arch;
}

/// Builds the ensemble constructor used by every protocol.
inline EnsembleFactory make_factory(const ExperimentConfig& c, const ExperimentData& data) {
  if (c.model.kind == "grid") {
    if (!data.world) {
      throw ValidationError("grid model without a grid world");
    }
    auto [family, prior] = oracle::to_family(*data.world);
    std::shared_ptr<const GridFamily> grid = family;
    return [grid, prior](const Dataset& d, RngStream) {
      return exact_grid_posterior(grid, prior, d.examples());
    };
  }
  const auto arch = resolved_arch(c, data);
  const auto train = c.model.train;
  const std::size_t s = c.model.samples;
  if (c.model.kind == "deep_ensemble") {
    return [arch, train, s](const Dataset& d, RngStream rng) {
      auto cfg = train;
      cfg.seed = rng.next_u64();
      return train_deep_ensemble(d, arch, cfg, s);
    };
  }
  return [arch, train, s](const Dataset& d, RngStream rng) { return train_mc_dropout(d, arch, train, s, rng); };
}

// ---------------------------------------------------------------------------
// OBI versus retraining

struct ObiSequences {
  AcquisitionSequence active;
  AcquisitionSequence random;
};

/// The two fixed acquisition sequences of length T drawn from the pool.
inline ObiSequences make_sequences(const ExperimentConfig& c, const ExperimentData& data, const EnsembleFactory& factory) {
  const RngStream root(c.seed, 0);
  AcquisitionConfig acfg;
  acfg.steps = c.T;
  acfg.retrain_every = 1;
  acfg.joint = c.joint;
  acfg.max_eval_points = c.max_eval_points;
  acfg.strategy = parse_strategy(c.sequence_strategy);
  ObiSequences out;
  out.active = run_acquisition(acfg, factory, data.initial_train, data.pool, data.pool,
                               root.derive(StreamPurpose::kSelection, 1));
  acfg.strategy = Strategy::kRandom;
  out.random = run_acquisition(acfg, factory, data.initial_train, data.pool, data.pool,
                               root.derive(StreamPurpose::kSelection, 2));
  return out;
}


namespace detail {

struct BranchMetrics {
  double cross_entropy = 0.0;
  double accuracy = 0.0;
  std::string flag;
};

inline BranchMetrics evaluate_branch(std::span<const double> log_weights, const LogProbTensor& lp, const Dataset& test) {
  const auto ce = marginal_cross_entropy(log_weights, lp, test.examples());
  return {ce.value, accuracy(log_weights, lp, test.examples()), ce.infinite ? "inf" : ""};
}

inline BranchMetrics collapsed_branch() { return {kInf, 0.0, "collapse"}; }

inline std::vector<double> to_vector(std::span<const double> xs) { return {xs.begin(), xs.end()}; }

}  // namespace detail

/**
 * For every prefix length t in [t_min, T - k] of both sequences, compares the
 * model trained on the prefix (baseline), the same model conditioned on the
 * next k points by OBI, and a fresh model trained on prefix plus those k
 * points (retrain). All three branches of a sub-trial use the same bootstrap
 * positions. The retrained model at t is the baseline model at t + k.
 */
inline std::vector<MetricRecord> obi_vs_retrain_eval(const ExperimentConfig& c, const ExperimentData& data,
                                                     const EnsembleFactory& factory, const ObiSequences& sequences) {
  if (c.T < c.t_min + c.k) {
    throw ValidationError("sequence length T must be >= t_min + k");
  }
  const std::vector<std::pair<std::string, const AcquisitionSequence*>> named{{"active", &sequences.active},
                                                                              {"random", &sequences.random}};
  for (const auto& [name, seq] : named) {
    if (seq->steps.size() < c.T) {
      throw ValidationError("the " + name + " sequence is shorter than T");
    }
  }
  const RngStream root(c.seed, 0);
  std::vector<MetricRecord> out;
  for (const auto& [name, seq] : named) {
    const auto examples = seq->examples();
    const std::span<const LabeledExample> all(examples);
    for (std::size_t trial = 0; trial < c.trials; ++trial) {
      const auto trial_rng = root.derive(StreamPurpose::kTrial, trial);
      std::map<std::size_t, std::pair<std::shared_ptr<const PosteriorEnsemble>, LogProbTensor>> models;
      auto model_at = [&](std::size_t u) -> const std::pair<std::shared_ptr<const PosteriorEnsemble>, LogProbTensor>& {
        auto it = models.find(u);
        if (it == models.end()) {
          auto e = std::make_shared<const PosteriorEnsemble>(
              factory(data.initial_train.concat(all.first(u)), trial_rng.derive(StreamPurpose::kRetrain, u)));
          auto lp = forward_log_probs(*e, data.test);
          it = models.emplace(u, std::make_pair(std::move(e), std::move(lp))).first;
        }
        return it->second;
      };
      for (std::size_t t = c.t_min; t + c.k <= c.T; ++t) {
        const auto& [base, base_lp] = model_at(t);
        const auto& [re, re_lp] = model_at(t + c.k);
        std::optional<ObiState> conditioned;
        try {
          conditioned = obi_observe_all(obi_init(base), all.subspan(t, c.k));
        } catch (const NumericalError&) {
          conditioned.reset();
        }
        for (std::size_t sub = 0; sub < c.obi_subtrials; ++sub) {
          const auto sub_rng = trial_rng.derive(StreamPurpose::kSubTrial, t).derive(StreamPurpose::kBootstrap, sub);
          const auto positions = bootstrap_positions(base->size(), c.model.bootstrap, sub_rng);
          const auto lp_base = base_lp.select_samples(positions);
          const auto baseline = detail::evaluate_branch(base->subset(positions).log_weights(), lp_base, data.test);
          auto obi = detail::collapsed_branch();
          if (conditioned) {
            try {
              const auto st = obi_bootstrap(*conditioned, c.model.bootstrap, sub_rng);
              obi = detail::evaluate_branch(st.normalized_log_weights(), lp_base, data.test);
            } catch (const NumericalError&) {
              obi = detail::collapsed_branch();
            }
          }
          auto retrain = detail::collapsed_branch();
          try {
            retrain = detail::evaluate_branch(re->subset(positions).log_weights(), re_lp.select_samples(positions),
                                              data.test);
          } catch (const NumericalError&) {
            retrain = detail::collapsed_branch();
          }
          for (const auto& [branch, m] :
               {std::pair<const char*, const detail::BranchMetrics*>{"baseline", &baseline}, {"obi", &obi},
                {"retrain", &retrain}}) {
            out.push_back({"cross_entropy", "obi_vs_retrain", m->cross_entropy, trial, sub, t, c.k, name, branch,
                           m->flag});
            out.push_back({"accuracy", "obi_vs_retrain", m->accuracy, trial, sub, t, c.k, name, branch,
                           m->flag == "collapse" ? m->flag : ""});
          }
        }
        models.erase(t);
      }
    }
  }
  return out;
}

/// Mean change relative to the baseline for one (sequence, branch) pair.
struct DeltaSummary {
  std::string sequence;
  std::string branch;
  Estimate delta_cross_entropy;
  Estimate delta_accuracy;
  std::size_t cells = 0;
  /// Cells left out of the means because a branch had infinite cross-entropy.
  std::size_t excluded = 0;
};

/// Means over trials, sub-trials and prefix lengths of branch minus baseline.
inline std::vector<DeltaSummary> summarize_obi_vs_retrain(const std::vector<MetricRecord>& records) {
  using Key = std::tuple<std::string, std::size_t, std::size_t, std::size_t>;
  std::map<Key, std::map<std::string, const MetricRecord*>> ce;
  std::map<Key, std::map<std::string, const MetricRecord*>> acc;
  std::vector<std::string> sequences;
  for (const auto& r : records) {
    if (r.name != "obi_vs_retrain") {
      continue;
    }
    if (std::find(sequences.begin(), sequences.end(), r.strategy) == sequences.end()) {
      sequences.push_back(r.strategy);
    }
    const Key key{r.strategy, r.trial, r.sub_trial, r.step};
    (r.metric == "cross_entropy" ? ce : acc)[key][r.branch] = &r;
  }
  std::vector<DeltaSummary> out;
  for (const auto& seq : sequences) {
    for (const std::string branch : {"obi", "retrain"}) {
      DeltaSummary s{seq, branch, {}, {}, 0, 0};
      std::vector<double> dce;
      std::vector<double> dacc;
      for (const auto& [key, branches] : ce) {
        if (std::get<0>(key) != seq) {
          continue;
        }
        ++s.cells;
        const auto* b = branches.at("baseline");
        const auto* x = branches.at(branch);
        if (!std::isfinite(b->value) || !std::isfinite(x->value)) {
          ++s.excluded;
          continue;
        }
        dce.push_back(x->value - b->value);
        const auto& a = acc.at(key);
        dacc.push_back(a.at(branch)->value - a.at("baseline")->value);
      }
      if (!dce.empty()) {
        s.delta_cross_entropy = detail::mean_and_se(dce);
        s.delta_accuracy = detail::mean_and_se(dacc);
      }
      out.push_back(s);
    }
  }
  return out;
}

inline void write_delta_table(const std::vector<DeltaSummary>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) {
    throw IoError("cannot write " + path);
  }
  out << "sequence,branch,delta_cross_entropy,delta_cross_entropy_se,delta_accuracy,delta_accuracy_se,cells,excluded\n";
  for (const auto& r : rows) {
    out << r.sequence << ',' << r.branch << ',' << format_double(r.delta_cross_entropy.mean) << ','
        << format_double(r.delta_cross_entropy.standard_error) << ',' << format_double(r.delta_accuracy.mean) << ','
        << format_double(r.delta_accuracy.standard_error) << ',' << r.cells << ',' << r.excluded << '\n';
  }
  if (!out) {
    throw IoError("failed writing " + path);
  }
}

// ---------------------------------------------------------------------------
// Repeated pool

struct BatchStats {
  /// Batch size minus the number of distinct original indices.
  std::size_t duplicates = 0;
  double total_correlation = 0.0;
  double joint_mutual_information = 0.0;
};

/// Duplicate count plus TC and I[Omega; batch], the latter two by brute-force enumeration.
inline BatchStats batch_stats(const PosteriorEnsemble& ensemble, const Dataset& pool, std::span<const std::size_t> batch) {
  std::set<std::size_t> originals;
  std::vector<std::vector<double>> xs;
  for (std::size_t i : batch) {
    originals.insert(pool.original_index(i));
    xs.push_back(pool[i].x);
  }
  const auto world = oracle::world_from_ensemble(ensemble, xs);
  const auto q = oracle::oracle_info_quantities(world, xs);
  return {batch.size() - originals.size(), q.total_correlation, q.joint_mutual_information};
}

/// TC of `count` uniformly drawn batches (without replacement within a batch).
inline std::vector<double> random_batch_tc(const PosteriorEnsemble& ensemble, const Dataset& pool, std::size_t batch,
                                           std::size_t count, RngStream rng,
                                           std::size_t limit = kDefaultEnumerationLimit) {
  if (batch == 0 || batch > pool.size()) {
    throw ValidationError("batch size must lie in [1, pool size]");
  }
  const auto lp = forward_log_probs(ensemble, pool);
  std::vector<double> out;
  out.reserve(count);
  for (std::size_t b = 0; b < count; ++b) {
    auto perm = rng.derive(StreamPurpose::kSelection, b).permutation(pool.size());
    perm.resize(batch);
    out.push_back(total_correlation(ensemble.log_weights(), lp.select_points(perm), limit));
  }
  return out;
}

inline const std::vector<Strategy>& repeated_pool_strategies() {
  static const std::vector<Strategy> kAll{Strategy::kRandom, Strategy::kBald, Strategy::kBatchBald, Strategy::kEpig};
  return kAll;
}

/**
 * Matched campaigns of `steps` batches of `batch_size` on the (duplicated)
 * pool, one per strategy and seed. Models are rebuilt after every batch with
 * the same streams the campaign used, so the model that selected batch b is
 * the one whose statistics are reported for it. For batch-BALD campaigns the
 * top-k marginal BALD batch the same model would have chosen is reported as
 * branch "topk_counterfactual". Random-batch TC on the duplicated and the
 * original pool is reported per seed.
 */
inline std::vector<MetricRecord> repeated_pool_benchmark(const ExperimentConfig& c, const ExperimentData& data,
                                                         const EnsembleFactory& factory,
                                                         std::span<const Strategy> strategies = repeated_pool_strategies()) {
  const RngStream root(c.seed, 0);
  const std::size_t m = c.batch_size;
  const std::string name = "repeated_pool";
  std::vector<MetricRecord> out;
  for (std::size_t seed = 0; seed < c.trials; ++seed) {
    const auto seed_rng = root.derive(StreamPurpose::kTrial, seed);
    const auto campaign_rng = seed_rng.derive(StreamPurpose::kSelection, 0);
    for (const auto strategy : strategies) {
      const auto tag = to_string(strategy);
      AcquisitionConfig acfg;
      acfg.strategy = strategy;
      acfg.steps = c.steps * m;
      acfg.retrain_every = m;
      acfg.allow_reselection = c.duplication.allow_reselection;
      acfg.joint = c.joint;
      acfg.max_eval_points = c.max_eval_points;
      const auto seq = run_acquisition(acfg, factory, data.initial_train, data.pool, data.pool, campaign_rng);
      const auto acquired = seq.examples();
      std::vector<std::size_t> taken;
      for (std::size_t b = 0; b <= c.steps; ++b) {
        const std::size_t n = b * m;
        const auto model = factory(data.initial_train.concat(std::span(acquired).first(n)),
                                   campaign_rng.derive(StreamPurpose::kRetrain, n));
        const auto test_lp = forward_log_probs(model, data.test);
        const auto metrics = detail::evaluate_branch(model.log_weights(), test_lp, data.test);
        out.push_back({"cross_entropy", name, metrics.cross_entropy, seed, 0, b, n, tag, "acquired", metrics.flag});
        out.push_back({"accuracy", name, metrics.accuracy, seed, 0, b, n, tag, "acquired", ""});
        if (b == c.steps) {
          break;
        }
        std::vector<std::size_t> batch;
        for (std::size_t i = n; i < n + m; ++i) {
          batch.push_back(seq.steps[i].pool_index);
        }
        auto emit_stats = [&](const BatchStats& s, const char* branch) {
          out.push_back({"duplicate_count", name, static_cast<double>(s.duplicates), seed, 0, b, n, tag, branch, ""});
          out.push_back({"total_correlation", name, s.total_correlation, seed, 0, b, n, tag, branch, ""});
          out.push_back({"joint_mutual_information", name, s.joint_mutual_information, seed, 0, b, n, tag, branch, ""});
        };
        emit_stats(batch_stats(model, data.pool, batch), "acquired");
        if (strategy == Strategy::kBatchBald) {
          const auto pool_lp = forward_log_probs(model, data.pool);
          const std::vector<std::size_t> none;
          const auto topk = top_k_bald(model.log_weights(), pool_lp, m,
                                       c.duplication.allow_reselection ? std::span<const std::size_t>(none) : taken);
          emit_stats(batch_stats(model, data.pool, topk.indices), "topk_counterfactual");
        }
        taken.insert(taken.end(), batch.begin(), batch.end());
      }
    }
    if (c.random_batches > 0 && m <= data.base_pool.size()) {
      const auto model =
          factory(data.initial_train, campaign_rng.derive(StreamPurpose::kRetrain, 0));
      const auto dup = random_batch_tc(model, data.pool, m, c.random_batches, seed_rng.derive(StreamPurpose::kSubTrial, 1),
                                       c.joint.enumeration_limit);
      const auto base = random_batch_tc(model, data.base_pool, m, c.random_batches,
                                        seed_rng.derive(StreamPurpose::kSubTrial, 2), c.joint.enumeration_limit);
      const std::string dup_branch = "r" + std::to_string(c.duplication.factor);
      for (std::size_t b = 0; b < dup.size(); ++b) {
        out.push_back({"random_batch_tc", name, dup[b], seed, 0, b, m, "random", dup_branch, ""});
      }
      for (std::size_t b = 0; b < base.size(); ++b) {
        out.push_back({"random_batch_tc", name, base[b], seed, 0, b, m, "random", "r1", ""});
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Active learning with OBI

struct AlObiResult {
  std::vector<MetricRecord> records;
  AcquisitionSequence sequence;
  /// Retrains after the initial fit.
  std::size_t retrain_count = 0;
};

/**
 * Acquisition loop whose scoring and prediction model is the OBI-conditioned
 * state. The model is rebuilt on everything acquired so far when ess drops to
 * the threshold or below, or when an observation collapses the weights. The
 * streams match run_acquisition, so threshold = S reproduces it with
 * retrain_every = 1.
 */
inline AlObiResult al_with_obi(const ExperimentConfig& c, const ExperimentData& data, const EnsembleFactory& factory,
                               RngStream rng, std::size_t trial = 0) {
  const auto strategy = parse_strategy(c.strategy);
  const auto& pool = data.pool;
  if (!c.duplication.allow_reselection && c.T > pool.size()) {
    throw ValidationError("pool exhausted without reselection");
  }
  const std::string name = "al_obi";
  const auto tag = to_string(strategy);
  AlObiResult res;
  res.sequence.seed = rng.seed();
  const auto eval_points = detail::eval_subset(pool, c.max_eval_points, rng.derive(StreamPurpose::kSelection, 0));
  std::vector<std::vector<double>> eval_xs;
  for (const auto& e : eval_points) {
    eval_xs.push_back(e.x);
  }
  std::vector<std::size_t> random_order;
  auto select_rng = rng.derive(StreamPurpose::kSelection);
  if (strategy == Strategy::kRandom) {
    random_order = select_rng.permutation(pool.size());
  }

  std::vector<LabeledExample> acquired;
  std::vector<bool> taken(pool.size(), false);
  std::optional<ObiState> state;
  LogProbTensor pool_lp;
  LogProbTensor eval_lp;
  LogProbTensor test_lp;
  auto rebuild = [&](std::size_t t) {
    auto e = std::make_shared<const PosteriorEnsemble>(
        factory(data.initial_train.concat(acquired), rng.derive(StreamPurpose::kRetrain, t)));
    if (c.ess_retrain_threshold > static_cast<double>(e->size()) * (1.0 + 1e-12)) {
      throw ValidationError("ess retrain threshold must lie in (0, S]");
    }
    pool_lp = forward_log_probs(*e, pool);
    if (strategy == Strategy::kEpig || strategy == Strategy::kActiveSampling) {
      eval_lp = forward_log_probs(*e, eval_xs);
    }
    test_lp = forward_log_probs(*e, data.test);
    state = obi_init(std::move(e));
  };
  auto evaluate = [&](std::size_t step, const std::string& flag) {
    const auto w = state->normalized_log_weights();
    const auto m = detail::evaluate_branch(w, test_lp, data.test);
    res.records.push_back({"cross_entropy", name, m.cross_entropy, trial, 0, step, acquired.size(), tag, "obi",
                           flag.empty() ? m.flag : flag});
    res.records.push_back({"accuracy", name, m.accuracy, trial, 0, step, acquired.size(), tag, "obi", flag});
    res.records.push_back({"ess", name, state->ess(), trial, 0, step, acquired.size(), tag, "obi", flag});
  };

  rebuild(0);
  evaluate(0, "");
  bool collapsed = false;
  for (std::size_t t = 0; t < c.T; ++t) {
    if (t > 0 && (collapsed || state->ess() <= c.ess_retrain_threshold * (1.0 + 1e-9))) {
      res.records.push_back({"retrain", name, state->ess(), trial, 0, t, acquired.size(), tag, "obi",
                             collapsed ? "collapse" : ""});
      rebuild(t);
      ++res.retrain_count;
      collapsed = false;
    }
    const auto w = state->normalized_log_weights();
    std::vector<double> scores;
    std::optional<std::size_t> pick;
    double pick_score = 0.0;
    switch (strategy) {
      case Strategy::kRandom:
        pick = c.duplication.allow_reselection ? static_cast<std::size_t>(select_rng.uniform_index(pool.size()))
                                               : random_order[t];
        break;
      case Strategy::kBald:
        scores = bald_scores(w, pool_lp);
        break;
      case Strategy::kBatchBald: {
        std::vector<std::size_t> excluded;
        if (!c.duplication.allow_reselection) {
          for (std::size_t i = 0; i < taken.size(); ++i) {
            if (taken[i]) {
              excluded.push_back(i);
            }
          }
        }
        const auto b = batch_bald_greedy(w, pool_lp, 1, c.duplication.allow_reselection,
                                         rng.derive(StreamPurpose::kMonteCarlo, t), {}, excluded, c.joint);
        pick = b.indices.front();
        pick_score = b.scores.front();
        break;
      }
      case Strategy::kEpig:
        scores = epig_scores(w, pool_lp, eval_lp, {}, c.joint, rng.derive(StreamPurpose::kMonteCarlo, t));
        break;
      case Strategy::kActiveSampling: {
        const std::vector<double> extra(w.size(), 0.0);
        for (const auto& v : active_sampling_scores(w, extra, pool_lp, pool.examples(), eval_lp, eval_points)) {
          scores.push_back(v.value);
        }
        break;
      }
    }
    if (!pick) {
      pick = detail::argmax_eligible(scores, taken, c.duplication.allow_reselection);
      if (!pick) {
        throw ValidationError("pool exhausted without reselection");
      }
      pick_score = scores[*pick];
    }
    const auto& e = pool[*pick];
    res.sequence.steps.push_back({*pick, pool.original_index(*pick), e.x, e.y, pick_score, tag});
    acquired.push_back(e);
    taken[*pick] = true;
    try {
      state = obi_observe(*state, e);
      evaluate(t + 1, "");
    } catch (const NumericalError&) {
      // Keep the pre-collapse state for scoring until the forced retrain.
      collapsed = true;
      res.records.push_back({"cross_entropy", name, kInf, trial, 0, t + 1, acquired.size(), tag, "obi", "collapse"});
    }
  }
  res.records.push_back({"retrain_count", name, static_cast<double>(res.retrain_count), trial, 0, c.T, c.T, tag, "obi", ""});
  res.records.push_back(
      {"always_retrain_count", name, static_cast<double>(c.T - 1), trial, 0, c.T, c.T, tag, "always_retrain", ""});
  return res;
}

/// One al_with_obi run per trial with streams root.derive(kTrial, trial).
inline std::vector<MetricRecord> al_with_obi_trials(const ExperimentConfig& c, const ExperimentData& data,
                                                    const EnsembleFactory& factory) {
  const RngStream root(c.seed, 0);
  std::vector<MetricRecord> out;
  for (std::size_t trial = 0; trial < c.trials; ++trial) {
    auto r = al_with_obi(c, data, factory, root.derive(StreamPurpose::kTrial, trial), trial);
    out.insert(out.end(), r.records.begin(), r.records.end());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Result emission

inline constexpr const char* kMetricsHeader = "metric,name,value,trial,sub_trial,step,n,strategy,branch,flag";

inline void write_metrics_csv(const std::vector<MetricRecord>& records, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw IoError("cannot write " + path);
  }
  out << kMetricsHeader << '\n';
  for (const auto& r : records) {
    for (const auto* s : {&r.metric, &r.name, &r.strategy, &r.branch, &r.flag}) {
      if (s->find_first_of(",\n\r\"") != std::string::npos) {
        throw ValidationError("metric record field contains a CSV delimiter: " + *s);
      }
    }
    out << r.metric << ',' << r.name << ',' << format_double(r.value) << ',' << r.trial << ',' << r.sub_trial << ','
        << r.step << ',' << r.n << ',' << r.strategy << ',' << r.branch << ',' << r.flag << '\n';
  }
  if (!out) {
    throw IoError("failed writing " + path);
  }
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

inline std::size_t parse_count(const std::string& s, const std::string& path) {
  std::size_t pos = 0;
  try {
    const auto v = std::stoull(s, &pos);
    if (pos == s.size()) {
      return static_cast<std::size_t>(v);
    }
  } catch (const std::exception&) {
  }
  throw ValidationError("bad integer '" + s + "' in " + path);
}

inline double parse_real(const std::string& s, const std::string& path) {
  if (s == "inf") {
    return kInf;
  }
  if (s == "-inf") {
    return kNegInf;
  }
  if (s == "nan") {
    return std::numeric_limits<double>::quiet_NaN();
  }
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) {
    throw ValidationError("bad number '" + s + "' in " + path);
  }
  return v;
}

}  // namespace detail

inline std::vector<MetricRecord> read_metrics_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open " + path);
  }
  std::string line;
  if (!std::getline(in, line) || detail::split_csv_line(line) != detail::split_csv_line(kMetricsHeader)) {
    throw ValidationError("missing metrics header in " + path);
  }
  std::vector<MetricRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) {
      continue;
    }
    const auto f = detail::split_csv_line(line);
    if (f.size() != 10) {
      throw ValidationError("metrics row with " + std::to_string(f.size()) + " fields in " + path);
    }
    out.push_back({f[0], f[1], detail::parse_real(f[2], path), detail::parse_count(f[3], path),
                   detail::parse_count(f[4], path), detail::parse_count(f[5], path), detail::parse_count(f[6], path),
                   f[7], f[8], f[9]});
  }
  return out;
}

/**
 * Long-format curves for one protocol name: mean and standard error over
 * trials and sub-trials for every (metric, strategy, branch, step, n).
 * Flagged records are counted but left out of the mean.
 */
inline void write_curves_csv(const std::vector<MetricRecord>& records, const std::string& name, const std::string& path) {
  using Key = std::tuple<std::string, std::string, std::string, std::size_t, std::size_t>;
  std::map<Key, std::pair<std::vector<double>, std::size_t>> groups;
  for (const auto& r : records) {
    if (r.name != name) {
      continue;
    }
    auto& g = groups[{r.metric, r.strategy, r.branch, r.step, r.n}];
    if (r.flag.empty() && std::isfinite(r.value)) {
      g.first.push_back(r.value);
    } else {
      ++g.second;
    }
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw IoError("cannot write " + path);
  }
  out << "metric,strategy,branch,step,n,mean,standard_error,count,flagged\n";
  for (const auto& [key, g] : groups) {
    const auto est = g.first.empty() ? Estimate{std::numeric_limits<double>::quiet_NaN(), 0.0}
                                     : detail::mean_and_se(g.first);
    out << std::get<0>(key) << ',' << std::get<1>(key) << ',' << std::get<2>(key) << ',' << std::get<3>(key) << ','
        << std::get<4>(key) << ',' << format_double(est.mean) << ',' << format_double(est.standard_error) << ','
        << g.first.size() << ',' << g.second << '\n';
  }
  if (!out) {
    throw IoError("failed writing " + path);
  }
}

inline void write_manifest(const RunManifest& manifest, const std::string& path) {
  std::ofstream out(path);
  if (!out) {
    throw IoError("cannot write " + path);
  }
  out << to_json(manifest).dump(2) << '\n';
}

/// Writes metrics.csv, one curves_<name>.csv per protocol and manifest.json into `out_dir`.
inline RunManifest emit_results(const std::vector<MetricRecord>& records, RunManifest manifest,
                                const std::string& out_dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) {
    throw IoError("cannot create " + out_dir + ": " + ec.message());
  }
  const fs::path dir(out_dir);
  write_metrics_csv(records, (dir / "metrics.csv").string());
  manifest.artifacts.push_back("metrics.csv");
  std::set<std::string> names;
  for (const auto& r : records) {
    names.insert(r.name);
  }
  for (const auto& n : names) {
    const std::string file = "curves_" + n + ".csv";
    write_curves_csv(records, n, (dir / file).string());
    manifest.artifacts.push_back(file);
  }
  manifest.artifacts.push_back("manifest.json");
  manifest.finished_at = utc_timestamp();
  write_manifest(manifest, (dir / "manifest.json").string());
  return manifest;
}

}  // namespace obikit

#endif  // OBIKIT_HARNESS_HPP
