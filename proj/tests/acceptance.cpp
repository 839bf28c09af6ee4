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

// Acceptance checks. Each criterion prints one PASS/FAIL line; run one with
// --criterion N or all of them without arguments.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "obikit/harness.hpp"

namespace {

using namespace obikit;

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) {
    s += x;
  }
  return v.empty() ? std::nan("") : s / static_cast<double>(v.size());
}

double median_of(std::vector<double> v) {
  if (v.empty()) {
    return std::nan("");
  }
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 == 1 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

std::vector<double> select(const std::vector<MetricRecord>& records, const std::string& metric,
                           const std::string& strategy, const std::string& branch) {
  std::vector<double> out;
  for (const auto& r : records) {
    if (r.metric == metric && r.strategy == strategy && r.branch == branch) {
      out.push_back(r.value);
    }
  }
  return out;
}

/// Running maximum of absolute deviations with the name of the worst quantity.
struct Deviation {
  double worst = 0.0;
  std::string where = "none";
  std::size_t checks = 0;

  void add(double main_path, double oracle, const std::string& what) {
    ++checks;
    const double d = std::isnan(main_path) || std::isnan(oracle) ? kInf : std::abs(main_path - oracle);
    if (d > worst) {
      worst = d;
      where = what;
    }
  }
};

PosteriorEnsemble full_ensemble(const oracle::GridWorld& w) {
  const auto [family, prior] = oracle::to_family(w);
  std::vector<std::size_t> ids(w.tables.size());
  std::iota(ids.begin(), ids.end(), 0);
  return PosteriorEnsemble(family, ids, prior);
}

/// Every main-path quantity on one world against brute-force enumeration.
void compare_world(const oracle::GridWorld& w, std::span<const std::vector<double>> xs,
                   std::span<const LabeledExample> observed, Deviation& dev) {
  const auto state = obi_observe_all(obi_init(full_ensemble(w)), observed);
  const auto post = state.posterior();
  const auto oracle_post = oracle::oracle_posterior(w, observed);
  const auto lw = state.normalized_log_weights();
  for (std::size_t k = 0; k < lw.size(); ++k) {
    dev.add(std::exp(lw[k]), std::exp(oracle_post[k]), "OBI posterior");
  }
  for (const auto& x : w.vocabulary) {
    const auto p = obi_predict(state, x);
    const auto q = oracle::oracle_predictive(w, x, observed);
    const auto m = marginal_predictive(post, x);
    for (std::size_t c = 0; c < w.classes; ++c) {
      dev.add(p.prob(c), q[c], "OBI prediction");
      dev.add(std::exp(m[c]), q[c], "marginal predictive");
    }
  }
  const auto table = oracle::oracle_joint_predictive(w, xs, observed);
  LabelAssignment ys(xs.size(), 0);
  for (std::size_t a = 0; a < table.size(); ++a) {
    std::size_t rest = a;
    for (std::size_t i = xs.size(); i-- > 0;) {
      ys[i] = rest % w.classes;
      rest /= w.classes;
    }
    dev.add(std::exp(joint_log_prob(post, xs, ys)), table[a], "joint predictive");
  }
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    pairs.emplace_back(i, (i + 1) % xs.size());
  }
  const auto q = oracle::oracle_info_quantities(w, xs, pairs, observed);
  dev.add(joint_entropy_exact(post, xs), q.joint_entropy, "joint entropy");
  dev.add(total_correlation(post, xs), q.total_correlation, "total correlation");
  for (std::size_t i = 0; i < xs.size(); ++i) {
    dev.add(bald_score(post, xs[i]), q.bald[i], "BALD");
    const std::vector<std::vector<double>> cand{xs[pairs[i].first]};
    const std::vector<std::vector<double>> eval{xs[pairs[i].second]};
    dev.add(epig_score(post, cand, eval), q.epig[i], "EPIG");
  }
}

Verdict criterion_1() {
  Deviation dev;
  std::size_t worlds = 0;
  {
    const auto w = oracle::coin_world();
    const std::vector<std::vector<double>> xs{{0.0}, {0.0}, {0.0}};
    const std::vector<LabeledExample> obs{{{0.0}, 1}, {{0.0}, 0}, {{0.0}, 1}};
    for (std::size_t n = 0; n <= obs.size(); ++n) {
      compare_world(w, xs, std::span(obs).first(n), dev);
    }
    ++worlds;
  }
  const RngStream root(2026, 1);
  for (std::uint64_t s = 0; s < 24; ++s) {
    auto rng = root.derive(StreamPurpose::kTrial, s);
    const std::size_t k = 1 + rng.uniform_index(8);
    const std::size_t c = 2 + rng.uniform_index(3);
    const std::size_t v = 1 + rng.uniform_index(4);
    const auto w = oracle::random_world(k, c, v, rng.derive(StreamPurpose::kInit));
    const std::size_t n = 1 + rng.uniform_index(6);
    std::vector<std::vector<double>> xs;
    for (std::size_t i = 0; i < n; ++i) {
      xs.push_back(w.vocabulary[rng.uniform_index(v)]);
    }
    const auto obs = oracle::sample_dataset(w, rng.uniform_index(6), rng.derive(StreamPurpose::kData)).examples();
    compare_world(w, xs, obs, dev);
    ++worlds;
  }
  return {dev.worst < 1e-9, std::to_string(worlds) + " worlds, " + std::to_string(dev.checks) +
                                " comparisons, max deviation " + fmt(dev.worst) + " (" + dev.where + ") vs 1e-9"};
}

/// Largest |sum of OBI conditional log-losses + joint log-probability| over `sequences`.
double chain_rule_gap(const PosteriorEnsemble& ensemble, const std::vector<std::vector<LabeledExample>>& sequences) {
  double worst = 0.0;
  for (const auto& seq : sequences) {
    auto state = obi_init(ensemble);
    double loss = 0.0;
    std::vector<std::vector<double>> xs;
    LabelAssignment ys;
    for (const auto& e : seq) {
      loss -= obi_predict(state, e.x)[e.y];
      state = obi_observe(state, e);
      xs.push_back(e.x);
      ys.push_back(e.y);
    }
    worst = std::max(worst, std::abs(loss + joint_log_prob(ensemble, xs, ys)));
  }
  return worst;
}

Verdict criterion_2() {
  const RngStream root(2026, 2);
  std::vector<std::vector<LabeledExample>> grid_sequences;
  double grid_gap = 0.0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    auto rng = root.derive(StreamPurpose::kTrial, s);
    const auto w = oracle::random_world(2 + rng.uniform_index(7), 2 + rng.uniform_index(3), 1 + rng.uniform_index(4),
                                        rng.derive(StreamPurpose::kInit));
    const auto seq = oracle::sample_dataset(w, 1 + rng.uniform_index(12), rng.derive(StreamPurpose::kData)).examples();
    grid_gap = std::max(grid_gap, chain_rule_gap(full_ensemble(w), {seq}));
  }
  const auto data = generate_cluster_dataset(40, 4, 2, 0.5, root.derive(StreamPurpose::kData));
  MlpArchitecture arch;
  arch.hidden = 32;
  TrainConfig train;
  train.epochs = 60;
  train.learning_rate = 1e-2;
  auto init_rng = root.derive(StreamPurpose::kRetrain);
  const auto ensemble = train_mc_dropout(data.subset(std::vector<std::size_t>{0, 1, 2, 3, 40, 41, 42, 43, 80, 81, 82, 83,
                                                                              120, 121, 122, 123}),
                                         arch, train, 16, init_rng);
  std::vector<std::vector<LabeledExample>> mlp_sequences;
  for (std::uint64_t s = 0; s < 100; ++s) {
    auto rng = root.derive(StreamPurpose::kSelection, s);
    std::vector<LabeledExample> seq;
    const std::size_t n = 1 + rng.uniform_index(20);
    for (std::size_t i = 0; i < n; ++i) {
      seq.push_back(data[rng.uniform_index(data.size())]);
    }
    mlp_sequences.push_back(std::move(seq));
  }
  const double mlp_gap = chain_rule_gap(ensemble, mlp_sequences);
  const double worst = std::max(grid_gap, mlp_gap);
  return {worst < 1e-10, "max gap grid " + fmt(grid_gap) + ", S=16 dropout " + fmt(mlp_gap) + " vs 1e-10"};
}

ExperimentConfig grid_obi_config(const std::string& world, std::uint64_t seed) {
  ExperimentConfig c;
  c.dataset.kind = "grid";
  c.dataset.world = world;
  c.dataset.world_hypotheses = 8;
  c.dataset.world_classes = 3;
  c.dataset.world_vocabulary = 6;
  c.dataset.grid_examples = 200;
  c.dataset.initial_train = 2;
  c.dataset.test_size = 60;
  c.model.kind = "grid";
  c.model.samples = world == "coin" ? 3 : 8;
  c.model.bootstrap = c.model.samples;
  c.T = 20;
  c.k = 5;
  c.t_min = 2;
  c.trials = 2;
  c.obi_subtrials = 2;
  c.seed = seed;
  return c;
}

Verdict criterion_3() {
  double worst = 0.0;
  std::size_t cells = 0;
  for (const auto& [world, seed] : std::vector<std::pair<std::string, std::uint64_t>>{
           {"coin", 1}, {"random", 2}, {"random", 3}}) {
    const auto c = grid_obi_config(world, seed);
    const auto data = prepare_data(c);
    const auto factory = make_factory(c, data);
    const auto records = obi_vs_retrain_eval(c, data, factory, make_sequences(c, data, factory));
    std::map<std::tuple<std::string, std::size_t, std::size_t, std::size_t>, std::map<std::string, double>> ce;
    for (const auto& r : records) {
      if (r.metric == "cross_entropy") {
        ce[{r.strategy, r.trial, r.sub_trial, r.step}][r.branch] = r.value;
      }
    }
    for (const auto& [key, b] : ce) {
      const double gap = std::abs((b.at("obi") - b.at("baseline")) - (b.at("retrain") - b.at("baseline")));
      worst = std::max(worst, std::isnan(gap) ? kInf : gap);
      ++cells;
    }
  }
  return {worst < 1e-9, std::to_string(cells) + " cells, max |dCE(OBI) - dCE(retrain)| " + fmt(worst) + " vs 1e-9"};
}

/// The desk-scale synthetic task: four overlapping clusters in eight dimensions.
ExperimentConfig desk_config() {
  ExperimentConfig c;
  c.dataset.spread = 1.0;
  c.dataset.dim = 8;
  c.model.samples = 128;
  c.model.bootstrap = 64;
  c.T = 70;
  c.k = 5;
  c.t_min = 20;
  c.trials = 5;
  c.obi_subtrials = 5;
  c.seed = 0;
  return c;
}

Verdict table_directions(const ExperimentConfig& c) {
  const auto data = prepare_data(c);
  const auto factory = make_factory(c, data);
  const auto records = obi_vs_retrain_eval(c, data, factory, make_sequences(c, data, factory));
  std::map<std::string, DeltaSummary> by;
  for (const auto& row : summarize_obi_vs_retrain(records)) {
    by[row.sequence + "/" + row.branch] = row;
  }
  const double obi_active = by.at("active/obi").delta_cross_entropy.mean;
  const double obi_random = by.at("random/obi").delta_cross_entropy.mean;
  const bool a = obi_active > obi_random;
  bool b = true;
  bool cc = true;
  std::string detail = "dCE(OBI) active " + fmt(obi_active) + " > random " + fmt(obi_random) + (a ? " ok" : " NO");
  for (const char* seq : {"active", "random"}) {
    const auto& r = by.at(std::string(seq) + "/retrain");
    b = b && r.delta_cross_entropy.mean < 0.0;
    cc = cc && r.delta_accuracy.mean > 0.0;
    detail += std::string("; retrain ") + seq + " dCE " + fmt(r.delta_cross_entropy.mean) + " dAcc " +
              fmt(r.delta_accuracy.mean);
  }
  detail += std::string(b ? "" : " [dCE(retrain) < 0 violated]") + (cc ? "" : " [dAcc(retrain) > 0 violated]");
  return {a && b && cc, detail};
}

Verdict criterion_4() { return table_directions(desk_config()); }

/// Optional IDX repeat, enabled when OBIKIT_IDX_DIR holds the MNIST training files.
std::optional<Verdict> criterion_4_idx() {
  const char* dir = std::getenv("OBIKIT_IDX_DIR");
  if (dir == nullptr) {
    return std::nullopt;
  }
  const auto images = (std::filesystem::path(dir) / "train-images-idx3-ubyte").string();
  const auto labels = (std::filesystem::path(dir) / "train-labels-idx1-ubyte").string();
  if (!std::filesystem::exists(images) || !std::filesystem::exists(labels)) {
    return std::nullopt;
  }
  auto c = desk_config();
  c.dataset.kind = "idx";
  c.dataset.idx_images = images;
  c.dataset.idx_labels = labels;
  c.dataset.idx_limit = 10000;
  c.dataset.initial_train = 20;
  c.dataset.test_size = 1000;
  return table_directions(c);
}

Verdict criterion_5() {
  ExperimentConfig c;
  c.duplication.factor = 4;
  c.batch_size = 4;
  c.steps = 10;
  c.trials = 5;
  c.random_batches = 0;
  c.seed = 0;
  const auto data = prepare_data(c);
  const std::vector<Strategy> strategies{Strategy::kBald, Strategy::kBatchBald};
  const auto records = repeated_pool_benchmark(c, data, make_factory(c, data), strategies);
  const double dup_topk = median_of(select(records, "duplicate_count", "bald", "acquired"));
  const double dup_batch = median_of(select(records, "duplicate_count", "batch_bald", "acquired"));
  const double mi_batch = mean_of(select(records, "joint_mutual_information", "batch_bald", "acquired"));
  const double mi_topk = mean_of(select(records, "joint_mutual_information", "batch_bald", "topk_counterfactual"));
  const double tc_batch = mean_of(select(records, "total_correlation", "batch_bald", "acquired"));
  const double tc_topk = mean_of(select(records, "total_correlation", "batch_bald", "topk_counterfactual"));
  const bool a = dup_topk > dup_batch;
  const bool b = mi_batch > mi_topk;
  return {a && b, "median duplicates top-k " + fmt(dup_topk) + " > batch-BALD " + fmt(dup_batch) +
                      "; joint information batch-BALD " + fmt(mi_batch) + " > top-k " + fmt(mi_topk) +
                      " (TC batch-BALD " + fmt(tc_batch) + ", top-k " + fmt(tc_topk) + ")"};
}

Verdict criterion_6() {
  ExperimentConfig c;
  c.model.samples = 16;
  c.model.bootstrap = 16;
  c.batch_size = 4;
  c.random_batches = 100;
  c.seed = 0;
  const auto base = prepare_data(c);
  const auto factory = make_factory(c, base);
  const auto model = factory(base.initial_train, RngStream(c.seed, 0).derive(StreamPurpose::kRetrain, 0));
  const auto duplicated = duplicate_pool(base.pool, {8, false}, RngStream(c.seed, 0).derive(StreamPurpose::kData, 2));
  const RngStream rng(c.seed, 6);
  const double r8 = mean_of(random_batch_tc(model, duplicated, 4, 100, rng.derive(StreamPurpose::kSubTrial, 8)));
  const double r1 = mean_of(random_batch_tc(model, base.pool, 4, 100, rng.derive(StreamPurpose::kSubTrial, 1)));
  const double ratio = r8 / r1;
  return {ratio >= 3.0, "pool " + std::to_string(base.pool.size()) + ", mean TC R=8 " + fmt(r8) + ", R=1 " + fmt(r1) +
                            ", ratio " + fmt(ratio) + " vs >= 3"};
}

double max_relative_gradient_error() {
  MlpArchitecture arch{3, 5, 3, 0.5, 1.0};
  RngStream rng(2026, 7);
  double worst = 0.0;
  for (std::uint64_t trial = 0; trial < 5; ++trial) {
    const auto p = MlpParams::he_init(arch, rng.derive(StreamPurpose::kInit, trial));
    std::vector<LabeledExample> batch;
    std::vector<DropoutMask> masks;
    auto mr = rng.derive(StreamPurpose::kDropout, trial);
    for (std::size_t i = 0; i < 8; ++i) {
      batch.push_back({{rng.normal(), rng.normal(), rng.normal()}, i % 3});
      masks.push_back(sample_dropout_mask(arch.hidden, arch.dropout_rate, mr));
    }
    for (const bool dropout : {false, true}) {
      const std::span<const DropoutMask> m = dropout ? std::span<const DropoutMask>(masks) : std::span<const DropoutMask>();
      const auto g = mlp_gradient(p, batch, m);
      const double h = 1e-5;
      for (std::size_t k = 0; k < p.values().size(); ++k) {
        auto plus = p;
        auto minus = p;
        plus.values()[k] += h;
        minus.values()[k] -= h;
        const double fd = (mlp_gradient(plus, batch, m).loss - mlp_gradient(minus, batch, m).loss) / (2 * h);
        const double denom = std::max({std::abs(fd), std::abs(g.grad[k]), 1e-8});
        worst = std::max(worst, std::abs(fd - g.grad[k]) / denom);
      }
    }
  }
  return worst;
}

/// Counts NaNs produced by the stress suite; collapse errors are the documented outcome, not failures.
std::size_t nan_stress(std::string& where) {
  std::size_t nans = 0;
  auto check = [&](double v, const std::string& what) {
    if (std::isnan(v)) {
      ++nans;
      where = what;
    }
  };
  // Hypotheses with zero likelihoods: weights hit -inf but some survive.
  oracle::GridWorld w;
  w.vocabulary = {{0.0}, {1.0}};
  w.classes = 2;
  w.tables = {{{1.0, 0.0}, {0.5, 0.5}}, {{0.0, 1.0}, {0.3, 0.7}}, {{0.6, 0.4}, {1.0, 0.0}}};
  w.prior_log_weights = {std::log(0.2), std::log(0.3), std::log(0.5)};
  auto state = obi_init(full_ensemble(w));
  state = obi_observe(state, {{0.0}, 0});
  check(state.ess(), "ESS with -inf weights");
  const auto post = state.posterior();
  const std::vector<std::vector<double>> xs{{0.0}, {1.0}, {1.0}};
  for (const auto& x : w.vocabulary) {
    const auto p = obi_predict(state, x);
    check(p[0], "prediction with -inf weights");
    check(p[1], "prediction with -inf weights");
    check(bald_score(post, x), "BALD with -inf weights");
  }
  check(joint_entropy_exact(post, xs), "joint entropy with -inf weights");
  check(total_correlation(post, xs), "TC with -inf weights");
  check(epig_score(post, std::span(xs).first(1), std::span(xs).last(2)), "EPIG with -inf weights");
  const Dataset eval({{{1.0}, 0}, {{1.0}, 1}}, 1, 2);
  check(marginal_cross_entropy(post.log_weights(), forward_log_probs(post, eval), eval.examples()).value,
        "CE with -inf weights");
  try {
    (void)obi_observe(state, {{1.0}, 1});
    (void)obi_observe(obi_observe(state, {{1.0}, 1}), {{1.0}, 1});
  } catch (const NumericalError&) {
  }

  // Single-sample ensembles.
  const auto one = full_ensemble(w).subset(std::vector<std::size_t>{1});
  check(bald_score(one, w.vocabulary[1]), "BALD with S=1");
  check(total_correlation(one, xs), "TC with S=1");
  check(epig_score(one, std::span(xs).first(1), std::span(xs).last(2)), "EPIG with S=1");
  check(obi_observe(obi_init(one), {{1.0}, 1}).ess(), "ESS with S=1");
  const auto lp_one = forward_log_probs(one, xs);
  const auto bb = batch_bald_greedy(one.log_weights(), lp_one, 2, false, RngStream(1, 1));
  for (double s : bb.scores) {
    check(s, "batch-BALD with S=1");
  }

  // Zero lookahead and an all-duplicate pool on a trained dropout ensemble.
  ExperimentConfig c;
  c.dataset.n_per_class = 30;
  c.dataset.test_size = 40;
  c.model.arch.hidden = 16;
  c.model.train.epochs = 20;
  c.model.samples = 16;
  c.model.bootstrap = 8;
  c.T = 6;
  c.k = 0;
  c.t_min = 2;
  c.trials = 1;
  c.obi_subtrials = 2;
  c.max_eval_points = 8;
  const auto data = prepare_data(c);
  const auto factory = make_factory(c, data);
  for (const auto& r : obi_vs_retrain_eval(c, data, factory, make_sequences(c, data, factory))) {
    check(r.value, "k=0 " + r.metric);
  }
  const Dataset single = data.pool.subset(std::vector<std::size_t>{0});
  const Dataset all_dup = duplicate_pool(single, {8, true}, RngStream(3, 3));
  for (const auto strategy : {Strategy::kBald, Strategy::kBatchBald, Strategy::kEpig, Strategy::kActiveSampling}) {
    AcquisitionConfig acfg;
    acfg.strategy = strategy;
    acfg.steps = 4;
    acfg.retrain_every = 4;
    acfg.allow_reselection = true;
    acfg.max_eval_points = 8;
    const auto seq = run_acquisition(acfg, factory, data.initial_train, all_dup, all_dup, RngStream(4, 4));
    for (const auto& s : seq.steps) {
      check(s.score, "all-duplicate pool " + to_string(strategy));
    }
  }
  const auto model = factory(data.initial_train, RngStream(5, 5));
  for (double v : random_batch_tc(model, all_dup, 4, 10, RngStream(6, 6))) {
    check(v, "random-batch TC on all-duplicate pool");
  }
  auto al = c;
  al.T = 4;
  al.ess_retrain_threshold = 8;
  for (const auto& r : al_with_obi(al, data, factory, RngStream(7, 7)).records) {
    check(r.value, "al-obi " + r.metric);
  }
  return nans;
}

Verdict criterion_7() {
  const double grad = max_relative_gradient_error();
  std::string where = "none";
  const std::size_t nans = nan_stress(where);
  return {grad < 1e-4 && nans == 0, "max relative gradient error " + fmt(grad) + " vs 1e-4; NaNs in stress suite " +
                                        std::to_string(nans) + (nans > 0 ? " (last: " + where + ")" : "")};
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Runs every protocol on a small configuration and returns the emitted CSVs.
std::map<std::string, std::string> run_all(const std::filesystem::path& dir) {
  ExperimentConfig c;
  c.dataset.n_per_class = 40;
  c.dataset.test_size = 60;
  c.dataset.spread = 1.0;
  c.model.arch.hidden = 16;
  c.model.train.epochs = 30;
  c.model.samples = 32;
  c.model.bootstrap = 16;
  c.T = 10;
  c.k = 3;
  c.t_min = 4;
  c.trials = 2;
  c.obi_subtrials = 2;
  c.duplication.factor = 2;
  c.steps = 2;
  c.random_batches = 10;
  c.max_eval_points = 16;
  c.ess_retrain_threshold = 16;
  c.seed = 11;
  const auto data = prepare_data(c);
  const auto factory = make_factory(c, data);
  auto records = obi_vs_retrain_eval(c, data, factory, make_sequences(c, data, factory));
  for (const auto& more : {repeated_pool_benchmark(c, data, factory), al_with_obi_trials(c, data, factory)}) {
    records.insert(records.end(), more.begin(), more.end());
  }
  std::filesystem::remove_all(dir);
  emit_results(records, make_manifest(c, "acceptance"), dir.string());
  write_delta_table(summarize_obi_vs_retrain(records), (dir / "delta_table.csv").string());
  std::map<std::string, std::string> out;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.path().extension() == ".csv") {
      out[entry.path().filename().string()] = slurp(entry.path());
    }
  }
  return out;
}

Verdict criterion_8() {
  const auto base = std::filesystem::temp_directory_path() / "obikit_acceptance_determinism";
  const auto a = run_all(base / "a");
  const auto b = run_all(base / "b");
  std::size_t bytes = 0;
  for (const auto& [name, text] : a) {
    bytes += text.size();
  }
  const bool same = a == b && a.size() >= 5;
  return {same, std::to_string(a.size()) + " CSV files, " + std::to_string(bytes) + " bytes, " +
                    (same ? "byte-identical" : "differ")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"obikit acceptance checks"};
  int only = 0;
  app.add_option("--criterion", only, "run a single criterion (1-8)")->check(CLI::Range(1, 8));
  CLI11_PARSE(app, argc, argv);
  const std::vector<std::function<Verdict()>> all{criterion_1, criterion_2, criterion_3, criterion_4,
                                                  criterion_5, criterion_6, criterion_7, criterion_8};
  bool ok = true;
  for (int i = 1; i <= 8; ++i) {
    if (only != 0 && only != i) {
      continue;
    }
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = all[static_cast<std::size_t>(i - 1)]();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << "criterion " << i << ": " << (v.pass ? "PASS" : "FAIL") << " | " << v.detail << " | "
              << fmt(secs) << " s" << std::endl;
    ok = ok && v.pass;
    if (i == 4) {
      const auto t1 = std::chrono::steady_clock::now();
      if (const auto idx = criterion_4_idx()) {
        const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t1).count();
        std::cout << "criterion 4 (IDX subset): " << (idx->pass ? "PASS" : "FAIL") << " | " << idx->detail << " | "
                  << fmt(s) << " s" << std::endl;
        ok = ok && idx->pass;
      } else {
        std::cout << "criterion 4 (IDX subset): SKIP | set OBIKIT_IDX_DIR to the MNIST training files" << std::endl;
      }
    }
  }
  return ok ? 0 : 1;
}
