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

// Command-line front end for the obikit experiment harness.

#include <cmath>
#include <filesystem>
#include <iostream>
#include <numeric>
#include <string>

#include "CLI11.hpp"
#include "obikit/harness.hpp"

namespace {

using obikit::ExperimentConfig;

struct Overrides {
  std::string config_path;
  std::string out = "results";
  std::uint64_t seed = 0;
  std::string dataset;
  std::string world;
  std::string model;
  std::string strategy;
  std::string sequence_strategy;
  std::size_t samples = 0;
  std::size_t bootstrap = 0;
  std::size_t epochs = 0;
  std::size_t T = 0;
  std::size_t k = 0;
  std::size_t t_min = 0;
  std::size_t trials = 0;
  std::size_t subtrials = 0;
  std::size_t duplication = 0;
  std::size_t batch_size = 0;
  std::size_t steps = 0;
  double threshold = 0.0;
};

void add_common(CLI::App* app, Overrides& o) {
  app->add_option("--config", o.config_path, "experiment config JSON")->check(CLI::ExistingFile);
  app->add_option("--seed", o.seed, "root seed");
  app->add_option("--out", o.out, "output directory");
  app->add_option("--dataset", o.dataset, "clusters | idx | grid");
  app->add_option("--world", o.world, "coin | random | fixture path (grid datasets)");
  app->add_option("--model", o.model, "mc_dropout | deep_ensemble | grid");
  app->add_option("--strategy", o.strategy, "random | bald | batch_bald | epig | active_sampling");
  app->add_option("--sequence-strategy", o.sequence_strategy, "rule for the active sequence in obi-eval");
  app->add_option("--samples", o.samples, "posterior samples S");
  app->add_option("--bootstrap", o.bootstrap, "bootstrap subset size B");
  app->add_option("--epochs", o.epochs, "training epochs");
  app->add_option("--T", o.T, "sequence length / acquisition steps");
  app->add_option("--k", o.k, "lookahead");
  app->add_option("--t-min", o.t_min, "first evaluated prefix");
  app->add_option("--trials", o.trials, "model trials");
  app->add_option("--subtrials", o.subtrials, "bootstrap sub-trials");
  app->add_option("--duplication", o.duplication, "pool duplication factor R");
  app->add_option("--batch-size", o.batch_size, "acquisition batch size");
  app->add_option("--steps", o.steps, "acquisition batches");
  app->add_option("--ess-threshold", o.threshold, "ESS retrain threshold");
}

ExperimentConfig resolve(const CLI::App* app, const Overrides& o) {
  ExperimentConfig c = o.config_path.empty() ? ExperimentConfig{} : obikit::load_config(o.config_path);
  auto given = [&](const char* flag) { return app->count(flag) > 0; };
  if (given("--seed")) c.seed = o.seed;
  if (given("--dataset")) c.dataset.kind = o.dataset;
  if (given("--world")) c.dataset.world = o.world;
  if (given("--model")) c.model.kind = o.model;
  if (given("--strategy")) c.strategy = o.strategy;
  if (given("--sequence-strategy")) c.sequence_strategy = o.sequence_strategy;
  if (given("--samples")) c.model.samples = o.samples;
  if (given("--bootstrap")) c.model.bootstrap = o.bootstrap;
  if (given("--epochs")) c.model.train.epochs = o.epochs;
  if (given("--T")) c.T = o.T;
  if (given("--k")) c.k = o.k;
  if (given("--t-min")) c.t_min = o.t_min;
  if (given("--trials")) c.trials = o.trials;
  if (given("--subtrials")) c.obi_subtrials = o.subtrials;
  if (given("--duplication")) c.duplication.factor = o.duplication;
  if (given("--batch-size")) c.batch_size = o.batch_size;
  if (given("--steps")) c.steps = o.steps;
  if (given("--ess-threshold")) c.ess_retrain_threshold = o.threshold;
  c.out_dir = o.out;
  c.validate();
  return c;
}

std::string join(const std::string& dir, const std::string& file) {
  return (std::filesystem::path(dir) / file).string();
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) {
    throw obikit::IoError("cannot create " + dir + ": " + ec.message());
  }
}

void finish(const ExperimentConfig& c, obikit::RunManifest m) {
  m.finished_at = obikit::utc_timestamp();
  m.artifacts.push_back("manifest.json");
  obikit::write_manifest(m, join(c.out_dir, "manifest.json"));
}

void cmd_gen_data(const ExperimentConfig& c) {
  auto m = obikit::make_manifest(c, "gen-data");
  const auto data = obikit::prepare_data(c);
  ensure_dir(c.out_dir);
  obikit::write_dataset_csv(data.initial_train, join(c.out_dir, "initial_train.csv"));
  obikit::write_dataset_csv(data.pool, join(c.out_dir, "pool.csv"));
  obikit::write_dataset_csv(data.test, join(c.out_dir, "test.csv"));
  m.artifacts = {"initial_train.csv", "pool.csv", "test.csv"};
  if (data.world) {
    obikit::oracle::save_world(*data.world, join(c.out_dir, "world.json"));
    m.artifacts.push_back("world.json");
  }
  finish(c, m);
  std::cout << "initial " << data.initial_train.size() << " pool " << data.pool.size() << " test " << data.test.size()
            << '\n';
}

void cmd_train(const ExperimentConfig& c) {
  auto m = obikit::make_manifest(c, "train");
  const auto data = obikit::prepare_data(c);
  const auto factory = obikit::make_factory(c, data);
  const auto ensemble = factory(data.initial_train, obikit::RngStream(c.seed, 0).derive(obikit::StreamPurpose::kRetrain, 0));
  ensure_dir(c.out_dir);
  obikit::save_ensemble(ensemble, join(c.out_dir, "ensemble.json"));
  const auto lp = obikit::forward_log_probs(ensemble, data.test);
  const auto metrics = obikit::detail::evaluate_branch(ensemble.log_weights(), lp, data.test);
  std::vector<obikit::MetricRecord> records(2);
  records[0] = {"cross_entropy", "train", metrics.cross_entropy, 0, 0, 0, data.initial_train.size(), c.model.kind,
                "test", ""};
  records[1] = {"accuracy", "train", metrics.accuracy, 0, 0, 0, data.initial_train.size(), c.model.kind, "test", ""};
  obikit::write_metrics_csv(records, join(c.out_dir, "metrics.csv"));
  m.artifacts = {"ensemble.json", "metrics.csv"};
  finish(c, m);
  std::cout << "test cross-entropy " << metrics.cross_entropy << " accuracy " << metrics.accuracy << '\n';
}

void cmd_acquire(const ExperimentConfig& c) {
  auto m = obikit::make_manifest(c, "acquire");
  const auto data = obikit::prepare_data(c);
  const auto factory = obikit::make_factory(c, data);
  obikit::AcquisitionConfig acfg;
  acfg.strategy = obikit::parse_strategy(c.strategy);
  acfg.steps = c.T;
  acfg.joint = c.joint;
  acfg.max_eval_points = c.max_eval_points;
  const auto seq = obikit::run_acquisition(acfg, factory, data.initial_train, data.pool, data.pool,
                                           obikit::RngStream(c.seed, 0).derive(obikit::StreamPurpose::kTrial, 0));
  ensure_dir(c.out_dir);
  obikit::write_sequence(seq, join(c.out_dir, "sequence.csv"));
  m.artifacts = {"sequence.csv", "sequence.csv.json"};
  finish(c, m);
  std::cout << "acquired " << seq.steps.size() << " points\n";
}

void cmd_obi_eval(const ExperimentConfig& c) {
  const auto m = obikit::make_manifest(c, "obi-eval");
  const auto data = obikit::prepare_data(c);
  const auto factory = obikit::make_factory(c, data);
  const auto seqs = obikit::make_sequences(c, data, factory);
  const auto records = obikit::obi_vs_retrain_eval(c, data, factory, seqs);
  obikit::emit_results(records, m, c.out_dir);
  const auto summary = obikit::summarize_obi_vs_retrain(records);
  obikit::write_delta_table(summary, join(c.out_dir, "delta_table.csv"));
  for (const auto& row : summary) {
    std::cout << row.sequence << ' ' << row.branch << " dCE " << row.delta_cross_entropy.mean << " +- "
              << row.delta_cross_entropy.standard_error << " dAcc " << row.delta_accuracy.mean << " +- "
              << row.delta_accuracy.standard_error << " excluded " << row.excluded << '\n';
  }
}

void cmd_repeated_pool(const ExperimentConfig& c) {
  const auto m = obikit::make_manifest(c, "repeated-pool");
  const auto data = obikit::prepare_data(c);
  const auto records = obikit::repeated_pool_benchmark(c, data, obikit::make_factory(c, data));
  obikit::emit_results(records, m, c.out_dir);
  std::cout << records.size() << " records\n";
}

void cmd_al_obi(const ExperimentConfig& c) {
  const auto m = obikit::make_manifest(c, "al-obi");
  const auto data = obikit::prepare_data(c);
  const auto records = obikit::al_with_obi_trials(c, data, obikit::make_factory(c, data));
  obikit::emit_results(records, m, c.out_dir);
  for (const auto& r : records) {
    if (r.metric == "retrain_count" || r.metric == "always_retrain_count") {
      std::cout << "trial " << r.trial << ' ' << r.metric << ' ' << r.value << '\n';
    }
  }
}

/// Compares main-path quantities against brute-force enumeration on a grid world.
int cmd_oracle_check(const ExperimentConfig& c) {
  auto spec = c.dataset;
  const auto world = obikit::resolve_world(spec, obikit::RngStream(c.seed, 0).derive(obikit::StreamPurpose::kData, 3));
  const auto [family, prior] = obikit::oracle::to_family(world);
  const auto sample = obikit::oracle::sample_dataset(world, 6, obikit::RngStream(c.seed, 1));
  const auto observed = sample.examples();
  std::vector<std::size_t> ids(world.tables.size());
  std::iota(ids.begin(), ids.end(), 0);
  const auto state = obikit::obi_observe_all(obikit::obi_init(obikit::PosteriorEnsemble(family, ids, prior)), observed);
  const auto post = obikit::oracle::oracle_posterior(world, observed);
  const auto lw = state.normalized_log_weights();
  double worst = 0.0;
  for (std::size_t i = 0; i < post.size(); ++i) {
    worst = std::max(worst, std::abs(std::exp(lw[i]) - std::exp(post[i])));
  }
  const auto q = obikit::oracle::oracle_info_quantities(world, world.vocabulary, {}, observed);
  const double h = obikit::joint_entropy_exact(state.posterior(), world.vocabulary);
  worst = std::max(worst, std::abs(h - q.joint_entropy));
  std::cout << "hypotheses " << world.tables.size() << " max abs deviation " << worst << '\n';
  return worst < 1e-9 ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"obikit: online Bayesian inference by ensemble reweighting"};
  app.require_subcommand(1);
  Overrides o;
  struct Entry {
    const char* name;
    const char* help;
  };
  const Entry entries[] = {
      {"gen-data", "generate and split a dataset"},
      {"train", "train the configured posterior ensemble on the initial set"},
      {"acquire", "run an acquisition campaign and write the sequence"},
      {"obi-eval", "compare OBI against retraining on acquisition sequences"},
      {"repeated-pool", "duplicate-pool benchmark"},
      {"al-obi", "active learning with OBI and ESS-triggered retraining"},
      {"oracle-check", "check main-path posteriors against brute-force enumeration"},
  };
  std::vector<CLI::App*> subs;
  for (const auto& e : entries) {
    auto* s = app.add_subcommand(e.name, e.help);
    add_common(s, o);
    subs.push_back(s);
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  try {
    for (auto* s : subs) {
      if (!s->parsed()) {
        continue;
      }
      const auto c = resolve(s, o);
      const std::string name = s->get_name();
      if (name == "gen-data") cmd_gen_data(c);
      if (name == "train") cmd_train(c);
      if (name == "acquire") cmd_acquire(c);
      if (name == "obi-eval") cmd_obi_eval(c);
      if (name == "repeated-pool") cmd_repeated_pool(c);
      if (name == "al-obi") cmd_al_obi(c);
      if (name == "oracle-check") return cmd_oracle_check(c);
    }
  } catch (const obikit::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
