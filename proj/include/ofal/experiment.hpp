#pragma once

// The experiment loops. One iteration gathers a query from up to three
// sources, appends it to the labeled set, retrains warm and evaluates:
//
//   solo_ofal    confident seeds (predicted labels) + their THU samples
//   baseline     sampler picks labeled by the simulated oracle
//   after_ofal   baseline, started from a finished solo_ofal state
//   integrated   all three sources; an id picked by both the sampler and
//                the confidence filter keeps the oracle's label
//
// Every random choice is derived from (master_seed, mode, purpose, iteration),
// so a run resumed from a checkpoint continues exactly like an uninterrupted
// one.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include "ofal/acquisition.hpp"
#include "ofal/classifier.hpp"
#include "ofal/config.hpp"
#include "ofal/data.hpp"
#include "ofal/error.hpp"
#include "ofal/metrics.hpp"
#include "ofal/random.hpp"
#include "ofal/thu.hpp"
#include "ofal/training.hpp"
#include "ofal/uncertainty.hpp"
#include "ofal/vae.hpp"

namespace ofal {

struct ExperimentState {
  OfalConfig config;
  Classifier<float> classifier;
  Vae<float> vae;
  LabeledSet labeled;
  UnlabeledPool pool;
  SimulatedOracle oracle;
  MetricsLog log;
};

// Everything one iteration looked at; handed to observers (tests, exports).
struct IterationDetail {
  std::vector<ConfidentSample> confident;
  std::vector<SampleId> sampler_ids;
  std::vector<SampleId> dropped_confident;  // deduplicated against sampler picks
  std::optional<GenerationBatch> generation;
};

using IterationObserver = std::function<void(const ExperimentState&, const IterationRecord&, const IterationDetail&)>;

inline TrainConfig initial_train_config(const OfalConfig& c) {
  TrainConfig t;
  t.epochs = c.initial_epochs;
  t.batch_size = c.batch_size;
  t.learning_rate = c.learning_rate;
  t.seed = derive_seed(c.master_seed, "initial-train");
  t.warm_start = false;
  t.optimizer = c.optimizer;
  return t;
}

inline TrainConfig vae_train_config(const OfalConfig& c) {
  TrainConfig t;
  t.epochs = c.vae_epochs;
  t.batch_size = c.vae_batch_size;
  t.learning_rate = c.vae_learning_rate;
  t.seed = derive_seed(c.master_seed, "vae-train");
  t.warm_start = false;
  t.optimizer = c.optimizer;
  return t;
}

inline std::uint64_t phase_seed(const OfalConfig& c) { return derive_seed(c.master_seed, to_string(c.mode)); }

// Split, initial classifier training on the balanced labeled set, VAE
// training on every training image. The log carries only initial_accuracy.
inline ExperimentState run_initial(const OfalConfig& config, const Dataset& train, const Dataset& test,
                                   const EpochCallback& on_classifier_epoch = {},
                                   const EpochCallback& on_vae_epoch = {}) {
  validate(config);
  ExperimentState s;
  s.config = config;
  SplitSpec spec = config.split;
  spec.seed = derive_seed(config.master_seed, "split");
  auto split = make_split(train, spec);
  s.labeled = std::move(split.labeled);
  s.pool = std::move(split.pool);

  s.classifier = Classifier<float>(config.classifier, 0);
  s.classifier.validate_dropout();
  train_classifier(s.classifier, s.labeled, initial_train_config(config), on_classifier_epoch);

  s.vae = Vae<float>(config.vae, 0);
  train_vae(s.vae, std::span<const Sample>(train.samples), vae_train_config(config), on_vae_epoch);

  s.log.config = snapshot(config);
  s.log.initial_accuracy = evaluate(s.classifier, test);
  return s;
}

// Starts a new log for `mode` on top of the current models and sets.
inline void begin_phase(ExperimentState& s, RunMode mode, std::optional<Criterion> sampler, int iterations) {
  const double acc = s.log.final_accuracy();
  s.config.mode = mode;
  s.config.sampler = sampler;
  s.config.iterations = iterations;
  validate(s.config);
  s.log = MetricsLog{};
  s.log.config = snapshot(s.config);
  s.log.initial_accuracy = acc;
}

namespace detail {

inline double median(std::vector<double> v) {
  if (v.empty()) return 0;
  const auto mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double hi = v[mid];
  if (v.size() % 2 == 1) return hi;
  return 0.5 * (hi + *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid)));
}

inline PoolScores id_only_scores(const UnlabeledPool& pool) {
  PoolScores out;
  out.reserve(pool.size());
  for (const auto& smp : pool.samples()) out.push_back(PoolScore{smp.id, {}, 0, 0, 0});
  return out;
}

}  // namespace detail

inline IterationRecord run_iteration(ExperimentState& s, const Dataset& test, const IterationObserver& observer = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  const OfalConfig& cfg = s.config;
  const int k = s.log.last_iteration() + 1;
  const auto ki = static_cast<std::uint64_t>(k);
  const auto phase = phase_seed(cfg);
  const bool use_ofal = cfg.mode == RunMode::solo_ofal || cfg.mode == RunMode::integrated;
  const bool use_sampler = cfg.mode != RunMode::solo_ofal;
  const bool need_scores = use_ofal || (use_sampler && *cfg.sampler != Criterion::uniform);

  IterationRecord rec;
  rec.iteration = k;
  IterationDetail detail;

  ProbMatrix means;
  if (need_scores) {
    UncertaintyConfig u = cfg.uncertainty;
    u.base_mask_seed = derive_seed(phase, "mc-pool", ki);
    means = mc_mean_probs(s.classifier, s.pool.samples(), u);
  }

  // Sampler picks, labeled by the oracle.
  std::vector<SampleId> oracle_ids;
  std::vector<int> oracle_labels;
  if (use_sampler) {
    const PoolScores scores =
        need_scores ? scores_from_means(s.pool.samples(), means) : detail::id_only_scores(s.pool);
    oracle_ids = select_by_criterion(scores, *cfg.sampler, static_cast<std::size_t>(cfg.sampler_count),
                                     derive_seed(phase, "sampler", ki));
    oracle_labels = oracle_label(s.oracle, s.pool, oracle_ids);
    rec.requested_oracle = oracle_ids.size();
    detail.sampler_ids = oracle_ids;
  }

  // Confident seeds and their generated counterparts.
  std::vector<LabeledSample> confident_entries;
  std::vector<LabeledSample> generated_entries;
  if (use_ofal) {
    detail.confident = confident_from_means(s.pool.samples(), means, cfg.uncertainty.t_conf);
    rec.confident_available = detail.confident.size();
    auto batch = generate_batch(s.pool, std::span<const ConfidentSample>(detail.confident), cfg.per_class,
                                s.classifier, s.vae, cfg.thu, derive_seed(phase, "confident-select", ki),
                                derive_seed(phase, "thu", ki));
    std::unordered_set<SampleId> picked(oracle_ids.begin(), oracle_ids.end());
    std::vector<double> gains;
    double steps = 0;
    for (const auto& g : batch.accepted) {
      const Sample* seed = s.pool.find(g.result.seed_id);
      if (picked.count(g.result.seed_id) != 0) {
        detail.dropped_confident.push_back(g.result.seed_id);
      } else {
        confident_entries.push_back({*seed, g.label, Provenance::confident});
      }
      generated_entries.push_back({g.result.x_new, g.label, Provenance::generated});
      gains.push_back(g.result.mi_new - g.result.mi_seed);
      steps += g.result.steps_taken;
    }
    rec.requested_confident = batch.accepted.size();
    rec.requested_generated = batch.accepted.size();
    rec.thu_attempts = batch.attempts;
    rec.thu_accepted = batch.accepted.size();
    rec.short_classes = batch.shortfalls.size();
    rec.mean_thu_steps = batch.accepted.empty() ? 0 : steps / static_cast<double>(batch.accepted.size());
    rec.thu_accept_rate =
        batch.attempts == 0 ? 0 : static_cast<double>(batch.accepted.size()) / static_cast<double>(batch.attempts);
    rec.median_mi_gain = detail::median(std::move(gains));
    for (const auto& sf : batch.shortfalls) {
      std::clog << "warning: " << to_string(ErrorCode::ClassExhausted) << " class " << sf.label << " achieved "
                << sf.achieved << " of " << cfg.per_class << " at iteration " << k << '\n';
    }
    detail.generation = std::move(batch);
  }

  // Append and shrink the pool.
  const auto oracle_samples = s.pool.take(std::span<const SampleId>(oracle_ids));
  for (std::size_t i = 0; i < oracle_samples.size(); ++i) {
    s.labeled.add(oracle_samples[i], oracle_labels[i], Provenance::oracle);
  }
  for (const auto& e : confident_entries) s.labeled.add(e.sample, e.label, e.provenance);
  for (const auto& e : generated_entries) s.labeled.add(e.sample, e.label, e.provenance);
  if (cfg.remove_confident_from_pool) {
    std::vector<SampleId> ids;
    for (const auto& e : confident_entries) ids.push_back(e.sample.id);
    s.pool.take(std::span<const SampleId>(ids));
  }

  rec.n_oracle = oracle_samples.size();
  rec.n_confident = confident_entries.size();
  rec.n_generated = generated_entries.size();
  rec.query_size = rec.n_oracle + rec.n_confident + rec.n_generated;
  rec.labeled_count = s.labeled.size();

  TrainConfig t;
  t.epochs = cfg.retrain_epochs;
  t.batch_size = cfg.batch_size;
  t.learning_rate = cfg.learning_rate;
  t.seed = derive_seed(phase, "retrain", ki);
  t.warm_start = true;
  t.optimizer = cfg.optimizer;
  train_classifier(s.classifier, s.labeled, t);
  rec.test_accuracy = evaluate(s.classifier, test);

  s.log.oracle_total += rec.n_oracle;
  if (cfg.record_wall_time) {
    rec.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
  s.log.append(rec);
  if (observer) observer(s, rec, detail);
  return rec;
}

// Runs the remaining iterations of the current phase. A solo OFAL run that
// consulted the oracle is an error.
inline const MetricsLog& run_loop(ExperimentState& s, const Dataset& test, const IterationObserver& observer = {}) {
  validate(s.config);
  while (s.log.last_iteration() < s.config.iterations) run_iteration(s, test, observer);
  if (s.config.mode == RunMode::solo_ofal) {
    require(s.log.oracle_total == 0, ErrorCode::InvalidConfig,
            "solo OFAL run used the oracle " + std::to_string(s.log.oracle_total) + " times");
  }
  return s.log;
}

inline const MetricsLog& run_ofal(ExperimentState& s, const Dataset& test, const IterationObserver& observer = {}) {
  require(s.config.mode == RunMode::solo_ofal, ErrorCode::InvalidConfig, "run_ofal needs mode solo_ofal");
  return run_loop(s, test, observer);
}

inline const MetricsLog& run_baseline(ExperimentState& s, const Dataset& test, const IterationObserver& observer = {}) {
  require(s.config.mode == RunMode::baseline || s.config.mode == RunMode::after_ofal, ErrorCode::InvalidConfig,
          "run_baseline needs mode baseline or after_ofal");
  return run_loop(s, test, observer);
}

inline const MetricsLog& run_integrated(ExperimentState& s, const Dataset& test,
                                        const IterationObserver& observer = {}) {
  require(s.config.mode == RunMode::integrated, ErrorCode::InvalidConfig, "run_integrated needs mode integrated");
  return run_loop(s, test, observer);
}

}  // namespace ofal
