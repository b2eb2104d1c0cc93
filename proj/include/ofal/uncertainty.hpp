#pragma once

// Monte-Carlo dropout predictive distribution and the uncertainty measures
// derived from it. All entropies are in nats.
//
//   predictive entropy  H[mean_i p_i]
//   expected entropy    mean_i H[p_i]
//   mutual information  predictive - expected   (BALD, epistemic part)

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "ofal/classifier.hpp"
#include "ofal/data.hpp"
#include "ofal/error.hpp"
#include "ofal/random.hpp"
#include "ofal/training.hpp"

namespace ofal {

using ProbMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct PredictiveSamples {
  ProbMatrix probs;  // T x C, one row per dropout draw
  std::vector<std::uint64_t> mask_seeds;

  Eigen::Index draws() const { return probs.rows(); }
};

struct UncertaintyScores {
  double predictive_entropy = 0;
  double expected_entropy = 0;
  double mutual_information = 0;
};

struct UncertaintyConfig {
  int t_draws = 25;
  double t_conf = 0.99;
  std::uint64_t base_mask_seed = 0;
};

inline std::vector<std::uint64_t> mc_mask_seeds(const UncertaintyConfig& cfg) {
  require(cfg.t_draws >= 1, ErrorCode::InvalidConfig, "t_draws must be >= 1");
  std::vector<std::uint64_t> seeds(static_cast<std::size_t>(cfg.t_draws));
  for (std::size_t i = 0; i < seeds.size(); ++i) seeds[i] = derive_seed(cfg.base_mask_seed, "mc-draw", i);
  return seeds;
}

template <typename S>
std::vector<DropoutMasks<S>> mc_masks(const Classifier<S>& model, std::span<const std::uint64_t> seeds) {
  std::vector<DropoutMasks<S>> masks;
  masks.reserve(seeds.size());
  for (auto s : seeds) masks.push_back(model.draw_masks(s));
  return masks;
}

// Entropy of one distribution; 0 log 0 = 0; clamped to [0, ln C].
template <typename Row>
double entropy(const Row& p) {
  double h = 0;
  for (Eigen::Index c = 0; c < p.size(); ++c) {
    const double v = static_cast<double>(p(c));
    if (v > 0) h -= v * std::log(v);
  }
  return std::clamp(h, 0.0, std::log(static_cast<double>(p.size())));
}

inline UncertaintyScores uncertainty_scores(const ProbMatrix& probs) {
  require(probs.rows() >= 1 && probs.cols() >= 1, ErrorCode::ShapeError, "empty predictive samples");
  UncertaintyScores out;
  const Eigen::RowVectorXd mean = probs.colwise().mean();
  out.predictive_entropy = entropy(mean);
  double expected = 0;
  for (Eigen::Index i = 0; i < probs.rows(); ++i) expected += entropy(probs.row(i));
  out.expected_entropy = expected / static_cast<double>(probs.rows());
  out.mutual_information = out.predictive_entropy - out.expected_entropy;
  return out;
}

inline UncertaintyScores uncertainty_scores(const PredictiveSamples& ps) { return uncertainty_scores(ps.probs); }

struct Confidence {
  int predicted_label = 0;
  double probability = 0;
};

inline Confidence confidence_of_mean(const Eigen::RowVectorXd& mean) {
  const int label = argmax_first(mean);
  return {label, mean(label)};
}

inline Confidence confidence(const PredictiveSamples& ps) {
  return confidence_of_mean(ps.probs.colwise().mean());
}

template <typename S>
PredictiveSamples mc_predict(const Classifier<S>& model, const Sample& sample, const UncertaintyConfig& cfg) {
  PredictiveSamples out;
  out.mask_seeds = mc_mask_seeds(cfg);
  const Mat<S> feats = model.features(to_row<S>(sample.pixels));
  out.probs.resize(cfg.t_draws, kClassCount);
  for (std::size_t i = 0; i < out.mask_seeds.size(); ++i) {
    const auto masks = model.draw_masks(out.mask_seeds[i]);
    out.probs.row(static_cast<Eigen::Index>(i)) = softmax_rows(model.head_logits(feats, &masks)).template cast<double>();
  }
  return out;
}

// Calls visit(index, probs T x C) for every sample, evaluating the trunk once
// per sample and the dropout head once per draw over whole chunks.
template <typename S, typename Visit>
void mc_predict_each(const Classifier<S>& model, std::span<const Sample> samples, const UncertaintyConfig& cfg,
                     Visit&& visit, std::size_t chunk = 256) {
  const auto seeds = mc_mask_seeds(cfg);
  const auto masks = mc_masks(model, seeds);
  const auto t = static_cast<Eigen::Index>(seeds.size());
  for (std::size_t start = 0; start < samples.size(); start += chunk) {
    const std::size_t end = std::min(samples.size(), start + chunk);
    const Mat<S> feats = model.features(
        to_batch<S>(samples.subspan(start, end - start), [](const Sample& s) -> const Image& { return s.pixels; }));
    std::vector<ProbMatrix> per_sample(end - start, ProbMatrix(t, kClassCount));
    for (Eigen::Index i = 0; i < t; ++i) {
      const Mat<S> probs = softmax_rows(model.head_logits(feats, &masks[static_cast<std::size_t>(i)]));
      for (std::size_t k = 0; k < per_sample.size(); ++k) {
        per_sample[k].row(i) = probs.row(static_cast<Eigen::Index>(k)).template cast<double>();
      }
    }
    for (std::size_t k = 0; k < per_sample.size(); ++k) visit(start + k, per_sample[k]);
  }
}

// MC-mean class distribution for every sample (N x C).
template <typename S>
ProbMatrix mc_mean_probs(const Classifier<S>& model, std::span<const Sample> samples, const UncertaintyConfig& cfg) {
  ProbMatrix out(static_cast<Eigen::Index>(samples.size()), kClassCount);
  mc_predict_each(model, samples, cfg, [&](std::size_t k, const ProbMatrix& probs) {
    out.row(static_cast<Eigen::Index>(k)) = probs.colwise().mean();
  });
  return out;
}

struct ConfidentSample {
  SampleId id = 0;
  int predicted_label = 0;
  double confidence = 0;
};

// Pool samples whose MC-mean top probability is at least t_conf, in id order.
inline std::vector<ConfidentSample> confident_from_means(std::span<const Sample> samples, const ProbMatrix& means,
                                                         double t_conf) {
  std::vector<ConfidentSample> out;
  for (std::size_t k = 0; k < samples.size(); ++k) {
    const auto c = confidence_of_mean(means.row(static_cast<Eigen::Index>(k)));
    if (c.probability >= t_conf) out.push_back({samples[k].id, c.predicted_label, c.probability});
  }
  return out;
}

template <typename S>
std::vector<ConfidentSample> filter_confident(const UnlabeledPool& pool, const Classifier<S>& model,
                                              const UncertaintyConfig& cfg) {
  if (pool.empty()) return {};
  return confident_from_means(pool.samples(), mc_mean_probs(model, pool.samples(), cfg), cfg.t_conf);
}

}  // namespace ofal
