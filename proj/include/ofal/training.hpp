#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "ofal/classifier.hpp"
#include "ofal/data.hpp"
#include "ofal/error.hpp"
#include "ofal/nn.hpp"
#include "ofal/random.hpp"
#include "ofal/vae.hpp"

namespace ofal {

struct TrainConfig {
  int epochs = 300;
  int batch_size = 64;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  // Cold starts re-initialise the parameters from `seed` before training.
  bool warm_start = true;
  OptimizerKind optimizer = OptimizerKind::adam;
};

inline void validate(const TrainConfig& cfg) {
  require(cfg.epochs >= 0, ErrorCode::InvalidConfig, "epochs must be >= 0");
  require(cfg.batch_size > 0, ErrorCode::InvalidConfig, "batch_size must be > 0");
  require(cfg.learning_rate > 0, ErrorCode::InvalidConfig, "learning_rate must be > 0");
}

using EpochCallback = std::function<void(int epoch, double objective)>;

// Trains in place; returns the mean cross-entropy of every epoch.
template <typename S>
std::vector<double> train_classifier(Classifier<S>& model, const LabeledSet& data, const TrainConfig& cfg,
                                     const EpochCallback& on_epoch = {}) {
  validate(cfg);
  require(!data.empty(), ErrorCode::EmptyTrainingSet, "labeled set is empty");
  if (!cfg.warm_start) model = Classifier<S>(model.shape(), derive_seed(cfg.seed, "classifier-init"));

  auto params = model.parameters();
  Optimizer<S> opt(cfg.optimizer, cfg.learning_rate, params);
  ClassifierGradients<S> grads;
  const auto entries = data.entries();
  const std::size_t n = entries.size();
  const auto bs = static_cast<std::size_t>(cfg.batch_size);

  std::vector<double> history;
  history.reserve(static_cast<std::size_t>(cfg.epochs));
  std::vector<int> labels;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = permutation(n, derive_seed(cfg.seed, "classifier-epoch", static_cast<std::uint64_t>(epoch)));
    double total = 0;
    for (std::size_t start = 0, batch = 0; start < n; start += bs, ++batch) {
      const std::size_t end = std::min(n, start + bs);
      Mat<S> x(static_cast<Eigen::Index>(end - start), kPixels);
      labels.resize(end - start);
      for (std::size_t k = start; k < end; ++k) {
        const auto& e = entries[order[k]];
        for (int p = 0; p < kPixels; ++p) {
          x(static_cast<Eigen::Index>(k - start), p) = static_cast<S>(e.sample.pixels[static_cast<std::size_t>(p)]);
        }
        labels[k - start] = e.label;
      }
      const auto mask_seed =
          derive_seed(cfg.seed, "classifier-masks", (static_cast<std::uint64_t>(epoch) << 32) | batch);
      const S loss = model.training_gradients(x, labels, mask_seed, grads);
      require(std::isfinite(static_cast<double>(loss)), ErrorCode::NumericalFailure, "classifier loss diverged");
      opt.step(params, grads.params);
      total += static_cast<double>(loss) * static_cast<double>(end - start);
    }
    history.push_back(total / static_cast<double>(n));
    if (on_epoch) on_epoch(epoch, history.back());
  }
  return history;
}

// Argmax with ties resolved to the lowest class index.
template <typename Row>
int argmax_first(const Row& row) {
  int best = 0;
  for (int c = 1; c < static_cast<int>(row.size()); ++c) {
    if (row(c) > row(best)) best = c;
  }
  return best;
}

template <typename S>
double evaluate(const Classifier<S>& model, const Dataset& test, std::size_t batch_size = 256) {
  require(test.size() > 0, ErrorCode::EmptyTestSet, "test set is empty");
  std::size_t correct = 0;
  for (std::size_t start = 0; start < test.size(); start += batch_size) {
    const std::size_t end = std::min(test.size(), start + batch_size);
    const auto slice = std::span(test.samples).subspan(start, end - start);
    const Mat<S> probs = model.predict_deterministic(to_batch<S>(slice, [](const Sample& s) -> const Image& {
      return s.pixels;
    }));
    for (std::size_t k = start; k < end; ++k) {
      if (argmax_first(probs.row(static_cast<Eigen::Index>(k - start))) == test.labels[k]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

// Trains in place on unlabeled images; returns the per-epoch negative ELBO
// (reconstruction + KL, per sample).
template <typename S>
std::vector<double> train_vae(Vae<S>& vae, std::span<const Sample> images, const TrainConfig& cfg,
                              const EpochCallback& on_epoch = {}) {
  validate(cfg);
  require(!images.empty(), ErrorCode::EmptyTrainingSet, "no images for the VAE");
  if (!cfg.warm_start) vae = Vae<S>(vae.shape(), derive_seed(cfg.seed, "vae-init"));

  auto params = vae.parameters();
  Optimizer<S> opt(cfg.optimizer, cfg.learning_rate, params);
  VaeGradients<S> grads;
  const std::size_t n = images.size();
  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  std::vector<double> history;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = permutation(n, derive_seed(cfg.seed, "vae-epoch", static_cast<std::uint64_t>(epoch)));
    double total = 0;
    for (std::size_t start = 0, batch = 0; start < n; start += bs, ++batch) {
      const std::size_t end = std::min(n, start + bs);
      Mat<S> x(static_cast<Eigen::Index>(end - start), kPixels);
      for (std::size_t k = start; k < end; ++k) {
        const auto& img = images[order[k]].pixels;
        for (int p = 0; p < kPixels; ++p) x(static_cast<Eigen::Index>(k - start), p) = static_cast<S>(img[static_cast<std::size_t>(p)]);
      }
      const auto noise_seed = derive_seed(cfg.seed, "vae-noise", (static_cast<std::uint64_t>(epoch) << 32) | batch);
      const VaeLoss loss = vae.training_gradients(x, noise_seed, grads);
      require(std::isfinite(loss.total()), ErrorCode::NumericalFailure, "VAE objective diverged");
      opt.step(params, grads.params);
      total += loss.total() * static_cast<double>(end - start);
    }
    history.push_back(total / static_cast<double>(n));
    if (on_epoch) on_epoch(epoch, history.back());
  }
  return history;
}

struct ReconstructionError {
  double mean_squared = 0;
  double mean_absolute = 0;
};

// Per-pixel error of decode(encode(x)) averaged over the given images.
template <typename S>
ReconstructionError reconstruction_error(const Vae<S>& vae, std::span<const Sample> images,
                                         std::size_t batch_size = 256) {
  require(!images.empty(), ErrorCode::EmptyTestSet, "no images");
  ReconstructionError err;
  for (std::size_t start = 0; start < images.size(); start += batch_size) {
    const std::size_t end = std::min(images.size(), start + batch_size);
    const Mat<S> x = to_batch<S>(images.subspan(start, end - start), [](const Sample& s) -> const Image& {
      return s.pixels;
    });
    const Mat<S> diff = vae.decode(vae.encode(x)) - x;
    err.mean_squared += static_cast<double>(diff.squaredNorm());
    err.mean_absolute += static_cast<double>(diff.cwiseAbs().sum());
  }
  const double count = static_cast<double>(images.size()) * kPixels;
  err.mean_squared /= count;
  err.mean_absolute /= count;
  return err;
}

}  // namespace ofal
