#pragma once

// Toward Higher Uncertainty: walk a confident sample's latent code towards
// regions where the classifier's MC-dropout uncertainty is high.
//
//   loss(z) = -U(Dec(z)) + alpha * mean((z - z0)^2)
//   z      <- z - step_size * d loss / dz
//
// U is BALD mutual information by default. After every update the decoded
// sample is classified without dropout; the walk stops once the top-2
// probability gap drops below t_stop. Step counting follows the original
// procedure: the counter advances only after a failed stop test, so a walk
// that stops on its first update has taken zero steps and is rejected.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ofal/acquisition.hpp"
#include "ofal/classifier.hpp"
#include "ofal/data.hpp"
#include "ofal/error.hpp"
#include "ofal/nn.hpp"
#include "ofal/random.hpp"
#include "ofal/uncertainty.hpp"
#include "ofal/vae.hpp"

namespace ofal {

enum class UncertaintyMeasure { mutual_information, predictive_entropy };

struct ThuConfig {
  double alpha = 1.0;
  double step_size = 0.05;
  int step_max = 100;
  double t_stop = 0.4;
  int t_draws = 25;
  bool resample_masks_each_step = true;
  UncertaintyMeasure measure = UncertaintyMeasure::mutual_information;
  // Stop test on the deterministic prediction, or on the MC mean.
  bool stop_on_mc_mean = false;
  bool record_frames = false;
};

inline void validate(const ThuConfig& cfg) {
  require(cfg.t_stop > 0 && cfg.t_stop < 1, ErrorCode::InvalidConfig, "t_stop must lie in (0, 1)");
  require(cfg.step_max >= 1, ErrorCode::InvalidConfig, "step_max must be >= 1");
  require(cfg.alpha >= 0, ErrorCode::InvalidConfig, "alpha must be >= 0");
  require(cfg.step_size >= 0, ErrorCode::InvalidConfig, "step_size must be >= 0");
  require(cfg.t_draws >= 1, ErrorCode::InvalidConfig, "t_draws must be >= 1");
}

constexpr double thu_objective(double uncertainty, double restriction, double alpha) {
  return -uncertainty + alpha * restriction;
}

// Value and logit-gradient of an uncertainty measure over T draws.
template <typename S>
std::pair<S, Mat<S>> uncertainty_from_logits(const Mat<S>& logits, UncertaintyMeasure measure) {
  const Eigen::Index t = logits.rows();
  const Eigen::Index c = logits.cols();
  const Mat<S> logp = log_softmax_rows(logits);
  const Mat<S> p = logp.array().exp();
  const S inv_t = S(1) / static_cast<S>(t);

  Eigen::Matrix<S, 1, Eigen::Dynamic> log_mean(c);
  for (Eigen::Index k = 0; k < c; ++k) {
    const S m = logp.col(k).maxCoeff();
    log_mean(k) = m + std::log((logp.col(k).array() - m).exp().sum()) - std::log(static_cast<S>(t));
  }
  const auto mean = log_mean.array().exp();
  const S predictive = -(mean * log_mean.array()).sum();

  Mat<S> g(t, c);  // d U / d p
  S value = predictive;
  if (measure == UncertaintyMeasure::mutual_information) {
    const S expected = -(p.array() * logp.array()).sum() * inv_t;
    value = predictive - expected;
    g = (logp.array().rowwise() - log_mean.array()) * inv_t;
  } else {
    g = ((-log_mean.array() - S(1)) * inv_t).replicate(t, 1);
  }
  // Softmax Jacobian per row.
  Mat<S> d_logits(t, c);
  for (Eigen::Index i = 0; i < t; ++i) {
    const S dot = p.row(i).dot(g.row(i));
    d_logits.row(i) = p.row(i).array() * (g.row(i).array() - dot);
  }
  return {value, std::move(d_logits)};
}

template <typename S>
struct ThuLoss {
  double loss = 0;
  double uncertainty = 0;
  double restriction = 0;
  Mat<S> gradient;  // 1 x d
};

template <typename S>
ThuLoss<S> thu_loss(const Mat<S>& z, const Mat<S>& z0, const Classifier<S>& model, const Vae<S>& vae,
                    std::span<const DropoutMasks<S>> masks, double alpha,
                    UncertaintyMeasure measure = UncertaintyMeasure::mutual_information) {
  require(z.rows() == 1 && z.cols() == vae.latent_dim() && z0.rows() == 1 && z0.cols() == vae.latent_dim(),
          ErrorCode::ShapeError, "latent points must be 1 x " + std::to_string(vae.latent_dim()));
  typename Vae<S>::DecodeCache cache;
  const Mat<S> x = vae.decode_cached(z, cache);
  auto [u, d_x] = model.input_gradient(x, masks, [&](const Mat<S>& logits) {
    auto [value, d_logits] = uncertainty_from_logits(logits, measure);
    return std::pair<S, Mat<S>>{value, std::move(d_logits)};
  });
  // d(-U)/dz
  Mat<S> grad = -vae.decode_backward(cache, d_x);
  const Mat<S> diff = z - z0;
  const S d = static_cast<S>(z.cols());
  ThuLoss<S> out;
  out.uncertainty = static_cast<double>(u);
  out.restriction = static_cast<double>(diff.squaredNorm() / d);
  out.loss = thu_objective(out.uncertainty, out.restriction, alpha);
  grad += (static_cast<S>(2 * alpha) / d) * diff;
  out.gradient = std::move(grad);
  return out;
}

template <typename S>
ThuLoss<S> thu_loss(const Mat<S>& z, const Mat<S>& z0, const Classifier<S>& model, const Vae<S>& vae,
                    std::span<const std::uint64_t> mask_seeds, double alpha,
                    UncertaintyMeasure measure = UncertaintyMeasure::mutual_information) {
  const auto masks = mc_masks(model, mask_seeds);
  return thu_loss(z, z0, model, vae, std::span<const DropoutMasks<S>>(masks), alpha, measure);
}

// One descent step on an arbitrary loss; loss_fn(z) returns an object with a
// `gradient` member. Throws NumericalFailure on a non-finite gradient.
template <typename S, typename LossFn>
Mat<S> gradient_step(const Mat<S>& z, double step_size, LossFn&& loss_fn) {
  const auto l = loss_fn(z);
  require(l.gradient.allFinite(), ErrorCode::NumericalFailure, "non-finite gradient in latent step");
  return z - static_cast<S>(step_size) * l.gradient;
}

template <typename S>
struct ThuContext {
  const Classifier<S>& model;
  const Vae<S>& vae;
  ThuConfig config;
  std::uint64_t sample_seed = 0;
};

inline std::vector<std::uint64_t> thu_mask_seeds(std::uint64_t sample_seed, int step, int draws) {
  std::vector<std::uint64_t> seeds(static_cast<std::size_t>(draws));
  const auto step_seed = derive_seed(sample_seed, "thu-step", static_cast<std::uint64_t>(step));
  for (std::size_t i = 0; i < seeds.size(); ++i) seeds[i] = derive_seed(step_seed, "draw", i);
  return seeds;
}

template <typename S>
Mat<S> thu_step(const Mat<S>& z, const Mat<S>& z0, const ThuContext<S>& ctx, int step_index) {
  const int mask_step = ctx.config.resample_masks_each_step ? step_index : 0;
  const auto masks = mc_masks(ctx.model, thu_mask_seeds(ctx.sample_seed, mask_step, ctx.config.t_draws));
  return gradient_step(z, ctx.config.step_size, [&](const Mat<S>& p) {
    return thu_loss(p, z0, ctx.model, ctx.vae, std::span<const DropoutMasks<S>>(masks), ctx.config.alpha,
                    ctx.config.measure);
  });
}

enum class ThuStatus { Accepted, RejectedMaxSteps, RejectedZeroSteps };

constexpr std::string_view to_string(ThuStatus s) {
  switch (s) {
    case ThuStatus::Accepted: return "accepted";
    case ThuStatus::RejectedMaxSteps: return "rejected_max_steps";
    case ThuStatus::RejectedZeroSteps: return "rejected_zero_steps";
  }
  return "?";
}

struct ThuTracePoint {
  int update = 0;       // number of latent updates applied so far
  double gap = 0;       // top-2 gap of the stop-test prediction
  double uncertainty = 0;
  double loss = 0;
};

struct ThuResult {
  SampleId seed_id = 0;
  Sample x_new;
  std::vector<std::vector<float>> z_trajectory;  // z0 first
  std::vector<Image> frames;                     // decoded trajectory, when recorded
  std::vector<ThuTracePoint> trace;              // one entry per trajectory point
  int steps_taken = 0;
  ThuStatus status = ThuStatus::RejectedMaxSteps;
  double final_gap = 0;
  double mi_seed = 0;
  double mi_new = 0;
};

template <typename S>
std::vector<float> to_vector(const Mat<S>& row) {
  std::vector<float> out(static_cast<std::size_t>(row.size()));
  for (Eigen::Index k = 0; k < row.size(); ++k) out[static_cast<std::size_t>(k)] = static_cast<float>(row(0, k));
  return out;
}

template <typename S>
double top2_gap(const Mat<S>& probs_row) {
  double a = -1, b = -1;
  for (Eigen::Index k = 0; k < probs_row.cols(); ++k) {
    const double v = static_cast<double>(probs_row(0, k));
    if (v > a) {
      b = a;
      a = v;
    } else if (v > b) {
      b = v;
    }
  }
  return a - b;
}

namespace detail {

template <typename S>
double stop_gap(const Classifier<S>& model, const Mat<S>& x, const ThuConfig& cfg, std::uint64_t sample_seed) {
  if (!cfg.stop_on_mc_mean) return top2_gap(model.predict_deterministic(x));
  UncertaintyConfig u{cfg.t_draws, 0.0, derive_seed(sample_seed, "thu-stop")};
  const Mat<S> feats = model.features(x);
  Mat<S> mean = Mat<S>::Zero(1, kClassCount);
  for (auto s : mc_mask_seeds(u)) {
    const auto m = model.draw_masks(s);
    mean += softmax_rows(model.head_logits(feats, &m));
  }
  return top2_gap(Mat<S>(mean / static_cast<S>(cfg.t_draws)));
}

template <typename S>
double evaluation_mi(const Classifier<S>& model, const Mat<S>& x, int draws, std::uint64_t sample_seed) {
  UncertaintyConfig u{draws, 0.0, derive_seed(sample_seed, "thu-eval")};
  Sample s;
  s.pixels = to_image(x);
  return uncertainty_scores(mc_predict(model, s, u)).mutual_information;
}

// Shared walk. render(z) maps the walked point to an image row, loss(z,
// update) evaluates the objective with that update's masks, project(z) is
// applied after every step.
template <typename S, typename Render, typename Loss, typename Project>
ThuResult walk(SampleId seed_id, const Mat<S>& z0, const Classifier<S>& model, const ThuConfig& cfg,
               std::uint64_t sample_seed, Render&& render, Loss&& loss, Project&& project) {
  ThuResult r;
  r.seed_id = seed_id;
  Mat<S> z = z0;
  Mat<S> x = render(z);
  r.mi_seed = evaluation_mi(model, x, cfg.t_draws, sample_seed);

  auto visit = [&](double gap) {
    const int update = static_cast<int>(r.z_trajectory.size());
    r.z_trajectory.push_back(to_vector(z));
    if (cfg.record_frames) r.frames.push_back(to_image(x));
    auto l = loss(z, update);
    r.trace.push_back({update, gap, l.uncertainty, l.loss});
    return l;
  };

  double gap = stop_gap(model, x, cfg, sample_seed);
  bool stopped = gap < cfg.t_stop;
  int step = 0;
  if (!stopped) {
    while (step < cfg.step_max) {
      const auto l = visit(gap);
      if (!l.gradient.allFinite()) {
        fail(ErrorCode::NumericalFailure, "non-finite gradient (seed " + std::to_string(seed_id) + ", after " +
                                              std::to_string(r.z_trajectory.size() - 1) + " updates)");
      }
      z = project(Mat<S>(z - static_cast<S>(cfg.step_size) * l.gradient));
      x = render(z);
      gap = stop_gap(model, x, cfg, sample_seed);
      if (gap < cfg.t_stop) {
        stopped = true;
        break;
      }
      ++step;
    }
  }
  visit(gap);
  r.steps_taken = step;
  r.status = !stopped ? ThuStatus::RejectedMaxSteps : (step == 0 ? ThuStatus::RejectedZeroSteps : ThuStatus::Accepted);
  r.final_gap = gap;
  r.x_new.id = seed_id;
  r.x_new.pixels = to_image(x);
  r.mi_new = evaluation_mi(model, x, cfg.t_draws, sample_seed);
  return r;
}

}  // namespace detail

// Runs the walk for one confident seed. mi_seed / mi_new are measured on the
// decoded start and end points with one fixed evaluation mask set.
template <typename S>
ThuResult thu_generate(const Sample& seed_sample, const ThuContext<S>& ctx) {
  validate(ctx.config);
  const auto& cfg = ctx.config;
  const Mat<S> z0 = ctx.vae.encode(to_row<S>(seed_sample.pixels));
  return detail::walk(
      seed_sample.id, z0, ctx.model, cfg, ctx.sample_seed, [&](const Mat<S>& z) { return ctx.vae.decode(z); },
      [&](const Mat<S>& z, int update) {
        const auto masks = mc_masks(ctx.model, thu_mask_seeds(ctx.sample_seed, cfg.resample_masks_each_step ? update : 0,
                                                              cfg.t_draws));
        return thu_loss(z, z0, ctx.model, ctx.vae, std::span<const DropoutMasks<S>>(masks), cfg.alpha, cfg.measure);
      },
      [](Mat<S> z) { return z; });
}

// Pixel-space walk without the VAE (ablation). Same loss and stop rule with
// the restriction measured over pixels, clipped to [0, 1] after each step.
template <typename S>
ThuResult thu_generate_pixels(const Sample& seed_sample, const Classifier<S>& model, const ThuConfig& cfg,
                              std::uint64_t sample_seed) {
  validate(cfg);
  const Mat<S> x0 = to_row<S>(seed_sample.pixels);
  return detail::walk(
      seed_sample.id, x0, model, cfg, sample_seed, [](const Mat<S>& x) { return x; },
      [&](const Mat<S>& x, int update) {
        const auto masks =
            mc_masks(model, thu_mask_seeds(sample_seed, cfg.resample_masks_each_step ? update : 0, cfg.t_draws));
        auto [u, d_x] = model.input_gradient(x, std::span<const DropoutMasks<S>>(masks), [&](const Mat<S>& logits) {
          return uncertainty_from_logits(logits, cfg.measure);
        });
        const Mat<S> diff = x - x0;
        ThuLoss<S> out;
        out.uncertainty = static_cast<double>(u);
        out.restriction = static_cast<double>(diff.squaredNorm()) / kPixels;
        out.loss = thu_objective(out.uncertainty, out.restriction, cfg.alpha);
        out.gradient = -d_x + (static_cast<S>(2 * cfg.alpha) / static_cast<S>(kPixels)) * diff;
        return out;
      },
      [](Mat<S> x) { return Mat<S>(x.cwiseMax(S(0)).cwiseMin(S(1))); });
}

struct GeneratedSample {
  ThuResult result;
  int label = 0;  // the seed's predicted label
};

struct GenerationBatch {
  std::vector<GeneratedSample> accepted;
  std::vector<ThuResult> rejected;
  std::vector<ClassShortfall> shortfalls;
  std::size_t attempts = 0;

  std::size_t resamples() const { return attempts - accepted.size(); }
};

// For every predicted class, walks seeds in the class's seeded draw order
// until per_class walks are accepted or the class runs out of candidates.
// The first per_class seeds are exactly select_confident_balanced's pick.
template <typename S>
GenerationBatch generate_batch(const UnlabeledPool& pool, std::span<const ConfidentSample> confident, int per_class,
                               const Classifier<S>& model, const Vae<S>& vae, const ThuConfig& cfg,
                               std::uint64_t select_seed, std::uint64_t thu_seed, int class_count = kClassCount) {
  require(per_class >= 0, ErrorCode::InvalidConfig, "per_class must be >= 0");
  GenerationBatch out;
  for (int c = 0; c < class_count; ++c) {
    const auto order = class_draw_order(confident, c, select_seed);
    std::size_t got = 0;
    for (const auto& candidate : order) {
      if (got == static_cast<std::size_t>(per_class)) break;
      const Sample* s = pool.find(candidate.id);
      require(s != nullptr, ErrorCode::UnknownSample, "confident id " + std::to_string(candidate.id) + " not in pool");
      ThuContext<S> ctx{model, vae, cfg, derive_seed(thu_seed, "thu-sample", static_cast<std::uint64_t>(candidate.id))};
      ThuResult r = thu_generate(*s, ctx);
      ++out.attempts;
      if (r.status == ThuStatus::Accepted) {
        out.accepted.push_back({std::move(r), c});
        ++got;
      } else {
        out.rejected.push_back(std::move(r));
      }
    }
    if (got < static_cast<std::size_t>(per_class)) out.shortfalls.push_back({c, got});
  }
  return out;
}

}  // namespace ofal
