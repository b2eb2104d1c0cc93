#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "gradcheck.hpp"
#include "ofal/thu.hpp"

using namespace ofal;

namespace {

Mat<double> randn(int d, Rng& rng, double scale = 1.0) {
  Mat<double> z(1, d);
  for (int j = 0; j < d; ++j) z(0, j) = scale * rng.normal();
  return z;
}

Sample random_sample(std::uint64_t seed, SampleId id = 1) {
  Rng rng(seed);
  Sample s;
  s.id = id;
  for (auto& v : s.pixels) v = static_cast<float>(rng.uniform());
  return s;
}

// Constant output: softmax of the final bias only.
Classifier<float> constant_classifier(float top_logit) {
  Classifier<float> m(ClassifierShape{}, 1);
  m.parameters()[6]->setZero();
  m.parameters()[7]->setZero();
  (*m.parameters()[7])(0, 0) = top_logit;
  return m;
}

// Random weights with a sharpened head, so seeds start out confident.
Classifier<float> peaked_classifier() {
  Classifier<float> m(ClassifierShape{}, 8);
  *m.parameters()[6] *= 10.0f;
  return m;
}

}  // namespace

TEST(ThuLoss, ObjectiveArithmetic) { EXPECT_NEAR(thu_objective(0.5, 0.2, 1.0), -0.3, 1e-15); }

TEST(ThuLoss, ZeroDistanceIsMinusMutualInformation) {
  const auto m = Classifier<float>(ClassifierShape{}, 2).cast<double>();
  const auto v = Vae<float>(VaeShape{}, 3).cast<double>();
  Rng rng(1);
  const auto z0 = randn(10, rng);
  const std::vector<std::uint64_t> seeds = {4, 5, 6, 7};
  const auto l = thu_loss(z0, z0, m, v, std::span<const std::uint64_t>(seeds), 1.0);
  EXPECT_EQ(l.restriction, 0.0);

  const Mat<double> feats = m.features(v.decode(z0));
  ProbMatrix probs(4, kClassCount);
  for (int i = 0; i < 4; ++i) {
    const auto masks = m.draw_masks(seeds[static_cast<std::size_t>(i)]);
    probs.row(i) = softmax_rows(m.head_logits(feats, &masks));
  }
  EXPECT_NEAR(l.loss, -uncertainty_scores(probs).mutual_information, 1e-10);
}

TEST(ThuLoss, DimensionMismatch) {
  const auto m = Classifier<float>(ClassifierShape{}, 2).cast<double>();
  const auto v = Vae<float>(VaeShape{}, 3).cast<double>();
  const std::vector<std::uint64_t> seeds = {1};
  try {
    const Mat<double> z3 = Mat<double>::Zero(1, 3);
    thu_loss(z3, z3, m, v, std::span<const std::uint64_t>(seeds), 1.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ShapeError);
  }
}

// The analytic gradient is exact between activation kinks; a small step keeps
// the central difference on one linear piece.
TEST(ThuLoss, GradientMatchesFiniteDifferencesSmallStep) {
  const auto m = Classifier<float>(ClassifierShape{}, 2).cast<double>();
  const auto v = Vae<float>(VaeShape{}, 3).cast<double>();
  Rng rng(7);
  test::GradCheck total;
  for (int trial = 0; trial < 10; ++trial) {
    const auto z0 = randn(10, rng);
    const Mat<double> z = z0 + randn(10, rng, 0.3);
    std::vector<std::uint64_t> seeds;
    for (int i = 0; i < 25; ++i) seeds.push_back(derive_seed(trial, "t", i));
    const auto g = test::check_thu_loss(m, v, z, z0, seeds, 1.0, 1e-6, 1e-4);
    total.coords += g.coords;
    total.failures += g.failures;
    total.worst = std::max(total.worst, g.worst);
  }
  EXPECT_EQ(total.coords, 100u);
  EXPECT_EQ(total.failures, 0u) << "worst " << total.worst;
}

TEST(ThuStep, ZeroStepIsIdentityAndQuadraticHook) {
  Rng rng(2);
  const auto z = randn(10, rng);
  struct Quad {
    Mat<double> gradient;
  };
  auto quad = [](const Mat<double>& p) { return Quad{2 * p}; };
  EXPECT_EQ(gradient_step(z, 0.0, quad), z);
  EXPECT_LT((gradient_step(z, 0.1, quad) - 0.8 * z).cwiseAbs().maxCoeff(), 1e-15);

  const auto m = Classifier<float>(ClassifierShape{}, 2);
  const auto v = Vae<float>(VaeShape{}, 3);
  ThuConfig cfg;
  cfg.step_size = 0;
  ThuContext<float> ctx{m, v, cfg, 5};
  const Mat<float> zf = z.cast<float>();
  EXPECT_EQ(thu_step(zf, zf, ctx, 0), zf);
}

TEST(ThuStep, NonFiniteGradientIsNumericalFailure) {
  struct Bad {
    Mat<double> gradient;
  };
  auto bad = [](const Mat<double>& p) { return Bad{Mat<double>::Constant(1, p.cols(), std::nan(""))}; };
  try {
    gradient_step(Mat<double>(Mat<double>::Zero(1, 4)), 0.1, bad);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NumericalFailure);
  }
}

TEST(ThuStep, SmallStepsDescend) {
  const auto m = Classifier<float>(ClassifierShape{}, 4).cast<double>();
  const auto v = Vae<float>(VaeShape{}, 5).cast<double>();
  int better = 0;
  for (int trial = 0; trial < 100; ++trial) {
    Rng rng(static_cast<std::uint64_t>(trial) + 100);
    const auto z0 = randn(10, rng);
    const Mat<double> z = z0 + randn(10, rng, 0.2);
    std::vector<std::uint64_t> seeds;
    for (int i = 0; i < 8; ++i) seeds.push_back(derive_seed(trial, "d", i));
    const auto masks = mc_masks(m, std::span<const std::uint64_t>(seeds));
    const std::span<const DropoutMasks<double>> ms(masks);
    auto loss = [&](const Mat<double>& p) { return thu_loss(p, z0, m, v, ms, 1.0); };
    const auto next = gradient_step(z, 1e-3, loss);
    better += loss(next).loss < loss(z).loss;
  }
  EXPECT_GE(better, 95);
}

TEST(ThuGenerate, InitialGapBelowThresholdIsZeroStep) {
  const auto m = constant_classifier(0);  // uniform output, gap 0
  const Vae<float> v(VaeShape{}, 1);
  const auto r = thu_generate(random_sample(1), ThuContext<float>{m, v, ThuConfig{}, 3});
  EXPECT_EQ(r.status, ThuStatus::RejectedZeroSteps);
  EXPECT_EQ(r.steps_taken, 0);
  EXPECT_EQ(r.z_trajectory.size(), 1u);
}

TEST(ThuGenerate, FlatModelRunsToStepMax) {
  const auto m = constant_classifier(6);
  const Vae<float> v(VaeShape{}, 1);
  ThuConfig cfg;
  cfg.step_max = 15;
  cfg.t_draws = 3;
  const auto r = thu_generate(random_sample(1), ThuContext<float>{m, v, cfg, 3});
  EXPECT_EQ(r.status, ThuStatus::RejectedMaxSteps);
  EXPECT_EQ(r.steps_taken, cfg.step_max);
  EXPECT_EQ(r.z_trajectory.size(), static_cast<std::size_t>(cfg.step_max) + 1);
  EXPECT_EQ(r.trace.size(), r.z_trajectory.size());
}

TEST(ThuGenerate, DeterministicAndInvariants) {
  const auto m = peaked_classifier();
  const Vae<float> v(VaeShape{}, 9);
  ThuConfig cfg;
  cfg.t_draws = 5;
  cfg.step_max = 30;
  cfg.step_size = 2.0;
  int accepted = 0;
  for (std::uint64_t s = 0; s < 6; ++s) {
    const auto sample = random_sample(s, static_cast<SampleId>(s));
    const auto a = thu_generate(sample, ThuContext<float>{m, v, cfg, s});
    const auto b = thu_generate(sample, ThuContext<float>{m, v, cfg, s});
    EXPECT_EQ(a.z_trajectory, b.z_trajectory);
    EXPECT_EQ(a.status, b.status);
    for (const auto& z : a.z_trajectory) {
      for (float x : z) EXPECT_TRUE(std::isfinite(x));
    }
    switch (a.status) {
      case ThuStatus::Accepted:
        ++accepted;
        EXPECT_LT(a.final_gap, cfg.t_stop);
        EXPECT_GT(a.steps_taken, 0);
        EXPECT_LT(a.steps_taken, cfg.step_max);
        break;
      case ThuStatus::RejectedZeroSteps: EXPECT_EQ(a.steps_taken, 0); break;
      case ThuStatus::RejectedMaxSteps: EXPECT_EQ(a.steps_taken, cfg.step_max); break;
    }
  }
  EXPECT_GE(accepted, 1);
}

TEST(ThuGenerate, PixelAblationStaysInRange) {
  const Classifier<float> m(ClassifierShape{}, 8);
  ThuConfig cfg;
  cfg.t_draws = 3;
  cfg.step_max = 5;
  cfg.step_size = 5.0;
  const auto r = thu_generate_pixels(random_sample(2), m, cfg, 1);
  for (float x : r.x_new.pixels) {
    EXPECT_GE(x, 0.0f);
    EXPECT_LE(x, 1.0f);
  }
  EXPECT_EQ(r.frames.size(), 0u);
}

TEST(GenerateBatch, EmptyClassAndLabelAssignment) {
  const auto m = constant_classifier(6);  // nothing is ever accepted
  const Vae<float> v(VaeShape{}, 1);
  std::vector<Sample> samples;
  std::vector<ConfidentSample> confident;
  for (int i = 0; i < 4; ++i) {
    samples.push_back(random_sample(static_cast<std::uint64_t>(i), i));
    confident.push_back({i, i % 2, 0.999});  // classes 0 and 1 only
  }
  UnlabeledPool pool(samples, std::vector<int>(samples.size(), 0));
  ThuConfig cfg;
  cfg.step_max = 2;
  cfg.t_draws = 2;
  const auto b = generate_batch(pool, std::span<const ConfidentSample>(confident), 1, m, v, cfg, 1, 2);
  EXPECT_TRUE(b.accepted.empty());
  EXPECT_EQ(b.attempts, 4u);
  ASSERT_EQ(b.shortfalls.size(), 10u);
  for (const auto& s : b.shortfalls) EXPECT_EQ(s.achieved, 0u);

  // Any accepted sample carries its seed's predicted label.
  const auto live = peaked_classifier();
  cfg.step_size = 2.0;
  cfg.step_max = 30;
  cfg.t_draws = 5;
  const auto b2 = generate_batch(pool, std::span<const ConfidentSample>(confident), 2, live, v, cfg, 1, 2);
  EXPECT_FALSE(b2.accepted.empty());
  for (const auto& g : b2.accepted) EXPECT_EQ(g.label, static_cast<int>(g.result.seed_id % 2));
  EXPECT_EQ(b2.attempts, b2.accepted.size() + b2.rejected.size());
}
