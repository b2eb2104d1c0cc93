#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "ofal/acquisition.hpp"

using namespace ofal;

namespace {

PoolScore score(SampleId id, std::array<double, kClassCount> p) {
  Eigen::RowVectorXd m(kClassCount);
  for (int c = 0; c < kClassCount; ++c) m(c) = p[static_cast<std::size_t>(c)];
  return score_from_mean(id, m);
}

PoolScores random_scores(std::size_t n, std::uint64_t seed, bool coarse) {
  Rng rng(seed);
  PoolScores out;
  for (std::size_t i = 0; i < n; ++i) {
    std::array<double, kClassCount> p{};
    double total = 0;
    for (auto& v : p) {
      // Coarse values force ties so the id tie-break gets exercised.
      v = coarse ? static_cast<double>(rng.below(3)) + 0.5 : rng.uniform() + 1e-3;
      total += v;
    }
    for (auto& v : p) v /= total;
    out.push_back(score(static_cast<SampleId>(rng.below(1000000)) * 64 + static_cast<SampleId>(i), p));
  }
  return out;
}

// Brute force: sort the whole pool by (key, id) and take the first k.
std::vector<SampleId> brute_force(const PoolScores& scores, Criterion c, std::size_t k) {
  std::vector<std::pair<double, SampleId>> all;
  for (const auto& s : scores) {
    double key = 0;
    if (c == Criterion::least_confidence) key = *std::max_element(s.mean_probs.begin(), s.mean_probs.end());
    if (c == Criterion::margin) {
      auto p = s.mean_probs;
      std::sort(p.begin(), p.end(), std::greater<>());
      key = p[0] - p[1];
    }
    if (c == Criterion::entropy) {
      double h = 0;
      for (double v : s.mean_probs) h -= v > 0 ? v * std::log(v) : 0;
      key = -h;
    }
    all.push_back({key, s.id});
  }
  std::sort(all.begin(), all.end());
  std::vector<SampleId> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back(all[i].second);
  return out;
}

}  // namespace

TEST(Scores, UniformAndOneHot) {
  std::array<double, kClassCount> u;
  u.fill(0.1);
  const auto su = score(0, u);
  EXPECT_NEAR(su.top1, 0.1, 1e-15);
  EXPECT_NEAR(su.top1 - su.top2, 0.0, 1e-15);
  EXPECT_NEAR(su.entropy, std::log(10.0), 1e-12);

  std::array<double, kClassCount> h{};
  h[3] = 1;
  const auto sh = score(1, h);
  EXPECT_EQ(sh.top1, 1.0);
  EXPECT_EQ(sh.top1 - sh.top2, 1.0);
  EXPECT_EQ(sh.entropy, 0.0);
}

TEST(Scores, MarginExample) {
  std::array<double, kClassCount> p{};
  p[0] = 0.5;
  p[1] = 0.3;
  p[2] = 0.2;
  EXPECT_NEAR(criterion_key(score(0, p), Criterion::margin), 0.2, 1e-15);
}

TEST(Select, EntropyWithWholePoolReturnsEverything) {
  const auto scores = random_scores(37, 3, false);
  const auto ids = select_by_criterion(scores, Criterion::entropy, scores.size(), 0);
  std::set<SampleId> a(ids.begin(), ids.end()), b;
  for (const auto& s : scores) b.insert(s.id);
  EXPECT_EQ(a, b);
}

TEST(Select, MatchesBruteForceOracle) {
  for (auto c : {Criterion::least_confidence, Criterion::margin, Criterion::entropy}) {
    for (std::uint64_t f = 0; f < 50; ++f) {
      const bool coarse = f % 2 == 0;
      const auto scores = random_scores(40 + f, f * 7 + 1, coarse);
      const std::size_t k = 1 + f % 30;
      EXPECT_EQ(select_by_criterion(scores, c, k, f), brute_force(scores, c, k)) << to_string(c) << " fixture " << f;
    }
  }
}

TEST(Select, UniformIsSeededSubsetWithoutDuplicates) {
  const auto scores = random_scores(100, 4, false);
  const auto a = select_by_criterion(scores, Criterion::uniform, 30, 9);
  EXPECT_EQ(a, select_by_criterion(scores, Criterion::uniform, 30, 9));
  EXPECT_NE(a, select_by_criterion(scores, Criterion::uniform, 30, 10));
  EXPECT_EQ(std::set<SampleId>(a.begin(), a.end()).size(), 30u);
}

TEST(Select, InsufficientPool) {
  const auto scores = random_scores(5, 1, false);
  try {
    select_by_criterion(scores, Criterion::margin, 6, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InsufficientPool);
  }
}

TEST(Balanced, TwoHundredFromRichPool) {
  std::vector<ConfidentSample> conf;
  for (int i = 0; i < 1000; ++i) conf.push_back({i, i % 10, 0.995});
  const auto sel = select_confident_balanced(std::span<const ConfidentSample>(conf), 20, 5);
  ASSERT_EQ(sel.seeds.size(), 200u);
  EXPECT_TRUE(sel.shortfalls.empty());
  std::array<int, kClassCount> counts{};
  std::set<SampleId> ids;
  for (const auto& s : sel.seeds) {
    ++counts[static_cast<std::size_t>(s.predicted_label)];
    ids.insert(s.id);
  }
  for (int c : counts) EXPECT_EQ(c, 20);
  EXPECT_EQ(ids.size(), 200u);
  const auto again = select_confident_balanced(std::span<const ConfidentSample>(conf), 20, 5);
  for (std::size_t i = 0; i < 200; ++i) EXPECT_EQ(again.seeds[i].id, sel.seeds[i].id);
}

TEST(Balanced, ZeroPerClassAndShortfall) {
  std::vector<ConfidentSample> conf;
  for (int i = 0; i < 30; ++i) conf.push_back({i, i < 25 ? 0 : 1, 0.999});
  EXPECT_TRUE(select_confident_balanced(std::span<const ConfidentSample>(conf), 0, 1).seeds.empty());
  const auto sel = select_confident_balanced(std::span<const ConfidentSample>(conf), 20, 1);
  EXPECT_EQ(sel.seeds.size(), 25u);
  ASSERT_EQ(sel.shortfalls.size(), 9u);
  EXPECT_EQ(sel.shortfalls[0].label, 1);
  EXPECT_EQ(sel.shortfalls[0].achieved, 5u);
  EXPECT_EQ(sel.shortfalls[1].achieved, 0u);
}

TEST(Oracle, CountsEveryLabelledId) {
  std::vector<Sample> samples(6);
  for (int i = 0; i < 6; ++i) samples[static_cast<std::size_t>(i)].id = i;
  UnlabeledPool pool(samples, {0, 1, 2, 3, 4, 5});
  SimulatedOracle oracle;
  const std::vector<SampleId> ids = {4, 1};
  EXPECT_EQ(oracle_label(oracle, pool, std::span<const SampleId>(ids)), (std::vector<int>{4, 1}));
  EXPECT_EQ(oracle.calls(), 2u);
  const std::vector<SampleId> missing = {99};
  EXPECT_THROW(oracle_label(oracle, pool, std::span<const SampleId>(missing)), Error);
}
