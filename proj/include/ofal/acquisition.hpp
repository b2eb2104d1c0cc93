#pragma once

// Oracle sampling baselines and balanced confident-seed selection.
// Every ranking breaks ties by the lowest sample id.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ofal/classifier.hpp"
#include "ofal/data.hpp"
#include "ofal/error.hpp"
#include "ofal/random.hpp"
#include "ofal/uncertainty.hpp"

namespace ofal {

struct PoolScore {
  SampleId id = 0;
  std::array<double, kClassCount> mean_probs{};
  double top1 = 0;
  double top2 = 0;
  double entropy = 0;
};

using PoolScores = std::vector<PoolScore>;

inline PoolScore score_from_mean(SampleId id, const Eigen::RowVectorXd& mean) {
  PoolScore s;
  s.id = id;
  for (int c = 0; c < kClassCount && c < mean.size(); ++c) s.mean_probs[static_cast<std::size_t>(c)] = mean(c);
  std::array<double, kClassCount> sorted = s.mean_probs;
  std::partial_sort(sorted.begin(), sorted.begin() + 2, sorted.end(), std::greater<>());
  s.top1 = sorted[0];
  s.top2 = sorted[1];
  s.entropy = entropy(mean);
  return s;
}

inline PoolScores scores_from_means(std::span<const Sample> samples, const ProbMatrix& means) {
  PoolScores out;
  out.reserve(samples.size());
  for (std::size_t k = 0; k < samples.size(); ++k) {
    out.push_back(score_from_mean(samples[k].id, means.row(static_cast<Eigen::Index>(k))));
  }
  return out;
}

template <typename S>
PoolScores score_pool(const UnlabeledPool& pool, const Classifier<S>& model, const UncertaintyConfig& cfg) {
  if (pool.empty()) return {};
  return scores_from_means(pool.samples(), mc_mean_probs(model, pool.samples(), cfg));
}

enum class Criterion { uniform, least_confidence, margin, entropy };

constexpr std::string_view to_string(Criterion c) {
  switch (c) {
    case Criterion::uniform: return "uniform";
    case Criterion::least_confidence: return "least_confidence";
    case Criterion::margin: return "margin";
    case Criterion::entropy: return "entropy";
  }
  return "?";
}

inline std::optional<Criterion> parse_criterion(std::string_view name) {
  for (auto c : {Criterion::uniform, Criterion::least_confidence, Criterion::margin, Criterion::entropy}) {
    if (name == to_string(c)) return c;
  }
  if (name == "uncertainty") return Criterion::least_confidence;
  return std::nullopt;
}

// Ranking key: smaller is selected first.
inline double criterion_key(const PoolScore& s, Criterion c) {
  switch (c) {
    case Criterion::least_confidence: return s.top1;
    case Criterion::margin: return s.top1 - s.top2;
    case Criterion::entropy: return -s.entropy;
    case Criterion::uniform: break;
  }
  return 0;
}

inline std::vector<SampleId> select_by_criterion(const PoolScores& scores, Criterion criterion, std::size_t k,
                                                 std::uint64_t seed) {
  require(k <= scores.size(), ErrorCode::InsufficientPool,
          "requested " + std::to_string(k) + " of " + std::to_string(scores.size()) + " pool samples");
  std::vector<SampleId> out;
  out.reserve(k);
  if (criterion == Criterion::uniform) {
    const auto order = permutation(scores.size(), derive_seed(seed, "uniform-sampler"));
    for (std::size_t i = 0; i < k; ++i) out.push_back(scores[order[i]].id);
    return out;
  }
  std::vector<std::size_t> idx(scores.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  auto before = [&](std::size_t a, std::size_t b) {
    const double ka = criterion_key(scores[a], criterion);
    const double kb = criterion_key(scores[b], criterion);
    if (ka != kb) return ka < kb;
    return scores[a].id < scores[b].id;
  };
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), before);
  for (std::size_t i = 0; i < k; ++i) out.push_back(scores[idx[i]].id);
  return out;
}

// A class that could not supply the requested count.
struct ClassShortfall {
  int label = 0;
  std::size_t achieved = 0;
};

// Confident candidates of one predicted class in the seeded draw order used
// both for the initial balanced pick and for later replacements.
inline std::vector<ConfidentSample> class_draw_order(std::span<const ConfidentSample> confident, int label,
                                                     std::uint64_t seed) {
  std::vector<ConfidentSample> members;
  for (const auto& c : confident) {
    if (c.predicted_label == label) members.push_back(c);
  }
  std::sort(members.begin(), members.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  const auto order = permutation(members.size(), derive_seed(seed, "confident-class", static_cast<std::uint64_t>(label)));
  std::vector<ConfidentSample> out;
  out.reserve(members.size());
  for (auto i : order) out.push_back(members[i]);
  return out;
}

struct BalancedSelection {
  std::vector<ConfidentSample> seeds;  // class-major, draw order within a class
  std::vector<ClassShortfall> shortfalls;
};

inline BalancedSelection select_confident_balanced(std::span<const ConfidentSample> confident, int per_class,
                                                   std::uint64_t seed, int class_count = kClassCount) {
  require(per_class >= 0, ErrorCode::InvalidConfig, "per_class must be >= 0");
  BalancedSelection out;
  for (int c = 0; c < class_count; ++c) {
    const auto order = class_draw_order(confident, c, seed);
    const std::size_t take = std::min(order.size(), static_cast<std::size_t>(per_class));
    out.seeds.insert(out.seeds.end(), order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take));
    if (take < static_cast<std::size_t>(per_class)) out.shortfalls.push_back({c, take});
  }
  return out;
}

// Baseline/integration paths only. The counter lives in the oracle.
inline std::vector<int> oracle_label(SimulatedOracle& oracle, const UnlabeledPool& pool,
                                     std::span<const SampleId> ids) {
  return oracle.label(pool, ids);
}

}  // namespace ofal
