#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "ofal/error.hpp"
#include "ofal/idx.hpp"
#include "ofal/random.hpp"

namespace ofal {

inline constexpr int kImageSide = 28;
inline constexpr int kPixels = kImageSide * kImageSide;
inline constexpr int kClassCount = 10;

using Image = std::array<float, kPixels>;
using SampleId = std::int64_t;

struct Sample {
  SampleId id = 0;
  Image pixels{};
};

struct Dataset {
  std::vector<Sample> samples;
  std::vector<int> labels;

  std::size_t size() const { return samples.size(); }
};

enum class Provenance : std::uint8_t { initial = 0, oracle = 1, confident = 2, generated = 3 };

constexpr std::string_view to_string(Provenance p) {
  switch (p) {
    case Provenance::initial: return "initial";
    case Provenance::oracle: return "oracle";
    case Provenance::confident: return "confident";
    case Provenance::generated: return "generated";
  }
  return "?";
}

struct LabeledSample {
  Sample sample;
  int label = 0;
  Provenance provenance = Provenance::initial;
};

class LabeledSet {
 public:
  void add(Sample sample, int label, Provenance provenance) {
    require(label >= 0 && label < kClassCount, ErrorCode::InvalidConfig, "label out of range");
    entries_.push_back({std::move(sample), label, provenance});
  }

  std::span<const LabeledSample> entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  std::size_t count(Provenance p) const {
    return static_cast<std::size_t>(
        std::count_if(entries_.begin(), entries_.end(), [p](const auto& e) { return e.provenance == p; }));
  }

 private:
  std::vector<LabeledSample> entries_;
};

class SimulatedOracle;

// The unlabeled pool keeps the true labels for simulated-oracle experiments,
// but only SimulatedOracle can read them. Samples are kept sorted by id.
class UnlabeledPool {
 public:
  UnlabeledPool() = default;

  UnlabeledPool(std::vector<Sample> samples, std::vector<int> hidden_labels) {
    require(samples.size() == hidden_labels.size(), ErrorCode::ShapeError, "pool samples/labels size mismatch");
    std::vector<std::size_t> order(samples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return samples[a].id < samples[b].id; });
    samples_.reserve(samples.size());
    hidden_.reserve(samples.size());
    for (auto i : order) {
      samples_.push_back(std::move(samples[i]));
      hidden_.push_back(hidden_labels[i]);
    }
  }

  std::span<const Sample> samples() const { return samples_; }
  std::size_t size() const { return samples_.size(); }
  bool empty() const { return samples_.empty(); }

  const Sample* find(SampleId id) const {
    auto it = std::lower_bound(samples_.begin(), samples_.end(), id,
                               [](const Sample& s, SampleId v) { return s.id < v; });
    return (it != samples_.end() && it->id == id) ? &*it : nullptr;
  }

  bool contains(SampleId id) const { return find(id) != nullptr; }

  std::vector<SampleId> ids() const {
    std::vector<SampleId> out;
    out.reserve(samples_.size());
    for (const auto& s : samples_) out.push_back(s.id);
    return out;
  }

  // Removes the given ids and returns their samples in the requested order.
  std::vector<Sample> take(std::span<const SampleId> ids) {
    std::unordered_map<SampleId, std::size_t> wanted;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      require(contains(ids[k]), ErrorCode::UnknownSample, "id " + std::to_string(ids[k]) + " not in pool");
      wanted.emplace(ids[k], k);
    }
    std::vector<Sample> out(ids.size());
    std::size_t keep = 0;
    for (std::size_t i = 0; i < samples_.size(); ++i) {
      if (auto it = wanted.find(samples_[i].id); it != wanted.end()) {
        out[it->second] = samples_[i];
      } else {
        if (keep != i) {
          samples_[keep] = std::move(samples_[i]);
          hidden_[keep] = hidden_[i];
        }
        ++keep;
      }
    }
    samples_.resize(keep);
    hidden_.resize(keep);
    return out;
  }

 private:
  friend class SimulatedOracle;
  std::vector<Sample> samples_;
  std::vector<int> hidden_;
};

// The only path to the pool's hidden labels. Counts every label it reveals.
class SimulatedOracle {
 public:
  std::vector<int> label(const UnlabeledPool& pool, std::span<const SampleId> ids) {
    std::vector<int> out;
    out.reserve(ids.size());
    for (auto id : ids) {
      const Sample* s = pool.find(id);
      require(s != nullptr, ErrorCode::UnknownSample, "id " + std::to_string(id) + " not in pool");
      out.push_back(pool.hidden_[static_cast<std::size_t>(s - pool.samples_.data())]);
    }
    calls_ += ids.size();
    return out;
  }

  std::size_t calls() const { return calls_; }
  void set_calls(std::size_t calls) { calls_ = calls; }

 private:
  std::size_t calls_ = 0;
};

struct SplitSpec {
  int n_per_class = 100;
  std::uint64_t seed = 0;
  int class_count = kClassCount;
};

struct Split {
  LabeledSet labeled;
  UnlabeledPool pool;
};

// Balanced labeled split: for every class, the first n_per_class ids of a
// seeded permutation of that class's ids. The rest become the pool.
inline Split make_split(const Dataset& data, const SplitSpec& spec) {
  require(spec.n_per_class >= 0, ErrorCode::InvalidConfig, "n_per_class must be non-negative");
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(spec.class_count));
  for (std::size_t i = 0; i < data.size(); ++i) {
    const int label = data.labels[i];
    require(label >= 0 && label < spec.class_count, ErrorCode::InvalidConfig, "dataset label out of range");
    by_class[static_cast<std::size_t>(label)].push_back(i);
  }

  std::vector<bool> chosen(data.size(), false);
  for (int c = 0; c < spec.class_count; ++c) {
    auto& members = by_class[static_cast<std::size_t>(c)];
    require(members.size() >= static_cast<std::size_t>(spec.n_per_class), ErrorCode::InsufficientClassSamples,
            "class " + std::to_string(c) + " has " + std::to_string(members.size()) + " samples, need " +
                std::to_string(spec.n_per_class));
    const auto order = permutation(members.size(), derive_seed(spec.seed, "split", static_cast<std::uint64_t>(c)));
    for (int k = 0; k < spec.n_per_class; ++k) chosen[members[order[static_cast<std::size_t>(k)]]] = true;
  }

  Split out;
  std::vector<std::size_t> labeled_idx;
  std::vector<Sample> pool_samples;
  std::vector<int> pool_labels;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (chosen[i]) {
      labeled_idx.push_back(i);
    } else {
      pool_samples.push_back(data.samples[i]);
      pool_labels.push_back(data.labels[i]);
    }
  }
  std::sort(labeled_idx.begin(), labeled_idx.end(),
            [&](auto a, auto b) { return data.samples[a].id < data.samples[b].id; });
  for (auto i : labeled_idx) out.labeled.add(data.samples[i], data.labels[i], Provenance::initial);
  out.pool = UnlabeledPool(std::move(pool_samples), std::move(pool_labels));
  return out;
}

// Builds a Dataset from an image/label IDX pair. Ids are the record index.
inline Dataset make_dataset(const IdxImages& images, const IdxLabels& labels, std::size_t limit = 0) {
  require(images.rows == kImageSide && images.cols == kImageSide, ErrorCode::ShapeError,
          "expected 28x28 images, got " + std::to_string(images.rows) + "x" + std::to_string(images.cols));
  require(images.count == labels.labels.size(), ErrorCode::ShapeError, "image/label count mismatch");
  const std::size_t n = limit == 0 ? images.count : std::min(limit, images.count);
  Dataset out;
  out.samples.resize(n);
  out.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.samples[i].id = static_cast<SampleId>(i);
    std::copy_n(images.pixels.begin() + static_cast<std::ptrdiff_t>(i * kPixels), kPixels,
                out.samples[i].pixels.begin());
    out.labels[i] = labels.labels[i];
  }
  return out;
}

struct MnistData {
  Dataset train;
  Dataset test;
};

inline MnistData load_mnist(const std::filesystem::path& dir, std::size_t train_limit = 0,
                            std::size_t test_limit = 0) {
  MnistData out;
  out.train = make_dataset(load_idx_images(dir / "train-images-idx3-ubyte"),
                           load_idx_labels(dir / "train-labels-idx1-ubyte"), train_limit);
  out.test = make_dataset(load_idx_images(dir / "t10k-images-idx3-ubyte"),
                          load_idx_labels(dir / "t10k-labels-idx1-ubyte"), test_limit);
  return out;
}

}  // namespace ofal
