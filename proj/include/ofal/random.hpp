#pragma once

// Seed derivation and portable random streams.
//
// Every stochastic component draws from a stream whose seed is
// derive_seed(master, purpose, index). The purpose tag is hashed with FNV-1a
// and mixed with SplitMix64, so components are reproducible independently of
// the order in which they run. Distributions are implemented here rather than
// through <random> so that streams are identical across standard libraries.

#include <cmath>
#include <cstdint>
#include <numeric>
#include <string_view>
#include <utility>
#include <vector>

namespace ofal {

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (char c : text) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  return h;
}

constexpr std::uint64_t derive_seed(std::uint64_t master, std::string_view purpose,
                                    std::uint64_t index = 0) {
  return splitmix64(splitmix64(master ^ fnv1a(purpose)) + splitmix64(index + 0x632BE59BD9B4E019ULL));
}

// xoshiro256** seeded through SplitMix64.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    std::uint64_t s = seed;
    for (auto& word : state_) {
      s += 0x9E3779B97F4A7C15ULL;
      word = splitmix64(s);
    }
  }

  std::uint64_t next() {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform in [0, 1) with 53 bits of resolution.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  // Unbiased integer in [0, bound) via rejection (Lemire).
  std::uint64_t below(std::uint64_t bound) {
    if (bound <= 1) return 0;
    const std::uint64_t threshold = (0 - bound) % bound;
    for (;;) {
      const unsigned __int128 m = static_cast<unsigned __int128>(next()) * bound;
      if (static_cast<std::uint64_t>(m) >= threshold) return static_cast<std::uint64_t>(m >> 64);
    }
  }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * M_PI * u2);
    has_spare_ = true;
    return r * std::cos(2.0 * M_PI * u2);
  }

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const std::size_t j = below(i);
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  static constexpr std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  std::uint64_t state_[4]{};
  double spare_ = 0.0;
  bool has_spare_ = false;
};

inline std::vector<std::size_t> permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(order);
  return order;
}

// Counter-based Bernoulli keep-mask: element k is kept iff a 32-bit word of
// splitmix64(seed, k / 2) is at or above rate * 2^32. Kept entries are scaled
// by 1 / (1 - rate) (inverted dropout), dropped entries are zero.
template <typename Scalar, typename Out>
void fill_dropout_mask(std::uint64_t seed, double rate, Out out, std::size_t count) {
  const auto threshold = static_cast<std::uint64_t>(std::llround(rate * 4294967296.0));
  const Scalar keep = static_cast<Scalar>(1.0 / (1.0 - rate));
  const std::uint64_t base = splitmix64(seed);
  const std::size_t pairs = count / 2;
  for (std::size_t j = 0; j < pairs; ++j) {
    const std::uint64_t bits = splitmix64(base + j * 0xD1B54A32D192ED03ULL);
    out[2 * j] = (bits & 0xFFFFFFFFULL) >= threshold ? keep : Scalar(0);
    out[2 * j + 1] = (bits >> 32) >= threshold ? keep : Scalar(0);
  }
  if (count % 2 == 1) {
    const std::uint64_t bits = splitmix64(base + pairs * 0xD1B54A32D192ED03ULL);
    out[count - 1] = (bits & 0xFFFFFFFFULL) >= threshold ? keep : Scalar(0);
  }
}

}  // namespace ofal
