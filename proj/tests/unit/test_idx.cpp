#include <gtest/gtest.h>

#include <fstream>
#include <iterator>
#include <vector>

#include "ofal/idx.hpp"
#include "support.hpp"

using namespace ofal;

namespace {

std::vector<std::uint8_t> read_all(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

template <typename F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::IoError;  // nothing thrown
}

}  // namespace

TEST(Idx, TwoImageFixtureNormalises) {
  const auto dir = test::temp_dir("idx_fixture");
  std::vector<std::uint8_t> px(2 * 28 * 28, 0);
  for (std::size_t i = 784; i < px.size(); ++i) px[i] = 255;
  write_idx_images(dir / "img", 2, 28, 28, px);
  const auto img = load_idx_images(dir / "img");
  ASSERT_EQ(img.count, 2u);
  EXPECT_EQ(img.pixels.front(), 0.0f);
  EXPECT_EQ(img.pixels.back(), 1.0f);
}

TEST(Idx, WrongMagicIsUnsupported) {
  std::vector<std::uint8_t> bytes = {0, 0, 8, 2, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1, 7};
  EXPECT_EQ(code_of([&] { parse_idx(bytes); }), ErrorCode::UnsupportedFormat);
}

TEST(Idx, TruncatedPayloadIsCorrupt) {
  std::vector<std::uint8_t> img = {0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2, 1, 2, 3};
  EXPECT_EQ(code_of([&] { parse_idx(img); }), ErrorCode::CorruptFile);
  std::vector<std::uint8_t> lab = {0, 0, 8, 1, 0, 0, 0, 5, 1, 2};
  EXPECT_EQ(code_of([&] { parse_idx(lab); }), ErrorCode::CorruptFile);
  EXPECT_EQ(code_of([&] { parse_idx(std::vector<std::uint8_t>{0, 0}); }), ErrorCode::CorruptFile);
}

TEST(Idx, LabelOutOfRangeIsCorrupt) {
  std::vector<std::uint8_t> lab = {0, 0, 8, 1, 0, 0, 0, 2, 3, 10};
  EXPECT_EQ(code_of([&] { parse_idx(lab); }), ErrorCode::CorruptFile);
}

TEST(Idx, WriteReadRoundTripIsByteExact) {
  const auto dir = test::temp_dir("idx_roundtrip");
  Rng rng(9);
  std::vector<std::uint8_t> px(3 * 28 * 28);
  for (auto& p : px) p = static_cast<std::uint8_t>(rng.below(256));
  std::vector<std::uint8_t> labels = {4, 0, 9};
  write_idx_images(dir / "a", 3, 28, 28, px);
  write_idx_labels(dir / "b", labels);

  const auto img = load_idx_images(dir / "a");
  std::vector<std::uint8_t> back(img.pixels.size());
  for (std::size_t i = 0; i < back.size(); ++i) back[i] = static_cast<std::uint8_t>(std::lround(img.pixels[i] * 255));
  write_idx_images(dir / "a2", img.count, img.rows, img.cols, back);
  EXPECT_EQ(read_all(dir / "a"), read_all(dir / "a2"));

  const auto lab = load_idx_labels(dir / "b");
  write_idx_labels(dir / "b2", lab.labels);
  EXPECT_EQ(read_all(dir / "b"), read_all(dir / "b2"));
}

TEST(Idx, StandardMnistTrainFile) {
  if (!test::have_mnist()) GTEST_SKIP() << "MNIST not found in " << test::mnist_dir();
  const auto img = load_idx_images(test::mnist_dir() / "train-images-idx3-ubyte");
  EXPECT_EQ(img.count, 60000u);
  EXPECT_EQ(img.rows, 28u);
  EXPECT_EQ(img.cols, 28u);
  const auto lab = load_idx_labels(test::mnist_dir() / "t10k-labels-idx1-ubyte");
  EXPECT_EQ(lab.labels.size(), 10000u);
}
