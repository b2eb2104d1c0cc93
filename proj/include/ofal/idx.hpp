#pragma once

// IDX reader/writer (the MNIST container). Sizes are big-endian 32-bit words,
// payload is row-major unsigned bytes.
//
//   images: 0x00000803, N, rows, cols, N*rows*cols bytes
//   labels: 0x00000801, N, N bytes

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "ofal/error.hpp"

namespace ofal {

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;
inline constexpr int kLabelLimit = 10;

struct IdxImages {
  std::size_t count = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> pixels;  // count * rows * cols, each in [0, 1]
};

struct IdxLabels {
  std::vector<std::uint8_t> labels;
};

using IdxContent = std::variant<IdxImages, IdxLabels>;

namespace detail {

inline std::uint32_t read_be32(const std::vector<std::uint8_t>& bytes, std::size_t offset) {
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

inline void write_be32(std::ostream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                     static_cast<char>(v)};
  out.write(b, 4);
}

inline std::vector<std::uint8_t> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::IoError, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace detail

inline IdxContent parse_idx(const std::vector<std::uint8_t>& bytes, const std::string& name = "<buffer>") {
  require(bytes.size() >= 8, ErrorCode::CorruptFile, name + ": shorter than the IDX header");
  const std::uint32_t magic = detail::read_be32(bytes, 0);
  const std::size_t count = detail::read_be32(bytes, 4);

  if (magic == kIdxLabelMagic) {
    require(bytes.size() - 8 >= count, ErrorCode::CorruptFile,
            name + ": label payload truncated (declared " + std::to_string(count) + ")");
    IdxLabels out;
    out.labels.assign(bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(count));
    for (auto l : out.labels) {
      require(l < kLabelLimit, ErrorCode::CorruptFile, name + ": label value " + std::to_string(l) + " out of range");
    }
    return out;
  }

  if (magic == kIdxImageMagic) {
    require(bytes.size() >= 16, ErrorCode::CorruptFile, name + ": image header truncated");
    IdxImages out;
    out.count = count;
    out.rows = detail::read_be32(bytes, 8);
    out.cols = detail::read_be32(bytes, 12);
    const std::size_t payload = out.count * out.rows * out.cols;
    require(bytes.size() - 16 >= payload, ErrorCode::CorruptFile,
            name + ": image payload truncated (declared " + std::to_string(payload) + " bytes)");
    out.pixels.resize(payload);
    for (std::size_t i = 0; i < payload; ++i) out.pixels[i] = static_cast<float>(bytes[16 + i]) / 255.0f;
    return out;
  }

  char hex[11];
  std::snprintf(hex, sizeof hex, "0x%08X", magic);
  fail(ErrorCode::UnsupportedFormat, name + ": magic " + hex);
}

inline IdxContent load_idx(const std::filesystem::path& path) { return parse_idx(detail::slurp(path), path.string()); }

inline IdxImages load_idx_images(const std::filesystem::path& path) {
  auto content = load_idx(path);
  require(std::holds_alternative<IdxImages>(content), ErrorCode::UnsupportedFormat,
          path.string() + ": expected an image file");
  return std::get<IdxImages>(std::move(content));
}

inline IdxLabels load_idx_labels(const std::filesystem::path& path) {
  auto content = load_idx(path);
  require(std::holds_alternative<IdxLabels>(content), ErrorCode::UnsupportedFormat,
          path.string() + ": expected a label file");
  return std::get<IdxLabels>(std::move(content));
}

inline void write_idx_images(const std::filesystem::path& path, std::size_t count, std::size_t rows,
                             std::size_t cols, std::span<const std::uint8_t> pixels) {
  require(pixels.size() == count * rows * cols, ErrorCode::ShapeError, "pixel count does not match dims");
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::IoError, "cannot write " + path.string());
  detail::write_be32(out, kIdxImageMagic);
  detail::write_be32(out, static_cast<std::uint32_t>(count));
  detail::write_be32(out, static_cast<std::uint32_t>(rows));
  detail::write_be32(out, static_cast<std::uint32_t>(cols));
  out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
}

inline void write_idx_labels(const std::filesystem::path& path, std::span<const std::uint8_t> labels) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::IoError, "cannot write " + path.string());
  detail::write_be32(out, kIdxLabelMagic);
  detail::write_be32(out, static_cast<std::uint32_t>(labels.size()));
  out.write(reinterpret_cast<const char*>(labels.data()), static_cast<std::streamsize>(labels.size()));
}

}  // namespace ofal
