#pragma once

#include <cstdlib>
#include <filesystem>

#include "ofal/data.hpp"

namespace ofal::test {

inline std::filesystem::path mnist_dir() {
  if (const char* env = std::getenv("OFAL_DATA_DIR"); env != nullptr && *env != '\0') return env;
  return "data/mnist";
}

inline bool have_mnist() { return std::filesystem::exists(mnist_dir() / "train-images-idx3-ubyte"); }

// First 4000 training / 1000 test images, loaded once.
inline const MnistData& small_mnist() {
  static const MnistData data = load_mnist(mnist_dir(), 4000, 1000);
  return data;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("ofal_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace ofal::test
