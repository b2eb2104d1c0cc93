#pragma once

// Figure artifacts: binary PGM images, the latent MI grid of a 2-d VAE,
// THU sample strips and per-step trace CSVs.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "ofal/classifier.hpp"
#include "ofal/data.hpp"
#include "ofal/error.hpp"
#include "ofal/thu.hpp"
#include "ofal/uncertainty.hpp"
#include "ofal/vae.hpp"

namespace ofal {

struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major
};

inline std::uint8_t to_gray(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

inline std::string encode_pgm(const GrayImage& img) {
  require(img.pixels.size() == static_cast<std::size_t>(img.width) * static_cast<std::size_t>(img.height),
          ErrorCode::ShapeError, "image buffer does not match its size");
  std::string out = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(img.pixels.data()), img.pixels.size());
  return out;
}

inline void write_pgm(const std::filesystem::path& path, const GrayImage& img) {
  std::ofstream f(path, std::ios::binary);
  require(static_cast<bool>(f), ErrorCode::IoError, "cannot write " + path.string());
  const auto bytes = encode_pgm(img);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(f), ErrorCode::IoError, "write failed: " + path.string());
}

// Panels side by side, 28 pixels high.
inline GrayImage strip_image(std::span<const Image> panels) {
  GrayImage img;
  img.height = kImageSide;
  img.width = kImageSide * static_cast<int>(panels.size());
  img.pixels.resize(static_cast<std::size_t>(img.width) * kImageSide);
  for (std::size_t p = 0; p < panels.size(); ++p) {
    for (int r = 0; r < kImageSide; ++r) {
      for (int c = 0; c < kImageSide; ++c) {
        img.pixels[static_cast<std::size_t>(r * img.width) + p * kImageSide + static_cast<std::size_t>(c)] =
            to_gray(panels[p][static_cast<std::size_t>(r * kImageSide + c)]);
      }
    }
  }
  return img;
}

// Evenly spaced trajectory indices, first and last included.
inline std::vector<std::size_t> panel_indices(std::size_t points, std::size_t panels) {
  if (points == 0 || panels == 0) return {};
  panels = std::min(panels, points);
  if (panels == 1) return {0};
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < panels; ++i) {
    out.push_back(static_cast<std::size_t>(std::llround(static_cast<double>(i) * static_cast<double>(points - 1) /
                                                        static_cast<double>(panels - 1))));
  }
  return out;
}

// Frames recorded during the walk are used when present (pixel-space runs);
// otherwise trajectory points are decoded. A zero-step rejection shows the
// seed only.
template <typename S>
std::vector<Image> strip_panels(const ThuResult& r, const Vae<S>* vae, std::size_t panels) {
  std::vector<Image> out;
  const std::size_t points = r.status == ThuStatus::RejectedZeroSteps ? std::min<std::size_t>(1, r.z_trajectory.size())
                                                                      : r.z_trajectory.size();
  for (auto idx : panel_indices(points, panels)) {
    if (idx < r.frames.size()) {
      out.push_back(r.frames[idx]);
      continue;
    }
    require(vae != nullptr, ErrorCode::InvalidConfig, "strip needs a VAE or recorded frames");
    const auto& z = r.z_trajectory[idx];
    Mat<S> row(1, static_cast<Eigen::Index>(z.size()));
    for (std::size_t k = 0; k < z.size(); ++k) row(0, static_cast<Eigen::Index>(k)) = static_cast<S>(z[k]);
    out.push_back(to_image(vae->decode(row)));
  }
  return out;
}

// Returns false (and writes nothing) for an empty trajectory.
template <typename S>
bool export_strip(const ThuResult& r, const Vae<S>* vae, std::size_t panels, const std::filesystem::path& path) {
  const auto images = strip_panels(r, vae, panels);
  if (images.empty()) return false;
  write_pgm(path, strip_image(images));
  return true;
}

inline std::string format_trace_csv(std::span<const ThuResult> results) {
  std::string out = "seed_id,status,update,gap,uncertainty,loss\n";
  char buf[160];
  for (const auto& r : results) {
    for (const auto& t : r.trace) {
      std::snprintf(buf, sizeof buf, "%lld,%s,%d,%.8f,%.8f,%.8f\n", static_cast<long long>(r.seed_id),
                    std::string(to_string(r.status)).c_str(), t.update, t.gap, t.uncertainty, t.loss);
      out += buf;
    }
  }
  return out;
}

struct LatentGrid {
  int resolution = 0;
  double lo = 0;
  double hi = 0;
  std::vector<double> z1, z2, mi;  // row-major, z2 outer

  double coord(int i) const { return resolution == 1 ? lo : lo + (hi - lo) * i / (resolution - 1); }
};

template <typename S>
LatentGrid latent_mi_grid(const Classifier<S>& model, const Vae<S>& vae, double lo, double hi, int resolution,
                          const UncertaintyConfig& cfg) {
  require(vae.latent_dim() == 2, ErrorCode::RequiresTwoDimLatent,
          "latent grid needs a 2-d VAE, got d=" + std::to_string(vae.latent_dim()));
  require(resolution >= 1 && hi >= lo, ErrorCode::InvalidConfig, "bad grid bounds or resolution");
  LatentGrid g;
  g.resolution = resolution;
  g.lo = lo;
  g.hi = hi;
  const auto n = static_cast<std::size_t>(resolution) * static_cast<std::size_t>(resolution);
  Mat<S> z(static_cast<Eigen::Index>(n), 2);
  for (int i = 0; i < resolution; ++i) {
    for (int j = 0; j < resolution; ++j) {
      const auto k = static_cast<std::size_t>(i) * static_cast<std::size_t>(resolution) + static_cast<std::size_t>(j);
      g.z1.push_back(g.coord(j));
      g.z2.push_back(g.coord(i));
      z(static_cast<Eigen::Index>(k), 0) = static_cast<S>(g.z1.back());
      z(static_cast<Eigen::Index>(k), 1) = static_cast<S>(g.z2.back());
    }
  }
  const Mat<S> x = vae.decode(z);
  std::vector<Sample> samples(n);
  for (std::size_t k = 0; k < n; ++k) {
    samples[k].id = static_cast<SampleId>(k);
    samples[k].pixels = to_image(Mat<S>(x.row(static_cast<Eigen::Index>(k))));
  }
  g.mi.assign(n, 0.0);
  mc_predict_each(model, std::span<const Sample>(samples), cfg,
                  [&](std::size_t k, const ProbMatrix& probs) { g.mi[k] = uncertainty_scores(probs).mutual_information; });
  return g;
}

inline std::string format_grid_csv(const LatentGrid& g) {
  std::string out = "z1,z2,mi\n";
  char buf[96];
  for (std::size_t k = 0; k < g.mi.size(); ++k) {
    std::snprintf(buf, sizeof buf, "%.6f,%.6f,%.9f\n", g.z1[k], g.z2[k], g.mi[k]);
    out += buf;
  }
  return out;
}

// MI min-max normalised, lighter = more uncertain; top row is the largest z2.
inline GrayImage grid_image(const LatentGrid& g) {
  GrayImage img;
  img.width = img.height = g.resolution;
  img.pixels.resize(g.mi.size());
  const auto [mn, mx] = std::minmax_element(g.mi.begin(), g.mi.end());
  const double span = g.mi.empty() ? 0 : *mx - *mn;
  for (int i = 0; i < g.resolution; ++i) {
    for (int j = 0; j < g.resolution; ++j) {
      const auto k = static_cast<std::size_t>(i * g.resolution + j);
      const double v = span > 0 ? (g.mi[k] - *mn) / span : 0.0;
      img.pixels[static_cast<std::size_t>((g.resolution - 1 - i) * g.resolution + j)] = to_gray(v);
    }
  }
  return img;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  require(static_cast<bool>(f), ErrorCode::IoError, "cannot write " + path.string());
  f << text;
  require(static_cast<bool>(f), ErrorCode::IoError, "write failed: " + path.string());
}

}  // namespace ofal
