#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ofal/error.hpp"

namespace ofal {

struct IterationRecord {
  int iteration = 0;
  std::size_t labeled_count = 0;
  std::size_t query_size = 0;
  std::size_t n_oracle = 0;
  std::size_t n_confident = 0;
  std::size_t n_generated = 0;
  double test_accuracy = 0;
  double mean_thu_steps = 0;
  double thu_accept_rate = 0;
  double wall_time_s = 0;

  // Not part of the CSV.
  std::size_t requested_oracle = 0;  // before dedup
  std::size_t requested_confident = 0;
  std::size_t requested_generated = 0;
  std::size_t confident_available = 0;
  std::size_t thu_attempts = 0;
  std::size_t thu_accepted = 0;
  std::size_t short_classes = 0;
  double median_mi_gain = 0;
};

class MetricsLog {
 public:
  std::vector<std::pair<std::string, std::string>> config;  // snapshot
  double initial_accuracy = 0;
  std::size_t oracle_total = 0;

  void append(IterationRecord r) {
    const int expected = records_.empty() ? 1 : records_.back().iteration + 1;
    require(r.iteration == expected, ErrorCode::InvalidConfig,
            "iteration " + std::to_string(r.iteration) + " appended, expected " + std::to_string(expected));
    require(r.query_size == r.n_oracle + r.n_confident + r.n_generated, ErrorCode::InvalidConfig,
            "query accounting mismatch at iteration " + std::to_string(r.iteration));
    records_.push_back(r);
  }

  const std::vector<IterationRecord>& records() const { return records_; }
  bool empty() const { return records_.empty(); }
  int last_iteration() const { return records_.empty() ? 0 : records_.back().iteration; }
  double final_accuracy() const { return records_.empty() ? initial_accuracy : records_.back().test_accuracy; }

 private:
  std::vector<IterationRecord> records_;
};

inline constexpr const char* kMetricsColumns =
    "iteration,labeled_count,n_oracle,n_confident,n_generated,test_accuracy,mean_thu_steps,thu_accept_rate,wall_time_s";

inline std::string format_csv(const MetricsLog& log) {
  std::ostringstream out;
  for (const auto& [k, v] : log.config) out << "# " << k << '=' << v << '\n';
  char buf[256];
  std::snprintf(buf, sizeof buf, "# initial_accuracy=%.6f\n", log.initial_accuracy);
  out << buf << kMetricsColumns << '\n';
  for (const auto& r : log.records()) {
    std::snprintf(buf, sizeof buf, "%d,%zu,%zu,%zu,%zu,%.6f,%.4f,%.6f,%.3f\n", r.iteration, r.labeled_count, r.n_oracle,
                  r.n_confident, r.n_generated, r.test_accuracy, r.mean_thu_steps, r.thu_accept_rate, r.wall_time_s);
    out << buf;
  }
  return out.str();
}

inline void write_csv(const MetricsLog& log, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  require(static_cast<bool>(f), ErrorCode::IoError, "cannot write " + path.string());
  f << format_csv(log);
  require(static_cast<bool>(f), ErrorCode::IoError, "write failed: " + path.string());
}

}  // namespace ofal
