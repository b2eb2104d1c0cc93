#pragma once

// Single-file experiment checkpoint.
//
//   offset 0   "OFALCKPT"              8 bytes
//              version                 u32
//              section count           u32
//              per section: name[16], offset u64, size u64
//              section payloads
//   end - 8    FNV-1a 64 over every preceding byte
//
// All integers are little-endian, floats IEEE-754 binary32. The pool is
// stored as ids only; restore rebuilds it from the training set.

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

#include "ofal/config.hpp"
#include "ofal/data.hpp"
#include "ofal/error.hpp"
#include "ofal/experiment.hpp"
#include "ofal/metrics.hpp"

namespace ofal {

inline constexpr std::string_view kCheckpointMagic = "OFALCKPT";
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace ckpt {

class Writer {
 public:
  template <typename T>
  void put(const T& v) {
    static_assert(std::is_trivially_copyable_v<T>);
    const auto* p = reinterpret_cast<const char*>(&v);
    bytes.insert(bytes.end(), p, p + sizeof(T));
  }
  void put_raw(const void* data, std::size_t n) {
    const auto* p = static_cast<const char*>(data);
    bytes.insert(bytes.end(), p, p + n);
  }
  void put_string(std::string_view s) {
    put<std::uint64_t>(s.size());
    put_raw(s.data(), s.size());
  }
  std::vector<char> bytes;
};

class Reader {
 public:
  Reader(const char* data, std::size_t size, std::string section) : p_(data), end_(data + size), name_(std::move(section)) {}

  template <typename T>
  T get() {
    T v;
    get_raw(&v, sizeof(T));
    return v;
  }
  void get_raw(void* out, std::size_t n) {
    require(static_cast<std::size_t>(end_ - p_) >= n, ErrorCode::CorruptCheckpoint, "section " + name_ + " truncated");
    std::memcpy(out, p_, n);
    p_ += n;
  }
  std::string get_string() {
    const auto n = get<std::uint64_t>();
    require(n <= static_cast<std::uint64_t>(end_ - p_), ErrorCode::CorruptCheckpoint, "section " + name_ + " truncated");
    std::string s(p_, p_ + n);
    p_ += n;
    return s;
  }
  bool done() const { return p_ == end_; }

 private:
  const char* p_;
  const char* end_;
  std::string name_;
};

inline std::uint64_t checksum(const char* data, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(data[i]);
    h *= 0x100000001b3ULL;
  }
  return h;
}

template <typename Params>
void put_params(Writer& w, const Params& params) {
  w.put<std::uint32_t>(static_cast<std::uint32_t>(params.size()));
  for (const auto* m : params) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(m->rows()));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(m->cols()));
    w.put_raw(m->data(), sizeof(float) * static_cast<std::size_t>(m->size()));
  }
}

template <typename Params>
void get_params(Reader& r, Params params, const std::string& what) {
  require(r.get<std::uint32_t>() == params.size(), ErrorCode::IncompatibleCheckpoint, what + ": parameter count differs");
  for (auto* m : params) {
    const auto rows = r.get<std::uint32_t>();
    const auto cols = r.get<std::uint32_t>();
    require(rows == m->rows() && cols == m->cols(), ErrorCode::IncompatibleCheckpoint,
            what + ": parameter shape differs from the configured model");
    r.get_raw(m->data(), sizeof(float) * static_cast<std::size_t>(m->size()));
  }
}

inline void put_record(Writer& w, const IterationRecord& r) {
  w.put<std::int32_t>(r.iteration);
  for (auto v : {r.labeled_count, r.query_size, r.n_oracle, r.n_confident, r.n_generated, r.requested_oracle,
                 r.requested_confident, r.requested_generated, r.confident_available, r.thu_attempts, r.thu_accepted,
                 r.short_classes}) {
    w.put<std::uint64_t>(v);
  }
  for (auto v : {r.test_accuracy, r.mean_thu_steps, r.thu_accept_rate, r.wall_time_s, r.median_mi_gain}) w.put(v);
}

inline IterationRecord get_record(Reader& rd) {
  IterationRecord r;
  r.iteration = rd.get<std::int32_t>();
  for (auto* v : {&r.labeled_count, &r.query_size, &r.n_oracle, &r.n_confident, &r.n_generated, &r.requested_oracle,
                  &r.requested_confident, &r.requested_generated, &r.confident_available, &r.thu_attempts,
                  &r.thu_accepted, &r.short_classes}) {
    *v = static_cast<std::size_t>(rd.get<std::uint64_t>());
  }
  for (auto* v : {&r.test_accuracy, &r.mean_thu_steps, &r.thu_accept_rate, &r.wall_time_s, &r.median_mi_gain}) {
    *v = rd.get<double>();
  }
  return r;
}

struct Section {
  std::string name;
  std::vector<char> payload;
};

}  // namespace ckpt

inline std::vector<char> encode_checkpoint(const ExperimentState& s) {
  using ckpt::Writer;
  std::vector<ckpt::Section> sections;

  Writer config;
  config.put_string(format_config(s.config));
  sections.push_back({"config", std::move(config.bytes)});

  Writer cls;
  ckpt::put_params(cls, s.classifier.parameters());
  sections.push_back({"classifier", std::move(cls.bytes)});

  Writer vae;
  ckpt::put_params(vae, s.vae.parameters());
  sections.push_back({"vae", std::move(vae.bytes)});

  Writer labeled;
  labeled.put<std::uint64_t>(s.labeled.size());
  for (const auto& e : s.labeled.entries()) {
    labeled.put<std::int64_t>(e.sample.id);
    labeled.put<std::int32_t>(e.label);
    labeled.put<std::uint8_t>(static_cast<std::uint8_t>(e.provenance));
    labeled.put_raw(e.sample.pixels.data(), sizeof(float) * kPixels);
  }
  sections.push_back({"labeled", std::move(labeled.bytes)});

  Writer pool;
  pool.put<std::uint64_t>(s.pool.size());
  for (const auto& smp : s.pool.samples()) pool.put<std::int64_t>(smp.id);
  sections.push_back({"pool", std::move(pool.bytes)});

  Writer log;
  log.put<std::uint64_t>(s.oracle.calls());
  log.put(s.log.initial_accuracy);
  log.put<std::uint64_t>(s.log.oracle_total);
  log.put<std::uint64_t>(s.log.config.size());
  for (const auto& [k, v] : s.log.config) {
    log.put_string(k);
    log.put_string(v);
  }
  log.put<std::uint64_t>(s.log.records().size());
  for (const auto& r : s.log.records()) ckpt::put_record(log, r);
  sections.push_back({"metrics", std::move(log.bytes)});

  Writer out;
  out.put_raw(kCheckpointMagic.data(), kCheckpointMagic.size());
  out.put(kCheckpointVersion);
  out.put<std::uint32_t>(static_cast<std::uint32_t>(sections.size()));
  std::uint64_t offset = kCheckpointMagic.size() + 8 + sections.size() * (16 + 16);
  for (const auto& sec : sections) {
    std::array<char, 16> name{};
    std::memcpy(name.data(), sec.name.data(), std::min<std::size_t>(sec.name.size(), 15));
    out.put(name);
    out.put(offset);
    out.put<std::uint64_t>(sec.payload.size());
    offset += sec.payload.size();
  }
  for (const auto& sec : sections) out.put_raw(sec.payload.data(), sec.payload.size());
  out.put(ckpt::checksum(out.bytes.data(), out.bytes.size()));
  return std::move(out.bytes);
}

// Writes to a sibling temporary file first so an interrupted save never
// replaces a good checkpoint.
inline void save_checkpoint(const ExperimentState& s, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(s);
  auto tmp = path;
  tmp += ".partial";
  {
    std::ofstream f(tmp, std::ios::binary);
    require(static_cast<bool>(f), ErrorCode::IoError, "cannot write " + tmp.string());
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    require(static_cast<bool>(f), ErrorCode::IoError, "write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline ExperimentState decode_checkpoint(const std::vector<char>& bytes, const Dataset& train) {
  const std::size_t header = kCheckpointMagic.size() + 8;
  require(bytes.size() >= header + 8, ErrorCode::CorruptCheckpoint, "checkpoint too short");
  require(std::string_view(bytes.data(), kCheckpointMagic.size()) == kCheckpointMagic, ErrorCode::CorruptCheckpoint,
          "not a checkpoint file");
  ckpt::Reader head(bytes.data() + kCheckpointMagic.size(), bytes.size() - kCheckpointMagic.size(), "header");
  const auto version = head.get<std::uint32_t>();
  require(version == kCheckpointVersion, ErrorCode::IncompatibleCheckpoint,
          "checkpoint version " + std::to_string(version) + ", expected " + std::to_string(kCheckpointVersion));
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + bytes.size() - 8, 8);
  require(stored == ckpt::checksum(bytes.data(), bytes.size() - 8), ErrorCode::CorruptCheckpoint, "checksum mismatch");

  const auto count = head.get<std::uint32_t>();
  auto section = [&](std::string_view want) {
    ckpt::Reader table(bytes.data() + header, bytes.size() - header - 8, "table");
    for (std::uint32_t i = 0; i < count; ++i) {
      std::array<char, 16> name{};
      table.get_raw(name.data(), name.size());
      const auto off = table.get<std::uint64_t>();
      const auto size = table.get<std::uint64_t>();
      if (std::string_view(name.data()) != want) continue;
      require(off + size <= bytes.size() - 8, ErrorCode::CorruptCheckpoint, "section out of range");
      return ckpt::Reader(bytes.data() + off, size, std::string(want));
    }
    fail(ErrorCode::CorruptCheckpoint, "missing section " + std::string(want));
  };

  ExperimentState s;
  auto config = section("config");
  apply_config_text(s.config, config.get_string(), "checkpoint");

  s.classifier = Classifier<float>(s.config.classifier, 0);
  auto cls = section("classifier");
  ckpt::get_params(cls, s.classifier.parameters(), "classifier");
  s.vae = Vae<float>(s.config.vae, 0);
  auto vae = section("vae");
  ckpt::get_params(vae, s.vae.parameters(), "vae");

  auto labeled = section("labeled");
  const auto n_labeled = labeled.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < n_labeled; ++i) {
    Sample smp;
    smp.id = labeled.get<std::int64_t>();
    const int label = labeled.get<std::int32_t>();
    const auto prov = labeled.get<std::uint8_t>();
    require(prov <= 3, ErrorCode::CorruptCheckpoint, "bad provenance tag");
    labeled.get_raw(smp.pixels.data(), sizeof(float) * kPixels);
    s.labeled.add(smp, label, static_cast<Provenance>(prov));
  }

  auto pool = section("pool");
  const auto n_pool = pool.get<std::uint64_t>();
  std::vector<Sample> samples;
  std::vector<int> labels;
  samples.reserve(n_pool);
  labels.reserve(n_pool);
  for (std::uint64_t i = 0; i < n_pool; ++i) {
    const auto id = pool.get<std::int64_t>();
    require(id >= 0 && static_cast<std::size_t>(id) < train.size() && train.samples[static_cast<std::size_t>(id)].id == id,
            ErrorCode::IncompatibleCheckpoint, "pool id " + std::to_string(id) + " not in the training set");
    samples.push_back(train.samples[static_cast<std::size_t>(id)]);
    labels.push_back(train.labels[static_cast<std::size_t>(id)]);
  }
  s.pool = UnlabeledPool(std::move(samples), std::move(labels));

  auto log = section("metrics");
  s.oracle.set_calls(static_cast<std::size_t>(log.get<std::uint64_t>()));
  s.log.initial_accuracy = log.get<double>();
  s.log.oracle_total = static_cast<std::size_t>(log.get<std::uint64_t>());
  const auto n_cfg = log.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < n_cfg; ++i) {
    auto k = log.get_string();
    auto v = log.get_string();
    s.log.config.emplace_back(std::move(k), std::move(v));
  }
  const auto n_rec = log.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < n_rec; ++i) s.log.append(ckpt::get_record(log));
  return s;
}

inline ExperimentState load_checkpoint(const std::filesystem::path& path, const Dataset& train) {
  std::ifstream f(path, std::ios::binary);
  require(static_cast<bool>(f), ErrorCode::IoError, "cannot read " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes, train);
}

}  // namespace ofal
