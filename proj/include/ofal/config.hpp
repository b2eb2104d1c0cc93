#pragma once

// Experiment configuration and its flat key=value form. The text form is the
// single source of hyperparameters; every run snapshots it.

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ofal/acquisition.hpp"
#include "ofal/classifier.hpp"
#include "ofal/data.hpp"
#include "ofal/error.hpp"
#include "ofal/thu.hpp"
#include "ofal/training.hpp"
#include "ofal/uncertainty.hpp"
#include "ofal/vae.hpp"

namespace ofal {

enum class RunMode { solo_ofal, baseline, after_ofal, integrated };

constexpr std::string_view to_string(RunMode m) {
  switch (m) {
    case RunMode::solo_ofal: return "solo_ofal";
    case RunMode::baseline: return "baseline";
    case RunMode::after_ofal: return "after_ofal";
    case RunMode::integrated: return "integrated";
  }
  return "?";
}

inline std::optional<RunMode> parse_mode(std::string_view s) {
  for (auto m : {RunMode::solo_ofal, RunMode::baseline, RunMode::after_ofal, RunMode::integrated}) {
    if (s == to_string(m)) return m;
  }
  return std::nullopt;
}

inline constexpr int kPaperInitialEpochs = 10000;

struct OfalConfig {
  std::uint64_t master_seed = 1;
  std::size_t train_limit = 0;  // 0 = whole file
  std::size_t test_limit = 0;
  SplitSpec split;

  ClassifierShape classifier;
  VaeShape vae;
  int initial_epochs = 300;
  int retrain_epochs = 100;
  int vae_epochs = 20;
  int batch_size = 64;
  int vae_batch_size = 128;
  double learning_rate = 1e-3;
  double vae_learning_rate = 1e-3;
  OptimizerKind optimizer = OptimizerKind::adam;

  UncertaintyConfig uncertainty;
  ThuConfig thu;

  int iterations = 12;
  int per_class = 20;
  int sampler_count = 200;
  RunMode mode = RunMode::solo_ofal;
  std::optional<Criterion> sampler;
  bool remove_confident_from_pool = true;
  bool record_wall_time = false;
};

inline void validate(const OfalConfig& c) {
  require(c.iterations >= 0, ErrorCode::InvalidConfig, "iterations must be >= 0");
  require(c.per_class >= 0, ErrorCode::InvalidConfig, "per_class must be >= 0");
  require(c.sampler_count >= 0, ErrorCode::InvalidConfig, "sampler_count must be >= 0");
  require(c.uncertainty.t_draws >= 1, ErrorCode::InvalidConfig, "t_draws must be >= 1");
  require(c.uncertainty.t_conf > 0 && c.uncertainty.t_conf < 1, ErrorCode::InvalidConfig, "t_conf must lie in (0, 1)");
  require(c.mode == RunMode::solo_ofal || c.sampler.has_value(), ErrorCode::InvalidConfig,
          std::string(to_string(c.mode)) + " mode needs a sampler");
  validate(c.thu);
  for (int e : {c.initial_epochs, c.retrain_epochs, c.vae_epochs}) {
    require(e >= 0, ErrorCode::InvalidConfig, "epochs must be >= 0");
  }
  require(c.batch_size > 0 && c.vae_batch_size > 0, ErrorCode::InvalidConfig, "batch sizes must be > 0");
  require(c.learning_rate > 0 && c.vae_learning_rate > 0, ErrorCode::InvalidConfig, "learning rates must be > 0");
}

namespace detail {

template <typename T>
bool parse_number(std::string_view s, T& out) {
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && p == s.data() + s.size();
}

inline std::string format_double(double v) {
  // shortest form that round-trips
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

inline bool parse_bool(std::string_view s, bool& out) {
  if (s == "true" || s == "1" || s == "yes" || s == "on") return out = true, true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return out = false, true;
  return false;
}

}  // namespace detail

struct ConfigKey {
  std::string name;
  std::function<std::string(const OfalConfig&)> get;
  std::function<bool(OfalConfig&, std::string_view)> set;
};

inline const std::vector<ConfigKey>& config_keys() {
  using detail::format_double;
  using detail::parse_number;
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    auto num = [&k](std::string name, auto member) {
      k.push_back({std::move(name),
                   [member](const OfalConfig& c) {
                     const auto v = member(const_cast<OfalConfig&>(c));
                     if constexpr (std::is_floating_point_v<std::remove_reference_t<decltype(v)>>) {
                       return format_double(v);
                     } else {
                       return std::to_string(v);
                     }
                   },
                   [member](OfalConfig& c, std::string_view s) { return parse_number(s, member(c)); }});
    };
    auto flag = [&k](std::string name, auto member) {
      k.push_back({std::move(name), [member](const OfalConfig& c) -> std::string {
                     return member(const_cast<OfalConfig&>(c)) ? "true" : "false";
                   },
                   [member](OfalConfig& c, std::string_view s) { return detail::parse_bool(s, member(c)); }});
    };
    num("master_seed", [](OfalConfig& c) -> auto& { return c.master_seed; });
    num("train_limit", [](OfalConfig& c) -> auto& { return c.train_limit; });
    num("test_limit", [](OfalConfig& c) -> auto& { return c.test_limit; });
    num("n_per_class", [](OfalConfig& c) -> auto& { return c.split.n_per_class; });
    num("conv1_channels", [](OfalConfig& c) -> auto& { return c.classifier.conv1_channels; });
    num("conv2_channels", [](OfalConfig& c) -> auto& { return c.classifier.conv2_channels; });
    num("dense_width", [](OfalConfig& c) -> auto& { return c.classifier.hidden; });
    num("dropout_pool", [](OfalConfig& c) -> auto& { return c.classifier.dropout_pool; });
    num("dropout_dense", [](OfalConfig& c) -> auto& { return c.classifier.dropout_dense; });
    num("latent_dim", [](OfalConfig& c) -> auto& { return c.vae.latent_dim; });
    num("vae_hidden1", [](OfalConfig& c) -> auto& { return c.vae.hidden1; });
    num("vae_hidden2", [](OfalConfig& c) -> auto& { return c.vae.hidden2; });
    num("initial_epochs", [](OfalConfig& c) -> auto& { return c.initial_epochs; });
    num("retrain_epochs", [](OfalConfig& c) -> auto& { return c.retrain_epochs; });
    num("vae_epochs", [](OfalConfig& c) -> auto& { return c.vae_epochs; });
    num("batch_size", [](OfalConfig& c) -> auto& { return c.batch_size; });
    num("vae_batch_size", [](OfalConfig& c) -> auto& { return c.vae_batch_size; });
    num("learning_rate", [](OfalConfig& c) -> auto& { return c.learning_rate; });
    num("vae_learning_rate", [](OfalConfig& c) -> auto& { return c.vae_learning_rate; });
    k.push_back({"optimizer",
                 [](const OfalConfig& c) -> std::string { return c.optimizer == OptimizerKind::adam ? "adam" : "sgd"; },
                 [](OfalConfig& c, std::string_view s) {
                   if (s == "adam") c.optimizer = OptimizerKind::adam;
                   else if (s == "sgd") c.optimizer = OptimizerKind::sgd;
                   else return false;
                   return true;
                 }});
    num("t_draws", [](OfalConfig& c) -> auto& { return c.uncertainty.t_draws; });
    num("t_conf", [](OfalConfig& c) -> auto& { return c.uncertainty.t_conf; });
    num("thu_alpha", [](OfalConfig& c) -> auto& { return c.thu.alpha; });
    num("thu_step_size", [](OfalConfig& c) -> auto& { return c.thu.step_size; });
    num("thu_step_max", [](OfalConfig& c) -> auto& { return c.thu.step_max; });
    num("thu_t_stop", [](OfalConfig& c) -> auto& { return c.thu.t_stop; });
    num("thu_draws", [](OfalConfig& c) -> auto& { return c.thu.t_draws; });
    flag("thu_resample_masks", [](OfalConfig& c) -> auto& { return c.thu.resample_masks_each_step; });
    k.push_back({"thu_measure",
                 [](const OfalConfig& c) -> std::string {
                   return c.thu.measure == UncertaintyMeasure::mutual_information ? "mutual_information"
                                                                                   : "predictive_entropy";
                 },
                 [](OfalConfig& c, std::string_view s) {
                   if (s == "mutual_information") c.thu.measure = UncertaintyMeasure::mutual_information;
                   else if (s == "predictive_entropy") c.thu.measure = UncertaintyMeasure::predictive_entropy;
                   else return false;
                   return true;
                 }});
    k.push_back({"thu_stop_mode",
                 [](const OfalConfig& c) -> std::string { return c.thu.stop_on_mc_mean ? "mc_mean" : "deterministic"; },
                 [](OfalConfig& c, std::string_view s) {
                   if (s == "deterministic") c.thu.stop_on_mc_mean = false;
                   else if (s == "mc_mean") c.thu.stop_on_mc_mean = true;
                   else return false;
                   return true;
                 }});
    num("iterations", [](OfalConfig& c) -> auto& { return c.iterations; });
    num("per_class", [](OfalConfig& c) -> auto& { return c.per_class; });
    num("sampler_count", [](OfalConfig& c) -> auto& { return c.sampler_count; });
    k.push_back({"mode", [](const OfalConfig& c) { return std::string(to_string(c.mode)); },
                 [](OfalConfig& c, std::string_view s) {
                   auto m = parse_mode(s);
                   if (m) c.mode = *m;
                   return m.has_value();
                 }});
    k.push_back({"sampler",
                 [](const OfalConfig& c) { return c.sampler ? std::string(to_string(*c.sampler)) : std::string("none"); },
                 [](OfalConfig& c, std::string_view s) {
                   if (s == "none") {
                     c.sampler.reset();
                     return true;
                   }
                   c.sampler = parse_criterion(s);
                   return c.sampler.has_value();
                 }});
    flag("remove_confident_from_pool", [](OfalConfig& c) -> auto& { return c.remove_confident_from_pool; });
    flag("record_wall_time", [](OfalConfig& c) -> auto& { return c.record_wall_time; });
    return k;
  }();
  return keys;
}

inline const ConfigKey* find_key(std::string_view name) {
  for (const auto& k : config_keys()) {
    if (k.name == name) return &k;
  }
  return nullptr;
}

inline void set_key(OfalConfig& c, std::string_view name, std::string_view value) {
  const ConfigKey* k = find_key(name);
  require(k != nullptr, ErrorCode::InvalidConfig, "unknown config key '" + std::string(name) + "'");
  require(k->set(c, value), ErrorCode::InvalidConfig,
          "bad value '" + std::string(value) + "' for key '" + std::string(name) + "'");
}

inline std::vector<std::pair<std::string, std::string>> snapshot(const OfalConfig& c) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& k : config_keys()) out.emplace_back(k.name, k.get(c));
  return out;
}

inline std::string trim(std::string_view s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string_view::npos) return {};
  const auto b = s.find_last_not_of(" \t\r");
  return std::string(s.substr(a, b - a + 1));
}

// "key = value" lines; '#' starts a comment.
inline void apply_config_text(OfalConfig& c, std::string_view text, const std::string& origin = "config") {
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    require(eq != std::string::npos, ErrorCode::InvalidConfig,
            origin + ":" + std::to_string(lineno) + ": expected key = value");
    set_key(c, trim(std::string_view(t).substr(0, eq)), trim(std::string_view(t).substr(eq + 1)));
  }
}

inline void load_config_file(OfalConfig& c, const std::filesystem::path& path) {
  std::ifstream f(path);
  require(static_cast<bool>(f), ErrorCode::IoError, "cannot read " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  apply_config_text(c, ss.str(), path.string());
}

inline std::string format_config(const OfalConfig& c) {
  std::string out;
  for (const auto& [k, v] : snapshot(c)) out += k + " = " + v + "\n";
  return out;
}

}  // namespace ofal
