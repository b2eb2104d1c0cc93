#pragma once

// Command-line driver. Exit codes: 0 success, 1 runtime error, 2 usage or
// configuration error.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ofal/checkpoint.hpp"
#include "ofal/config.hpp"
#include "ofal/data.hpp"
#include "ofal/error.hpp"
#include "ofal/experiment.hpp"
#include "ofal/export.hpp"
#include "ofal/metrics.hpp"
#include "ofal/thu.hpp"

namespace ofal {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;
inline constexpr const char* kDataDirEnv = "OFAL_DATA_DIR";

struct CliConfig {
  std::string subcommand;
  std::string data_dir;
  std::string out_dir = "out";
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> iterations;
  std::vector<std::string> overrides;  // key=value
  bool paper_faithful = false;
  std::string from;                   // checkpoint to start from
  std::string sampler;
  bool after_ofal = false;
  int checkpoint_every = 0;
  // exports
  int resolution = 100;
  double bound = 3.0;
  int grid_vae_epochs = 10;
  int seeds_per_class = 1;
  int panels = 5;
  bool no_vae = false;
};

// Builds the effective experiment config: defaults, then the config file,
// then individual flags. Any error here is a usage error.
inline OfalConfig effective_config(const CliConfig& cli) {
  OfalConfig c;
  if (cli.paper_faithful) c.initial_epochs = kPaperInitialEpochs;
  if (!cli.config_path.empty()) load_config_file(c, cli.config_path);
  for (const auto& kv : cli.overrides) {
    const auto eq = kv.find('=');
    require(eq != std::string::npos, ErrorCode::InvalidConfig, "--set expects key=value, got '" + kv + "'");
    set_key(c, trim(std::string_view(kv).substr(0, eq)), trim(std::string_view(kv).substr(eq + 1)));
  }
  if (cli.paper_faithful) c.initial_epochs = kPaperInitialEpochs;
  if (cli.seed) c.master_seed = *cli.seed;
  if (cli.iterations) c.iterations = *cli.iterations;
  if (!cli.sampler.empty()) {
    auto s = parse_criterion(cli.sampler);
    require(s.has_value(), ErrorCode::InvalidConfig, "unknown sampler '" + cli.sampler + "'");
    c.sampler = s;
  }
  if (cli.subcommand == "run-ofal") c.mode = RunMode::solo_ofal;
  if (cli.subcommand == "run-baseline") c.mode = cli.after_ofal ? RunMode::after_ofal : RunMode::baseline;
  if (cli.subcommand == "run-integrated") c.mode = RunMode::integrated;
  if (cli.subcommand == "run-baseline" || cli.subcommand == "run-integrated") {
    require(!cli.sampler.empty(), ErrorCode::InvalidConfig, cli.subcommand + " requires --sampler");
  }
  if (cli.subcommand == "run-baseline" && cli.after_ofal) {
    require(!cli.from.empty(), ErrorCode::InvalidConfig, "--after-ofal requires --from <OFAL checkpoint>");
  }
  validate(c);
  return c;
}

inline std::filesystem::path resolve_data_dir(const CliConfig& cli) {
  if (!cli.data_dir.empty()) return cli.data_dir;
  if (const char* env = std::getenv(kDataDirEnv); env != nullptr && *env != '\0') return env;
  return "data/mnist";
}

namespace detail {

inline void progress(const std::string& what, int epoch, double value, int every = 10) {
  if ((epoch + 1) % every == 0) std::clog << what << " epoch " << epoch + 1 << " objective " << value << '\n';
}

inline void log_iteration(const IterationRecord& r) {
  std::clog << "iteration " << r.iteration << " labeled=" << r.labeled_count << " oracle=" << r.n_oracle
            << " confident=" << r.n_confident << " generated=" << r.n_generated << " acc=" << r.test_accuracy
            << " thu_steps=" << r.mean_thu_steps << " accept=" << r.thu_accept_rate << '\n';
}

// State for a run: restored from --from, or trained from scratch.
inline ExperimentState starting_state(const CliConfig& cli, const OfalConfig& cfg, const MnistData& data) {
  if (!cli.from.empty()) {
    ExperimentState s = load_checkpoint(cli.from, data.train);
    // The checkpoint's models and sets are kept; the run's own settings come
    // from the command line.
    const auto shape_c = s.config.classifier;
    const auto shape_v = s.config.vae;
    const bool resume = s.config.mode == cfg.mode && !s.log.empty();
    const double acc = s.log.final_accuracy();
    if (resume) {
      std::clog << "resuming " << to_string(cfg.mode) << " after iteration " << s.log.last_iteration() << '\n';
      s.config = cfg;
      s.config.classifier = shape_c;
      s.config.vae = shape_v;
      s.config.iterations = cfg.iterations;
      s.log.config = snapshot(s.config);
      return s;
    }
    s.config = cfg;
    s.config.classifier = shape_c;
    s.config.vae = shape_v;
    s.log = MetricsLog{};
    s.log.initial_accuracy = acc;
    s.log.config = snapshot(s.config);
    return s;
  }
  return run_initial(
      cfg, data.train, data.test, [](int e, double v) { progress("classifier", e, v); },
      [](int e, double v) { progress("vae", e, v, 1); });
}

inline void write_run_outputs(const ExperimentState& s, const std::filesystem::path& out) {
  write_csv(s.log, out / "metrics.csv");
  write_text(out / "config.txt", format_config(s.config));
  save_checkpoint(s, out / "state.ckpt");
}

inline int run_experiment(const CliConfig& cli, const OfalConfig& cfg) {
  const std::filesystem::path out = cli.out_dir;
  const auto data = load_mnist(resolve_data_dir(cli), cfg.train_limit, cfg.test_limit);
  ExperimentState s = starting_state(cli, cfg, data);
  if (cli.subcommand == "train-initial") {
    std::clog << "initial accuracy " << s.log.initial_accuracy << '\n';
    write_run_outputs(s, out);
    return kExitOk;
  }
  std::clog << "starting accuracy " << s.log.initial_accuracy << '\n';
  IterationObserver observer = [&](const ExperimentState& st, const IterationRecord& r, const IterationDetail&) {
    log_iteration(r);
    if (cli.checkpoint_every > 0 && r.iteration % cli.checkpoint_every == 0) save_checkpoint(st, out / "state.ckpt");
  };
  run_loop(s, data.test, observer);
  std::clog << "oracle calls " << s.log.oracle_total << ", final accuracy " << s.log.final_accuracy() << '\n';
  write_run_outputs(s, out);
  return kExitOk;
}

inline int run_latent_grid(const CliConfig& cli, OfalConfig cfg) {
  const std::filesystem::path out = cli.out_dir;
  const auto data = load_mnist(resolve_data_dir(cli), cfg.train_limit, cfg.test_limit);
  require(!cli.from.empty(), ErrorCode::InvalidConfig, "export-latent-grid requires --from <checkpoint>");
  const ExperimentState s = load_checkpoint(cli.from, data.train);
  Vae<float> vae2d;
  if (s.vae.latent_dim() == 2) {
    vae2d = s.vae;
  } else {
    VaeShape shape = s.config.vae;
    shape.latent_dim = 2;
    vae2d = Vae<float>(shape, 0);
    cfg.vae_epochs = cli.grid_vae_epochs;
    TrainConfig t = vae_train_config(cfg);
    t.seed = derive_seed(cfg.master_seed, "vae2d-train");
    train_vae(vae2d, std::span<const Sample>(data.train.samples), t, [](int e, double v) { progress("vae2d", e, v, 1); });
  }
  UncertaintyConfig u = cfg.uncertainty;
  u.base_mask_seed = derive_seed(cfg.master_seed, "latent-grid");
  const auto grid = latent_mi_grid(s.classifier, vae2d, -cli.bound, cli.bound, cli.resolution, u);
  write_text(out / "latent_grid.csv", format_grid_csv(grid));
  write_pgm(out / "latent_grid.pgm", grid_image(grid));

  // Encoded test points for the overlay.
  std::string pts = "z1,z2,label\n";
  const std::size_t n = std::min<std::size_t>(data.test.size(), 2000);
  const Mat<float> z = vae2d.encode(to_batch<float>(std::span(data.test.samples).first(n),
                                                    [](const Sample& smp) -> const Image& { return smp.pixels; }));
  char buf[96];
  for (std::size_t k = 0; k < n; ++k) {
    std::snprintf(buf, sizeof buf, "%.6f,%.6f,%d\n", z(static_cast<Eigen::Index>(k), 0),
                  z(static_cast<Eigen::Index>(k), 1), data.test.labels[k]);
    pts += buf;
  }
  write_text(out / "latent_points.csv", pts);
  return kExitOk;
}

// THU walks from a few confident seeds per class; writes strips and/or the
// per-step trace.
inline int run_thu_export(const CliConfig& cli, const OfalConfig& cfg, bool strips, bool trace) {
  const std::filesystem::path out = cli.out_dir;
  const auto data = load_mnist(resolve_data_dir(cli), cfg.train_limit, cfg.test_limit);
  require(!cli.from.empty(), ErrorCode::InvalidConfig, cli.subcommand + " requires --from <checkpoint>");
  const ExperimentState s = load_checkpoint(cli.from, data.train);
  UncertaintyConfig u = cfg.uncertainty;
  u.base_mask_seed = derive_seed(cfg.master_seed, "export-mc");
  const auto confident = filter_confident(s.pool, s.classifier, u);
  const auto pick = select_confident_balanced(std::span<const ConfidentSample>(confident), cli.seeds_per_class,
                                              derive_seed(cfg.master_seed, "export-select"));
  ThuConfig tc = cfg.thu;
  tc.record_frames = true;
  std::vector<ThuResult> results;
  for (const auto& c : pick.seeds) {
    const Sample* smp = s.pool.find(c.id);
    const auto seed = derive_seed(cfg.master_seed, "export-thu", static_cast<std::uint64_t>(c.id));
    if (cli.no_vae) {
      results.push_back(thu_generate_pixels(*smp, s.classifier, tc, seed));
    } else {
      results.push_back(thu_generate(*smp, ThuContext<float>{s.classifier, s.vae, tc, seed}));
    }
    const auto& r = results.back();
    std::clog << "seed " << r.seed_id << " label " << c.predicted_label << ' ' << to_string(r.status) << " steps "
              << r.steps_taken << " gap " << r.final_gap << " mi " << r.mi_seed << " -> " << r.mi_new << '\n';
  }
  if (trace) write_text(out / (cli.no_vae ? "thu_trace_pixels.csv" : "thu_trace.csv"), format_trace_csv(results));
  if (strips) {
    for (const auto& r : results) {
      const auto name = "strip_" + std::to_string(r.seed_id) + (cli.no_vae ? "_pixels" : "") + ".pgm";
      if (!export_strip(r, cli.no_vae ? nullptr : &s.vae, static_cast<std::size_t>(cli.panels), out / name)) {
        std::clog << "warning: empty trajectory for seed " << r.seed_id << ", skipped\n";
      }
    }
  }
  return kExitOk;
}

}  // namespace detail

inline int dispatch(int argc, char** argv) {
  CliConfig cli;
  CLI::App app{"Oracle-free active learning on MNIST"};
  app.require_subcommand(1);

  auto common = [&cli](CLI::App* sub) {
    sub->add_option("--data-dir", cli.data_dir, std::string("MNIST IDX directory (env ") + kDataDirEnv + ")");
    sub->add_option("--out-dir", cli.out_dir, "output directory")->capture_default_str();
    sub->add_option("--config", cli.config_path, "key = value config file");
    sub->add_option("--set", cli.overrides, "override one config key (key=value)");
    sub->add_option("--seed", cli.seed, "master seed");
    sub->add_flag("--paper-faithful,--long-schedule", cli.paper_faithful, "10000 initial epochs");
  };
  auto runs = [&cli](CLI::App* sub) {
    sub->add_option("--from", cli.from, "start from (or resume) this checkpoint");
    sub->add_option("--iterations", cli.iterations, "acquisition iterations");
    sub->add_option("--checkpoint-every", cli.checkpoint_every, "save state.ckpt every N iterations");
  };
  auto thu_export = [&cli](CLI::App* sub) {
    sub->add_option("--from", cli.from, "checkpoint with trained models")->required();
    sub->add_option("--per-class", cli.seeds_per_class, "seeds per predicted class")->capture_default_str();
    sub->add_option("--panels", cli.panels, "panels per strip")->capture_default_str();
    sub->add_flag("--no-vae", cli.no_vae, "walk in pixel space instead of the latent space");
  };

  auto* train = app.add_subcommand("train-initial", "train the initial classifier and the VAE");
  common(train);
  auto* ofal = app.add_subcommand("run-ofal", "solo OFAL iterations");
  common(ofal);
  runs(ofal);
  auto* base = app.add_subcommand("run-baseline", "oracle sampling baseline");
  common(base);
  runs(base);
  base->add_option("--sampler", cli.sampler, "uniform | least_confidence | margin | entropy");
  base->add_flag("--after-ofal", cli.after_ofal, "start from an OFAL checkpoint (--from)");
  auto* integ = app.add_subcommand("run-integrated", "sampler + confident + generated queries");
  common(integ);
  runs(integ);
  integ->add_option("--sampler", cli.sampler, "uniform | least_confidence | margin | entropy");
  auto* grid = app.add_subcommand("export-latent-grid", "BALD MI over a 2-d latent grid");
  common(grid);
  grid->add_option("--from", cli.from, "checkpoint with the classifier")->required();
  grid->add_option("--resolution", cli.resolution)->capture_default_str();
  grid->add_option("--bound", cli.bound, "grid covers [-bound, bound]^2")->capture_default_str();
  grid->add_option("--vae-epochs", cli.grid_vae_epochs, "epochs for the 2-d VAE")->capture_default_str();
  auto* strips = app.add_subcommand("export-strips", "THU sample strips as PGM");
  common(strips);
  thu_export(strips);
  auto* trace = app.add_subcommand("thu-trace", "per-step THU trace CSV");
  common(trace);
  thu_export(trace);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }
  cli.subcommand = app.get_subcommands().front()->get_name();

  OfalConfig cfg;
  try {
    cfg = effective_config(cli);
    std::filesystem::create_directories(cli.out_dir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    if (cli.subcommand == "export-latent-grid") return detail::run_latent_grid(cli, cfg);
    if (cli.subcommand == "export-strips") return detail::run_thu_export(cli, cfg, true, false);
    if (cli.subcommand == "thu-trace") return detail::run_thu_export(cli, cfg, true, true);
    return detail::run_experiment(cli, cfg);
  } catch (const Error& e) {
    std::cerr << "error [" << to_string(e.code()) << "]: " << e.what() << '\n';
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
  }
  return kExitRuntime;
}

}  // namespace ofal
