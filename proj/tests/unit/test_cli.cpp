#include <gtest/gtest.h>

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ofal/cli.hpp"
#include "support.hpp"

using namespace ofal;

namespace {

struct Run {
  int code;
  std::string err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "ofal");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  std::ostringstream err, out;
  auto* old_err = std::cerr.rdbuf(err.rdbuf());
  auto* old_out = std::cout.rdbuf(out.rdbuf());
  const int code = dispatch(static_cast<int>(argv.size()), argv.data());
  std::cerr.rdbuf(old_err);
  std::cout.rdbuf(old_out);
  return {code, err.str() + out.str()};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

std::size_t lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run({}).code, kExitUsage);
  EXPECT_EQ(run({"frobnicate"}).code, kExitUsage);
  EXPECT_EQ(run({"run-baseline"}).code, kExitUsage);
  EXPECT_EQ(run({"run-baseline", "--sampler", "sideways"}).code, kExitUsage);
  EXPECT_EQ(run({"run-baseline", "--sampler", "margin", "--after-ofal"}).code, kExitUsage);
  const auto r = run({"run-ofal", "--set", "no_such_key=3"});
  EXPECT_EQ(r.code, kExitUsage);
  EXPECT_NE(r.err.find("no_such_key"), std::string::npos) << r.err;
}

TEST(Cli, MissingDataIsRuntimeError) {
  const auto dir = test::temp_dir("cli_nodata");
  EXPECT_EQ(run({"train-initial", "--data-dir", (dir / "absent").string(), "--out-dir", dir.string()}).code,
            kExitRuntime);
}

TEST(Export, StripLayout) {
  std::vector<Image> panels(5);
  for (std::size_t p = 0; p < panels.size(); ++p) panels[p].fill(static_cast<float>(p) / 4);
  const auto img = strip_image(std::span<const Image>(panels));
  EXPECT_EQ(img.width, 140);
  EXPECT_EQ(img.height, 28);
  EXPECT_EQ(img.pixels[0], 0);
  EXPECT_EQ(img.pixels[139], 255);
  EXPECT_EQ(img.pixels[28 * 2 + 140 * 5], to_gray(0.5));
  const auto pgm = encode_pgm(img);
  EXPECT_EQ(pgm.rfind("P5\n140 28\n255\n", 0), 0u);
  EXPECT_EQ(pgm.size(), 14u + 140u * 28u);
}

TEST(Export, PanelIndices) {
  EXPECT_EQ(panel_indices(101, 5), (std::vector<std::size_t>{0, 25, 50, 75, 100}));
  EXPECT_EQ(panel_indices(3, 5), (std::vector<std::size_t>{0, 1, 2}));
  EXPECT_TRUE(panel_indices(0, 5).empty());
}

TEST(Export, EmptyAndZeroStepStrips) {
  const Vae<float> v(VaeShape{}, 1);
  ThuResult empty;
  const auto dir = test::temp_dir("strips");
  EXPECT_FALSE(export_strip(empty, &v, 5, dir / "e.pgm"));
  EXPECT_FALSE(std::filesystem::exists(dir / "e.pgm"));

  ThuResult zero;
  zero.status = ThuStatus::RejectedZeroSteps;
  zero.z_trajectory = {std::vector<float>(10, 0.f), std::vector<float>(10, 0.f)};
  EXPECT_EQ(strip_panels(zero, &v, 5).size(), 1u);
  EXPECT_TRUE(export_strip(zero, &v, 5, dir / "z.pgm"));
}

TEST(Export, GridNeedsTwoDimLatent) {
  const Classifier<float> m(ClassifierShape{}, 1);
  const Vae<float> v(VaeShape{}, 1);
  try {
    latent_mi_grid(m, v, -3, 3, 10, UncertaintyConfig{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::RequiresTwoDimLatent);
  }
}

TEST(Export, ConstantClassifierGrid) {
  Classifier<float> m(ClassifierShape{}, 1);
  m.parameters()[6]->setZero();
  VaeShape shape;
  shape.latent_dim = 2;
  const Vae<float> v(shape, 2);
  UncertaintyConfig u;
  u.t_draws = 5;
  const auto g = latent_mi_grid(m, v, -3, 3, 100, u);
  const auto csv = format_grid_csv(g);
  EXPECT_EQ(lines(csv), 10001u);
  EXPECT_EQ(csv.rfind("z1,z2,mi\n", 0), 0u);
  for (double mi : g.mi) EXPECT_NEAR(mi, 0.0, 1e-9);
  EXPECT_EQ(g.z1.front(), -3.0);
  EXPECT_EQ(g.z2.back(), 3.0);
  const auto img = grid_image(g);
  EXPECT_EQ(img.width * img.height, 10000);
}

TEST(Cli, EndToEndSmallRun) {
  if (!test::have_mnist()) GTEST_SKIP() << "MNIST not found";
  const auto dir = test::temp_dir("cli_e2e");
  const std::string cfg = (dir / "small.cfg").string();
  std::ofstream(cfg) << "train_limit = 2000\ntest_limit = 500\nn_per_class = 5\ninitial_epochs = 2\n"
                        "retrain_epochs = 1\nvae_epochs = 1\nt_draws = 3\nthu_draws = 3\nthu_step_max = 5\n"
                        "per_class = 1\nsampler_count = 10\n";
  const auto init = dir / "init";
  ASSERT_EQ(run({"train-initial", "--config", cfg, "--out-dir", init.string()}).code, kExitOk);
  EXPECT_TRUE(std::filesystem::exists(init / "state.ckpt"));
  EXPECT_TRUE(std::filesystem::exists(init / "config.txt"));

  const auto ofal = dir / "ofal";
  ASSERT_EQ(run({"run-ofal", "--config", cfg, "--from", (init / "state.ckpt").string(), "--iterations", "2",
                 "--out-dir", ofal.string()})
                .code,
            kExitOk);
  const auto metrics = slurp(ofal / "metrics.csv");
  EXPECT_NE(metrics.find(kMetricsColumns), std::string::npos);
  EXPECT_EQ(lines(metrics.substr(metrics.find(kMetricsColumns))), 3u);

  const auto base = dir / "after";
  ASSERT_EQ(run({"run-baseline", "--config", cfg, "--sampler", "least_confidence", "--after-ofal", "--from",
                 (ofal / "state.ckpt").string(), "--iterations", "1", "--out-dir", base.string()})
                .code,
            kExitOk);
  EXPECT_NE(slurp(base / "metrics.csv").find("mode=after_ofal"), std::string::npos);

  const auto tr = dir / "trace";
  ASSERT_EQ(run({"thu-trace", "--config", cfg, "--from", (init / "state.ckpt").string(), "--out-dir", tr.string()})
                .code,
            kExitOk);
  const auto trace = slurp(tr / "thu_trace.csv");
  EXPECT_EQ(trace.rfind("seed_id,status,update,gap,uncertainty,loss\n", 0), 0u);
}
