#include <gtest/gtest.h>

#include <set>

#include "ofal/checkpoint.hpp"
#include "ofal/experiment.hpp"
#include "support.hpp"

using namespace ofal;

namespace {

OfalConfig small_config() {
  OfalConfig c;
  c.split.n_per_class = 10;
  c.initial_epochs = 3;
  c.retrain_epochs = 1;
  c.vae_epochs = 1;
  c.uncertainty.t_draws = 3;
  c.uncertainty.t_conf = 0.5;
  c.thu.t_draws = 3;
  c.thu.step_max = 8;
  c.thu.step_size = 0.5;
  c.thu.t_stop = 0.6;
  c.per_class = 2;
  c.sampler_count = 20;
  c.iterations = 2;
  return c;
}

// Initial state is costly; every test starts from a copy.
const ExperimentState& initial() {
  static const ExperimentState s = [] {
    const auto& d = test::small_mnist();
    return run_initial(small_config(), d.train, d.test);
  }();
  return s;
}

ExperimentState phase(RunMode mode, std::optional<Criterion> sampler, int iterations) {
  ExperimentState s = initial();
  begin_phase(s, mode, sampler, iterations);
  return s;
}

ExperimentState roundtrip(const ExperimentState& s) {
  return decode_checkpoint(encode_checkpoint(s), test::small_mnist().train);
}

template <typename F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::IoError;
}

}  // namespace

class Loop : public ::testing::Test {
 protected:
  void SetUp() override {
    if (!test::have_mnist()) GTEST_SKIP() << "MNIST not found in " << test::mnist_dir();
  }
};

TEST_F(Loop, SoloOfalUsesNoOracle) {
  auto s = phase(RunMode::solo_ofal, std::nullopt, 2);
  std::size_t labeled = s.labeled.size();
  const std::size_t pool = s.pool.size();
  run_ofal(s, test::small_mnist().test);
  ASSERT_EQ(s.log.records().size(), 2u);
  EXPECT_EQ(s.log.oracle_total, 0u);
  EXPECT_EQ(s.oracle.calls(), 0u);
  std::size_t removed = 0;
  for (const auto& r : s.log.records()) {
    EXPECT_EQ(r.n_oracle, 0u);
    EXPECT_LE(r.query_size, 2u * 10u * 2u);
    EXPECT_LE(r.n_confident, 20u);
    EXPECT_LE(r.n_generated, 20u);
    EXPECT_EQ(r.labeled_count, labeled + r.query_size);
    EXPECT_GE(r.thu_accept_rate, 0.0);
    EXPECT_LE(r.thu_accept_rate, 1.0);
    labeled = r.labeled_count;
    removed += r.n_confident;
  }
  EXPECT_EQ(s.pool.size(), pool - removed);
  EXPECT_EQ(s.labeled.count(Provenance::oracle), 0u);
}

TEST_F(Loop, Deterministic) {
  auto a = phase(RunMode::solo_ofal, std::nullopt, 2);
  auto b = phase(RunMode::solo_ofal, std::nullopt, 2);
  run_ofal(a, test::small_mnist().test);
  run_ofal(b, test::small_mnist().test);
  EXPECT_EQ(format_csv(a.log), format_csv(b.log));
  EXPECT_EQ(encode_checkpoint(a), encode_checkpoint(b));
}

TEST_F(Loop, ZeroIterations) {
  auto s = phase(RunMode::solo_ofal, std::nullopt, 0);
  const std::size_t labeled = s.labeled.size();
  run_ofal(s, test::small_mnist().test);
  EXPECT_TRUE(s.log.empty());
  EXPECT_EQ(s.labeled.size(), labeled);
  EXPECT_EQ(s.log.final_accuracy(), initial().log.initial_accuracy);
}

TEST_F(Loop, ResumeMatchesUninterruptedRun) {
  const auto& test_set = test::small_mnist().test;
  auto full = phase(RunMode::integrated, Criterion::least_confidence, 2);
  run_integrated(full, test_set);

  auto part = phase(RunMode::integrated, Criterion::least_confidence, 1);
  run_integrated(part, test_set);
  auto resumed = roundtrip(part);
  resumed.config.iterations = 2;
  resumed.log.config = snapshot(resumed.config);
  run_integrated(resumed, test_set);
  EXPECT_EQ(format_csv(resumed.log), format_csv(full.log));
  EXPECT_EQ(resumed.oracle.calls(), full.oracle.calls());
}

TEST_F(Loop, IntegratedAccounting) {
  auto s = phase(RunMode::integrated, Criterion::margin, 2);
  std::set<SampleId> seen_oracle;
  std::size_t pool = s.pool.size();
  run_integrated(s, test::small_mnist().test,
                 [&](const ExperimentState& st, const IterationRecord& r, const IterationDetail& d) {
                   EXPECT_EQ(d.sampler_ids.size(), 20u);
                   EXPECT_EQ(r.n_oracle, 20u);
                   std::set<SampleId> picked(d.sampler_ids.begin(), d.sampler_ids.end());
                   for (auto id : picked) EXPECT_TRUE(seen_oracle.insert(id).second) << "id queried twice";
                   if (d.generation) {
                     for (const auto& g : d.generation->accepted) {
                       if (picked.count(g.result.seed_id) == 0) {
                         EXPECT_FALSE(st.pool.contains(g.result.seed_id));
                       }
                     }
                   }
                   EXPECT_EQ(st.pool.size(), pool - r.n_oracle - r.n_confident);
                   pool = st.pool.size();
                 });
  std::size_t total = 0;
  for (const auto& r : s.log.records()) total += r.n_oracle;
  EXPECT_EQ(s.log.oracle_total, total);
  EXPECT_EQ(s.oracle.calls(), total);
  EXPECT_EQ(s.labeled.count(Provenance::oracle), total);
}

TEST_F(Loop, BaselineHasOnlyOracleQueries) {
  auto s = phase(RunMode::baseline, Criterion::uniform, 1);
  run_baseline(s, test::small_mnist().test);
  const auto& r = s.log.records().at(0);
  EXPECT_EQ(r.n_oracle, 20u);
  EXPECT_EQ(r.n_confident + r.n_generated, 0u);
  EXPECT_EQ(r.query_size, 20u);
}

TEST_F(Loop, CheckpointRoundTrip) {
  auto s = phase(RunMode::solo_ofal, std::nullopt, 1);
  run_ofal(s, test::small_mnist().test);
  const auto bytes = encode_checkpoint(s);
  const auto back = roundtrip(s);
  EXPECT_EQ(encode_checkpoint(back), bytes);
  EXPECT_EQ(format_csv(back.log), format_csv(s.log));
  EXPECT_EQ(back.pool.ids(), s.pool.ids());

  const auto dir = test::temp_dir("ckpt");
  save_checkpoint(s, dir / "state.ckpt");
  EXPECT_FALSE(std::filesystem::exists(dir / "state.ckpt.partial"));
  EXPECT_EQ(encode_checkpoint(load_checkpoint(dir / "state.ckpt", test::small_mnist().train)), bytes);
}

TEST_F(Loop, CheckpointErrors) {
  const auto& train = test::small_mnist().train;
  EXPECT_EQ(code_of([&] { decode_checkpoint({}, train); }), ErrorCode::CorruptCheckpoint);

  auto bytes = encode_checkpoint(initial());
  auto flipped = bytes;
  flipped[flipped.size() / 2] ^= 0x5a;
  EXPECT_EQ(code_of([&] { decode_checkpoint(flipped, train); }), ErrorCode::CorruptCheckpoint);

  auto version = bytes;
  version[8] = 99;  // u32 version follows the 8-byte magic
  EXPECT_EQ(code_of([&] { decode_checkpoint(version, train); }), ErrorCode::IncompatibleCheckpoint);

  EXPECT_EQ(code_of([&] { load_checkpoint(test::temp_dir("missing") / "nope.ckpt", train); }), ErrorCode::IoError);
}

TEST(Config, UnknownKeyIsNamed) {
  OfalConfig c;
  try {
    apply_config_text(c, "iterations = 3\nbogus_key = 1\n");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InvalidConfig);
    EXPECT_NE(std::string(e.what()).find("bogus_key"), std::string::npos);
  }
}

TEST(Config, TextRoundTrip) {
  OfalConfig c;
  apply_config_text(c, "# comment\nthu_step_size = 0.125\nsampler = margin\nper_class=7\n");
  EXPECT_EQ(c.thu.step_size, 0.125);
  EXPECT_EQ(c.per_class, 7);
  OfalConfig d;
  apply_config_text(d, format_config(c));
  EXPECT_EQ(format_config(d), format_config(c));
}

TEST(Config, InvalidValues) {
  OfalConfig c;
  EXPECT_THROW(set_key(c, "iterations", "many"), Error);
  c.uncertainty.t_conf = 1.5;
  EXPECT_EQ(code_of([&] { validate(c); }), ErrorCode::InvalidConfig);
}
