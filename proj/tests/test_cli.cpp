#include "noiserefine/analysis/probes.hpp"
#include "noiserefine/cli/run_config.hpp"
#include "noiserefine/core/io.hpp"
#include "noiserefine/nets/checkpoint.hpp"
#include "noiserefine/sampler/sampler.hpp"

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace nr {
namespace {

namespace fs = std::filesystem;

// ---- RunConfig ---------------------------------------------------------------

TEST(RunConfig, DefaultsCoverEveryKey) {
  const RunConfig rc;
  for (const ConfigKey& k : config_keys()) EXPECT_EQ(rc.get(k.name), k.default_value) << k.name;
  EXPECT_EQ(rc.get_int("sampler.N"), 10);
  EXPECT_EQ(rc.get_int("sampler.N_guided"), 20);
}

TEST(RunConfig, ParsesCommentsAndWhitespace) {
  const RunConfig rc = RunConfig::parse("# comment\n\n  sampler.N =  7 \nmodel.hidden=32\n");
  EXPECT_EQ(rc.get_int("sampler.N"), 7);
  EXPECT_EQ(spec_from(rc).hidden, 32);
}

TEST(RunConfig, RejectsUnknownKeysAndBadLines) {
  EXPECT_THROW(RunConfig::parse("sampler.steps = 3\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("sampler.N 3\n"), ConfigError);
  RunConfig rc;
  EXPECT_THROW(rc.set("nope=1"), ConfigError);
  EXPECT_THROW(rc.set("sampler.N"), ConfigError);
  rc.set("sampler.N=abc");
  EXPECT_THROW(rc.get_int("sampler.N"), ConfigError);
  EXPECT_THROW(rc.get("missing.key"), ConfigError);
}

TEST(RunConfig, ResolvedTextRoundTripsAndHashes) {
  RunConfig rc;
  rc.set("guidance.w=2.5");
  const RunConfig again = RunConfig::parse(rc.resolved());
  EXPECT_EQ(again, rc);
  EXPECT_EQ(again.hash(), rc.hash());
  EXPECT_EQ(rc.hash().size(), 16u);
  EXPECT_NE(rc.hash(), RunConfig().hash());
}

TEST(RunConfig, BuildersReadTheirKeys) {
  RunConfig rc;
  rc.set("sampler.N=4");
  rc.set("sampler.N_guided=6");
  rc.set("pairs.w_min=1");
  rc.set("pairs.w_max=2");
  EXPECT_EQ(refiner_config_from(rc).sampler_steps, 4);
  EXPECT_EQ(pair_config_from(rc).guided_steps, 6);
  EXPECT_EQ(pair_config_from(rc).w_lo, 1.0);
  EXPECT_EQ(pair_config_from(rc).w_hi, 2.0);
  EXPECT_EQ(schedule_from(rc).steps(), spec_from(rc).steps);
}

// ---- command line ------------------------------------------------------------

struct CliRun {
  int code = -1;
  std::string err;
};

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("nr_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  CliRun run(const std::string& args) const {
    const fs::path err = dir_ / "stderr.txt";
    const std::string cmd = std::string(NOISEREFINE_CLI) + " --run-dir " + (dir_ / "run").string() + " " + args +
                            " > /dev/null 2> " + err.string();
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, io::read_text(err)};
  }

  fs::path only(const std::string& prefix, const std::string& ext) const {
    fs::path found;
    int n = 0;
    for (const auto& e : fs::directory_iterator(dir_ / "run")) {
      const std::string name = e.path().filename().string();
      if (name.starts_with(prefix) && e.path().extension() == ext) {
        found = e.path();
        ++n;
      }
    }
    EXPECT_EQ(n, 1) << prefix << "*" << ext;
    return found;
  }

  fs::path dir_;
};

std::string bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

TEST_F(CliTest, GammaCsvMatchesCurve) {
  const CliRun r = run("analyze gamma");
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream csv(io::read_text(only("gamma_s0_", ".csv")));
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "t,t_prev,alpha,alpha_prev,value");
  const auto curve = gamma_curve(default_schedule());
  std::size_t i = 0;
  while (std::getline(csv, line)) {
    ASSERT_LT(i, curve.size());
    std::vector<double> f;
    std::istringstream row(line);
    for (std::string cell; std::getline(row, cell, ',');) f.push_back(std::stod(cell));
    ASSERT_EQ(f.size(), 5u);
    EXPECT_EQ(f[0], curve[i].t);
    EXPECT_EQ(f[4], curve[i].value);
    ++i;
  }
  EXPECT_EQ(i, curve.size());
  // The resolved configuration is echoed next to the outputs.
  EXPECT_EQ(RunConfig::load(only("config_", ".cfg")), RunConfig());
}

TEST_F(CliTest, MissingCheckpointExitsTwo) {
  const CliRun r = run("sample");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("{\"error\":\"missing_checkpoint\""), std::string::npos) << r.err;
}

TEST_F(CliTest, ConfigErrorsExitThree) {
  CliRun r = run("--set no.such.key=1 analyze gamma");
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("{\"error\":\"config\""), std::string::npos) << r.err;
  io::write_text(dir_ / "bad.cfg", "sampler.N = 10\nthis line is malformed\n");
  r = run("--config " + (dir_ / "bad.cfg").string() + " analyze gamma");
  EXPECT_EQ(r.code, 3);
  r = run("--bogus-flag analyze gamma");
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("\"error\""), std::string::npos);
}

TEST_F(CliTest, ZeroGuidanceSampleMatchesUnguidedBytes) {
  const std::string tiny = "--set model.hidden=16 --set model.time_dim=8 --set base.steps=5 --set base.batch=4";
  ASSERT_EQ(run(tiny + " train-base").code, 0);
  io::write_text(dir_ / "c.cfg", "guidance.w = 4\nguidance.s = 2.5\nsampler.count = 6\nsampler.class = 2\n");
  const std::string cfg = "--config " + (dir_ / "c.cfg").string();
  const CliRun r = run(cfg + " --set guidance.w=0 --set guidance.s=0 sample");
  ASSERT_EQ(r.code, 0) << r.err;
  const fs::path pgm = only("sample_s0_", ".pgm");

  // Library reference: same noise stream, no guidance at all.
  const DenoiserNet net = load_denoiser(dir_ / "run" / "base.ck");
  RngStream rng(0, RngStream::stream_id("sample.noise"));
  const Matrix xT = rng.normal_matrix(256, 6);
  const auto conds = repeat_condition(Condition::of(2), 6);
  const Matrix x0 = denoise(xT, conds, net, default_schedule(), 10);
  const auto images = unstack_columns(x0, {1, 16, 16});
  io::save_pgm(dir_ / "reference.pgm", io::tile_grid(images, 6));
  EXPECT_EQ(bytes(pgm), bytes(dir_ / "reference.pgm"));

  // Re-running from the echoed configuration reproduces the artifact.
  const fs::path echoed = dir_ / "echo.cfg";
  fs::copy_file(only("config_" + pgm.stem().string().substr(std::string("sample_s0_").size()), ".cfg"), echoed);
  const fs::path first = dir_ / "first.pgm";
  fs::rename(pgm, first);
  ASSERT_EQ(run("--config " + echoed.string() + " sample").code, 0);
  EXPECT_EQ(bytes(first), bytes(only("sample_s0_", ".pgm")));
}

}  // namespace
}  // namespace nr
