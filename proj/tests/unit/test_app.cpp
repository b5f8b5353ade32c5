#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "onevl/app.hpp"

using namespace onevl;
namespace fs = std::filesystem;

namespace {

const char* kTinyConfig = R"({
  "data": {"n_samples": 60, "seed": 3},
  "codec": {"codebook_size": 32, "iters": 3},
  "model": {"d": 16, "n_layers": 1, "n_heads": 2, "dec_layers": 1, "dec_heads": 2},
  "training": {"val_limit": 4},
  "eval": {"test_limit": 3, "latency_samples": 2, "latency_runs": 1, "latency_warmup": 0}
})";

RunConfig tiny(const fs::path& dir) {
  RunConfig c = parse_run_config(kTinyConfig);
  c.run_dir = dir;
  return c;
}

fs::path fresh_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / name;
  fs::remove_all(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// Leaves ONEVL_RUN_DIR unset for the duration of a test.
struct EnvGuard {
  EnvGuard() { unsetenv("ONEVL_RUN_DIR"); }
  ~EnvGuard() { unsetenv("ONEVL_RUN_DIR"); }
};

}  // namespace

TEST(App, MissingArtifactNamesCommand) {
  EnvGuard env;
  const RunConfig c = tiny(fresh_dir("onevl_app_missing"));
  std::ostringstream log;
  try {
    cmd_train_vq(c, log);
    FAIL();
  } catch (const MissingArtifact& e) {
    const std::string m = e.what();
    EXPECT_NE(m.find("train.jsonl"), std::string::npos);
    EXPECT_NE(m.find("onevl build-data"), std::string::npos);
  }
  cmd_build_data(c, log);
  EXPECT_THROW(cmd_train(c, {}, log), MissingArtifact);
  EXPECT_THROW(cmd_eval(c, {}, log), MissingArtifact);
}

TEST(App, RunDirFromEnvironment) {
  EnvGuard env;
  const RunConfig c = tiny("configured");
  EXPECT_EQ(resolve_run_dir(c), fs::path("configured"));
  setenv("ONEVL_RUN_DIR", "/tmp/elsewhere", 1);
  EXPECT_EQ(resolve_run_dir(c), fs::path("/tmp/elsewhere"));
}

TEST(App, SmokeFlowProducesArtifacts) {
  EnvGuard env;
  const auto dir = fresh_dir("onevl_app_flow");
  const RunConfig c = tiny(dir);
  std::ostringstream log;
  cmd_build_data(c, log);
  cmd_train_vq(c, log);
  cmd_train(c, {"onevl", "smoke"}, log);
  cmd_train(c, {"answer_only", "smoke"}, log);
  cmd_ablate(c, "mlp_head", true, log);
  cmd_eval(c, {}, log);
  cmd_explain(c, {"test:0"}, log);
  for (const char* f : {"config.json", "data/train.jsonl", "codec/codebook.ckpt", "codec/tokens_test.jsonl",
                        "codec/report.json", "checkpoints/onevl/final.ckpt", "checkpoints/onevl/stage2.ckpt",
                        "checkpoints/answer_only/final.ckpt", "checkpoints/mlp_head/final.ckpt", "logs/onevl.jsonl",
                        "report/summary.txt", "report/metrics.csv", "explain/test_0/explanation.txt",
                        "explain/test_0/future_0_5s.pgm", "explain/test_0/future_1_0s.pgm"}) {
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  }
  const auto pgm = slurp(dir / "explain/test_0/future_0_5s.pgm");
  EXPECT_EQ(pgm.rfind("P2\n32 32\n5\n", 0), 0u);
  const auto metrics = slurp(dir / "report/metrics.csv");
  EXPECT_NE(metrics.find("answer_only,answer_only"), std::string::npos);
  EXPECT_NE(metrics.find("onevl,mlp_head"), std::string::npos);
  EXPECT_THROW(cmd_explain(c, {"test:99999"}, log), std::exception);
}

TEST(App, ResumeFromStageSubset) {
  EnvGuard env;
  const auto dir = fresh_dir("onevl_app_resume");
  const RunConfig c = tiny(dir);
  std::ostringstream log;
  cmd_build_data(c, log);
  cmd_train_vq(c, log);
  EXPECT_THROW(cmd_train(c, {"onevl", "stage1,stage2"}, log), MissingArtifact);
  EXPECT_THROW(cmd_train(c, {"onevl", "stage2,stage0"}, log), std::invalid_argument);
}

TEST(App, ExecutableReportsErrors) {
  const auto dir = fresh_dir("onevl_app_cli");
  fs::create_directories(dir);
  std::ofstream(dir / "cfg.json") << kTinyConfig;
  const std::string cli = ONEVL_CLI;
  const std::string env = "ONEVL_RUN_DIR=" + (dir / "run").string() + " ";
  const std::string out = (dir / "out.txt").string();
  int rc = std::system((env + cli + " train-vq -c " + (dir / "cfg.json").string() + " > " + out + " 2>&1").c_str());
  EXPECT_NE(rc, 0);
  EXPECT_NE(slurp(out).find("build-data"), std::string::npos);
  rc = std::system((env + cli + " build-data -c " + (dir / "cfg.json").string() + " > " + out + " 2>&1").c_str());
  EXPECT_EQ(rc, 0);
  EXPECT_TRUE(fs::exists(dir / "run" / "data" / "test.jsonl"));
  rc = std::system((cli + " frobnicate > " + out + " 2>&1").c_str());
  EXPECT_NE(rc, 0);
}
