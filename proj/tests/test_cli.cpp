// Copyright 2026 The mope-cpp Authors.
// SPDX-License-Identifier: Apache-2.0

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

namespace {

namespace fs = std::filesystem;

const char* const kTinyConfig = R"(# small enough for a few seconds per command
main.layers = 2
main.hidden = 16
main.heads = 2
main.ffn = 32
main.vocab = 8
main.seq_len = 4
comp.layers = 1
comp.hidden = 16
comp.heads = 2
comp.ffn = 32
comp.feature_dim = 4
comp.seq_len = 2
prompt.len = 2
prompt.experts = 4
task.seq_len = 4
task.train_size = 96
task.val_size = 32
task.test_size = 32
train.epochs = 1
train.batch_size = 16
)";

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("mope_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    std::ofstream(dir_ / "tiny.cfg") << kTinyConfig;
  }
  void TearDown() override { fs::remove_all(dir_); }

  // Runs the tool, returning its exit status; stdout and stderr go to files.
  int run(const std::string& args) {
    const std::string cmd = std::string(MOPE_CLI_PATH) + " " + args + " > " + (dir_ / "stdout.txt").string() +
                            " 2> " + (dir_ / "stderr.txt").string();
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  std::string tiny(const std::string& out) const {
    return "--config " + (dir_ / "tiny.cfg").string() + " --out " + (dir_ / out).string();
  }

  std::string read(const fs::path& p) const {
    std::ifstream is(p, std::ios::binary);
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
  }

  std::string err() const { return read(dir_ / "stderr.txt"); }
  std::string out() const { return read(dir_ / "stdout.txt"); }

  fs::path dir_;
};

TEST_F(Cli, TrainWritesEveryOutput) {
  ASSERT_EQ(run("train " + tiny("run")), 0) << err();
  for (const char* f : {"config.resolved", "metrics.csv", "diagnostics.csv", "contingency.csv", "checkpoint.bin",
                        "eval.csv"})
    EXPECT_TRUE(fs::exists(dir_ / "run" / f)) << f;
  const std::string metrics = read(dir_ / "run" / "metrics.csv");
  EXPECT_EQ(metrics.substr(0, metrics.find('\n')), "step,task_loss,imp_loss_value,imp_loss_applied,total,lr");
  const std::string resolved = read(dir_ / "run" / "config.resolved");
  EXPECT_NE(resolved.find("prompt.temperature = 0.10000000000000001"), std::string::npos) << resolved;
  EXPECT_NE(out().find("\"accuracy\""), std::string::npos);
}

TEST_F(Cli, TrainIsByteReproducible) {
  ASSERT_EQ(run("train " + tiny("a") + " --seed 13"), 0) << err();
  ASSERT_EQ(run("train " + tiny("b") + " --seed 13"), 0) << err();
  const std::string a = read(dir_ / "a" / "metrics.csv");
  EXPECT_FALSE(a.empty());
  EXPECT_EQ(a, read(dir_ / "b" / "metrics.csv"));
  EXPECT_EQ(read(dir_ / "a" / "checkpoint.bin"), read(dir_ / "b" / "checkpoint.bin"));
  ASSERT_EQ(run("train " + tiny("c") + " --seed 14"), 0) << err();
  EXPECT_NE(a, read(dir_ / "c" / "metrics.csv"));
}

TEST_F(Cli, UnknownKeyExitsTwoNamingKey) {
  EXPECT_EQ(run("train " + tiny("run") + " --set prompt.expertz=3"), 2);
  EXPECT_NE(err().find("prompt.expertz"), std::string::npos) << err();
}

TEST_F(Cli, InvalidValueExitsTwoNamingKey) {
  EXPECT_EQ(run("train " + tiny("run") + " --set prompt.temperature=-1"), 2);
  EXPECT_NE(err().find("prompt.temperature"), std::string::npos) << err();
  EXPECT_EQ(run("train " + tiny("run") + " --precision 16"), 2);
  EXPECT_NE(err().find("run.precision"), std::string::npos) << err();
}

TEST_F(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run(""), 2);
  EXPECT_EQ(run("frobnicate"), 2);
  EXPECT_EQ(run("eval"), 2);
  EXPECT_EQ(run("sweep " + tiny("run") + " --spec nonsense"), 2);
  EXPECT_EQ(run("eval " + tiny("run") + " --checkpoint " + (dir_ / "missing.bin").string()), 2);
}

TEST_F(Cli, EvalAndRoutesFromCheckpoint) {
  ASSERT_EQ(run("train " + tiny("run")), 0) << err();
  const std::string ckpt = (dir_ / "run" / "checkpoint.bin").string();
  ASSERT_EQ(run("eval --checkpoint " + ckpt + " --split val --out " + (dir_ / "ev").string()), 0) << err();
  EXPECT_EQ(read(dir_ / "ev" / "eval.csv"), read(dir_ / "run" / "eval.csv"));
  ASSERT_EQ(run("routes --checkpoint " + ckpt + " --out " + (dir_ / "rt").string()), 0) << err();
  const std::string routes = read(dir_ / "rt" / "routes.csv");
  EXPECT_EQ(routes.substr(0, routes.find('\n')), "instance_id,layer,expert_id,score,entropy_bits,argmax");
  EXPECT_TRUE(fs::exists(dir_ / "rt" / "contingency.csv"));
  EXPECT_TRUE(fs::exists(dir_ / "rt" / "config.resolved"));
  EXPECT_NE(out().find("mutual information"), std::string::npos);
}

TEST_F(Cli, RoutesOnStaticCheckpointExitsTwo) {
  ASSERT_EQ(run("train " + tiny("run") + " --set prompt.kinds=s+m"), 0) << err();
  EXPECT_FALSE(fs::exists(dir_ / "run" / "contingency.csv"));
  EXPECT_EQ(run("routes --checkpoint " + (dir_ / "run" / "checkpoint.bin").string() + " --out " +
                (dir_ / "rt").string()),
            2);
  EXPECT_NE(err().find("dynamic"), std::string::npos) << err();
}

TEST_F(Cli, GradcheckPasses) {
  ASSERT_EQ(run("gradcheck " + tiny("gc") + " --samples 60 --batch 4"), 0) << err() << out();
  const std::string csv = read(dir_ / "gc" / "gradcheck.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "parameter,index,analytic,numeric,rel_error");
  EXPECT_NE(out().find("(pass)"), std::string::npos);
}

TEST_F(Cli, AblateRunsSevenCells) {
  ASSERT_EQ(run("ablate " + tiny("ab") + " --set train.max_steps=2"), 0) << err();
  const std::string csv = read(dir_ / "ab" / "metrics.csv");
  std::size_t rows = 0;
  for (char c : csv) rows += c == '\n';
  EXPECT_EQ(rows, 1u + 7u);
  EXPECT_TRUE(fs::exists(dir_ / "ab" / "config.resolved"));
}

TEST_F(Cli, SweepWritesPerCellFiles) {
  ASSERT_EQ(run("sweep " + tiny("sw") + " --spec dense_vs_sparse --seeds 1 2 --set train.max_steps=2"), 0) << err();
  for (const char* f : {"metrics.csv", "diagnostics_dense_seed1.csv", "contingency_sparse_seed2.csv"})
    EXPECT_TRUE(fs::exists(dir_ / "sw" / f)) << f;
}

}  // namespace
