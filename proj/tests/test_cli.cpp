#include <gtest/gtest.h>

#include <cstdlib>
#include <sstream>
#include <sys/wait.h>
#include <unistd.h>

#include "oracles.hpp"

namespace {

namespace fs = std::filesystem;

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / ("gmc_cli_test_" + std::to_string(::getpid()));
    fs::remove_all(dir_);
    oracle::write_synthetic_movielens(dir_ / "data", 50, 70, 0.2, 5);
  }
  static void TearDownTestSuite() { fs::remove_all(dir_); }

  // Runs the CLI with stdout and stderr sent to files; returns the exit code.
  static int run(const std::string& args, std::string* out = nullptr, std::string* err = nullptr) {
    const fs::path o = dir_ / "stdout.txt", e = dir_ / "stderr.txt";
    const std::string cmd = std::string("\"") + GMC_CLI_PATH + "\" " + args + " >\"" + o.string() + "\" 2>\"" +
                            e.string() + "\"";
    const int status = std::system(cmd.c_str());
    if (out) *out = slurp(o);
    if (err) *err = slurp(e);
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }
  static std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }
  static std::string data() { return "--data-dir \"" + (dir_ / "data").string() + "\""; }
  static std::string path(const std::string& name) { return "\"" + (dir_ / name).string() + "\""; }

  static fs::path dir_;
};
fs::path Cli::dir_;

TEST_F(Cli, DiagnosticsPass) {
  std::string out;
  EXPECT_EQ(run("diagnostics", &out), 0);
  EXPECT_EQ(out.find("[FAIL]"), std::string::npos) << out;
  EXPECT_NE(out.find("[PASS] kron_inverse"), std::string::npos);
}

TEST_F(Cli, ParseAndSnapshot) {
  std::string out;
  ASSERT_EQ(run("parse " + data() + " --snapshot-out " + path("snap.txt"), &out), 0);
  EXPECT_NE(out.find("50"), std::string::npos);
  std::string again;
  ASSERT_EQ(run("parse --snapshot " + path("snap.txt"), &again), 0);
  EXPECT_EQ(out.substr(0, out.find('\n')), again.substr(0, again.find('\n')));
}

TEST_F(Cli, FitThenEvaluate) {
  const std::string common = data() + " --subsample-users 40 --subsample-movies 60 --seed 3";
  std::string out;
  ASSERT_EQ(run("fit " + common + " --eta 0.5 --zeta 0.5 --rank 3 --lambda 1e-3 --model-out " + path("model.txt") +
                    " --test-out " + path("test.txt"),
                &out),
            0)
      << out;
  EXPECT_TRUE(fs::exists(dir_ / "model.txt"));
  std::string eval;
  ASSERT_EQ(run("evaluate --model " + path("model.txt") + " --test " + path("test.txt"), &eval), 0);
  EXPECT_NE(eval.find("mse"), std::string::npos) << eval;
}

TEST_F(Cli, GridIsByteIdenticalAcrossThreadCounts) {
  const std::string args = "grid " + data() +
                           " --subsample-users 40 --subsample-movies 60 --etas 0,1 --zetas 0.5 --ranks 2"
                           " --lambdas 1e-3,1e-4 --folds 2 --omit-timing";
  ASSERT_EQ(run(args + " --threads 1 --out " + path("a.csv") + " --manifest " + path("a.manifest")), 0);
  ASSERT_EQ(run(args + " --threads 2 --out " + path("b.csv")), 0);
  const std::string a = slurp(dir_ / "a.csv");
  EXPECT_EQ(a, slurp(dir_ / "b.csv"));
  EXPECT_EQ(std::count(a.begin(), a.end(), '\n'), 5);
  EXPECT_EQ(a.rfind("eta,zeta,rank,lambda,cv_mse,test_mse,wall_time_s", 0), 0u);
  EXPECT_TRUE(fs::exists(dir_ / "a.manifest"));
}

TEST_F(Cli, ErrorsExitNonZero) {
  std::string err;
  EXPECT_EQ(run("parse --data-dir " + path("nowhere"), nullptr, &err), 1);
  EXPECT_NE(err.find("error"), std::string::npos);
  EXPECT_NE(run("fit " + data() + " --eta 2"), 0);
  EXPECT_NE(run("no-such-command"), 0);
}

}  // namespace
