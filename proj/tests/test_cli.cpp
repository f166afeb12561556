#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

#include <gtest/gtest.h>

namespace fs = std::filesystem;

namespace {

int run_cli(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + " " + std::string(NOISEREG_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("noisereg_cli_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  [[nodiscard]] std::string str(const std::string& sub = "") const { return (path / sub).string(); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

const std::string kSmall = "--d 4 --trials 2 --horizon 50 --threads 1";

}  // namespace

TEST(Cli, SimulateSucceeds) {
  TempDir tmp("ok");
  EXPECT_EQ(run_cli("simulate " + kSmall + " --out " + tmp.str("run")), 0);
  EXPECT_TRUE(fs::exists(tmp.path / "run" / "aggregate.json"));
  EXPECT_EQ(run_cli("plot-data --out " + tmp.str("run")), 0);
  EXPECT_TRUE(fs::exists(tmp.path / "run" / "plot" / "boxplot.csv"));
}

TEST(Cli, SimulateOtherExperiments) {
  TempDir tmp("kinds");
  EXPECT_EQ(run_cli("simulate --experiment rank3_psd " + kSmall + " --out " + tmp.str("r3")), 0);
  EXPECT_EQ(run_cli("simulate --experiment rectangular " + kSmall + " --out " + tmp.str("rect")), 0);
  EXPECT_EQ(run_cli("simulate --experiment verify " + kSmall + " --out " + tmp.str("v")), 1);
}

TEST(Cli, InvalidConfigurationExitsOne) {
  TempDir tmp("bad");
  EXPECT_EQ(run_cli("simulate --trials 0 --out " + tmp.str("a")), 1);
  EXPECT_EQ(run_cli("simulate --d x --out " + tmp.str("a")), 1);
  EXPECT_EQ(run_cli("simulate --d 4,8 --out " + tmp.str("a")), 1);
  EXPECT_EQ(run_cli("simulate --algos pgd,sgd --out " + tmp.str("a")), 1);
  EXPECT_EQ(run_cli("simulate --no-such-flag"), 1);
  EXPECT_EQ(run_cli(""), 1);
  EXPECT_EQ(run_cli("scaling --d 8 --out " + tmp.str("a")), 1);
  {
    std::ofstream out(tmp.path / "bad.json");
    out << R"({"dimension": 4})";
  }
  EXPECT_EQ(run_cli("simulate --config " + tmp.str("bad.json")), 1);
}

TEST(Cli, AllDivergedExitsTwo) {
  TempDir tmp("div");
  EXPECT_EQ(run_cli("simulate --d 4 --trials 2 --horizon 2000 --threads 1 --algos pgd --eta-scale 1e8 --out " +
                    tmp.str("run")),
            2);
  EXPECT_NE(slurp(tmp.path / "run" / "trials.csv").find("diverged"), std::string::npos);
}

TEST(Cli, IoErrorsExitThree) {
  TempDir tmp("io");
  {
    std::ofstream f(tmp.path / "file");
    f << "x";
  }
  EXPECT_EQ(run_cli("simulate " + kSmall + " --out " + tmp.str("file") + "/sub"), 3);
  EXPECT_EQ(run_cli("plot-data --out " + tmp.str("nothing_here")), 3);
  EXPECT_EQ(run_cli("simulate --config " + tmp.str("missing.json")), 3);
}

TEST(Cli, SeedPrecedence) {
  TempDir tmp("seed");
  ASSERT_EQ(run_cli("simulate " + kSmall + " --seed 11 --out " + tmp.str("flag")), 0);
  ASSERT_EQ(run_cli("simulate " + kSmall + " --out " + tmp.str("env"), "NOISEREG_SEED=11"), 0);
  ASSERT_EQ(run_cli("simulate " + kSmall + " --seed 11 --out " + tmp.str("both"), "NOISEREG_SEED=12"), 0);
  ASSERT_EQ(run_cli("simulate " + kSmall + " --out " + tmp.str("other"), "NOISEREG_SEED=12"), 0);
  const std::string flag = slurp(tmp.path / "flag" / "trials.csv");
  EXPECT_EQ(slurp(tmp.path / "env" / "trials.csv"), flag);
  EXPECT_EQ(slurp(tmp.path / "both" / "trials.csv"), flag);
  EXPECT_NE(slurp(tmp.path / "other" / "trials.csv"), flag);
}

TEST(Cli, ConfigFileIsOverriddenByFlags) {
  TempDir tmp("cfg");
  {
    std::ofstream out(tmp.path / "c.json");
    out << R"({"d": 5, "trials": 1, "horizon_t": 20, "threads": 1, "seed": 3})";
  }
  ASSERT_EQ(run_cli("simulate --config " + tmp.str("c.json") + " --trials 2 --out " + tmp.str("run")), 0);
  const auto agg = slurp(tmp.path / "run" / "aggregate.json");
  EXPECT_NE(agg.find("\"d\": 5"), std::string::npos);
  EXPECT_NE(agg.find("\"trials\": 2"), std::string::npos);
}
