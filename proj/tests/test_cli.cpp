#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;

namespace {

const fs::path& workdir() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "mtabnet_cli_test";
    fs::remove_all(d);
    fs::create_directories(d);
    std::ofstream(d / "small.json") << R"({"encoder": {"n_steps": 2, "d_f": 8}, "train": {"max_epochs": 2}, "folds": 2})";
    return d;
  }();
  return dir;
}

int run(const std::string& args) {
  const std::string cmd = "NO_COLOR=1 " + std::string(MTABNET_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string dir(const std::string& name) { return (workdir() / name).string(); }

/// Output digests from a manifest, which excludes wall-clock fields.
nlohmann::json outputs(const std::string& out) {
  return nlohmann::json::parse(slurp(fs::path(out) / "manifest.json")).at("outputs");
}

void generate_once() {
  static const bool done = [] {
    return run("--seed 3 --out " + dir("gen") + " generate --profile reus --n 60") == 0;
  }();
  ASSERT_TRUE(done);
}

std::string data_args() { return "--data " + dir("gen") + "/cohort.csv --schema " + dir("gen") + "/schema.json"; }

}  // namespace

TEST(Cli, GenerateIsDeterministic) {
  generate_once();
  ASSERT_EQ(run("--seed 3 --out " + dir("gen2") + " generate --profile reus --n 60"), 0);
  EXPECT_EQ(slurp(dir("gen") + "/cohort.csv"), slurp(dir("gen2") + "/cohort.csv"));
  EXPECT_EQ(outputs(dir("gen")), outputs(dir("gen2")));
  const std::string csv = slurp(dir("gen") + "/cohort.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')).find("birth_weight") != std::string::npos, true);
}

TEST(Cli, TrainEvaluateExplain) {
  generate_once();
  const std::string cfg = "--config " + dir("small.json");
  ASSERT_EQ(run(cfg + " --seed 1 --out " + dir("train") + " train " + data_args()), 0);
  ASSERT_EQ(run(cfg + " --seed 1 --threads 2 --out " + dir("train2") + " train " + data_args()), 0);
  EXPECT_EQ(outputs(dir("train")), outputs(dir("train2")));
  EXPECT_TRUE(fs::exists(dir("train") + "/model.ckpt"));
  EXPECT_TRUE(fs::exists(dir("train") + "/fold_1.ckpt"));

  ASSERT_EQ(run("--out " + dir("eval") + " evaluate --checkpoint " + dir("train") + "/model.ckpt " + data_args()), 0);
  const auto metrics = nlohmann::json::parse(slurp(dir("eval") + "/metrics.json"));
  EXPECT_TRUE(metrics.contains("mae"));

  ASSERT_EQ(run("--out " + dir("explain") + " explain --checkpoint " + dir("train") +
                "/model.ckpt --permutations 4 --samples 3 " + data_args()),
            0);
  for (const char* f : {"importance.csv", "sensitivity.csv", "shap.csv"}) EXPECT_TRUE(fs::exists(dir("explain") + "/" + f));

  EXPECT_EQ(run(cfg + " --out " + dir("abl") + " train --ablate no-attention --no-final " + data_args()), 0);
  EXPECT_EQ(run(cfg + " --out " + dir("abl2") + " train --ablate nonsense " + data_args()), 2);
}

TEST(Cli, ExitCodes) {
  generate_once();
  EXPECT_EQ(run("--out " + dir("x") + " generate --n 0"), 2);
  EXPECT_EQ(run("--out " + dir("x") + " bogus"), 2);
  EXPECT_EQ(run("--out " + dir("x") + " train --data " + dir("nope.csv") + " --schema " + dir("gen") + "/schema.json"), 5);
  std::ofstream(workdir() / "bad.json") << "{\"train\": {\"max_epochs\": 0}}";
  EXPECT_EQ(run("--config " + dir("bad.json") + " --out " + dir("x") + " train " + data_args()), 6);
  std::ofstream(workdir() / "broken.csv") << "maternal_age\nabc\n";
  EXPECT_EQ(run("--out " + dir("x") + " train --data " + dir("broken.csv") + " --schema " + dir("gen") + "/schema.json"), 3);
  std::ofstream(workdir() / "junk.ckpt") << "MTBN\x01\x00\x00\x00garbage";
  EXPECT_EQ(run("--out " + dir("x") + " evaluate --checkpoint " + dir("junk.ckpt") + " " + data_args()), 7);
}
