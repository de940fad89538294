#include <cstdlib>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "anyshot/errors.hpp"
#include "anyshot/experiment.hpp"
#include "test_util.hpp"

namespace anyshot {
namespace {

using testing::read_bytes;
using testing::TempDir;
using testing::write_bytes;

int run_cli(const std::string& args) {
  const std::string cmd = std::string(ANYSHOT_CLI) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string field(const std::string& tsv, const std::string& key) {
  std::istringstream in(tsv);
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind(key + "\t", 0) == 0) return line.substr(key.size() + 1);
  }
  return {};
}

TEST(KeyValueConfig, ParsesTypesAndComments) {
  const auto kv = KeyValueConfig::parse(
      "# comment\n a = hello  \nb=2.5\nc = 7 # trailing\nd = yes\ne = x, y ,z\nf = 0.1,0.2\n");
  EXPECT_EQ(kv.get_string("a", ""), "hello");
  EXPECT_DOUBLE_EQ(kv.get_double("b", 0), 2.5);
  EXPECT_EQ(kv.require_uint("c"), 7u);
  EXPECT_TRUE(kv.get_bool("d", false));
  EXPECT_EQ(kv.get_list("e", {}), (std::vector<std::string>{"x", "y", "z"}));
  EXPECT_EQ(kv.get_double_list("f", {}), (std::vector<double>{0.1, 0.2}));
  EXPECT_EQ(kv.get_uint("missing", 4), 4u);
  EXPECT_NO_THROW(kv.reject_unknown());
}

TEST(KeyValueConfig, Errors) {
  EXPECT_THROW(KeyValueConfig::parse("a = 1\na = 2\n"), ConfigError);
  EXPECT_THROW(KeyValueConfig::parse("just words\n"), ConfigError);
  EXPECT_THROW(KeyValueConfig::parse("a = x\n").get_double("a", 0), ConfigError);
  EXPECT_THROW(KeyValueConfig::parse("a = -1\n").get_uint("a", 0), ConfigError);
  EXPECT_THROW(KeyValueConfig::parse("a = maybe\n").get_bool("a", false), ConfigError);
  EXPECT_THROW(KeyValueConfig::parse("").require_uint("seed"), ConfigError);
  const auto kv = KeyValueConfig::parse("known = 1\ntypo = 2\n");
  kv.get_uint("known", 0);
  try {
    kv.reject_unknown();
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("typo"), std::string::npos);
  }
}

TEST(ExperimentConfig, SeedIsMandatoryAndUnknownKeysRejected) {
  EXPECT_THROW(ExperimentConfig::from(KeyValueConfig::parse("split.k = 1\n")), ConfigError);
  EXPECT_THROW(ExperimentConfig::from(KeyValueConfig::parse("seed = 1\ntrain.epoch = 3\n")), ConfigError);
  const auto cfg = ExperimentConfig::from(KeyValueConfig::parse("seed = 4\n"));
  EXPECT_EQ(cfg.seed, 4u);
  EXPECT_EQ(cfg.train.batch_size, 32u);
  EXPECT_EQ(cfg.train.epochs, 100u);
  EXPECT_DOUBLE_EQ(cfg.train.adam.learning_rate, 1e-4);
  EXPECT_DOUBLE_EQ(cfg.train.adam.beta1, 0.5);
  EXPECT_EQ(cfg.itq_bits, 64u);
}

TEST(ExperimentConfig, PathsResolveAgainstConfigDirectory) {
  TempDir dir;
  std::filesystem::create_directories(dir / "sub");
  write_bytes(dir / "sub" / "exp.conf",
              "seed = 1\ndata.sketches = s.spfx\ndata.images = /abs/i.spfx\nloss.lambda_l21 = 0.5\n");
  const auto kv = KeyValueConfig::load(dir / "sub" / "exp.conf");
  const auto cfg = ExperimentConfig::from(kv);
  EXPECT_EQ(cfg.sketches, dir / "sub" / "s.spfx");
  EXPECT_EQ(cfg.images, std::filesystem::path("/abs/i.spfx"));
  EXPECT_DOUBLE_EQ(cfg.weights.l21, 0.5);
  // Data files do not exist.
  EXPECT_THROW(ExperimentConfig::load(dir / "sub" / "exp.conf"), Error);
}

TEST(Ablation, SevenVariantsEndingWithFull) {
  const LossWeights full;
  const auto v = ablation_variants(full);
  ASSERT_EQ(v.size(), 7u);
  EXPECT_EQ(v.back().name, "full");
  EXPECT_EQ(v.front().name, "adversarial_only");
  EXPECT_DOUBLE_EQ(v.front().weights.cyc_sk, 0.0);
  EXPECT_DOUBLE_EQ(v.front().weights.cls_im, 0.0);
  EXPECT_GT(v.front().weights.adv_se, 0.0);
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    ASSERT_EQ(run_cli("synth --out " + data().string() + " --seed 3"), 0);
    std::ofstream conf(data() / "experiment.conf", std::ios::app);
    conf << "train.epochs = 2\nfinetune.steps = 3\neval.itq_bits = 16\ngradcheck.instances = 2\n";
  }
  std::filesystem::path data() const { return dir_.path() / "bench"; }
  std::string conf() const { return "--config " + (data() / "experiment.conf").string(); }

  TempDir dir_;
};

TEST_F(Cli, TrainEvaluateFinetuneAndGradcheck) {
  const auto out = dir_.path() / "run";
  const std::string o = " --out " + out.string();
  ASSERT_EQ(run_cli("build-sideinfo " + conf() + o), 0);
  EXPECT_TRUE(std::filesystem::exists(out / "side_info.spck"));
  ASSERT_EQ(run_cli("train " + conf() + o), 0);
  EXPECT_TRUE(std::filesystem::exists(out / "model.spck"));
  EXPECT_NE(read_bytes(out / "loss_trace.tsv").find("epoch"), std::string::npos);
  ASSERT_EQ(run_cli("evaluate --setting zero_shot " + conf() + o), 0);
  const std::string report = read_bytes(out / "eval" / "zero_shot" / "report.tsv");
  const std::string map = field(report, "map_at_all");
  ASSERT_FALSE(map.empty());
  EXPECT_GE(std::stod(map), 0.0);
  EXPECT_LE(std::stod(map), 1.0);
  ASSERT_EQ(run_cli("evaluate --setting zero_shot --binary " + conf() + o), 0);
  EXPECT_TRUE(std::filesystem::exists(out / "eval" / "zero_shot_binary" / "itq.spck"));
  ASSERT_EQ(run_cli("finetune --k 2 " + conf() + o), 0);
  ASSERT_EQ(run_cli("evaluate --setting few_shot --k 2 " + conf() + o), 0);
  EXPECT_FALSE(field(read_bytes(out / "eval" / "few_shot_k2" / "report.tsv"), "map_at_all").empty());
  EXPECT_NE(run_cli("evaluate --setting few_shot " + conf() + o), 0);
  ASSERT_EQ(run_cli("gradcheck " + conf() + o), 0);
  EXPECT_NE(read_bytes(out / "gradcheck.tsv").find("generator_step"), std::string::npos);
}

TEST_F(Cli, RepeatedRunsAreByteIdentical) {
  const auto a = dir_.path() / "a";
  const auto b = dir_.path() / "b";
  for (const auto& out : {a, b}) {
    ASSERT_EQ(run_cli("train " + conf() + " --out " + out.string()), 0);
    ASSERT_EQ(run_cli("evaluate " + conf() + " --out " + out.string()), 0);
  }
  for (const char* f : {"model.spck", "loss_trace.tsv", "manifest.txt", "eval/zero_shot/report.tsv",
                        "eval/generalized_zero_shot/per_query_ap.tsv"}) {
    EXPECT_EQ(read_bytes(a / f), read_bytes(b / f)) << f;
    EXPECT_FALSE(read_bytes(a / f).empty()) << f;
  }
}

TEST_F(Cli, BadInvocationsFail) {
  EXPECT_NE(run_cli("frobnicate " + conf()), 0);
  EXPECT_NE(run_cli("train"), 0);
  EXPECT_NE(run_cli("train --config " + (dir_.path() / "missing.conf").string()), 0);
  write_bytes(dir_.path() / "bad.conf", "seed = 1\nbogus.key = 2\n");
  EXPECT_NE(run_cli("train --config " + (dir_.path() / "bad.conf").string()), 0);
}

}  // namespace
}  // namespace anyshot
