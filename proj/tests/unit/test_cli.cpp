#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "checks.hpp"
#include "translk/cli.hpp"
#include "translk/io.hpp"

namespace translk {
namespace {

namespace fs = std::filesystem;

struct CliResult {
  int code;
  std::string out, err;
};

CliResult run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

class CliDir : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("translk_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    Config c;
    c.model.num_classes = 3;
    c.model.base_channels = 6;
    c.model.stage_channels = {6, 12, 24, 48};
    c.train.steps = 1;
    c.train.batch_size = 1;
    c.train.eval_batch = 1;
    std::ofstream(dir_ / "tiny.cfg") << to_text(c);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string path(const char* name) const { return (dir_ / name).string(); }

  fs::path dir_;
};

TEST(Cli, DescribeDefaults) {
  const auto r = run({"describe"});
  EXPECT_EQ(r.code, cli::kExitOk);
  EXPECT_NE(r.out.find("bottleneck"), std::string::npos);
}

TEST(Cli, FlopsRejectsBadShape) {
  EXPECT_EQ(run({"flops", "--shape", "50x64x64"}).code, cli::kExitUsage);
  EXPECT_EQ(run({"flops", "--shape", "64x64"}).code, cli::kExitUsage);
  EXPECT_EQ(run({"flops", "--shape", "32x32x64"}).code, cli::kExitOk);
}

TEST(Cli, UsageErrors) {
  EXPECT_EQ(run({}).code, cli::kExitUsage);
  EXPECT_EQ(run({"frobnicate"}).code, cli::kExitUsage);
  EXPECT_EQ(run({"describe", "--bogus"}).code, cli::kExitUsage);
  EXPECT_EQ(run({"ablate", "nothing"}).code, cli::kExitUsage);
  EXPECT_EQ(run({"train", "/nonexistent.cfg", "--out", "x"}).code, cli::kExitUsage);
}

TEST(Cli, GradcheckFilter) {
  const auto r = run({"gradcheck", "--filter", "ops.gelu"});
  EXPECT_EQ(r.code, cli::kExitOk) << r.out << r.err;
  EXPECT_EQ(run({"gradcheck", "--filter", "no-such-check"}).code, cli::kExitFailure);
}

TEST(Cli, AblateHeadsCsv) {
  const auto r = run({"ablate", "heads", "--shape", "32x32x32"});
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  std::istringstream is(r.out);
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "variant,params,flops,dsc");
  std::vector<std::string> labels;
  std::vector<long long> params;
  while (std::getline(is, line)) {
    std::istringstream row(line);
    std::string label, p;
    std::getline(row, label, ',');
    std::getline(row, p, ',');
    labels.push_back(label);
    params.push_back(std::stoll(p));
    EXPECT_EQ(line.back(), ',') << "untrained rows leave dsc empty";
  }
  EXPECT_EQ(labels, (std::vector<std::string>{"heads=2", "heads=3", "heads=4"}));
  ASSERT_EQ(params.size(), 3u);
  EXPECT_LT(params[0], params[1]);
  EXPECT_LT(params[1], params[2]);
}

TEST(Cli, ParseShape) {
  EXPECT_EQ(cli::parse_shape("32x64x96"), (std::array<Index, 3>{32, 64, 96}));
  EXPECT_THROW(cli::parse_shape("32x64"), std::invalid_argument);
  EXPECT_THROW(cli::parse_shape("axbxc"), std::invalid_argument);
}

TEST(Cli, AblationVariants) {
  const Config base;
  const auto mlp = cli::ablation_variants(cli::AblationKind::mlp, base);
  ASSERT_EQ(mlp.size(), 3u);
  EXPECT_EQ(mlp[0].second.model.mlp_variant, MlpVariant::ffn);
  EXPECT_EQ(mlp[2].second.model.mlp_variant, MlpVariant::ag_mlp);
  const auto dec = cli::ablation_variants(cli::AblationKind::decoder, base);
  ASSERT_EQ(dec.size(), 2u);
  EXPECT_EQ(dec[0].second.model.decoder_variant, DecoderVariant::ced);
  EXPECT_EQ(dec[1].second.model.decoder_variant, DecoderVariant::plain_concat);
}

TEST_F(CliDir, TrainThenInfer) {
  const auto t = run({"train", path("tiny.cfg"), "--out", path("run")});
  ASSERT_EQ(t.code, cli::kExitOk) << t.err;
  EXPECT_TRUE(fs::exists(dir_ / "run" / "report.csv"));
  EXPECT_TRUE(fs::exists(dir_ / "run" / "config.txt"));
  ASSERT_TRUE(fs::exists(dir_ / "run" / "model.ckpt"));

  save_tlk1(dir_ / "in.tlk", testing::random_tensor<float>(Shape(1, 1, 32, 32, 32), 4, 0, 1));
  const auto i = run({"infer", path("tiny.cfg"), "--ckpt", path("run/model.ckpt"), "--in", path("in.tlk"),
                      "--out", path("labels.tlk")});
  ASSERT_EQ(i.code, cli::kExitOk) << i.err;
  const auto labels = load_tlk1(dir_ / "labels.tlk");
  EXPECT_EQ(labels.shape(), Shape(1, 1, 32, 32, 32));
  for (float v : labels.data()) {
    ASSERT_TRUE(v == 0.0f || v == 1.0f || v == 2.0f);
  }
}

TEST_F(CliDir, InferRejectsGarbageCheckpoint) {
  std::ofstream(dir_ / "bad.ckpt") << "not a checkpoint";
  save_tlk1(dir_ / "in.tlk", Tensor<float>(Shape(1, 1, 32, 32, 32)));
  const auto r = run({"infer", path("tiny.cfg"), "--ckpt", path("bad.ckpt"), "--in", path("in.tlk"), "--out",
                      path("o.tlk")});
  EXPECT_EQ(r.code, cli::kExitFailure);
  EXPECT_EQ(r.err.rfind("error: ", 0), 0u);
}

TEST_F(CliDir, AblateDecoderTrains) {
  const auto r = run({"ablate", "decoder", path("tiny.cfg"), "--shape", "32x32x32", "--csv", path("dec.csv")});
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  std::ifstream is(dir_ / "dec.csv");
  std::string header, a, b, extra;
  std::getline(is, header);
  std::getline(is, a);
  std::getline(is, b);
  EXPECT_FALSE(std::getline(is, extra));
  EXPECT_EQ(a.rfind("ced,", 0), 0u);
  EXPECT_EQ(b.rfind("plain_concat,", 0), 0u);
  EXPECT_NE(a.back(), ',');
}

}  // namespace
}  // namespace translk
