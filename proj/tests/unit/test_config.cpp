#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "translk/config.hpp"

namespace translk {
namespace {

std::string error_of(const std::string& text) {
  try {
    parse_config_string(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

TEST(Config, EmptyGivesDefaults) {
  const Config c = parse_config_string("# nothing\n\n");
  EXPECT_EQ(c.model.base_channels, 48);
  EXPECT_EQ(c.model.stage_channels, (std::array<Index, 4>{96, 192, 384, 768}));
  EXPECT_EQ(c.model.heads, 3);
  EXPECT_EQ(c.model.mlp_variant, MlpVariant::ag_mlp);
  EXPECT_EQ(c.model.decoder_variant, DecoderVariant::ced);
  EXPECT_EQ(c.train.steps, 200);
}

TEST(Config, ParsesEveryKey) {
  const Config c = parse_config_string(R"(
model.in_channels = 4
model.num_classes = 3   # trailing comment
model.base_channels = 12
model.stage_channels = [24, 48, 96, 192]
model.heads = 2
model.mlp_variant = ffn
model.mlp_gate = dense
model.decoder_variant = plain_concat
model.schedule_variant = stem_expand
model.desa_axes = independent
model.dropout = 0.1
train.steps = 7
train.batch_size = 3
train.lr = 0.002
train.weight_decay = 0
train.grad_clip = 1.5
train.volume = 64
train.eval_batch = 1
seed = 42
)");
  EXPECT_EQ(c.model.in_channels, 4);
  EXPECT_EQ(c.model.num_classes, 3);
  EXPECT_EQ(c.model.stage_channels, (std::array<Index, 4>{24, 48, 96, 192}));
  EXPECT_EQ(c.model.heads, 2);
  EXPECT_EQ(c.model.mlp_variant, MlpVariant::ffn);
  EXPECT_EQ(c.model.mlp_gate, GateKind::dense);
  EXPECT_EQ(c.model.decoder_variant, DecoderVariant::plain_concat);
  EXPECT_EQ(c.model.schedule_variant, ScheduleVariant::stem_expand);
  EXPECT_EQ(c.model.desa_axes, DesaAxisMode::independent);
  EXPECT_DOUBLE_EQ(c.model.dropout, 0.1);
  EXPECT_EQ(c.train.steps, 7);
  EXPECT_EQ(c.train.batch_size, 3);
  EXPECT_DOUBLE_EQ(c.train.lr, 0.002);
  EXPECT_DOUBLE_EQ(c.train.grad_clip, 1.5);
  EXPECT_EQ(c.train.volume, 64);
  EXPECT_EQ(c.seed, 42u);
}

TEST(Config, ErrorsCarryLineNumbers) {
  EXPECT_NE(error_of("\nmodel.bogus = 1").find("line 2"), std::string::npos);
  EXPECT_NE(error_of("model.heads = 3\nmodel.heads = 3").find("duplicate"), std::string::npos);
  EXPECT_NE(error_of("model.heads 3").find("key = value"), std::string::npos);
  EXPECT_NE(error_of("model.heads = three").find("integer"), std::string::npos);
  EXPECT_NE(error_of("model.mlp_variant = gated").find("not one of"), std::string::npos);
  EXPECT_NE(error_of("model.stage_channels = [1, 2, 3]").find("exactly 4"), std::string::npos);
  EXPECT_NE(error_of("model.heads =").find("no value"), std::string::npos);
}

TEST(Config, Validation) {
  EXPECT_NE(error_of("model.heads = 5").find("divisible"), std::string::npos);
  EXPECT_NE(error_of("model.stage_channels = [96, 96, 384, 768]").find("increasing"), std::string::npos);
  EXPECT_NE(error_of("train.volume = 48").find("multiple of 32"), std::string::npos);
  EXPECT_NE(error_of("model.num_classes = 1").find("num_classes"), std::string::npos);
  EXPECT_NE(error_of("model.base_channels = 9\nmodel.heads = 3").find("even"), std::string::npos);
}

TEST(Config, SchedulesDifferOnlyInWidths) {
  ModelConfig m;
  EXPECT_EQ(m.stage_widths(), (std::array<Index, 4>{48, 96, 192, 384}));
  EXPECT_EQ(m.down_width(3), 768);
  m.schedule_variant = ScheduleVariant::stem_expand;
  EXPECT_EQ(m.stage_widths(), (std::array<Index, 4>{96, 192, 384, 768}));
  EXPECT_EQ(m.down_width(0), 192);
  EXPECT_EQ(m.down_width(3), 768);
}

TEST(Config, TextRoundTripAndHash) {
  Config c;
  c.model.num_classes = 3;
  c.model.mlp_gate = GateKind::dense;
  c.train.lr = 0.0025;
  c.seed = 9;
  const Config back = parse_config_string(to_text(c));
  EXPECT_EQ(to_text(back), to_text(c));
  EXPECT_EQ(config_hash(back), config_hash(c));
  Config d = c;
  d.seed = 10;
  EXPECT_NE(config_hash(d), config_hash(c));
}

TEST(Config, LoadFromFile) {
  const auto path = std::filesystem::temp_directory_path() / "translk_config_test.txt";
  std::ofstream(path) << "model.heads = 2\n";
  EXPECT_EQ(load_config(path).model.heads, 2);
  std::filesystem::remove(path);
  EXPECT_THROW(load_config(path), ConfigError);
}

}  // namespace
}  // namespace translk
