#include <gtest/gtest.h>

#include <numeric>
#include <sstream>

#include "checks.hpp"
#include "translk/cost.hpp"
#include "translk/network.hpp"

namespace translk {
namespace {

ModelConfig narrow() {
  ModelConfig m;
  m.num_classes = 3;
  m.base_channels = 6;
  m.stage_channels = {6, 12, 24, 48};
  return m;
}

std::uint64_t traced_flops(const ModelConfig& cfg, Index d, Index h, Index w) {
  const auto net = build_network(cfg);
  ParamStore<float> store(net->layout, 0);
  Tape<float> tape(true);
  Ctx<float> ctx{tape, store, nullptr};
  const auto x = Var<float>::constant(testing::random_tensor<float>(Shape(1, cfg.in_channels, d, h, w), 1));
  forward(ctx, *net, x);
  return tape.flops();
}

struct Variant {
  const char* name;
  ModelConfig cfg;
};

void PrintTo(const Variant& v, std::ostream* os) { *os << v.name; }

std::vector<Variant> variants() {
  std::vector<Variant> v;
  v.push_back({"narrow", narrow()});
  ModelConfig m = narrow();
  m.mlp_variant = MlpVariant::ffn;
  v.push_back({"ffn", m});
  m = narrow();
  m.mlp_variant = MlpVariant::mlp;
  v.push_back({"mlp", m});
  m = narrow();
  m.decoder_variant = DecoderVariant::plain_concat;
  v.push_back({"plain_concat", m});
  m = narrow();
  m.schedule_variant = ScheduleVariant::stem_expand;
  v.push_back({"stem_expand", m});
  m = narrow();
  m.desa_axes = DesaAxisMode::independent;
  m.heads = 2;
  v.push_back({"independent_heads2", m});
  m = narrow();
  m.in_channels = 2;
  m.mlp_gate = GateKind::dense;
  v.push_back({"dense_gate_two_inputs", m});
  return v;
}

class CostVariants : public ::testing::TestWithParam<Variant> {};

TEST_P(CostVariants, ParamsMatchLayout) {
  const auto& cfg = GetParam().cfg;
  EXPECT_EQ(count_params(cfg).total_params, build_network(cfg)->layout.total());
}

TEST_P(CostVariants, FlopsMatchTape) {
  const auto& cfg = GetParam().cfg;
  EXPECT_EQ(count_flops(cfg, 32, 32, 64).total_flops, traced_flops(cfg, 32, 32, 64));
}

TEST_P(CostVariants, TotalsAreSumsOfEntries) {
  const auto r = count_flops(GetParam().cfg, 32, 32, 32);
  ASSERT_EQ(r.entries.size(), 11u);
  Index p = 0;
  std::uint64_t f = 0;
  for (const auto& e : r.entries) {
    p += e.params;
    f += e.flops;
  }
  EXPECT_EQ(p, r.total_params);
  EXPECT_EQ(f, r.total_flops);
  EXPECT_EQ(r.entries.front().module, "stem");
  EXPECT_EQ(r.entries.back().module, "head");
}

INSTANTIATE_TEST_SUITE_P(All, CostVariants, ::testing::ValuesIn(variants()),
                         [](const auto& info) { return std::string(info.param.name); });

TEST(Cost, DefaultWidthFlopsMatchTape) {
  ModelConfig m;
  m.num_classes = 3;
  EXPECT_EQ(count_flops(m, 32, 32, 32).total_flops, traced_flops(m, 32, 32, 32));
}

TEST(Cost, HeadOrdering) {
  ModelConfig m;
  Index last_p = 0;
  std::uint64_t last_f = 0;
  for (Index n : {2, 3, 4}) {
    m.heads = n;
    const auto r = count_flops(m, 96, 96, 96);
    EXPECT_GT(r.total_params, last_p) << n;
    EXPECT_GT(r.total_flops, last_f) << n;
    last_p = r.total_params;
    last_f = r.total_flops;
  }
}

TEST(Cost, MlpOrdering) {
  ModelConfig m;
  m.mlp_variant = MlpVariant::ffn;
  const Index ffn = count_params(m).total_params;
  m.mlp_variant = MlpVariant::mlp;
  const Index mlp = count_params(m).total_params;
  m.mlp_variant = MlpVariant::ag_mlp;
  const Index ag = count_params(m).total_params;
  EXPECT_LT(ffn, mlp);
  EXPECT_LT(mlp, ag);
}

TEST(Cost, StemExpandIsLarger) {
  ModelConfig m;
  const Index a = count_params(m).total_params;
  m.schedule_variant = ScheduleVariant::stem_expand;
  EXPECT_GT(count_params(m).total_params, a);
}

TEST(Cost, FlopsLinearInVolumeExceptAttention) {
  const ModelConfig m = narrow();
  const auto base = count_flops(m, 32, 32, 32);
  const auto twice = count_flops(m, 32, 32, 64);
  EXPECT_GT(twice.total_flops, 2 * base.total_flops);
  EXPECT_LT(twice.total_flops, 3 * base.total_flops);
  EXPECT_EQ(twice.total_params, base.total_params);
}

TEST(Cost, InvalidShape) {
  EXPECT_THROW(count_flops(narrow(), 32, 48, 32), ShapeError);
  EXPECT_THROW(count_flops(narrow(), 0, 32, 32), ShapeError);
}

TEST(DesaRatio, CubeOfTwelve) {
  EXPECT_NEAR(desa_vs_full_ratio(Shape(1, 6, 12, 12, 12), 3), 12.0 * 12 * 12 / 36, 1e-9);
}

TEST(DesaRatio, SingletonAxes) {
  for (Index L : {2, 5, 16}) {
    const double want = static_cast<double>(L) / static_cast<double>(L + 2);
    EXPECT_NEAR(desa_vs_full_ratio(Shape(1, 6, 1, 1, L), 3), want, 1e-9) << L;
  }
}

TEST(DesaRatio, ReportedAtStageOne) {
  const auto r = count_flops(ModelConfig{}, 96, 96, 96);
  EXPECT_NEAR(r.desa_ratio, 48.0 * 48 * 48 / 144, 1e-9);
}

TEST(CostReport, PrintsEveryModule) {
  std::ostringstream os;
  const auto r = count_flops(narrow(), 32, 32, 32);
  print_cost_report(os, r);
  for (const auto& e : r.entries) EXPECT_NE(os.str().find(e.module), std::string::npos);
}

}  // namespace
}  // namespace translk
