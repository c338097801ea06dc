#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "checks.hpp"
#include "oracles.hpp"
#include "translk/network.hpp"

namespace translk {
namespace {

using testing::random_tensor;
using D = Tensor<double>;
using F = Tensor<float>;

Var<float> fcst(const F& t) { return Var<float>::constant(t); }
Var<double> cst(const D& t) { return Var<double>::constant(t); }

ModelConfig narrow(Index classes = 3) {
  ModelConfig cfg;
  cfg.num_classes = classes;
  cfg.base_channels = 6;
  cfg.stage_channels = {6, 12, 24, 48};
  return cfg;
}

struct NetRun {
  std::unique_ptr<Network> net;
  ParamStore<float> store;
  Tape<float> tape{false};
  Ctx<float> ctx{tape, store, nullptr};

  explicit NetRun(const ModelConfig& cfg, std::uint64_t seed = 1)
      : net(build_network(cfg)), store(net->layout, seed) {}
};

TEST(Stem, DefaultScheduleKeepsBaseWidth) {
  NetRun r(ModelConfig{});
  EXPECT_EQ(stem_encode(r.ctx, *r.net, fcst(F(Shape(1, 1, 64, 64, 64)))).shape(), Shape(1, 48, 32, 32, 32));
}

TEST(Stem, StemExpandScheduleWidensToStageZero) {
  ModelConfig cfg;
  cfg.schedule_variant = ScheduleVariant::stem_expand;
  cfg.in_channels = 4;
  NetRun r(cfg);
  EXPECT_EQ(stem_encode(r.ctx, *r.net, fcst(F(Shape(1, 4, 64, 64, 64)))).shape(), Shape(1, 96, 32, 32, 32));
}

TEST(Stem, RejectsIndivisibleInput) {
  NetRun r(narrow());
  EXPECT_THROW(stem_encode(r.ctx, *r.net, fcst(F(Shape(1, 1, 50, 50, 50)))), ShapeError);
}

TEST(Encoder, StemExpandScheduleArithmetic) {
  ModelConfig cfg;
  cfg.schedule_variant = ScheduleVariant::stem_expand;
  NetRun r(cfg);
  const auto enc = encoder_forward(r.ctx, *r.net, stem_encode(r.ctx, *r.net, fcst(F(Shape(1, 1, 32, 32, 32)))));
  const Index widths[] = {96, 192, 384, 768};
  for (std::size_t i = 0; i < 4; ++i) {
    const Index e = 16 >> i;
    EXPECT_EQ(enc.skips[i].shape(), Shape(1, widths[i], e, e, e)) << i;
  }
  EXPECT_EQ(enc.bottom.shape(), Shape(1, 768, 1, 1, 1));
}

TEST(Encoder, DefaultScheduleArithmetic) {
  ModelConfig cfg;
  EXPECT_EQ(cfg.stage_widths(), (std::array<Index, 4>{48, 96, 192, 384}));
  NetRun r(cfg);
  const auto enc = encoder_forward(r.ctx, *r.net, stem_encode(r.ctx, *r.net, fcst(F(Shape(1, 1, 32, 32, 32)))));
  for (std::size_t i = 0; i < 4; ++i) {
    const Index e = 16 >> i;
    EXPECT_EQ(enc.skips[i].shape(), Shape(1, cfg.stage_widths()[i], e, e, e)) << i;
  }
  EXPECT_EQ(enc.bottom.shape(), Shape(1, 768, 1, 1, 1));
}

TEST(Encoder, Deterministic) {
  const F img = random_tensor<float>(Shape(1, 1, 32, 32, 32), 2);
  NetRun a(narrow()), b(narrow());
  const auto ea = encoder_forward(a.ctx, *a.net, stem_encode(a.ctx, *a.net, fcst(img)));
  const auto eb = encoder_forward(b.ctx, *b.net, stem_encode(b.ctx, *b.net, fcst(img)));
  for (std::size_t i = 0; i < 4; ++i) {
    const auto sa = ea.skips[i].value().data(), sb = eb.skips[i].value().data();
    EXPECT_TRUE(std::equal(sa.begin(), sa.end(), sb.begin())) << i;
  }
}

TEST(Bottleneck, ZeroProjectionIdentity) {
  NetRun r(narrow());
  testing::zero_params(r.store, {"bottleneck.block0.ctlk.mhlk.head", "bottleneck.block0.ctlk.desa.out.",
                                 "bottleneck.block1.ptlk.desa.out.", ".mlp.down."});
  const F x = random_tensor<float>(Shape(1, 48, 2, 2, 2), 3);
  const auto y = bottleneck(r.ctx, *r.net, fcst(x));
  const auto yd = y.value().data(), xd = x.data();
  EXPECT_TRUE(std::equal(yd.begin(), yd.end(), xd.begin()));
}

TEST(CrossGroup, Errors) {
  Tape<double> t(false);
  EXPECT_THROW(cross_group(t, cst(D(Shape(1, 5, 1, 1, 1))), cst(D(Shape(1, 5, 1, 1, 1)))), ShapeError);
  EXPECT_THROW(cross_group(t, cst(D(Shape(1, 4, 1, 1, 1))), cst(D(Shape(1, 4, 1, 1, 2)))), ShapeError);
}

struct Fusion : ::testing::Test {
  ParamLayout layout;
  BlockOptions opts;
  CedParams ced_p{make_mixer(layout, "pfi", 6, MixerKind::ptlk, opts),
                  make_mixer(layout, "cfi", 6, MixerKind::ctlk, opts),
                  make_block(layout, "path1", 6, MixerKind::ctlk, opts),
                  make_block(layout, "path2", 6, MixerKind::ptlk, opts)};
  ParamStore<double> store{layout, 1};
  Tape<double> tape{false};
  Ctx<double> ctx{tape, store, nullptr};
  const Shape s{1, 6, 2, 3, 2};

  void SetUp() override { testing::randomize(store, 4); }
};

TEST_F(Fusion, ZeroInputsZeroOutputWithoutBiases) {
  testing::zero_params(store, {".bias"});
  const auto y = pfi(ctx, cst(D(s)), cst(D(s)), ced_p.pfi);
  for (double v : y.value().data()) EXPECT_EQ(v, 0.0);
  const auto y2 = cfi(ctx, cst(D(s)), cst(D(s)), ced_p.cfi);
  for (double v : y2.value().data()) EXPECT_EQ(v, 0.0);
}

TEST_F(Fusion, CedZeroInputsFinite) {
  const auto y = ced(ctx, cst(D(s)), cst(D(s)), ced_p);
  EXPECT_EQ(y.shape(), s);
  for (double v : y.value().data()) EXPECT_TRUE(std::isfinite(v));
}

TEST_F(Fusion, CedPathIsolation) {
  testing::zero_params(store, {"pfi.desa.out.", "path1.ctlk.mhlk.head", "path1.ctlk.desa.out.", "path1.mlp.down."});
  const D skip = random_tensor<double>(s, 5), up = random_tensor<double>(s, 6);
  const D want = transformer_block(ctx, cfi(ctx, cst(skip), cst(up), ced_p.cfi), ced_p.path2).value();
  EXPECT_EQ(oracle::max_abs_diff(ced(ctx, cst(skip), cst(up), ced_p).value(), want), 0.0);
}

TEST(Decoder, VariantsAgreeOnShape) {
  const F img = random_tensor<float>(Shape(1, 1, 32, 32, 32), 7);
  ModelConfig plain = narrow();
  plain.decoder_variant = DecoderVariant::plain_concat;
  NetRun a(narrow()), b(plain);
  const auto ya = forward(a.ctx, *a.net, fcst(img));
  const auto yb = forward(b.ctx, *b.net, fcst(img));
  EXPECT_EQ(ya.shape(), yb.shape());
  EXPECT_FALSE(b.net->layout.find("dec0.ced.pfi.desa.q.weight").has_value());
  EXPECT_TRUE(b.net->layout.find("dec0.fuse.weight").has_value());
}

TEST(Decoder, MismatchNamesStage) {
  NetRun r(narrow());
  SkipSet<float> skips;
  for (std::size_t i = 0; i < 4; ++i) {
    const Index e = 16 >> i;
    skips[i] = fcst(F(Shape(1, r.net->cfg.stage_widths()[i], e, e, e)));
  }
  skips[2] = fcst(F(Shape(1, 24, 3, 3, 3)));
  try {
    decoder_forward(r.ctx, *r.net, fcst(F(Shape(1, 48, 1, 1, 1))), skips);
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("stage 3"), std::string::npos) << e.what();
  }
}

TEST(Head, ShapeAndFinite) {
  ModelConfig cfg;
  cfg.num_classes = 15;
  NetRun r(cfg);
  const auto y = predict_head(r.ctx, *r.net, fcst(random_tensor<float>(Shape(1, 48, 8, 8, 8), 8)));
  EXPECT_EQ(y.shape(), Shape(1, 15, 16, 16, 16));
  for (float v : y.value().data()) EXPECT_TRUE(std::isfinite(v));
}

TEST(Forward, DefaultWidthContractAndDeterminism) {
  ModelConfig cfg;
  cfg.num_classes = 3;
  const F img = random_tensor<float>(Shape(1, 1, 32, 32, 32), 9);
  NetRun a(cfg), b(cfg);
  const auto ya = forward(a.ctx, *a.net, fcst(img));
  const auto yb = forward(b.ctx, *b.net, fcst(img));
  EXPECT_EQ(ya.shape(), Shape(1, 3, 32, 32, 32));
  const auto da = ya.value().data(), db = yb.value().data();
  EXPECT_TRUE(std::equal(da.begin(), da.end(), db.begin()));
}

TEST(Forward, InputChannelsChecked) {
  NetRun r(narrow());
  EXPECT_THROW(forward(r.ctx, *r.net, fcst(F(Shape(1, 2, 32, 32, 32)))), ShapeError);
}

TEST(Checkpoint, RoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "translk_ckpt_test.bin";
  NetRun a(narrow(), 11), b(narrow(), 12);
  save_checkpoint(path, a.store);
  load_checkpoint(path, b.store);
  for (ParamId i = 0; i < a.store.size(); ++i) {
    const auto va = a.store.value(i).data(), vb = b.store.value(i).data();
    ASSERT_TRUE(std::equal(va.begin(), va.end(), vb.begin())) << a.store.name(i);
  }
  ModelConfig other = narrow(4);
  NetRun c(other);
  EXPECT_THROW(load_checkpoint(path, c.store), std::exception);
  std::filesystem::remove(path);
}

TEST(Checkpoint, RejectsGarbage) {
  const auto path = std::filesystem::temp_directory_path() / "translk_ckpt_garbage.bin";
  std::ofstream(path) << "not a checkpoint\n";
  NetRun r(narrow());
  EXPECT_THROW(load_checkpoint(path, r.store), std::exception);
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace translk
