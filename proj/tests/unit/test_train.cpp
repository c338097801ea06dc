#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "checks.hpp"
#include "translk/train.hpp"

namespace translk {
namespace {

using testing::random_tensor;
using D = Tensor<double>;

double loss_of(const D& logits, const LabelVolume& labels) {
  Tape<double> t(false);
  return dice_ce_loss(t, Var<double>::constant(logits), labels).value()[0];
}

// Voxel-by-voxel CE plus 1 - mean soft Dice over classes.
double loss_oracle(const D& z, const LabelVolume& y, double eps = 1e-5) {
  const Shape& s = z.shape();
  const Index K = s.c(), S = s.spatial();
  std::vector<double> inter(K), psum(K), gsum(K);
  double ce = 0;
  for (Index n = 0; n < s.n(); ++n)
    for (Index v = 0; v < S; ++v) {
      double zs = 0;
      for (Index k = 0; k < K; ++k) zs += std::exp(z.plane(n, k)[v]);
      const auto lab = y.data[n * S + v];
      for (Index k = 0; k < K; ++k) {
        const double p = std::exp(z.plane(n, k)[v]) / zs;
        psum[k] += p;
        if (k == lab) {
          inter[k] += p;
          gsum[k] += 1;
          ce -= std::log(p);
        }
      }
    }
  double dice = 0;
  for (Index k = 0; k < K; ++k) dice += (2 * inter[k] + eps) / (psum[k] + gsum[k] + eps);
  return ce / static_cast<double>(s.n() * S) + 1 - dice / static_cast<double>(K);
}

LabelVolume random_labels(const Shape& s, Index K, std::uint64_t seed) {
  LabelVolume l(s);
  std::mt19937_64 rng(seed);
  for (auto& v : l.data) v = static_cast<std::int32_t>(rng() % static_cast<std::uint64_t>(K));
  return l;
}

TEST(Loss, PerfectPredictionNearZero) {
  const LabelVolume y = random_labels(Shape(2, 1, 2, 3, 2), 3, 1);
  D z(Shape(2, 3, 2, 3, 2));
  for (Index n = 0; n < 2; ++n)
    for (Index v = 0; v < 12; ++v) z.plane(n, y.data[n * 12 + v])[v] = 40.0;
  EXPECT_LT(loss_of(z, y), 0.01);
}

TEST(Loss, UniformTwoClassCrossEntropy) {
  const LabelVolume y = random_labels(Shape(1, 1, 2, 2, 4), 2, 2);
  const D z(Shape(1, 2, 2, 2, 4));
  Index ones = 0;
  for (auto v : y.data) ones += v;
  const double zeros = 16.0 - static_cast<double>(ones);
  const double dice = ((2 * 0.5 * zeros + 1e-5) / (8 + zeros + 1e-5) +
                       (2 * 0.5 * static_cast<double>(ones) + 1e-5) / (8 + static_cast<double>(ones) + 1e-5)) /
                      2;
  EXPECT_NEAR(loss_of(z, y) - (1 - dice), std::numbers::ln2, 1e-12);
}

TEST(Loss, MatchesLoopOracle) {
  const Shape s(2, 4, 3, 2, 3);
  const D z = random_tensor<double>(s, 3, -4, 4);
  const LabelVolume y = random_labels(Shape(2, 1, 3, 2, 3), 4, 4);
  EXPECT_NEAR(loss_of(z, y), loss_oracle(z, y), 1e-6);
}

TEST(Loss, GradientMatchesFiniteDifferences) {
  const LabelVolume y = random_labels(Shape(1, 1, 2, 2, 2), 3, 5);
  const auto r = grad_check([&y](auto& t, auto in) { return dice_ce_loss(t, in[0], y); },
                            {random_tensor<double>(Shape(1, 3, 2, 2, 2), 6)});
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(Loss, LabelOutOfRange) {
  LabelVolume y(Shape(1, 1, 1, 1, 2));
  y.data[1] = 3;
  EXPECT_THROW(loss_of(D(Shape(1, 3, 1, 1, 2)), y), std::out_of_range);
}

LabelVolume labels_from(std::vector<std::int32_t> v) {
  LabelVolume l(Shape(1, 1, 1, 1, static_cast<Index>(v.size())));
  l.data = std::move(v);
  return l;
}

TEST(Dsc, Cases) {
  const auto a = labels_from({1, 1, 0, 0, 1, 1, 0, 0});
  EXPECT_EQ(dsc(a, a, 1), 1.0);
  EXPECT_EQ(dsc(a, labels_from({0, 0, 1, 1, 0, 0, 1, 1}), 1), 0.0);
  EXPECT_EQ(dsc(a, labels_from({1, 1, 1, 1, 0, 0, 0, 0}), 1), 0.5);
  EXPECT_EQ(dsc(a, a, 2), 1.0);
}

TEST(Argmax, PicksLargestLogit) {
  D z(Shape(1, 3, 1, 1, 2));
  z.at(0, 2, 0, 0, 0) = 1.0;
  z.at(0, 1, 0, 0, 1) = 0.5;
  const auto l = argmax_labels(z);
  EXPECT_EQ(l.data, (std::vector<std::int32_t>{2, 1}));
}

TEST(Synthetic, DeterministicPerIndex) {
  const auto a = make_batch(7, 3, 2, 32, 1, 3);
  const auto b = make_batch(7, 3, 2, 32, 1, 3);
  EXPECT_EQ(a.labels.data, b.labels.data);
  EXPECT_TRUE(std::equal(a.images.data().begin(), a.images.data().end(), b.images.data().begin()));
  const auto c = make_batch(7, 4, 1, 32, 1, 3);
  const auto second = gen_synthetic(7, 4, 32, 1, 3);
  EXPECT_EQ(c.labels.data, second.labels.data);
  EXPECT_NE(gen_synthetic(7, 3, 32, 1, 3).labels.data, second.labels.data);
}

TEST(Synthetic, EveryClassAboveOnePercent) {
  for (std::uint64_t i = 0; i < 6; ++i) {
    const auto v = gen_synthetic(11, i, 32, 1, 4);
    std::vector<Index> counts(4, 0);
    for (auto l : v.labels.data) ++counts[l];
    for (Index c = 1; c < 4; ++c) EXPECT_GE(counts[c] * 100, 32 * 32 * 32) << "volume " << i;
  }
}

TEST(Synthetic, VoxelCountOracle) {
  const Index N = 32;
  const auto v = gen_synthetic(5, 0, N, 2, 3);
  ASSERT_EQ(v.ellipsoids.size(), 2u);
  LabelVolume painted(Shape(1, 1, N, N, N));
  for (const auto& e : v.ellipsoids) {
    Index inside = 0;
    for (Index z = 0; z < N; ++z)
      for (Index y = 0; y < N; ++y)
        for (Index x = 0; x < N; ++x) {
          const double p[3] = {z + 0.5, y + 0.5, x + 0.5};
          double q = 0;
          for (int a = 0; a < 3; ++a) q += std::pow((p[a] - e.center[a]) / e.radii[a], 2);
          if (q <= 1.0) {
            ++inside;
            painted.data[(z * N + y) * N + x] = e.label;
          }
        }
    // Unit cubes centered inside E cover E shrunk by half a voxel diagonal
    // and stay inside E grown by it; for an ellipsoid both are homothetic
    // copies scaled by 1 -+ delta / r_min.
    const double vol = 4.0 / 3.0 * std::numbers::pi * e.radii[0] * e.radii[1] * e.radii[2];
    const double t = std::sqrt(3.0) / 2 / *std::min_element(e.radii.begin(), e.radii.end());
    EXPECT_GE(static_cast<double>(inside), vol * std::pow(1 - t, 3));
    EXPECT_LE(static_cast<double>(inside), vol * std::pow(1 + t, 3));
  }
  EXPECT_EQ(painted.data, v.labels.data);
}

TEST(Synthetic, ImageEncodesLabels) {
  const auto v = gen_synthetic(3, 1, 32, 2, 3);
  EXPECT_EQ(v.image.shape(), Shape(1, 2, 32, 32, 32));
  double err = 0;
  for (Index c = 0; c < 2; ++c)
    for (Index i = 0; i < 32 * 32 * 32; ++i) err += std::pow(v.image.plane(0, c)[i] - v.labels.data[i] / 2.0, 2);
  EXPECT_NEAR(std::sqrt(err / (2 * 32 * 32 * 32)), 0.1, 0.005);
}

TEST(Synthetic, Errors) {
  EXPECT_THROW(gen_synthetic(1, 0, 30, 1, 3), ShapeError);
  EXPECT_THROW(gen_synthetic(1, 0, 32, 1, 1), std::invalid_argument);
}

TEST(Optim, ZeroLearningRateLeavesParameters) {
  ParamLayout layout;
  layout.add("w", Shape(2, 3, 1, 1, 1), Init::kaiming, 3);
  ParamStore<float> store(layout, 1);
  const Tensor<float> before = store.value(0);
  for (auto& g : store.grad(0).data()) g = 0.7f;
  AdamW opt(store, 0.5);
  opt.step(store, 0.0);
  EXPECT_TRUE(std::equal(before.data().begin(), before.data().end(), store.value(0).data().begin()));
  opt.step(store, 1e-2);
  EXPECT_FALSE(std::equal(before.data().begin(), before.data().end(), store.value(0).data().begin()));
}

TEST(Optim, FirstAdamStepMovesByLr) {
  ParamLayout layout;
  layout.add("w", Shape::vec(3), Init::zeros);
  ParamStore<float> store(layout, 1);
  store.grad(0)[0] = 5.0f;
  store.grad(0)[1] = -0.01f;
  AdamW opt(store, 0.0);
  opt.step(store, 0.1);
  EXPECT_NEAR(store.value(0)[0], -0.1, 1e-6);
  EXPECT_NEAR(store.value(0)[1], 0.1, 1e-5);
  EXPECT_EQ(store.value(0)[2], 0.0f);
}

TEST(Optim, ClipGradNorm) {
  ParamLayout layout;
  layout.add("a", Shape::vec(2), Init::zeros);
  layout.add("b", Shape::vec(1), Init::zeros);
  ParamStore<float> store(layout, 1);
  store.grad(0)[0] = 3.0f;
  store.grad(0)[1] = 0.0f;
  store.grad(1)[0] = 4.0f;
  EXPECT_DOUBLE_EQ(clip_grad_norm(store, 10.0), 5.0);
  EXPECT_EQ(store.grad(1)[0], 4.0f);
  EXPECT_DOUBLE_EQ(clip_grad_norm(store, 1.0), 5.0);
  EXPECT_FLOAT_EQ(store.grad(0)[0], 0.6f);
  EXPECT_FLOAT_EQ(store.grad(1)[0], 0.8f);
}

TEST(Optim, CosineSchedule) {
  EXPECT_DOUBLE_EQ(cosine_lr(1.0, 0, 100), 1.0);
  EXPECT_NEAR(cosine_lr(1.0, 50, 100), 0.5, 1e-12);
  EXPECT_NEAR(cosine_lr(1.0, 100, 100), 0.0, 1e-12);
}

Config tiny_train(int steps) {
  Config c;
  c.model.num_classes = 3;
  c.model.base_channels = 6;
  c.model.stage_channels = {6, 12, 24, 48};
  c.train.steps = steps;
  c.train.batch_size = 1;
  c.train.eval_batch = 1;
  c.seed = 3;
  return c;
}

TEST(TrainToy, SameSeedSameCurve) {
  const auto a = train_toy(tiny_train(3));
  const auto b = train_toy(tiny_train(3));
  ASSERT_EQ(a.report.losses.size(), 3u);
  EXPECT_EQ(a.report.losses, b.report.losses);
  EXPECT_EQ(a.report.dsc, b.report.dsc);
  for (ParamId i = 0; i < a.params->size(); ++i) {
    const auto x = a.params->value(i).data(), y = b.params->value(i).data();
    ASSERT_TRUE(std::equal(x.begin(), x.end(), y.begin()));
  }
}

TEST(TrainToy, ZeroLearningRateKeepsInitialisation) {
  Config c = tiny_train(2);
  c.train.lr = 0.0;
  const auto r = train_toy(c);
  ParamStore<float> fresh(r.net->layout, c.seed);
  for (ParamId i = 0; i < fresh.size(); ++i) {
    const auto x = fresh.value(i).data(), y = r.params->value(i).data();
    ASSERT_TRUE(std::equal(x.begin(), x.end(), y.begin())) << fresh.name(i);
  }
}

TEST(TrainToy, ReportCsv) {
  const auto r = train_toy(tiny_train(2));
  std::ostringstream os;
  write_report_csv(os, r.report);
  const std::string s = os.str();
  EXPECT_EQ(s.rfind("step,loss\n0,", 0), 0u);
  EXPECT_NE(s.find("# dsc,2,"), std::string::npos);
  EXPECT_NE(s.find("# mean_foreground_dsc,"), std::string::npos);
}

}  // namespace
}  // namespace translk
