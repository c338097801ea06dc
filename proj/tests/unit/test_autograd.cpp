#include <gtest/gtest.h>

#include "checks.hpp"
#include "translk/attention.hpp"
#include "translk/blocks.hpp"
#include "translk/grad_check.hpp"
#include "translk/train.hpp"

namespace translk {
namespace {

using testing::random_tensor;
using D = Tensor<double>;

TEST(Backward, SumGivesOnes) {
  Tape<double> t;
  const auto x = t.leaf(random_tensor<double>(Shape(2, 3, 2, 2, 2), 1));
  t.backward(sum(t, x));
  const D gx = t.grad(x);
  for (double g : gx.data()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, SumOfSquaresGivesTwoX) {
  Tape<double> t;
  const D xv = random_tensor<double>(Shape(1, 2, 3, 1, 2), 2);
  const auto x = t.leaf(xv);
  t.backward(sum(t, mul(t, x, x)));
  const D g = t.grad(x);
  for (Index i = 0; i < xv.numel(); ++i) EXPECT_DOUBLE_EQ(g[i], 2 * xv[i]);
}

TEST(Backward, ReusedInputAccumulates) {
  Tape<double> t;
  const auto x = t.leaf(random_tensor<double>(Shape(1, 1, 1, 1, 4), 3));
  t.backward(sum(t, add(t, x, add(t, x, x))));
  const D gx = t.grad(x);
  for (double g : gx.data()) EXPECT_EQ(g, 3.0);
}

TEST(Backward, RejectsNonScalarLoss) {
  Tape<double> t;
  const auto x = t.leaf(D(Shape(1, 1, 1, 1, 2)));
  EXPECT_THROW(t.backward(x), ShapeError);
}

TEST(GradCheck, SigmoidSum) {
  GradCheckOptions o;
  o.eps = 1e-5;
  const auto r = grad_check(
      [](auto& t, auto in) { return sum(t, sigmoid(t, in[0])); },
      {random_tensor<double>(Shape(1, 2, 2, 2, 2), 4, -3, 3)}, o);
  EXPECT_LT(r.max_rel_error, 1e-6);
  EXPECT_EQ(r.coords, 16u);
}

TEST(GradCheck, LayerNormSumOfSquares) {
  const auto r = grad_check(
      [](auto& t, auto in) {
        const auto y = layer_norm(t, in[0], in[1], in[2]);
        return sum(t, mul(t, y, y));
      },
      {random_tensor<double>(Shape(1, 4, 2, 2, 1), 5), random_tensor<double>(Shape::vec(4), 6),
       random_tensor<double>(Shape::vec(4), 7)});
  EXPECT_LT(r.max_rel_error, 1e-5);
}

TEST(GradCheck, ConstantObjective) {
  const auto r = grad_check(
      [](auto& t, auto in) { return scale(t, sum(t, in[0]), 0.0); },
      {random_tensor<double>(Shape(1, 1, 1, 1, 3), 8)});
  EXPECT_EQ(r.max_rel_error, 0.0);
}

// x -> 2x with a backward that can be broken on purpose.
enum class Backward { correct, scaled, missing };

template <class T>
Var<T> twice(Tape<T>& tape, const Var<T>& x, Backward mode) {
  Tensor<T> out = x.value();
  for (auto& v : out.data()) v *= 2;
  return tape.record(
      "twice", std::move(out), {x},
      [mode](const Tensor<T>& g, typename Tape<T>::GradRefs gi) {
        if (mode == Backward::missing || !gi[0]) return;
        const T k = mode == Backward::correct ? T(2) : T(2.2);
        for (Index i = 0; i < g.numel(); ++i) (*gi[0])[i] += k * g[i];
      },
      static_cast<std::uint64_t>(x.shape().numel()));
}

GradCheckItem twice_item(Backward mode) {
  return {"fixture.twice", 1e-4, [mode](std::uint64_t seed) {
            return grad_check(
                [mode](auto& t, auto in) { return sum(t, mul(t, twice(t, in[0], mode), in[0])); },
                {random_tensor<double>(Shape(1, 2, 2, 2, 1), seed + 1)});
          }};
}

TEST(GradCheck, HarnessAcceptsCorrectBackward) {
  const auto rep = run_gradcheck_suite({twice_item(Backward::correct)});
  EXPECT_TRUE(rep.passed());
}

TEST(GradCheck, HarnessCatchesWrongBackward) {
  const auto rep = run_gradcheck_suite({twice_item(Backward::scaled)});
  ASSERT_EQ(rep.entries.size(), 1u);
  EXPECT_FALSE(rep.passed());
  EXPECT_GT(rep.entries[0].result.max_rel_error, 1e-2);
}

TEST(GradCheck, HarnessCatchesMissingBackward) {
  const auto rep = run_gradcheck_suite({twice_item(Backward::missing)});
  EXPECT_FALSE(rep.passed());
  std::ostringstream os;
  print_gradcheck_report(os, rep);
  EXPECT_NE(os.str().find("FAIL"), std::string::npos);
}

TEST(GradCheck, SuiteItemsAreDeterministic) {
  const auto items = default_gradcheck_items();
  const auto a = run_gradcheck_suite(items, "ops.conv3d_grouped", 3);
  const auto b = run_gradcheck_suite(items, "ops.conv3d_grouped", 3);
  ASSERT_EQ(a.entries.size(), 1u);
  EXPECT_EQ(a.entries[0].result.max_rel_error, b.entries[0].result.max_rel_error);
  EXPECT_TRUE(a.passed());
}

TEST(GradCheck, FastItemsPass) {
  const auto rep = run_gradcheck_suite(default_gradcheck_items(), "ops.", 0);
  EXPECT_GE(rep.entries.size(), 10u);
  std::ostringstream os;
  print_gradcheck_report(os, rep);
  EXPECT_TRUE(rep.passed()) << os.str();
}

TEST(GradCheck, SuiteCoversEveryModule) {
  const auto items = default_gradcheck_items();
  for (const char* group : {"ops.", "attn.", "lk.", "blocks.", "codec.", "loss.", "network."}) {
    EXPECT_TRUE(std::any_of(items.begin(), items.end(),
                            [&](const auto& i) { return i.name.rfind(group, 0) == 0; }))
        << group;
  }
}

// softmax(q.(k + b)) = softmax(q.k + q.b) and q.b is constant along the key
// axis, so the key projection bias never changes the output.
TEST(GradCheck, KeyBiasHasZeroGradient) {
  ParamLayout layout;
  const auto p = make_desa(layout, "desa", 6, 3, 0.0);
  ParamStore<double> store(layout, 1);
  testing::randomize(store, 2);
  Tape<double> t;
  Ctx<double> c{t, store, nullptr};
  const auto x = t.leaf(random_tensor<double>(Shape(1, 6, 3, 2, 4), 3));
  const auto y = random_projection(t, desa(c, x, x, x, p), 4);
  t.backward(y);
  const auto& g = store.grad(store.id("desa.k.bias"));
  for (double v : g.data()) EXPECT_NEAR(v, 0.0, 1e-12);
  double other = 0;
  for (double v : store.grad(store.id("desa.q.bias")).data()) other += std::abs(v);
  EXPECT_GT(other, 1e-6);
}

TEST(GradCheck, LayerNormGammaReceivesGradient) {
  ParamLayout layout;
  const auto p = make_block(layout, "b", 6, MixerKind::ptlk, BlockOptions{});
  ParamStore<double> store(layout, 5);
  testing::randomize(store, 6, 0.3);
  GradCheckOptions o;
  o.include_input = false;
  o.skip_param = [](const std::string& n) { return n.find(".gamma") == std::string::npos; };
  const auto r = grad_check_module(
      [&p](auto& t, auto& s, const auto& x) {
        Ctx c{t, s, nullptr};
        return transformer_block(c, x, p);
      },
      store, random_tensor<double>(Shape(1, 6, 2, 3, 3), 7), o);
  EXPECT_EQ(r.coords, 12u);
  EXPECT_LT(r.max_rel_error, 1e-4);
  double mag = 0;
  for (const char* n : {"b.ln1.gamma", "b.ln2.gamma"})
    for (double v : store.grad(store.id(n)).data()) mag += std::abs(v);
  EXPECT_GT(mag, 1e-6);
}

}  // namespace
}  // namespace translk
