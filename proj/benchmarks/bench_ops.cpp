#include <benchmark/benchmark.h>

#include <random>

#include "translk/attention.hpp"
#include "translk/blocks.hpp"
#include "translk/entangle.hpp"
#include "translk/network.hpp"
#include "translk/ops.hpp"

namespace {

using namespace translk;

Tensor<float> noise(const Shape& s, std::uint64_t seed) {
  Tensor<float> t(s);
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> n;
  for (auto& v : t.data()) v = n(rng);
  return t;
}

void set_flops(benchmark::State& state, std::uint64_t flops) {
  state.counters["FLOP/s"] =
      benchmark::Counter(static_cast<double>(flops), benchmark::Counter::kIsIterationInvariantRate);
}

void BM_Conv3d(benchmark::State& state) {
  const Index c = state.range(0), k = state.range(1);
  const auto x = Var<float>::constant(noise(Shape(1, c, 16, 16, 16), 1));
  const auto w = Var<float>::constant(noise(Shape(c, c, k, k, k), 2));
  const ConvGeometry g{1, static_cast<int>(k / 2), 1};
  std::uint64_t flops = 0;
  for (auto _ : state) {
    Tape<float> tape(true);
    benchmark::DoNotOptimize(conv3d(tape, x, w, {}, g));
    flops = tape.flops();
  }
  set_flops(state, flops);
}
BENCHMARK(BM_Conv3d)->Args({24, 3})->Args({48, 1})->Args({48, 3})->Unit(benchmark::kMillisecond);

void BM_DepthwiseConv3d(benchmark::State& state) {
  const Index c = 48, k = state.range(0);
  const auto x = Var<float>::constant(noise(Shape(1, c, 16, 16, 16), 1));
  const auto w = Var<float>::constant(noise(Shape(c, 1, k, k, k), 2));
  const ConvGeometry g{1, static_cast<int>(k / 2), static_cast<int>(c)};
  for (auto _ : state) {
    Tape<float> tape(false);
    benchmark::DoNotOptimize(conv3d(tape, x, w, {}, g));
  }
}
BENCHMARK(BM_DepthwiseConv3d)->Arg(3)->Arg(5)->Arg(7)->Unit(benchmark::kMillisecond);

void BM_AxialAttention(benchmark::State& state) {
  const Index c = 48, n = state.range(0);
  const Shape s(1, c, n, n, n);
  const HeadView<float> q{Var<float>::constant(noise(s, 1)), 3};
  const HeadView<float> k{Var<float>::constant(noise(s, 2)), 3};
  const HeadView<float> v{Var<float>::constant(noise(s, 3)), 3};
  for (auto _ : state) {
    Tape<float> tape(false);
    benchmark::DoNotOptimize(axial_attention(tape, q, k, v, Axis::D));
  }
}
BENCHMARK(BM_AxialAttention)->Arg(8)->Arg(16)->Unit(benchmark::kMillisecond);

struct BlockBench {
  ParamLayout layout;
  MhlkParams mhlk;
  MixedBlockParams block;
  ParamStore<float> store;

  explicit BlockBench(Index c)
      : mhlk(make_mhlk(layout, "mhlk", c, 3)),
        block(make_mixed_block(layout, "block", c, BlockOptions{})),
        store(layout, 0) {}
};

void BM_Mhlk(benchmark::State& state) {
  BlockBench b(state.range(0));
  const auto x = Var<float>::constant(noise(Shape(1, state.range(0), 16, 16, 16), 1));
  for (auto _ : state) {
    Tape<float> tape(false);
    Ctx<float> ctx{tape, b.store, nullptr};
    benchmark::DoNotOptimize(mhlk(ctx, x, b.mhlk));
  }
}
BENCHMARK(BM_Mhlk)->Arg(24)->Arg(48)->Unit(benchmark::kMillisecond);

void BM_MixedBlockForward(benchmark::State& state) {
  BlockBench b(state.range(0));
  const auto x = Var<float>::constant(noise(Shape(1, state.range(0), 8, 8, 8), 1));
  for (auto _ : state) {
    Tape<float> tape(false);
    Ctx<float> ctx{tape, b.store, nullptr};
    benchmark::DoNotOptimize(mixed_block(ctx, x, b.block));
  }
}
BENCHMARK(BM_MixedBlockForward)->Arg(24)->Arg(48)->Unit(benchmark::kMillisecond);

void BM_MixedBlockTrainStep(benchmark::State& state) {
  BlockBench b(state.range(0));
  for (auto _ : state) {
    Tape<float> tape(true);
    Ctx<float> ctx{tape, b.store, nullptr};
    const auto x = tape.leaf(noise(Shape(1, state.range(0), 8, 8, 8), 1));
    tape.backward(sum(tape, mixed_block(ctx, x, b.block)));
  }
}
BENCHMARK(BM_MixedBlockTrainStep)->Arg(24)->Unit(benchmark::kMillisecond);

void BM_NetworkForward32(benchmark::State& state) {
  ModelConfig cfg;
  cfg.num_classes = 3;
  cfg.base_channels = 12;
  cfg.stage_channels = {24, 48, 96, 192};
  const auto net = build_network(cfg);
  ParamStore<float> store(net->layout, 0);
  const auto x = Var<float>::constant(noise(Shape(1, 1, 32, 32, 32), 1));
  for (auto _ : state) {
    Tape<float> tape(false);
    Ctx<float> ctx{tape, store, nullptr};
    benchmark::DoNotOptimize(forward(ctx, *net, x));
  }
}
BENCHMARK(BM_NetworkForward32)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
