#include <iomanip>
#include <ostream>
#include <random>

#include "translk/train.hpp"

namespace translk {

namespace {

using D = double;

constexpr std::uint64_t kProjSeed = 0xab5eedULL;
const Shape kBlockShape(1, 6, 2, 3, 3);
constexpr Index kHeads = 3;

Tensor<D> random_tensor(const Shape& s, std::mt19937_64& rng, double scale = 1.0) {
  Tensor<D> t(s);
  std::normal_distribution<double> n(0.0, scale);
  for (auto& v : t.data()) v = n(rng);
  return t;
}

// Moves every parameter off its initial value so zero biases and unit
// gammas do not hide errors.
void jitter(ParamStore<D>& store, std::mt19937_64& rng, double amount = 0.1) {
  std::uniform_real_distribution<double> u(-amount, amount);
  for (ParamId i = 0; i < store.size(); ++i)
    for (auto& v : store.value(i).data()) v += u(rng);
}

// A key bias shifts every score of a query row by the same amount, which
// softmax cancels, so its true gradient is zero and any relative error on
// it measures only finite-difference roundoff.
bool is_key_bias(const std::string& name) {
  const std::string suffix = "desa.k.bias";
  if (name.size() < suffix.size()) return false;
  const std::size_t at = name.size() - suffix.size();
  return name.compare(at, suffix.size(), suffix) == 0 && (at == 0 || name[at - 1] == '.');
}

// `op` is generic over the scalar type: op(Tape<T>&, std::span<const Var<T>>).
template <class Op>
GradCheckItem op_item(std::string name, std::vector<Shape> shapes, Op op) {
  GradCheckItem item;
  item.name = std::move(name);
  item.run = [shapes = std::move(shapes), op = std::move(op)](std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<Tensor<D>> inputs;
    for (const auto& s : shapes) inputs.push_back(random_tensor(s, rng));
    return grad_check(
        [&op](auto& tape, auto in) { return random_projection(tape, op(tape, in), kProjSeed); },
        std::move(inputs));
  };
  return item;
}

/// A module built into its own layout and checked against input and
/// parameters; `fn(Ctx<T>&, const P&, const Var<T>&)` is generic over T.
template <class P, class Fn>
GradCheckItem module_item(std::string name, Shape input, std::function<P(ParamLayout&)> make,
                          Fn fn, GradCheckOptions opts = {}, double threshold = 1e-4) {
  GradCheckItem item;
  item.name = std::move(name);
  item.threshold = threshold;
  item.run = [input, make = std::move(make), fn = std::move(fn), opts](std::uint64_t seed) {
    ParamLayout layout;
    const P p = make(layout);
    ParamStore<D> store(layout, seed);
    std::mt19937_64 rng(seed ^ 0x51ULL);
    jitter(store, rng);
    Tensor<D> x = random_tensor(input, rng);
    GradCheckOptions o = opts;
    o.sample_seed = seed;
    o.skip_param = is_key_bias;
    return grad_check_module(
        [&p, &fn](auto& tape, auto& s, const auto& xv) {
          Ctx ctx{tape, s, nullptr};
          return fn(ctx, p, xv);
        },
        store, std::move(x), o);
  };
  return item;
}

// Splits a 2C-channel input into (first C, last C) for two-operand modules.
template <class T>
std::pair<Var<T>, Var<T>> halves(Tape<T>& tape, const Var<T>& x) {
  const Index c = x.shape().c() / 2;
  return {slice_channels(tape, x, 0, c), slice_channels(tape, x, c, c)};
}

const Shape kPairShape = kBlockShape.with_channels(2 * kBlockShape.c());

BlockOptions block_opts(MlpVariant mlp = MlpVariant::ag_mlp, GateKind gate = GateKind::depthwise,
                        DesaAxisMode mode = DesaAxisMode::chained) {
  BlockOptions o;
  o.heads = kHeads;
  o.mlp = mlp;
  o.gate = gate;
  o.desa_mode = mode;
  return o;
}

GradCheckItem network_item(std::string name, DecoderVariant variant) {
  GradCheckItem item;
  item.name = std::move(name);
  item.threshold = 1e-3;
  item.run = [variant](std::uint64_t seed) {
    ModelConfig cfg;
    cfg.in_channels = 1;
    cfg.num_classes = 3;
    cfg.base_channels = 6;
    cfg.stage_channels = {6, 12, 24, 48};
    cfg.heads = kHeads;
    cfg.decoder_variant = variant;
    auto net = build_network(cfg);
    ParamStore<D> store(net->layout, seed);
    std::mt19937_64 rng(seed ^ 0x52ULL);
    jitter(store, rng, 0.05);
    Tensor<D> x = random_tensor(Shape(1, 1, 32, 32, 32), rng);
    GradCheckOptions o;
    o.max_coords = 50;
    o.include_input = false;
    o.sample_seed = seed;
    o.skip_param = is_key_bias;
    return grad_check_module(
        [&net](auto& tape, auto& s, const auto& xv) {
          Ctx ctx{tape, s, nullptr};
          return forward(ctx, *net, xv);
        },
        store, std::move(x), o);
  };
  return item;
}

}  // namespace

std::vector<GradCheckItem> default_gradcheck_items() {
  std::vector<GradCheckItem> items;
  const Shape small(2, 4, 3, 3, 3);

  items.push_back(op_item("ops.conv3d", {small, Shape(5, 4, 3, 3, 3), Shape::vec(5)},
                          [](auto& t, auto in) {
                            return conv3d(t, in[0], in[1], std::optional(in[2]), ConvGeometry{1, 1, 1});
                          }));
  items.push_back(op_item("ops.conv3d_grouped_strided", {Shape(1, 4, 5, 4, 5), Shape(6, 2, 3, 3, 3)},
                          [](auto& t, auto in) {
                            return conv3d(t, in[0], in[1], std::optional<std::decay_t<decltype(in[0])>>(), ConvGeometry{2, 1, 2});
                          }));
  items.push_back(op_item("ops.conv3d_transposed",
                          {Shape(1, 3, 2, 2, 2), Shape(3, 2, 2, 2, 2), Shape::vec(2)},
                          [](auto& t, auto in) {
                            return conv3d_transposed(t, in[0], in[1], std::optional(in[2]), 2);
                          }));
  items.push_back(op_item("ops.layer_norm", {small, Shape::vec(4), Shape::vec(4)},
                          [](auto& t, auto in) { return layer_norm(t, in[0], in[1], in[2]); }));
  items.push_back(op_item("ops.softmax", {small}, [](auto& t, auto in) { return softmax(t, in[0]); }));
  items.push_back(op_item("ops.gelu", {small}, [](auto& t, auto in) { return gelu(t, in[0]); }));
  items.push_back(op_item("ops.sigmoid", {small}, [](auto& t, auto in) { return sigmoid(t, in[0]); }));
  items.push_back(op_item("ops.global_avg_pool", {small},
                          [](auto& t, auto in) { return global_avg_pool(t, in[0]); }));
  items.push_back(op_item("ops.channel_pool", {small},
                          [](auto& t, auto in) { return channel_pool(t, in[0]); }));
  items.push_back(op_item("ops.add_broadcast", {small, Shape(2, 4, 1, 1, 1)},
                          [](auto& t, auto in) { return add(t, in[0], in[1]); }));
  items.push_back(op_item("ops.mul_broadcast", {small, Shape(2, 1, 3, 3, 3)},
                          [](auto& t, auto in) { return mul(t, in[0], in[1]); }));
  items.push_back(op_item("ops.slice_concat", {small, small}, [](auto& t, auto in) {
    return concat_channels(t, {slice_channels(t, in[0], 1, 2), in[1], scale(t, in[0], 0.5)});
  }));

  for (Axis axis : {Axis::D, Axis::H, Axis::W}) {
    items.push_back(op_item(std::string("attn.axial_") + axis_name(axis),
                            {kBlockShape, kBlockShape, kBlockShape}, [axis](auto& t, auto in) {
                              return merge_heads(axial_attention(
                                  t, split_heads(in[0], kHeads), split_heads(in[1], kHeads),
                                  split_heads(in[2], kHeads), axis));
                            }));
  }
  for (DesaAxisMode mode : {DesaAxisMode::chained, DesaAxisMode::independent}) {
    items.push_back(module_item<DesaParams>(
        std::string("attn.desa_") + to_string(mode), kBlockShape,
        [mode](ParamLayout& l) { return make_desa(l, "desa", 6, kHeads, 0.0, mode); },
        [](auto& ctx, const DesaParams& p, const auto& x) {
          auto q = scale(ctx.tape, x, 0.7);
          return desa(ctx, q, x, mul(ctx.tape, x, x), p);
        }));
  }

  items.push_back(module_item<MhlkParams>(
      "lk.mhlk", kBlockShape, [](ParamLayout& l) { return make_mhlk(l, "mhlk", 6, kHeads); },
      [](auto& ctx, const MhlkParams& p, const auto& x) { return mhlk(ctx, x, p); }));
  items.push_back(module_item<ChannelAttnParams>(
      "lk.channel_gate", kPairShape, [](ParamLayout& l) { return make_channel_attn(l, "ch", 6); },
      [](auto& ctx, const ChannelAttnParams& p, const auto& x) {
        auto [a, b] = halves(ctx.tape, x);
        return channel_gate(ctx, a, b, p);
      }));
  items.push_back(module_item<SpatialAttnParams>(
      "lk.spatial_gate", kPairShape, [](ParamLayout& l) { return make_spatial_attn(l, "sp"); },
      [](auto& ctx, const SpatialAttnParams& p, const auto& x) {
        auto [a, b] = halves(ctx.tape, x);
        return spatial_gate(ctx, a, b, p);
      }));
  items.push_back(module_item<TokenMixerParams>(
      "lk.progressive_entangle", kBlockShape,
      [](ParamLayout& l) { return make_mixer(l, "m", 6, MixerKind::ptlk, block_opts()); },
      [](auto& ctx, const TokenMixerParams& p, const auto& x) {
        return progressive_entangle(ctx, x, p.ch, p.sp);
      }));
  items.push_back(module_item<TokenMixerParams>(
      "lk.collaborative_entangle", kPairShape,
      [](ParamLayout& l) { return make_mixer(l, "m", 6, MixerKind::ctlk, block_opts()); },
      [](auto& ctx, const TokenMixerParams& p, const auto& x) {
        auto [a, b] = halves(ctx.tape, x);
        return collaborative_entangle(ctx, a, b, p.ch, p.sp);
      }));

  items.push_back(module_item<TokenMixerParams>(
      "blocks.ptlk_module", kBlockShape,
      [](ParamLayout& l) { return make_mixer(l, "m", 6, MixerKind::ptlk, block_opts()); },
      [](auto& ctx, const TokenMixerParams& p, const auto& x) { return ptlk_module(ctx, x, p); }));
  items.push_back(module_item<TokenMixerParams>(
      "blocks.ctlk_module", kBlockShape,
      [](ParamLayout& l) { return make_mixer(l, "m", 6, MixerKind::ctlk, block_opts()); },
      [](auto& ctx, const TokenMixerParams& p, const auto& x) { return ctlk_module(ctx, x, p); }));
  const std::pair<const char*, BlockOptions> mlps[] = {
      {"blocks.ffn", block_opts(MlpVariant::ffn)},
      {"blocks.mlp", block_opts(MlpVariant::mlp)},
      {"blocks.ag_mlp", block_opts(MlpVariant::ag_mlp)},
      {"blocks.ag_mlp_dense_gate", block_opts(MlpVariant::ag_mlp, GateKind::dense)},
  };
  for (const auto& [name, opts] : mlps) {
    items.push_back(module_item<MlpParams>(
        name, kBlockShape, [opts = opts](ParamLayout& l) { return make_mlp(l, "mlp", 6, opts); },
        [](auto& ctx, const MlpParams& p, const auto& x) { return ag_mlp(ctx, x, p); }));
  }
  for (MixerKind kind : {MixerKind::ptlk, MixerKind::ctlk}) {
    items.push_back(module_item<BlockParams>(
        kind == MixerKind::ptlk ? "blocks.ptlk_block" : "blocks.ctlk_block", kBlockShape,
        [kind](ParamLayout& l) { return make_block(l, "b", 6, kind, block_opts()); },
        [](auto& ctx, const BlockParams& p, const auto& x) {
          return transformer_block(ctx, x, p);
        }));
  }
  items.push_back(module_item<MixedBlockParams>(
      "blocks.mixed_block", kBlockShape,
      [](ParamLayout& l) { return make_mixed_block(l, "mb", 6, block_opts()); },
      [](auto& ctx, const MixedBlockParams& p, const auto& x) { return mixed_block(ctx, x, p); }));

  items.push_back(module_item<MixedBlockParams>(
      "codec.bottleneck", Shape(1, 6, 2, 2, 2),
      [](ParamLayout& l) { return make_mixed_block(l, "bottleneck", 6, block_opts()); },
      [](auto& ctx, const MixedBlockParams& p, const auto& x) { return mixed_block(ctx, x, p); }));
  items.push_back(op_item("codec.cross_group", {kBlockShape, kBlockShape}, [](auto& t, auto in) {
    auto [x1, x2] = cross_group(t, in[0], in[1]);
    return concat_channels(t, {x1, scale(t, x2, -2.0)});
  }));
  items.push_back(module_item<TokenMixerParams>(
      "codec.pfi", kPairShape,
      [](ParamLayout& l) { return make_mixer(l, "pfi", 6, MixerKind::ptlk, block_opts()); },
      [](auto& ctx, const TokenMixerParams& p, const auto& x) {
        auto [s, u] = halves(ctx.tape, x);
        return pfi(ctx, s, u, p);
      }));
  items.push_back(module_item<TokenMixerParams>(
      "codec.cfi", kPairShape,
      [](ParamLayout& l) { return make_mixer(l, "cfi", 6, MixerKind::ctlk, block_opts()); },
      [](auto& ctx, const TokenMixerParams& p, const auto& x) {
        auto [s, u] = halves(ctx.tape, x);
        return cfi(ctx, s, u, p);
      }));
  items.push_back(module_item<CedParams>(
      "codec.ced", kPairShape,
      [](ParamLayout& l) {
        CedParams p;
        p.pfi = make_mixer(l, "pfi", 6, MixerKind::ptlk, block_opts());
        p.cfi = make_mixer(l, "cfi", 6, MixerKind::ctlk, block_opts());
        p.path1 = make_block(l, "path1", 6, MixerKind::ctlk, block_opts());
        p.path2 = make_block(l, "path2", 6, MixerKind::ptlk, block_opts());
        return p;
      },
      [](auto& ctx, const CedParams& p, const auto& x) {
        auto [s, u] = halves(ctx.tape, x);
        return ced(ctx, s, u, p);
      }));
  items.push_back(module_item<PlainFusionParams>(
      "codec.plain_fusion", kPairShape,
      [](ParamLayout& l) {
        PlainFusionParams p;
        p.fuse = make_pointwise(l, "fuse", 12, 6);
        p.block = make_mixed_block(l, "block", 6, block_opts());
        return p;
      },
      [](auto& ctx, const PlainFusionParams& p, const auto& x) {
        auto [s, u] = halves(ctx.tape, x);
        return plain_fusion(ctx, s, u, p);
      }));
  items.push_back(module_item<std::pair<ConvLayer, ConvLayer>>(
      "codec.predict_head", kBlockShape,
      [](ParamLayout& l) {
        return std::make_pair(make_transposed(l, "head.up", 6, 4, 2, 2),
                              make_pointwise(l, "head.out", 4, 3));
      },
      [](auto& ctx, const std::pair<ConvLayer, ConvLayer>& p, const auto& x) {
        return apply(ctx, p.second, apply(ctx, p.first, x));
      }));

  {
    GradCheckItem item;
    item.name = "loss.dice_ce";
    item.run = [](std::uint64_t seed) {
      std::mt19937_64 rng(seed);
      const Shape s(2, 3, 2, 3, 3);
      LabelVolume labels(Shape(2, 1, 2, 3, 3));
      std::uniform_int_distribution<int> cls(0, 2);
      for (auto& y : labels.data) y = cls(rng);
      return grad_check([&labels](auto& t, auto in) { return dice_ce_loss(t, in[0], labels); },
                        {random_tensor(s, rng)});
    };
    items.push_back(std::move(item));
  }

  items.push_back(network_item("network.full_ced", DecoderVariant::ced));
  items.push_back(network_item("network.full_plain_concat", DecoderVariant::plain_concat));
  return items;
}

bool GradSuiteReport::passed() const {
  for (const auto& e : entries)
    if (!e.passed) return false;
  return !entries.empty();
}

GradSuiteReport run_gradcheck_suite(const std::vector<GradCheckItem>& items,
                                    const std::string& filter, std::uint64_t seed) {
  GradSuiteReport report;
  for (const auto& item : items) {
    if (!filter.empty() && item.name.find(filter) == std::string::npos) continue;
    GradCheckEntry e;
    e.name = item.name;
    e.threshold = item.threshold;
    try {
      e.result = item.run(seed);
      e.passed = e.result.coords > 0 && e.result.max_rel_error < item.threshold;
    } catch (const std::exception& ex) {
      e.error = ex.what();
    }
    report.entries.push_back(std::move(e));
  }
  return report;
}

void print_gradcheck_report(std::ostream& os, const GradSuiteReport& r) {
  for (const auto& e : r.entries) {
    os << (e.passed ? "ok   " : "FAIL ") << std::left << std::setw(34) << e.name;
    if (!e.error.empty()) {
      os << " error: " << e.error << "\n";
      continue;
    }
    os << " max_rel_err " << std::scientific << std::setprecision(3) << e.result.max_rel_error
       << " (< " << e.threshold << ")" << std::defaultfloat << " coords " << e.result.coords;
    if (!e.passed && !e.result.worst.empty()) {
      os << " worst " << e.result.worst << " analytic " << e.result.worst_analytic << " numeric "
         << e.result.worst_numeric;
    }
    os << "\n";
  }
}

}  // namespace translk
