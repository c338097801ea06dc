#include "translk/cost.hpp"

#include <iomanip>
#include <ostream>

#include "translk/entangle.hpp"
#include "translk/flops.hpp"

namespace translk {

namespace {

using Count = flops::Count;

Count u(Index v) { return static_cast<Count>(v); }

// Parameter formulas.
Index conv_params(Index in, Index out, Index k, Index groups = 1) {
  return out * (in / groups) * k * k * k + out;
}
Index transposed_params(Index in, Index out, Index k) { return in * out * k * k * k + out; }
Index norm_params(Index c) { return 2 * c; }

Index mhlk_params(Index c, Index heads) {
  Index p = conv_params(c, c, 1);
  const Index per = c / heads;
  for (Index k : mhlk_kernel_sizes(heads)) p += conv_params(per, per, k, per);
  return p;
}

Index mixer_params(Index c, Index heads) {
  const Index ch = conv_params(c, c, 1);
  const Index sp = conv_params(2, 1, 7);
  const Index desa = 4 * conv_params(c, c, 1);
  return mhlk_params(c, heads) + ch + sp + desa;
}

Index mlp_params(Index c, const ModelConfig& m) {
  const Index h = kMlpExpansion * c;
  Index p = conv_params(c, h, 1) + conv_params(h, c, 1);
  if (m.mlp_variant != MlpVariant::ffn) p += conv_params(h, h, 3, h);
  if (m.mlp_variant == MlpVariant::ag_mlp) {
    p += conv_params(h, h, 1, m.mlp_gate == GateKind::depthwise ? h : 1);
  }
  return p;
}

Index block_params(Index c, const ModelConfig& m) {
  return 2 * norm_params(c) + mixer_params(c, m.heads) + mlp_params(c, m);
}

Index mixed_params(Index c, const ModelConfig& m) { return 2 * block_params(c, m); }

Index fusion_params(Index c, const ModelConfig& m) {
  if (m.decoder_variant == DecoderVariant::ced) {
    return 2 * mixer_params(c, m.heads) + 2 * block_params(c, m);
  }
  return conv_params(2 * c, c, 1) + mixed_params(c, m);
}

// FLOP formulas on a map with n * S voxels.
struct Map {
  Index n = 1;
  Index c = 1;
  Index d = 1, h = 1, w = 1;

  Index s() const { return d * h * w; }
  Count elems() const { return u(n * c * s()); }
  Map with(Index ch) const { return {n, ch, d, h, w}; }
  Map half() const { return {n, c, d / 2, h / 2, w / 2}; }
  Map twice() const { return {n, c, d * 2, h * 2, w * 2}; }
};

// Output map `out`, kernel k, input channels per group.
Count conv_flops(const Map& out, Index cin_per_group, Index k) {
  return out.elems() * (2 * u(cin_per_group * k * k * k) + 1);
}
Count pointwise_flops(const Map& in, Index out) { return conv_flops(in.with(out), in.c, 1); }
Count transposed_flops(const Map& in, Index out, Index k) {
  const Map o = in.twice().with(out);
  return in.elems() * 2 * u(out * k * k * k) + o.elems();
}

Count mhlk_flops(const Map& x, Index heads) {
  Count f = pointwise_flops(x, x.c);
  const Map head = x.with(x.c / heads);
  for (Index k : mhlk_kernel_sizes(heads)) f += conv_flops(head, 1, k);
  return f;
}

Count channel_gate_flops(const Map& x) {
  const Map pooled{x.n, x.c, 1, 1, 1};
  return x.elems() + pointwise_flops(pooled, x.c) + flops::kActivation * pooled.elems() +
         x.elems();
}

Count spatial_gate_flops(const Map& x) {
  const Map gate = x.with(1);
  return flops::kChannelPool * x.elems() + conv_flops(gate, 2, 7) +
         flops::kActivation * gate.elems() + x.elems();
}

Count desa_flops(const Map& x, Index heads, DesaAxisMode mode) {
  const Shape s(x.n, x.c, x.d, x.h, x.w);
  Count f = 4 * pointwise_flops(x, x.c);
  if (mode == DesaAxisMode::chained) {
    f += flops::axial_attention(s, heads, x.h) + flops::axial_attention(s, heads, x.w) +
         flops::axial_attention(s, heads, x.d);
  } else {
    f += flops::axial_attention(s, heads, x.d);
  }
  return f;
}

Count ptlk_mixer_flops(const Map& x, const ModelConfig& m) {
  return mhlk_flops(x, m.heads) + channel_gate_flops(x) + spatial_gate_flops(x) +
         desa_flops(x, m.heads, m.desa_axes);
}

Count ctlk_mixer_flops(const Map& x, const ModelConfig& m) {
  return mhlk_flops(x, m.heads) + desa_flops(x, m.heads, m.desa_axes) + spatial_gate_flops(x) +
         channel_gate_flops(x) + x.elems();
}

Count mlp_flops(const Map& x, const ModelConfig& m) {
  const Map h = x.with(kMlpExpansion * x.c);
  Count f = pointwise_flops(x, h.c) + flops::kActivation * h.elems() + pointwise_flops(h, x.c);
  if (m.mlp_variant != MlpVariant::ffn) f += conv_flops(h, 1, 3);
  if (m.mlp_variant == MlpVariant::ag_mlp) {
    f += conv_flops(h, m.mlp_gate == GateKind::depthwise ? 1 : h.c, 1) +
         flops::kActivation * h.elems() + h.elems();
  }
  return f;
}

Count block_flops(const Map& x, MixerKind kind, const ModelConfig& m) {
  const Count mixer = kind == MixerKind::ptlk ? ptlk_mixer_flops(x, m) : ctlk_mixer_flops(x, m);
  return 2 * flops::kLayerNorm * x.elems() + mixer + mlp_flops(x, m) + 2 * x.elems();
}

Count mixed_flops(const Map& x, const ModelConfig& m) {
  return block_flops(x, MixerKind::ctlk, m) + block_flops(x, MixerKind::ptlk, m);
}

Count fusion_flops(const Map& x, const ModelConfig& m) {
  if (m.decoder_variant == DecoderVariant::ced) {
    // PFI and CFI each run on cross-grouped maps of the same shape as x.
    return ptlk_mixer_flops(x, m) + block_flops(x, MixerKind::ctlk, m) +
           ctlk_mixer_flops(x, m) + block_flops(x, MixerKind::ptlk, m) + x.elems();
  }
  return pointwise_flops(x.with(2 * x.c), x.c) + mixed_flops(x, m);
}

CostReport walk(const ModelConfig& cfg, const Map* input) {
  cfg.validate();
  CostReport r;
  const auto widths = cfg.stage_widths();
  auto add = [&r](std::string name, Index params, Count f) {
    r.entries.push_back({std::move(name), params, f});
    r.total_params += params;
    r.total_flops += f;
  };

  Map x = input ? *input : Map{};
  Count f = 0;
  Index p = conv_params(cfg.in_channels, cfg.base_channels, 7);
  x = x.half().with(cfg.base_channels);
  f += conv_flops(x, cfg.in_channels, 7);
  if (cfg.schedule_variant == ScheduleVariant::stem_expand) {
    p += conv_params(cfg.base_channels, widths[0], 1);
    f += pointwise_flops(x, widths[0]);
    x = x.with(widths[0]);
  }
  add("stem", p, input ? f : 0);
  std::array<Map, 4> skips;
  for (std::size_t i = 0; i < 4; ++i) {
    p = mixed_params(widths[i], cfg) + conv_params(widths[i], cfg.down_width(i), 3);
    f = mixed_flops(x, cfg);
    skips[i] = x;
    const Map down = x.half().with(cfg.down_width(i));
    f += conv_flops(down, x.c, 3);
    x = down;
    add("enc" + std::to_string(i), p, input ? f : 0);
  }
  add("bottleneck", mixed_params(x.c, cfg), input ? mixed_flops(x, cfg) : 0);
  for (std::size_t k = 4; k-- > 0;) {
    p = transposed_params(x.c, widths[k], 2) + fusion_params(widths[k], cfg);
    f = transposed_flops(x, widths[k], 2);
    x = skips[k];
    f += fusion_flops(x, cfg);
    add("dec" + std::to_string(k), p, input ? f : 0);
  }
  p = transposed_params(widths[0], cfg.base_channels, 2) +
      conv_params(cfg.base_channels, cfg.num_classes, 1);
  f = transposed_flops(x, cfg.base_channels, 2);
  f += pointwise_flops(x.twice().with(cfg.base_channels), cfg.num_classes);
  add("head", p, input ? f : 0);
  if (input) {
    r.input = Shape(1, cfg.in_channels, input->d, input->h, input->w);
    r.desa_ratio = desa_vs_full_ratio(Shape(skips[0].n, skips[0].c, skips[0].d, skips[0].h,
                                            skips[0].w),
                                      cfg.heads);
  }
  return r;
}

}  // namespace

CostReport count_params(const ModelConfig& cfg) { return walk(cfg, nullptr); }

CostReport count_flops(const ModelConfig& cfg, Index d, Index h, Index w) {
  if (d < 1 || h < 1 || w < 1 || d % 32 || h % 32 || w % 32) {
    throw ShapeError("input shape " + std::to_string(d) + "x" + std::to_string(h) + "x" +
                     std::to_string(w) + " must be positive multiples of 32");
  }
  const Map in{1, cfg.in_channels, d, h, w};
  return walk(cfg, &in);
}

double desa_vs_full_ratio(const Shape& s, Index heads) {
  const double full = static_cast<double>(flops::full_attention(s, heads));
  const double axial = static_cast<double>(flops::axial_attention(s, heads, s.d()) +
                                           flops::axial_attention(s, heads, s.h()) +
                                           flops::axial_attention(s, heads, s.w()));
  return full / axial;
}

void print_cost_report(std::ostream& os, const CostReport& r) {
  const bool with_flops = r.total_flops > 0;
  os << std::left << std::setw(12) << "module" << std::right << std::setw(14) << "params";
  if (with_flops) os << std::setw(18) << "flops";
  os << "\n";
  for (const auto& e : r.entries) {
    os << std::left << std::setw(12) << e.module << std::right << std::setw(14) << e.params;
    if (with_flops) os << std::setw(18) << e.flops;
    os << "\n";
  }
  os << std::left << std::setw(12) << "total" << std::right << std::setw(14) << r.total_params;
  if (with_flops) os << std::setw(18) << r.total_flops;
  os << "\n" << std::fixed << std::setprecision(2) << "params (M): " << r.total_params / 1e6 << "\n";
  if (with_flops) {
    os << "input: " << r.input.str() << "\n"
       << "flops (G): " << r.total_flops / 1e9 << "\n"
       << "full/decomposed attention FLOPs at stage 1: " << r.desa_ratio << "\n";
  }
  os << std::defaultfloat;
}

}  // namespace translk
