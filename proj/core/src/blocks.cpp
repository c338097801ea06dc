#include "translk/blocks.hpp"

#include <stdexcept>

namespace translk {

TokenMixerParams make_mixer(ParamLayout& layout, const std::string& prefix, Index channels,
                            MixerKind kind, const BlockOptions& opts) {
  TokenMixerParams p;
  p.kind = kind;
  p.mhlk = make_mhlk(layout, prefix + ".mhlk", channels, opts.heads);
  p.ch = make_channel_attn(layout, prefix + ".ch_attn", channels);
  p.sp = make_spatial_attn(layout, prefix + ".sp_attn");
  p.desa = make_desa(layout, prefix + ".desa", channels, opts.heads, opts.dropout, opts.desa_mode);
  return p;
}

MlpParams make_mlp(ParamLayout& layout, const std::string& prefix, Index channels,
                   const BlockOptions& opts) {
  MlpParams p;
  p.variant = opts.mlp;
  p.dropout = opts.dropout;
  const Index hidden = kMlpExpansion * channels;
  p.up = make_pointwise(layout, prefix + ".up", channels, hidden);
  if (opts.mlp != MlpVariant::ffn) p.dw = make_depthwise(layout, prefix + ".dw", hidden, 3);
  if (opts.mlp == MlpVariant::ag_mlp) {
    const int groups = opts.gate == GateKind::depthwise ? static_cast<int>(hidden) : 1;
    p.gate = make_conv(layout, prefix + ".gate", hidden, hidden, 1, 1, 0, groups);
  }
  p.down = make_pointwise(layout, prefix + ".down", hidden, channels);
  return p;
}

BlockParams make_block(ParamLayout& layout, const std::string& prefix, Index channels,
                       MixerKind kind, const BlockOptions& opts) {
  BlockParams p;
  p.ln1 = make_norm(layout, prefix + ".ln1", channels);
  p.mixer = make_mixer(layout, prefix + (kind == MixerKind::ptlk ? ".ptlk" : ".ctlk"), channels,
                       kind, opts);
  p.ln2 = make_norm(layout, prefix + ".ln2", channels);
  p.mlp = make_mlp(layout, prefix + ".mlp", channels, opts);
  return p;
}

MixedBlockParams make_mixed_block(ParamLayout& layout, const std::string& prefix, Index channels,
                                  const BlockOptions& opts) {
  MixedBlockParams p;
  p.ctlk = make_block(layout, prefix + ".block0", channels, MixerKind::ctlk, opts);
  p.ptlk = make_block(layout, prefix + ".block1", channels, MixerKind::ptlk, opts);
  return p;
}

template <class T>
Var<T> token_mixer(Ctx<T>& ctx, const Var<T>& x, const TokenMixerParams& p) {
  Var<T> x_lk = mhlk(ctx, x, p.mhlk);
  if (p.kind == MixerKind::ptlk) {
    Var<T> att = progressive_entangle(ctx, x_lk, p.ch, p.sp);
    return desa(ctx, x_lk, x_lk, att, p.desa);
  }
  Var<T> x_sa = desa(ctx, x, x, x, p.desa);
  return collaborative_entangle(ctx, x_lk, x_sa, p.ch, p.sp);
}

template <class T>
Var<T> ptlk_module(Ctx<T>& ctx, const Var<T>& x, const TokenMixerParams& p) {
  if (p.kind != MixerKind::ptlk) throw std::invalid_argument("ptlk_module: parameters are CTLK");
  return add(ctx.tape, token_mixer(ctx, x, p), x);
}

template <class T>
Var<T> ctlk_module(Ctx<T>& ctx, const Var<T>& x, const TokenMixerParams& p) {
  if (p.kind != MixerKind::ctlk) throw std::invalid_argument("ctlk_module: parameters are PTLK");
  return add(ctx.tape, token_mixer(ctx, x, p), x);
}

template <class T>
Var<T> ag_mlp(Ctx<T>& ctx, const Var<T>& x, const MlpParams& p) {
  Var<T> h = gelu(ctx.tape, apply(ctx, p.up, x));
  if (p.variant == MlpVariant::ag_mlp) {
    Var<T> spatial = apply(ctx, p.dw, h);
    Var<T> gate = sigmoid(ctx.tape, apply(ctx, p.gate, h));
    h = mul(ctx.tape, spatial, gate);
  } else if (p.variant == MlpVariant::mlp) {
    h = apply(ctx, p.dw, h);
  }
  h = dropout(ctx.tape, h, p.dropout, ctx.dropout_rng);
  return dropout(ctx.tape, apply(ctx, p.down, h), p.dropout, ctx.dropout_rng);
}

template <class T>
Var<T> transformer_block(Ctx<T>& ctx, const Var<T>& x, const BlockParams& p) {
  // token_mixer carries no residual; x is added once, outside the norm.
  Var<T> y = add(ctx.tape, token_mixer(ctx, apply(ctx, p.ln1, x), p.mixer), x);
  return add(ctx.tape, ag_mlp(ctx, apply(ctx, p.ln2, y), p.mlp), y);
}

template <class T>
Var<T> mixed_block(Ctx<T>& ctx, const Var<T>& x, const MixedBlockParams& p) {
  return transformer_block(ctx, transformer_block(ctx, x, p.ctlk), p.ptlk);
}

#define TRANSLK_INSTANTIATE_BLOCKS(T)                                                   \
  template Var<T> ptlk_module(Ctx<T>&, const Var<T>&, const TokenMixerParams&);         \
  template Var<T> ctlk_module(Ctx<T>&, const Var<T>&, const TokenMixerParams&);         \
  template Var<T> token_mixer(Ctx<T>&, const Var<T>&, const TokenMixerParams&);         \
  template Var<T> ag_mlp(Ctx<T>&, const Var<T>&, const MlpParams&);                     \
  template Var<T> transformer_block(Ctx<T>&, const Var<T>&, const BlockParams&);        \
  template Var<T> mixed_block(Ctx<T>&, const Var<T>&, const MixedBlockParams&);

TRANSLK_INSTANTIATE_BLOCKS(float)
TRANSLK_INSTANTIATE_BLOCKS(double)
TRANSLK_INSTANTIATE_BLOCKS(long double)

}  // namespace translk
