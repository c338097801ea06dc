#pragma once

#include <string>

#include "translk/attention.hpp"
#include "translk/entangle.hpp"

namespace translk {

enum class MlpVariant {
  ffn,     // expand, GELU, contract
  mlp,     // expand, GELU, depthwise 3^3, contract
  ag_mlp,  // mlp plus a sigmoid gate on the expanded features
};

/// Shape of the AG-MLP gate convolution: one scale and bias per expanded
/// channel, or a full 4C -> 4C pointwise map.
enum class GateKind { depthwise, dense };

inline constexpr Index kMlpExpansion = 4;

struct MlpParams {
  MlpVariant variant = MlpVariant::ag_mlp;
  ConvLayer up, dw, gate, down;
  double dropout = 0.0;
};

enum class MixerKind { ptlk, ctlk };

struct TokenMixerParams {
  MixerKind kind = MixerKind::ptlk;
  MhlkParams mhlk;
  ChannelAttnParams ch;
  SpatialAttnParams sp;
  DesaParams desa;
};

struct BlockParams {
  NormLayer ln1, ln2;
  TokenMixerParams mixer;
  MlpParams mlp;
};

/// CTLK block followed by a PTLK block.
struct MixedBlockParams {
  BlockParams ctlk, ptlk;
};

struct BlockOptions {
  Index heads = 3;
  MlpVariant mlp = MlpVariant::ag_mlp;
  GateKind gate = GateKind::depthwise;
  double dropout = 0.0;
  DesaAxisMode desa_mode = DesaAxisMode::chained;
};

/// MHLK, channel and spatial gates and DESA for one module; used by both
/// token mixers and by the decoder interaction units.
TokenMixerParams make_mixer(ParamLayout& layout, const std::string& prefix, Index channels,
                            MixerKind kind, const BlockOptions& opts);
MlpParams make_mlp(ParamLayout& layout, const std::string& prefix, Index channels,
                   const BlockOptions& opts);
BlockParams make_block(ParamLayout& layout, const std::string& prefix, Index channels,
                       MixerKind kind, const BlockOptions& opts);
MixedBlockParams make_mixed_block(ParamLayout& layout, const std::string& prefix, Index channels,
                                  const BlockOptions& opts);

/// mhlk -> progressive entanglement -> desa(x', x', x'_att) -> + x.
template <class T>
Var<T> ptlk_module(Ctx<T>& ctx, const Var<T>& x, const TokenMixerParams& p);

/// mhlk(x) and desa(x, x, x) in parallel -> collaborative entanglement -> + x.
template <class T>
Var<T> ctlk_module(Ctx<T>& ctx, const Var<T>& x, const TokenMixerParams& p);

/// The mixer branch without its residual.
template <class T>
Var<T> token_mixer(Ctx<T>& ctx, const Var<T>& x, const TokenMixerParams& p);

/// Channel MLP of the configured variant; dropout before and after the
/// contracting projection.
template <class T>
Var<T> ag_mlp(Ctx<T>& ctx, const Var<T>& x, const MlpParams& p);

/// Pre-norm block: y = token_mixer(LN1(x)) + x; out = mlp(LN2(y)) + y.
template <class T>
Var<T> transformer_block(Ctx<T>& ctx, const Var<T>& x, const BlockParams& p);

template <class T>
Var<T> mixed_block(Ctx<T>& ctx, const Var<T>& x, const MixedBlockParams& p);

}  // namespace translk
