#pragma once

#include <array>
#include <filesystem>
#include <memory>
#include <optional>
#include <utility>

#include "translk/blocks.hpp"
#include "translk/config.hpp"

namespace translk {

/// Dual-path decoder fusion: PFI then a CTLK block, CFI then a PTLK block.
struct CedParams {
  TokenMixerParams pfi, cfi;
  BlockParams path1, path2;
};

/// Concatenation fusion: pointwise 2C -> C, then a mixed block.
struct PlainFusionParams {
  ConvLayer fuse;
  MixedBlockParams block;
};

struct DecoderStage {
  ConvLayer up;  // transposed, kernel 2, stride 2
  CedParams ced;
  PlainFusionParams plain;
};

/// Parameter declarations and structure for one configuration. The layout
/// must outlive any ParamStore built from it, so networks live behind a
/// unique_ptr.
struct Network {
  ModelConfig cfg;
  ParamLayout layout;
  ConvLayer stem;
  std::optional<ConvLayer> stem_expand;
  std::array<MixedBlockParams, 4> stages;
  std::array<ConvLayer, 4> down;
  MixedBlockParams bottleneck;
  std::array<DecoderStage, 4> decoder;
  ConvLayer head_up, head_out;
};

std::unique_ptr<Network> build_network(const ModelConfig& cfg);

/// Input spatial dims must be multiples of this.
inline constexpr Index kSpatialMultiple = 32;

template <class T>
using SkipSet = std::array<Var<T>, 4>;

template <class T>
struct EncoderOutput {
  Var<T> bottom;  // last downsampler output at 1/32
  SkipSet<T> skips;
};

template <class T>
Var<T> stem_encode(Ctx<T>& ctx, const Network& net, const Var<T>& img);

template <class T>
EncoderOutput<T> encoder_forward(Ctx<T>& ctx, const Network& net, const Var<T>& x);

template <class T>
Var<T> bottleneck(Ctx<T>& ctx, const Network& net, const Var<T>& x);

/// X1 = [skip[:C/2], up[:C/2]], X2 = [skip[C/2:], up[C/2:]].
template <class T>
std::pair<Var<T>, Var<T>> cross_group(Tape<T>& tape, const Var<T>& skip, const Var<T>& up);

/// desa(q = X2, k = X2, v = progressive_entangle(mhlk(X1))).
template <class T>
Var<T> pfi(Ctx<T>& ctx, const Var<T>& skip, const Var<T>& up, const TokenMixerParams& p);

/// collaborative_entangle(mhlk(X1), desa(X2, X2, X2)).
template <class T>
Var<T> cfi(Ctx<T>& ctx, const Var<T>& skip, const Var<T>& up, const TokenMixerParams& p);

template <class T>
Var<T> ced(Ctx<T>& ctx, const Var<T>& skip, const Var<T>& up, const CedParams& p);

template <class T>
Var<T> plain_fusion(Ctx<T>& ctx, const Var<T>& skip, const Var<T>& up,
                    const PlainFusionParams& p);

template <class T>
Var<T> decoder_forward(Ctx<T>& ctx, const Network& net, const Var<T>& x, const SkipSet<T>& skips);

template <class T>
Var<T> predict_head(Ctx<T>& ctx, const Network& net, const Var<T>& x);

/// Logits (n, num_classes, D, H, W).
template <class T>
Var<T> forward(Ctx<T>& ctx, const Network& net, const Var<T>& img);

/// Text manifest followed by TLK1 records:
///   TLK-CHECKPOINT v1
///   <count>
///   <name> <offset> <length>   (byte offsets into the record blob)
void save_checkpoint(const std::filesystem::path& path, const ParamStore<float>& store);
/// Loads values into a store with the same parameter names and shapes.
void load_checkpoint(const std::filesystem::path& path, ParamStore<float>& store);

}  // namespace translk
