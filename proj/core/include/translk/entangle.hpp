#pragma once

#include <string>
#include <vector>

#include "translk/layers.hpp"

namespace translk {

/// Kernel sizes 3, 5, 7, ... for heads 0..N-1.
std::vector<Index> mhlk_kernel_sizes(Index heads);

struct MhlkParams {
  ConvLayer proj;
  std::vector<ConvLayer> heads;  // depthwise over C / N channels each
};

MhlkParams make_mhlk(ParamLayout& layout, const std::string& prefix, Index channels, Index heads);

/// Pointwise projection, contiguous channel split into N heads, depthwise
/// convolution per head with its own kernel size, concatenation.
template <class T>
Var<T> mhlk(Ctx<T>& ctx, const Var<T>& x, const MhlkParams& p);

/// Full C -> C linear map applied to the pooled channel vector.
struct ChannelAttnParams {
  ConvLayer linear;
};

/// 7^3 convolution from the (mean, max) channel pool to one channel.
struct SpatialAttnParams {
  ConvLayer conv;
};

ChannelAttnParams make_channel_attn(ParamLayout& layout, const std::string& prefix,
                                    Index channels);
SpatialAttnParams make_spatial_attn(ParamLayout& layout, const std::string& prefix);

/// sigmoid(linear(avg_pool(source))), shape (n, C, 1, 1, 1).
template <class T>
Var<T> channel_attention(Ctx<T>& ctx, const Var<T>& source, const ChannelAttnParams& p);

/// sigmoid(conv7(channel_pool(source))), shape (n, 1, d, h, w).
template <class T>
Var<T> spatial_attention(Ctx<T>& ctx, const Var<T>& source, const SpatialAttnParams& p);

template <class T>
Var<T> channel_gate(Ctx<T>& ctx, const Var<T>& source, const Var<T>& target,
                    const ChannelAttnParams& p);

template <class T>
Var<T> spatial_gate(Ctx<T>& ctx, const Var<T>& source, const Var<T>& target,
                    const SpatialAttnParams& p);

/// Self-sourced channel gate followed by a self-sourced spatial gate.
template <class T>
Var<T> progressive_entangle(Ctx<T>& ctx, const Var<T>& x, const ChannelAttnParams& ch,
                            const SpatialAttnParams& sp);

/// Cross-sourced gating: the spatial gate of x_lk modulates x_sa, the channel
/// gate of x_sa modulates x_lk, and the two results are summed.
template <class T>
Var<T> collaborative_entangle(Ctx<T>& ctx, const Var<T>& x_lk, const Var<T>& x_sa,
                              const ChannelAttnParams& ch, const SpatialAttnParams& sp);

}  // namespace translk
