#include "translk/entangle.hpp"

#include "translk/attention.hpp"

namespace translk {

std::vector<Index> mhlk_kernel_sizes(Index heads) {
  std::vector<Index> k;
  for (Index i = 0; i < heads; ++i) k.push_back(3 + 2 * i);
  return k;
}

MhlkParams make_mhlk(ParamLayout& layout, const std::string& prefix, Index channels, Index heads) {
  check_heads(channels, heads);
  MhlkParams p;
  p.proj = make_pointwise(layout, prefix + ".proj", channels, channels);
  const Index per_head = channels / heads;
  const auto kernels = mhlk_kernel_sizes(heads);
  for (Index i = 0; i < heads; ++i) {
    p.heads.push_back(make_depthwise(layout, prefix + ".head" + std::to_string(i), per_head,
                                     kernels[static_cast<std::size_t>(i)]));
  }
  return p;
}

template <class T>
Var<T> mhlk(Ctx<T>& ctx, const Var<T>& x, const MhlkParams& p) {
  Var<T> y = apply(ctx, p.proj, x);
  const auto heads = static_cast<Index>(p.heads.size());
  if (heads == 1) return apply(ctx, p.heads[0], y);
  const Index per_head = y.shape().c() / heads;
  std::vector<Var<T>> parts;
  parts.reserve(p.heads.size());
  for (Index i = 0; i < heads; ++i) {
    Var<T> slice = slice_channels(ctx.tape, y, i * per_head, per_head);
    parts.push_back(apply(ctx, p.heads[static_cast<std::size_t>(i)], slice));
  }
  return concat_channels(ctx.tape, parts);
}

ChannelAttnParams make_channel_attn(ParamLayout& layout, const std::string& prefix,
                                    Index channels) {
  return {make_pointwise(layout, prefix + ".linear", channels, channels)};
}

SpatialAttnParams make_spatial_attn(ParamLayout& layout, const std::string& prefix) {
  return {make_conv(layout, prefix + ".conv7", 2, 1, 7, 1, 3)};
}

template <class T>
Var<T> channel_attention(Ctx<T>& ctx, const Var<T>& source, const ChannelAttnParams& p) {
  return sigmoid(ctx.tape, apply(ctx, p.linear, global_avg_pool(ctx.tape, source)));
}

template <class T>
Var<T> spatial_attention(Ctx<T>& ctx, const Var<T>& source, const SpatialAttnParams& p) {
  return sigmoid(ctx.tape, apply(ctx, p.conv, channel_pool(ctx.tape, source)));
}

namespace {

void check_same(const char* op, const Shape& a, const Shape& b) {
  if (a != b) throw ShapeError(std::string(op) + ": source " + a.str() + " vs target " + b.str());
}

}  // namespace

template <class T>
Var<T> channel_gate(Ctx<T>& ctx, const Var<T>& source, const Var<T>& target,
                    const ChannelAttnParams& p) {
  check_same("channel_gate", source.shape(), target.shape());
  return mul(ctx.tape, target, channel_attention(ctx, source, p));
}

template <class T>
Var<T> spatial_gate(Ctx<T>& ctx, const Var<T>& source, const Var<T>& target,
                    const SpatialAttnParams& p) {
  check_same("spatial_gate", source.shape(), target.shape());
  return mul(ctx.tape, target, spatial_attention(ctx, source, p));
}

template <class T>
Var<T> progressive_entangle(Ctx<T>& ctx, const Var<T>& x, const ChannelAttnParams& ch,
                            const SpatialAttnParams& sp) {
  Var<T> x_ch = channel_gate(ctx, x, x, ch);
  return spatial_gate(ctx, x_ch, x_ch, sp);
}

template <class T>
Var<T> collaborative_entangle(Ctx<T>& ctx, const Var<T>& x_lk, const Var<T>& x_sa,
                              const ChannelAttnParams& ch, const SpatialAttnParams& sp) {
  Var<T> sa = spatial_gate(ctx, x_lk, x_sa, sp);
  Var<T> lk = channel_gate(ctx, x_sa, x_lk, ch);
  return add(ctx.tape, lk, sa);
}

#define TRANSLK_INSTANTIATE_ENTANGLE(T)                                                         \
  template Var<T> mhlk(Ctx<T>&, const Var<T>&, const MhlkParams&);                              \
  template Var<T> channel_attention(Ctx<T>&, const Var<T>&, const ChannelAttnParams&);          \
  template Var<T> spatial_attention(Ctx<T>&, const Var<T>&, const SpatialAttnParams&);          \
  template Var<T> channel_gate(Ctx<T>&, const Var<T>&, const Var<T>&, const ChannelAttnParams&); \
  template Var<T> spatial_gate(Ctx<T>&, const Var<T>&, const Var<T>&, const SpatialAttnParams&); \
  template Var<T> progressive_entangle(Ctx<T>&, const Var<T>&, const ChannelAttnParams&,        \
                                       const SpatialAttnParams&);                              \
  template Var<T> collaborative_entangle(Ctx<T>&, const Var<T>&, const Var<T>&,                \
                                         const ChannelAttnParams&, const SpatialAttnParams&);

TRANSLK_INSTANTIATE_ENTANGLE(float)
TRANSLK_INSTANTIATE_ENTANGLE(double)
TRANSLK_INSTANTIATE_ENTANGLE(long double)

}  // namespace translk
