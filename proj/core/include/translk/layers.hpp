#pragma once

#include <random>
#include <string>

#include "translk/autograd.hpp"
#include "translk/ops.hpp"
#include "translk/params.hpp"

namespace translk {

/// Per-pass state: the tape, the parameter store, and the dropout stream.
/// A null dropout_rng means evaluation mode.
template <class T>
struct Ctx {
  Tape<T>& tape;
  ParamStore<T>& params;
  std::mt19937_64* dropout_rng = nullptr;

  Var<T> p(ParamId id) { return tape.param(params, id); }
};

/// Convolution (or transposed convolution) with bias. Pointwise layers
/// double as per-voxel linear maps.
struct ConvLayer {
  ParamId weight = 0;
  ParamId bias = 0;
  Index in = 0;
  Index out = 0;
  Index kernel = 1;
  ConvGeometry geom{};
  bool transposed = false;

  Index param_count() const;
};

ConvLayer make_conv(ParamLayout& layout, const std::string& name, Index in, Index out,
                    Index kernel, int stride, int padding, int groups = 1);
/// 1x1x1 projection initialized like a linear layer.
ConvLayer make_pointwise(ParamLayout& layout, const std::string& name, Index in, Index out);
/// Depthwise convolution with same padding.
ConvLayer make_depthwise(ParamLayout& layout, const std::string& name, Index channels,
                         Index kernel);
ConvLayer make_transposed(ParamLayout& layout, const std::string& name, Index in, Index out,
                          Index kernel, int stride);

template <class T>
Var<T> apply(Ctx<T>& ctx, const ConvLayer& layer, const Var<T>& x);

struct NormLayer {
  ParamId gamma = 0;
  ParamId beta = 0;
  Index channels = 0;
};

NormLayer make_norm(ParamLayout& layout, const std::string& name, Index channels);

template <class T>
Var<T> apply(Ctx<T>& ctx, const NormLayer& norm, const Var<T>& x);

}  // namespace translk
