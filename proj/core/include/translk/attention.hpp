#pragma once

#include <string>

#include "translk/layers.hpp"

namespace translk {

enum class Axis { D = 2, H = 3, W = 4 };

const char* axis_name(Axis axis);

/// A (n, C, d, h, w) map viewed as (n, N, C / N, d, h, w). Head i owns the
/// contiguous channel block [i * C / N, (i + 1) * C / N), so the view shares
/// storage with the merged map.
template <class T>
struct HeadView {
  Var<T> data;
  Index heads = 1;

  Index channels_per_head() const { return data.shape().c() / heads; }
};

/// Throws ShapeError naming C and N when N does not divide C.
void check_heads(Index channels, Index heads);

template <class T>
HeadView<T> split_heads(const Var<T>& x, Index heads) {
  check_heads(x.shape().c(), heads);
  return {x, heads};
}

template <class T>
Var<T> merge_heads(const HeadView<T>& hv) {
  return hv.data;
}

/// Multi-head attention restricted to sequences along one axis. For every
/// (n, head) and every position of the other two axes, the slots along
/// `axis` form a sequence of c_h-dim embeddings; scores are
/// softmax(q k^T / sqrt(c_h)) and the output is scores * v.
template <class T>
HeadView<T> axial_attention(Tape<T>& tape, const HeadView<T>& q, const HeadView<T>& k,
                            const HeadView<T>& v, Axis axis);

enum class DesaAxisMode {
  chained,      // H output is the W value, W output is the D value
  independent,  // every axis attends over the projected value; only D is kept
};

struct DesaParams {
  ConvLayer q, k, v, out;
  Index heads = 1;
  double dropout = 0.0;
  DesaAxisMode mode = DesaAxisMode::chained;
};

DesaParams make_desa(ParamLayout& layout, const std::string& prefix, Index channels, Index heads,
                     double dropout, DesaAxisMode mode = DesaAxisMode::chained);

/// Decomposed self-attention: pointwise Q/K/V projections, axial attention
/// along H, W then D, head merge, output projection and dropout. No residual.
template <class T>
Var<T> desa(Ctx<T>& ctx, const Var<T>& q_src, const Var<T>& k_src, const Var<T>& v_src,
            const DesaParams& p);

}  // namespace translk
