#pragma once

#include <cstdint>

#include "translk/tensor.hpp"

// FLOP conventions shared by the runtime tally on Tape and the analytic
// counter in cost.hpp:
//   - one multiply-accumulate is 2 FLOPs; a bias add is 1 FLOP per output
//   - softmax 5 FLOPs/element, sigmoid and GELU 4 FLOPs/element
//   - layer norm 8 FLOPs/element (mean, variance, normalize, affine)
//   - elementwise add/mul/scale and average pooling 1 FLOP/element
//   - channel pooling (mean and max) 2 FLOPs per input element
//   - reshapes, slices, concatenation and identity dropout are free
namespace translk::flops {

using Count = std::uint64_t;

inline constexpr Count kSoftmax = 5;
inline constexpr Count kActivation = 4;
inline constexpr Count kLayerNorm = 8;
inline constexpr Count kElementwise = 1;
inline constexpr Count kChannelPool = 2;

inline Count elems(const Shape& s) { return static_cast<Count>(s.numel()); }

inline Count conv3d(const Shape& out, Index cin_per_group, Index kernel, bool bias) {
  Count taps = static_cast<Count>(cin_per_group * kernel * kernel * kernel);
  return elems(out) * 2 * taps + (bias ? elems(out) : 0);
}

inline Count conv3d_transposed(const Shape& in, Index cout, Index kernel, bool bias,
                               const Shape& out) {
  Count taps = static_cast<Count>(cout * kernel * kernel * kernel);
  return elems(in) * 2 * taps + (bias ? elems(out) : 0);
}

/// Scores (QK^T), scaling, softmax and the value product for one axis of
/// multi-head axial attention on a (n, C, d, h, w) map:
/// n * (d*h*w) * L * (4C + 6N) with L the axis length.
inline Count axial_attention(const Shape& s, Index heads, Index axis_len) {
  return static_cast<Count>(s.n()) * static_cast<Count>(s.spatial()) *
         static_cast<Count>(axis_len) * static_cast<Count>(4 * s.c() + 6 * heads);
}

/// Same counting applied to attention over all d*h*w voxels at once.
inline Count full_attention(const Shape& s, Index heads) {
  return static_cast<Count>(s.n()) * static_cast<Count>(s.spatial()) *
         static_cast<Count>(s.spatial()) * static_cast<Count>(4 * s.c() + 6 * heads);
}

}  // namespace translk::flops
