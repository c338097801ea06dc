#pragma once

#include <optional>
#include <random>
#include <vector>

#include "translk/autograd.hpp"
#include "translk/tensor.hpp"

namespace translk {

/// Convolution geometry. Convolutions use the cross-correlation convention
/// (no kernel flip): out[o] = sum_k w[k] * x[o * stride - padding + k].
struct ConvGeometry {
  int stride = 1;
  int padding = 0;
  int groups = 1;
};

enum class Activation { gelu, sigmoid };

/// Raw forward/backward kernels without tape bookkeeping.
namespace kernels {

Index conv_out_dim(Index in, Index kernel, const ConvGeometry& g);

/// x (n, c_in, d, h, w), weight (c_out, c_in / groups, k, k, k), bias (c_out) or null.
template <class T>
Tensor<T> conv3d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>* bias,
                 const ConvGeometry& g);
/// Accumulates the input gradient of conv3d into grad_x.
template <class T>
void conv3d_grad_input(const Tensor<T>& grad_out, const Tensor<T>& weight, const ConvGeometry& g,
                       Tensor<T>& grad_x);
/// Accumulates the weight gradient of conv3d into grad_w.
template <class T>
void conv3d_grad_weight(const Tensor<T>& grad_out, const Tensor<T>& x, const ConvGeometry& g,
                        Tensor<T>& grad_w);

/// x (n, c_in, d, h, w), weight (c_in, c_out, k, k, k); output extent (d - 1) * stride + k.
template <class T>
Tensor<T> conv3d_transposed(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>* bias,
                            int stride);

}  // namespace kernels

template <class T>
Var<T> conv3d(Tape<T>& tape, const Var<T>& x, const Var<T>& weight,
              const std::optional<Var<T>>& bias, const ConvGeometry& g);

/// Adjoint of a strided, unpadded conv3d whose weight has the same layout.
template <class T>
Var<T> conv3d_transposed(Tape<T>& tape, const Var<T>& x, const Var<T>& weight,
                         const std::optional<Var<T>>& bias, int stride);

/// Normalizes the channel vector of every voxel, then applies per-channel
/// gamma/beta (shape (c, 1, 1, 1, 1)).
template <class T>
Var<T> layer_norm(Tape<T>& tape, const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                  double eps = 1e-5);

/// Softmax along the last (width) axis with row-max subtraction.
template <class T>
Var<T> softmax(Tape<T>& tape, const Var<T>& x);

template <class T>
Var<T> activation(Tape<T>& tape, const Var<T>& x, Activation kind);
template <class T>
Var<T> gelu(Tape<T>& tape, const Var<T>& x) {
  return activation(tape, x, Activation::gelu);
}
template <class T>
Var<T> sigmoid(Tape<T>& tape, const Var<T>& x) {
  return activation(tape, x, Activation::sigmoid);
}

/// Per-channel spatial mean, shape (n, c, 1, 1, 1).
template <class T>
Var<T> global_avg_pool(Tape<T>& tape, const Var<T>& x);

/// Per-voxel channel mean (channel 0) and channel max (channel 1).
template <class T>
Var<T> channel_pool(Tape<T>& tape, const Var<T>& x);

/// Elementwise ops with size-1 broadcasting along any dim.
template <class T>
Var<T> add(Tape<T>& tape, const Var<T>& a, const Var<T>& b);
template <class T>
Var<T> mul(Tape<T>& tape, const Var<T>& a, const Var<T>& b);
template <class T>
Var<T> scale(Tape<T>& tape, const Var<T>& x, double s);

/// Sum of all elements, shape (1, 1, 1, 1, 1).
template <class T>
Var<T> sum(Tape<T>& tape, const Var<T>& x);

template <class T>
Var<T> slice_channels(Tape<T>& tape, const Var<T>& x, Index begin, Index count);
template <class T>
Var<T> concat_channels(Tape<T>& tape, const std::vector<Var<T>>& parts);

/// Inverted dropout. Identity when p == 0 or rng is null.
template <class T>
Var<T> dropout(Tape<T>& tape, const Var<T>& x, double p, std::mt19937_64* rng);

}  // namespace translk
