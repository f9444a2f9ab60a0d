#pragma once

// Differentiable ops on ag::Var. Image tensors are NCHW.

#include "onrw/autograd.hpp"

#include <array>
#include <memory>
#include <vector>

namespace onrw::ag {

// elementwise
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, float s);
Var add_scalar(Var a, float s);
Var add_const(Var a, const Tensor& c);
Var mul_const(Var a, const Tensor& c);
Var square(Var a);
Var sigmoid(Var a);
Var silu(Var a);
Var relu(Var a);
Var leaky_relu(Var a, float slope);
Var tanh(Var a);
/// Hard clamp; gradient is zero where the input lies outside [lo, hi].
Var clamp(Var a, float lo, float hi);
/// Forward rounds to nearest, backward passes the gradient through unchanged.
Var round_ste(Var a);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator*(float s, Var a) { return scale(a, s); }

// reductions (results have shape [1])
Var sum(Var a);
Var mean(Var a);
Var sum_squares(Var a);
/// Euclidean norm; the gradient at the origin is taken as zero.
Var l2_norm(Var a);

// shape / layout
Var reshape(Var a, Shape shape);
Var slice_batch(Var a, int begin, int count);
Var concat_batch(const std::vector<Var>& parts);
/// [1, ...] -> [n, ...]
Var repeat_batch(Var a, int n);
Var concat_channels(Var a, Var b);
/// Concatenate along any axis; all other dims must agree.
Var concat_axis(const std::vector<Var>& parts, int axis);
Var slice_axis(Var a, int axis, int begin, int count);
/// [B,C,H,W] -> [B, C*p*p, H/p, W/p]
Var patchify(Var a, int p);
Var unpatchify(Var a, int p);
/// [B,C,H,W] -> [B, H*W, C]
Var to_tokens(Var a);
Var from_tokens(Var a, int height, int width);
Var upsample_nearest(Var a, int factor);
Var avg_pool(Var a, int factor);
/// [B,C,H,W] -> [B,C]
Var global_avg_pool(Var a);
/// [B,K] -> [B,K,H,W]
Var expand_spatial(Var a, int height, int width);
/// x[B,C,H,W] + v[B,C] broadcast over space.
Var add_channel(Var x, Var v);
/// x[B,C,H,W] * m[H,W] (constant), broadcast over batch and channels.
Var mul_spatial_const(Var x, const Tensor& m);
/// x[B,C,H,W] * m[C] (constant).
Var mul_channel_const(Var x, const Tensor& m);

// layers
/// weight [Co, Ci, k, k]; bias [Co] or invalid Var.
Var conv2d(Var x, Var weight, Var bias, int stride, int pad);
/// x [..., Cin], weight [Cout, Cin], bias [Cout] or invalid.
Var linear(Var x, Var weight, Var bias);
Var group_norm(Var x, Var gamma, Var beta, int groups, float eps = 1e-5f);
/// Batched product of rank-3 tensors: op(a)[B,M,K] x op(b)[B,K,N].
Var bmm(Var a, Var b, bool trans_a, bool trans_b);
Var softmax_lastdim(Var a);

/// Fixed sparse linear resampling of each image plane: out[p] = sum_j w[j] * in[idx[j]].
struct SparseMap {
    int in_h = 0, in_w = 0, out_h = 0, out_w = 0;
    std::vector<int> row_begin;  // out_h*out_w + 1 offsets
    std::vector<int> index;
    std::vector<float> weight;
};
Var resample(Var x, std::shared_ptr<const SparseMap> map);

/// Per-pixel affine colour map: out_c = sum_k m[c][k] * in_k + offset[c], for 3-channel images.
Var color_affine(Var x, const std::array<float, 9>& m, const std::array<float, 3>& offset);

/// Orthonormal 8x8 block DCT-II (inverse=false) or its inverse on every plane. H, W multiples of 8.
Var block_dct8(Var x, bool inverse);

}  // namespace onrw::ag
