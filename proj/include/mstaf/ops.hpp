#pragma once
// Differentiable ops. Each records its backward closure when any input
// requires grad. Shapes are checked eagerly; mismatches throw DimensionError.

#include <optional>
#include <vector>

#include "mstaf/tensor.hpp"

namespace mstaf::ops {

// a:[m,k] b:[k,n] -> [m,n], or batched a:[B,m,k] b:[B,k,n] -> [B,m,n].
// trans_a / trans_b read the stored operand transposed (last two axes).
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool trans_a = false, bool trans_b = false);

// x:[..., in] * w:[in, out] (+ bias:[out]) -> [..., out]
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias = {});

struct Conv2dSpec {
  int stride = 1;
  int padding = 0;
  int groups = 1;
};

inline std::int64_t conv_out_extent(std::int64_t in, std::int64_t kernel, int stride, int padding) {
  const std::int64_t span = in + 2 * padding - kernel;
  return span < 0 ? 0 : span / stride + 1;
}

// Cross-correlation. x:[B,Cin,H,W], w:[Cout,Cin/groups,kh,kw], bias:[Cout] optional.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, Conv2dSpec spec);

// Normalizes over the last axis with population variance.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-5));

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::int64_t axis = -1);

// tanh approximation: 0.5 x (1 + tanh(0.7978845608 (x + 0.044715 x^3)))
template <typename T>
Tensor<T> gelu(const Tensor<T>& x);

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);

template <typename T>
Tensor<T> log(const Tensor<T>& x);

// Gradient passes only where lo < x < hi.
template <typename T>
Tensor<T> clamp(const Tensor<T>& x, T lo, T hi);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

// scale * x + shift
template <typename T>
Tensor<T> affine(const Tensor<T>& x, T scale, T shift = T(0));

// x:[..., C] + bias:[C]
template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias);

// All non-axis extents must match.
template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::int64_t axis);

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

// Swaps two axes.
template <typename T>
Tensor<T> transpose(const Tensor<T>& x, std::int64_t axis0, std::int64_t axis1);

// [B,C,H,W] -> [B,H*W,C]
template <typename T>
Tensor<T> flatten_grid(const Tensor<T>& x);

// [B,N,C] -> [B,C,h,w]; requires N == h*w.
template <typename T>
Tensor<T> unflatten_grid(const Tensor<T>& x, std::int64_t h, std::int64_t w);

template <typename T>
Tensor<T> sum(const Tensor<T>& x);

template <typename T>
Tensor<T> mean(const Tensor<T>& x);

// Align-corners-false bilinear, [B,C,H,W] -> [B,C,2H,2W].
template <typename T>
Tensor<T> upsample2x_bilinear(const Tensor<T>& x);

}  // namespace mstaf::ops
