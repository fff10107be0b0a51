#pragma once
// Target-aware attention pieces: QKV projection, the self and cross heads,
// and the Mix-FFN that fuses the two heads.
//
// Both images share one parameter set. A head's width is C/2 so that the
// self and cross outputs concatenate back to C channels.

#include <utility>
#include <vector>

#include "mstaf/patch_embed.hpp"
#include "mstaf/tensor.hpp"

namespace mstaf {

enum class SoftmaxScale {
  sqrt_c,       // 1/sqrt(C) with C the block width
  sqrt_half_c,  // 1/sqrt(C/2), the head width
};

double softmax_scale_divisor(SoftmaxScale scale, std::int64_t channels);

template <typename T>
struct QkvParams {
  Tensor<T> wq;  // [C, C/2]
  Tensor<T> wk;
  Tensor<T> wv;
};

// Queries, keys, values of one image. Keys/values may hold several token
// grids stacked along the token axis (one per multi-scale branch).
template <typename T>
struct Projection {
  Tensor<T> q;  // [B, Nq, C/2]
  Tensor<T> k;  // [B, Nk, C/2]
  Tensor<T> v;  // [B, Nk, C/2]
  std::vector<std::pair<std::int64_t, std::int64_t>> key_grids;
};

template <typename T>
Projection<T> project_qkv(const TokenGrid<T>& f, const QkvParams<T>& params);

// softmax(q k^T / divisor) v. If `weights` is non-null it receives the
// attention matrix [B, Nq, Nk].
template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, double divisor,
                    Tensor<T>* weights = nullptr);

// Q, K, V from the same image.
template <typename T>
Tensor<T> head_self(const Projection<T>& own, double divisor, Tensor<T>* weights = nullptr);

// Q from image i, K and V from the other image j.
template <typename T>
Tensor<T> head_cross(const Projection<T>& own, const Projection<T>& other, double divisor,
                     Tensor<T>* weights = nullptr);

template <typename T>
struct MixFfnParams {
  Tensor<T> fc1_w;  // [C, rC]
  Tensor<T> fc1_b;  // [rC]
  Tensor<T> dw_w;   // [rC, 1, 3, 3]
  Tensor<T> dw_b;   // [rC]
  Tensor<T> fc2_w;  // [rC, C]
  Tensor<T> fc2_b;  // [C]
};

// linear -> depthwise 3x3 (pad 1) on the h x w grid -> GELU -> linear.
// x: [B, h*w, C] -> [B, h*w, C]
template <typename T>
Tensor<T> mix_ffn(const Tensor<T>& x, std::int64_t h, std::int64_t w, const MixFfnParams<T>& params);

}  // namespace mstaf
