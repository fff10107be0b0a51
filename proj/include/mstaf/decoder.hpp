#pragma once
// Fully convolutional mask decoder and the pixel-wise BCE loss.

#include <vector>

#include "mstaf/patch_embed.hpp"

namespace mstaf {

template <typename T>
struct DecoderParams {
  std::vector<Tensor<T>> conv_w;  // level l: [width_l, width_{l-1}, 3, 3]
  std::vector<Tensor<T>> conv_b;
  Tensor<T> head_w;  // [1, width_last, 1, 1]
  Tensor<T> head_b;  // [1]
};

// Number of 2x levels needed to bring a grid side up to the target side.
// Throws ConfigError unless target == grid * 2^levels for some levels >= 0.
int decoder_levels(std::int64_t grid, std::int64_t target);

// Per level: upsample2x_bilinear -> conv3x3 (pad 1) -> GELU. Then a 1x1 conv
// to one channel and a sigmoid. Returns [B, 1, target_h, target_w].
template <typename T>
Tensor<T> decode(const TokenGrid<T>& f, const DecoderParams<T>& params, std::int64_t target_h,
                 std::int64_t target_w);

inline constexpr double kBceClampEps = 1e-7;

// -mean(G log M + (1 - G) log(1 - M)) with M clamped to [eps, 1 - eps].
template <typename T>
Tensor<T> bce_loss(const Tensor<T>& mask, const Tensor<T>& truth, T eps = T(kBceClampEps));

// Mean of the probe and donor BCE losses.
template <typename T>
Tensor<T> pair_bce_loss(const Tensor<T>& mask_p, const Tensor<T>& truth_p, const Tensor<T>& mask_d,
                        const Tensor<T>& truth_d);

}  // namespace mstaf
