#pragma once
// Overlap patch embedding: strided conv (kernel > stride) -> tokens -> layer norm.

#include <utility>

#include "mstaf/tensor.hpp"

namespace mstaf {

// Tokens [B, N, C] laid out row-major over an h x w grid.
template <typename T>
struct TokenGrid {
  Tensor<T> tokens;
  std::int64_t h = 0;
  std::int64_t w = 0;

  std::int64_t batch() const { return tokens.dim(0); }
  std::int64_t count() const { return tokens.dim(1); }
  std::int64_t channels() const { return tokens.dim(2); }

  // [B, C, h, w]
  Tensor<T> to_image() const;
  static TokenGrid from_image(const Tensor<T>& image);
  // Throws DimensionError unless tokens is [B, h*w, C].
  void validate() const;
};

struct PatchEmbedConfig {
  int kernel = 7;
  int stride = 4;
  int padding = 3;
  int in_channels = 3;
  int out_channels = 64;

  // Stage 1 embeds the image with k7/s4/p3; later stages halve the grid with k3/s2/p1.
  static PatchEmbedConfig for_stage(int stage, int in_channels, int out_channels);

  // Throws ConfigError if the overlap or padding rule is broken.
  void validate() const;
  std::pair<std::int64_t, std::int64_t> output_grid(std::int64_t h, std::int64_t w) const;
};

template <typename T>
struct PatchEmbedParams {
  Tensor<T> weight;  // [out, in, k, k]
  Tensor<T> bias;    // [out]
  Tensor<T> gamma;   // [out]
  Tensor<T> beta;    // [out]
};

// image: [B, in_channels, H, W]
template <typename T>
TokenGrid<T> embed(const Tensor<T>& image, const PatchEmbedConfig& cfg, const PatchEmbedParams<T>& params);

template <typename T>
TokenGrid<T> embed(const TokenGrid<T>& grid, const PatchEmbedConfig& cfg, const PatchEmbedParams<T>& params);

}  // namespace mstaf
