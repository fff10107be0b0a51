#include "mstaf/patch_embed.hpp"

#include "mstaf/error.hpp"
#include "mstaf/ops.hpp"

namespace mstaf {

template <typename T>
Tensor<T> TokenGrid<T>::to_image() const {
  return ops::unflatten_grid(tokens, h, w);
}

template <typename T>
TokenGrid<T> TokenGrid<T>::from_image(const Tensor<T>& image) {
  if (image.ndim() != 4) throw DimensionError("expected [B,C,H,W], got " + shape_str(image.shape()));
  return TokenGrid<T>{ops::flatten_grid(image), image.dim(2), image.dim(3)};
}

template <typename T>
void TokenGrid<T>::validate() const {
  if (!tokens.defined() || tokens.ndim() != 3 || h < 1 || w < 1 || tokens.dim(1) != h * w)
    throw DimensionError("token grid " + std::to_string(h) + "x" + std::to_string(w) + " does not match tokens " +
                         (tokens.defined() ? shape_str(tokens.shape()) : std::string("<undefined>")));
}

PatchEmbedConfig PatchEmbedConfig::for_stage(int stage, int in_channels, int out_channels) {
  PatchEmbedConfig cfg;
  if (stage == 1) {
    cfg.kernel = 7;
    cfg.stride = 4;
  } else {
    cfg.kernel = 3;
    cfg.stride = 2;
  }
  cfg.padding = cfg.kernel / 2;
  cfg.in_channels = in_channels;
  cfg.out_channels = out_channels;
  return cfg;
}

void PatchEmbedConfig::validate() const {
  if (kernel <= stride) throw ConfigError("patch embed: kernel must exceed stride for overlapping patches");
  if (padding != kernel / 2) throw ConfigError("patch embed: padding must be kernel/2");
  if (in_channels < 1 || out_channels < 1) throw ConfigError("patch embed: channel counts must be positive");
}

std::pair<std::int64_t, std::int64_t> PatchEmbedConfig::output_grid(std::int64_t h, std::int64_t w) const {
  return {ops::conv_out_extent(h, kernel, stride, padding), ops::conv_out_extent(w, kernel, stride, padding)};
}

template <typename T>
TokenGrid<T> embed(const Tensor<T>& image, const PatchEmbedConfig& cfg, const PatchEmbedParams<T>& params) {
  cfg.validate();
  if (image.ndim() != 4 || image.dim(1) != cfg.in_channels)
    throw DimensionError("patch embed: expected [B," + std::to_string(cfg.in_channels) + ",H,W], got " +
                         shape_str(image.shape()));
  const auto [gh, gw] = cfg.output_grid(image.dim(2), image.dim(3));
  if (gh < 1 || gw < 1)
    throw ConfigError("patch embed: input " + shape_str(image.shape()) + " yields an empty token grid");
  auto conv = ops::conv2d(image, params.weight, params.bias, {cfg.stride, cfg.padding, 1});
  auto tokens = ops::layer_norm(ops::flatten_grid(conv), params.gamma, params.beta);
  return TokenGrid<T>{tokens, gh, gw};
}

template <typename T>
TokenGrid<T> embed(const TokenGrid<T>& grid, const PatchEmbedConfig& cfg, const PatchEmbedParams<T>& params) {
  grid.validate();
  return embed(grid.to_image(), cfg, params);
}

template struct TokenGrid<float>;
template struct TokenGrid<double>;
template TokenGrid<float> embed(const Tensor<float>&, const PatchEmbedConfig&, const PatchEmbedParams<float>&);
template TokenGrid<double> embed(const Tensor<double>&, const PatchEmbedConfig&, const PatchEmbedParams<double>&);
template TokenGrid<float> embed(const TokenGrid<float>&, const PatchEmbedConfig&, const PatchEmbedParams<float>&);
template TokenGrid<double> embed(const TokenGrid<double>&, const PatchEmbedConfig&,
                                 const PatchEmbedParams<double>&);

}  // namespace mstaf
