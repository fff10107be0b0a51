#include "mstaf/decoder.hpp"

#include "mstaf/error.hpp"
#include "mstaf/ops.hpp"

namespace mstaf {

int decoder_levels(std::int64_t grid, std::int64_t target) {
  if (grid < 1 || target < grid || target % grid != 0)
    throw ConfigError("decoder: target side " + std::to_string(target) + " is not a power-of-two multiple of grid " +
                      std::to_string(grid));
  std::int64_t ratio = target / grid;
  int levels = 0;
  while (ratio > 1) {
    if (ratio % 2 != 0)
      throw ConfigError("decoder: target side " + std::to_string(target) + " is not a power-of-two multiple of grid " +
                        std::to_string(grid));
    ratio /= 2;
    ++levels;
  }
  return levels;
}

template <typename T>
Tensor<T> decode(const TokenGrid<T>& f, const DecoderParams<T>& params, std::int64_t target_h,
                 std::int64_t target_w) {
  f.validate();
  const int levels = decoder_levels(f.h, target_h);
  if (decoder_levels(f.w, target_w) != levels)
    throw ConfigError("decoder: non-uniform upsampling between height and width");
  if (static_cast<int>(params.conv_w.size()) != levels)
    throw ConfigError("decoder: configured for " + std::to_string(params.conv_w.size()) + " levels but " +
                      std::to_string(levels) + " are needed to reach " + std::to_string(target_h) + "x" +
                      std::to_string(target_w));
  auto x = f.to_image();
  for (int l = 0; l < levels; ++l) {
    x = ops::upsample2x_bilinear(x);
    x = ops::gelu(ops::conv2d(x, params.conv_w[l], params.conv_b[l], {1, 1, 1}));
  }
  return ops::sigmoid(ops::conv2d(x, params.head_w, params.head_b, {1, 0, 1}));
}

template <typename T>
Tensor<T> bce_loss(const Tensor<T>& mask, const Tensor<T>& truth, T eps) {
  if (mask.shape() != truth.shape())
    throw DimensionError("bce_loss: prediction " + shape_str(mask.shape()) + " vs ground truth " +
                         shape_str(truth.shape()));
  std::vector<T> inverse(truth.values().size());
  for (std::size_t i = 0; i < inverse.size(); ++i) inverse[i] = T(1) - truth.values()[i];
  const auto not_truth = Tensor<T>::from_data(truth.shape(), std::move(inverse));
  const auto m = ops::clamp(mask, eps, T(1) - eps);
  const auto pos = ops::mul(truth.detach(), ops::log(m));
  const auto neg = ops::mul(not_truth, ops::log(ops::affine(m, T(-1), T(1))));
  return ops::affine(ops::mean(ops::add(pos, neg)), T(-1));
}

template <typename T>
Tensor<T> pair_bce_loss(const Tensor<T>& mask_p, const Tensor<T>& truth_p, const Tensor<T>& mask_d,
                        const Tensor<T>& truth_d) {
  return ops::affine(ops::add(bce_loss(mask_p, truth_p), bce_loss(mask_d, truth_d)), T(0.5));
}

#define MSTAF_INSTANTIATE(T)                                                                          \
  template Tensor<T> decode<T>(const TokenGrid<T>&, const DecoderParams<T>&, std::int64_t, std::int64_t); \
  template Tensor<T> bce_loss<T>(const Tensor<T>&, const Tensor<T>&, T);                                \
  template Tensor<T> pair_bce_loss<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);
MSTAF_INSTANTIATE(float)
MSTAF_INSTANTIATE(double)
#undef MSTAF_INSTANTIATE

}  // namespace mstaf
