#include "mstaf/multiscale.hpp"

#include "mstaf/error.hpp"
#include "mstaf/ops.hpp"

namespace mstaf {

void MultiScaleConfig::validate() const {
  for (const auto& b : branches)
    if (b.kernel < 1 || b.stride < 1 || b.padding < 0)
      throw ConfigError("multiscale: branch kernel/stride must be positive and padding non-negative");
  const auto& b1 = branches[0];
  if (b1.stride != 1 || b1.kernel != 2 * b1.padding + 1)
    throw ConfigError("multiscale: branch 1 must preserve the token grid (stride 1, kernel = 2*padding+1)");
}

void MultiScaleConfig::validate_for_grid(std::int64_t h, std::int64_t w) const {
  validate();
  for (int i = 0; i < 3; ++i) {
    const auto [bh, bw] = branch_grid(i, h, w);
    if (bh < 1 || bw < 1)
      throw ConfigError("multiscale: branch " + std::to_string(i + 1) + " produces an empty grid from " +
                        std::to_string(h) + "x" + std::to_string(w));
  }
}

std::pair<std::int64_t, std::int64_t> MultiScaleConfig::branch_grid(int branch, std::int64_t h,
                                                                    std::int64_t w) const {
  const auto& b = branches.at(static_cast<std::size_t>(branch));
  return {ops::conv_out_extent(h, b.kernel, b.stride, b.padding),
          ops::conv_out_extent(w, b.kernel, b.stride, b.padding)};
}

template <typename T>
Projection<T> project_multiscale(const TokenGrid<T>& f, const MultiScaleConfig& cfg,
                                 const MultiScaleParams<T>& params) {
  f.validate();
  cfg.validate_for_grid(f.h, f.w);
  const auto image = f.to_image();
  Projection<T> out;
  std::vector<Tensor<T>> keys, values;
  for (int i = 0; i < 3; ++i) {
    const auto& b = cfg.branches[static_cast<std::size_t>(i)];
    auto fmap = ops::conv2d(image, params.conv_w[static_cast<std::size_t>(i)],
                            params.conv_b[static_cast<std::size_t>(i)], {b.stride, b.padding, 1});
    out.key_grids.emplace_back(fmap.dim(2), fmap.dim(3));
    auto tokens = ops::flatten_grid(fmap);
    if (i == 0) out.q = ops::linear(tokens, params.wq);
    keys.push_back(ops::linear(tokens, params.wk));
    values.push_back(ops::linear(tokens, params.wv));
  }
  out.k = ops::concat(keys, 1);
  out.v = ops::concat(values, 1);
  return out;
}

template Projection<float> project_multiscale(const TokenGrid<float>&, const MultiScaleConfig&,
                                              const MultiScaleParams<float>&);
template Projection<double> project_multiscale(const TokenGrid<double>&, const MultiScaleConfig&,
                                               const MultiScaleParams<double>&);

}  // namespace mstaf
