#include "mstaf/block.hpp"

#include "mstaf/error.hpp"
#include "mstaf/ops.hpp"

namespace mstaf {

template <typename T>
Projection<T> project(const TokenGrid<T>& f, const TaaParams<T>& params, const BlockOptions& opts) {
  TokenGrid<T> input = f;
  if (params.norm_gamma.defined()) input.tokens = ops::layer_norm(f.tokens, params.norm_gamma, params.norm_beta);
  if (params.msproj) return project_multiscale(input, opts.multiscale, *params.msproj);
  if (!params.qkv) throw ConfigError("taa_block: no projection parameters");
  return project_qkv(input, *params.qkv);
}

namespace {

template <typename T>
TokenGrid<T> block_side(const TokenGrid<T>& f, const Projection<T>& own, const Projection<T>& other,
                        const TaaParams<T>& params, const BlockOptions& opts, Side side,
                        const AttentionSink<T>* sink) {
  const double divisor = softmax_scale_divisor(opts.scale, f.channels());
  Tensor<T> w0, w1;
  Tensor<T> head0, head1;
  switch (opts.mode) {
    case BlockMode::unified:
      head0 = head_self(own, divisor, &w0);
      head1 = head_cross(own, other, divisor, &w1);
      break;
    case BlockMode::self_only:
      head0 = head_self(own, divisor, &w0);
      head1 = head0;
      w1 = w0;
      break;
    case BlockMode::cross_only:
      head0 = head_cross(own, other, divisor, &w0);
      head1 = head0;
      w1 = w0;
      break;
  }
  if (sink && *sink) {
    const bool cross0 = opts.mode == BlockMode::cross_only;
    const bool cross1 = opts.mode != BlockMode::self_only;
    (*sink)(side, cross0 ? HeadKind::cross : HeadKind::self, 0, w0, cross0 ? other.key_grids : own.key_grids);
    (*sink)(side, cross1 ? HeadKind::cross : HeadKind::self, 1, w1, cross1 ? other.key_grids : own.key_grids);
  }
  auto fused = ops::concat(std::vector<Tensor<T>>{head0, head1}, 2);
  auto mixed = mix_ffn(fused, f.h, f.w, params.ffn);
  return TokenGrid<T>{ops::add(f.tokens, mixed), f.h, f.w};
}

}  // namespace

template <typename T>
std::pair<TokenGrid<T>, TokenGrid<T>> taa_block(const TokenGrid<T>& probe, const TokenGrid<T>& donor,
                                                const TaaParams<T>& params, const BlockOptions& opts,
                                                const AttentionSink<T>* sink) {
  probe.validate();
  donor.validate();
  if (probe.channels() != donor.channels() || probe.batch() != donor.batch())
    throw DimensionError("taa_block: probe tokens " + shape_str(probe.tokens.shape()) +
                         " and donor tokens " + shape_str(donor.tokens.shape()) + " differ in batch or channels");
  if (probe.channels() % 2 != 0) throw DimensionError("taa_block: channel count must be even");
  const auto proj_p = project(probe, params, opts);
  const auto proj_d = project(donor, params, opts);
  auto out_p = block_side(probe, proj_p, proj_d, params, opts, Side::probe, sink);
  auto out_d = block_side(donor, proj_d, proj_p, params, opts, Side::donor, sink);
  return {std::move(out_p), std::move(out_d)};
}

#define MSTAF_INSTANTIATE(T)                                                                        \
  template Projection<T> project<T>(const TokenGrid<T>&, const TaaParams<T>&, const BlockOptions&); \
  template std::pair<TokenGrid<T>, TokenGrid<T>> taa_block<T>(                                      \
      const TokenGrid<T>&, const TokenGrid<T>&, const TaaParams<T>&, const BlockOptions&, const AttentionSink<T>*);
MSTAF_INSTANTIATE(float)
MSTAF_INSTANTIATE(double)
#undef MSTAF_INSTANTIATE

}  // namespace mstaf
