#pragma once

#include <functional>
#include <optional>

#include "mstaf/attention.hpp"
#include "mstaf/multiscale.hpp"

namespace mstaf {

// unified: one self head and one cross head (the default).
// self_only / cross_only: both heads of the block run that head type, which
// is how the separate-pipeline ablation is assembled.
enum class BlockMode { unified, self_only, cross_only };

enum class Side { probe, donor };
enum class HeadKind { self, cross };

template <typename T>
struct TaaParams {
  Tensor<T> norm_gamma;  // undefined when pre-norm is off
  Tensor<T> norm_beta;
  std::optional<QkvParams<T>> qkv;             // set when multi-scale is off
  std::optional<MultiScaleParams<T>> msproj;  // set when multi-scale is on
  MixFfnParams<T> ffn;
};

struct BlockOptions {
  BlockMode mode = BlockMode::unified;
  SoftmaxScale scale = SoftmaxScale::sqrt_c;
  MultiScaleConfig multiscale;
};

// Receives every attention matrix a block computes, [B, Nq, Nk].
template <typename T>
using AttentionSink = std::function<void(Side side, HeadKind head, int slot, const Tensor<T>& weights,
                                         const std::vector<std::pair<std::int64_t, std::int64_t>>& key_grids)>;

template <typename T>
Projection<T> project(const TokenGrid<T>& f, const TaaParams<T>& params, const BlockOptions& opts);

// One target-aware attention block on a probe/donor pair. For each image:
// concat(head 0, head 1) over channels -> Mix-FFN -> residual add.
template <typename T>
std::pair<TokenGrid<T>, TokenGrid<T>> taa_block(const TokenGrid<T>& probe, const TokenGrid<T>& donor,
                                                const TaaParams<T>& params, const BlockOptions& opts,
                                                const AttentionSink<T>* sink = nullptr);

}  // namespace mstaf
