#pragma once
// Attention-row extraction and heatmap rendering for a single query token.

#include <cstdint>
#include <string>
#include <vector>

#include "mstaf/image.hpp"
#include "mstaf/model.hpp"

namespace mstaf {

struct BranchMap {
  std::int64_t h = 0;
  std::int64_t w = 0;
  std::vector<double> values;  // row-major over the branch's own key grid
};

struct QueryAttention {
  Side side;      // image the query token belongs to
  HeadKind head;  // self: keys from the same image; cross: from the other one
  int slot;
  double row_sum = 0.0;
  std::vector<BranchMap> branches;  // one per key scale
};

// Splits one attention row of length sum(h_i * w_i) into per-branch grids.
std::vector<BranchMap> fold_row(const std::vector<double>& row,
                                const std::vector<std::pair<std::int64_t, std::int64_t>>& key_grids);

// Every attention row the chosen block computes for query token (row, col) of
// `side`. Throws UsageError listing the valid ranges when an index is out of
// range.
template <typename T>
std::vector<QueryAttention> query_attention(const ParamStore<T>& params, const ModelConfig& cfg, const Image& probe,
                                            const Image& donor, int stage, int block, Side side, int row, int col);

// Heat colours blended over a grey version of `backdrop`, upscaled (nearest)
// to the backdrop size. Values are min-max scaled per map.
Image render_heatmap(const BranchMap& map, const Image& backdrop);

// Blue dot centered on token (row, col) of an h x w grid.
void mark_token(Image& image, std::int64_t h, std::int64_t w, int row, int col);

}  // namespace mstaf
