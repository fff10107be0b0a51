#include "mstaf/viz.hpp"

#include <algorithm>
#include <cmath>

#include "mstaf/error.hpp"
#include "mstaf/train.hpp"

namespace mstaf {

std::vector<BranchMap> fold_row(const std::vector<double>& row,
                                const std::vector<std::pair<std::int64_t, std::int64_t>>& key_grids) {
  std::int64_t total = 0;
  for (const auto& [h, w] : key_grids) total += h * w;
  if (total != static_cast<std::int64_t>(row.size())) {
    throw DimensionError("attention row has " + std::to_string(row.size()) + " entries but key grids hold " +
                         std::to_string(total));
  }
  std::vector<BranchMap> out;
  auto it = row.begin();
  for (const auto& [h, w] : key_grids) {
    BranchMap m{h, w, std::vector<double>(it, it + h * w)};
    it += h * w;
    out.push_back(std::move(m));
  }
  return out;
}

template <typename T>
std::vector<QueryAttention> query_attention(const ParamStore<T>& params, const ModelConfig& cfg, const Image& probe,
                                            const Image& donor, int stage, int block, Side side, int row, int col) {
  if (stage < 1 || stage > 3) throw UsageError("stage must be in [1, 3], got " + std::to_string(stage));
  const int depth = cfg.depths[stage - 1];
  if (block < 1 || block > depth) {
    throw UsageError("block must be in [1, " + std::to_string(depth) + "] for stage " + std::to_string(stage) +
                     ", got " + std::to_string(block));
  }
  const auto side_len = cfg.stage_grids()[stage - 1];
  if (row < 0 || row >= side_len || col < 0 || col >= side_len) {
    throw UsageError("token must be in [0, " + std::to_string(side_len - 1) + "] x [0, " +
                     std::to_string(side_len - 1) + "] at stage " + std::to_string(stage) + ", got (" +
                     std::to_string(row) + ", " + std::to_string(col) + ")");
  }

  std::vector<QueryAttention> out;
  const AttentionHook<T> hook = [&](const AttentionRecord<T>& r) {
    if (r.stage != stage || r.block != block || r.side != side) return;
    const auto nk = r.weights.dim(2);
    const auto q = static_cast<std::int64_t>(row) * r.query_grid.second + col;
    const auto span = r.weights.data().subspan(static_cast<std::size_t>(q * nk), static_cast<std::size_t>(nk));
    std::vector<double> values(span.begin(), span.end());
    QueryAttention a{r.side, r.head, r.slot, 0.0, {}};
    for (double v : values) a.row_sum += v;
    a.branches = fold_row(values, r.key_grids);
    out.push_back(std::move(a));
  };
  NoGradGuard no_grad;
  const auto tp = image_tensor<T>({&probe}, cfg.resolution);
  const auto td = image_tensor<T>({&donor}, cfg.resolution);
  forward(tp, td, params, cfg, &hook);
  std::sort(out.begin(), out.end(), [](const QueryAttention& a, const QueryAttention& b) { return a.slot < b.slot; });
  return out;
}

namespace {

// Piecewise-linear blue -> cyan -> yellow -> red ramp.
void heat(double t, float rgb[3]) {
  static const double stops[4][3] = {{0, 0, 0.6}, {0, 0.8, 0.9}, {1, 0.9, 0}, {0.85, 0, 0}};
  t = std::clamp(t, 0.0, 1.0) * 3.0;
  const int i = std::min(static_cast<int>(t), 2);
  const double f = t - i;
  for (int c = 0; c < 3; ++c) rgb[c] = static_cast<float>(stops[i][c] * (1 - f) + stops[i + 1][c] * f);
}

}  // namespace

Image render_heatmap(const BranchMap& map, const Image& backdrop) {
  const Image base = to_rgb(backdrop);
  Image out(3, base.height, base.width);
  double lo = map.values.empty() ? 0.0 : map.values.front(), hi = lo;
  for (double v : map.values) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  for (int y = 0; y < base.height; ++y) {
    const auto gy = std::min<std::int64_t>(map.h - 1, static_cast<std::int64_t>(y) * map.h / base.height);
    for (int x = 0; x < base.width; ++x) {
      const auto gx = std::min<std::int64_t>(map.w - 1, static_cast<std::int64_t>(x) * map.w / base.width);
      const double v = map.values[static_cast<std::size_t>(gy * map.w + gx)];
      float rgb[3];
      heat(hi > lo ? (v - lo) / (hi - lo) : 0.0, rgb);
      const float grey = (base.at(0, y, x) + base.at(1, y, x) + base.at(2, y, x)) / 3.0f;
      for (int c = 0; c < 3; ++c) out.at(c, y, x) = 0.35f * grey + 0.65f * rgb[c];
    }
  }
  return out;
}

void mark_token(Image& image, std::int64_t h, std::int64_t w, int row, int col) {
  const double cy = (row + 0.5) * image.height / double(h);
  const double cx = (col + 0.5) * image.width / double(w);
  const double r = std::max(1.5, 0.02 * image.width);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      const double dy = y + 0.5 - cy, dx = x + 0.5 - cx;
      if (dx * dx + dy * dy > r * r) continue;
      image.at(0, y, x) = 0.0f;
      image.at(1, y, x) = 0.0f;
      if (image.channels == 3) image.at(2, y, x) = 1.0f;
    }
  }
}

template std::vector<QueryAttention> query_attention<float>(const ParamStore<float>&, const ModelConfig&,
                                                            const Image&, const Image&, int, int, Side, int, int);
template std::vector<QueryAttention> query_attention<double>(const ParamStore<double>&, const ModelConfig&,
                                                             const Image&, const Image&, int, int, Side, int, int);

}  // namespace mstaf
