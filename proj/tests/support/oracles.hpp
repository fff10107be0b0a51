#pragma once
// Independent reference implementations for tests. Everything here is plain
// double-precision loops written from the definitions, with no calls into the
// library's ops or kernels.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "mstaf/image.hpp"
#include "mstaf/rng.hpp"

namespace oracle {

using Mat = std::vector<std::vector<double>>;  // [rows][cols]

inline Mat matmul(const Mat& a, const Mat& b) {
  const std::size_t m = a.size(), k = b.size(), n = b.empty() ? 0 : b[0].size();
  Mat c(m, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) c[i][j] += a[i][p] * b[p][j];
  return c;
}

// softmax(q k^T / divisor) v, one query at a time.
inline Mat attention(const Mat& q, const Mat& k, const Mat& v, double divisor) {
  Mat out;
  for (const auto& qi : q) {
    std::vector<double> s(k.size());
    for (std::size_t j = 0; j < k.size(); ++j) {
      double dot = 0.0;
      for (std::size_t c = 0; c < qi.size(); ++c) dot += qi[c] * k[j][c];
      s[j] = dot / divisor;
    }
    const double mx = *std::max_element(s.begin(), s.end());
    double z = 0.0;
    for (auto& x : s) z += (x = std::exp(x - mx));
    std::vector<double> row(v[0].size(), 0.0);
    for (std::size_t j = 0; j < k.size(); ++j)
      for (std::size_t c = 0; c < row.size(); ++c) row[c] += s[j] / z * v[j][c];
    out.push_back(row);
  }
  return out;
}

inline double gelu(double x) {
  return 0.5 * x * (1.0 + std::tanh(0.7978845608028654 * (x + 0.044715 * x * x * x)));
}

// Cross-correlation over one image. x[c][y][x], w[o][c/g][ky][kx].
using Vol = std::vector<std::vector<std::vector<double>>>;
using Kernel = std::vector<Vol>;

inline Vol conv2d(const Vol& x, const Kernel& w, const std::vector<double>& bias, int stride, int pad, int groups) {
  const int cin = static_cast<int>(x.size()), h = static_cast<int>(x[0].size()), wd = static_cast<int>(x[0][0].size());
  const int cout = static_cast<int>(w.size()), kh = static_cast<int>(w[0][0].size()),
            kw = static_cast<int>(w[0][0][0].size());
  const int oh = (h + 2 * pad - kh) / stride + 1, ow = (wd + 2 * pad - kw) / stride + 1;
  const int in_per = cin / groups, out_per = cout / groups;
  Vol out(cout, std::vector<std::vector<double>>(oh, std::vector<double>(ow, 0.0)));
  for (int o = 0; o < cout; ++o) {
    const int g = o / out_per;
    for (int y = 0; y < oh; ++y)
      for (int xx = 0; xx < ow; ++xx) {
        double acc = bias.empty() ? 0.0 : bias[o];
        for (int ci = 0; ci < in_per; ++ci)
          for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) {
              const int iy = y * stride - pad + ky, ix = xx * stride - pad + kx;
              if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
              acc += x[g * in_per + ci][iy][ix] * w[o][ci][ky][kx];
            }
        out[o][y][xx] = acc;
      }
  }
  return out;
}

// Mix-FFN on one h x w grid of tokens [N][C].
struct FfnWeights {
  Mat fc1_w;  // [C][H]
  std::vector<double> fc1_b;
  std::vector<std::vector<double>> dw_w;  // [H][9]
  std::vector<double> dw_b;
  Mat fc2_w;  // [H][C]
  std::vector<double> fc2_b;
};

inline Mat mix_ffn(const Mat& x, int h, int w, const FfnWeights& p) {
  const std::size_t hidden = p.fc1_b.size();
  Mat a = matmul(x, p.fc1_w);
  for (auto& row : a)
    for (std::size_t j = 0; j < hidden; ++j) row[j] += p.fc1_b[j];
  Mat d(a.size(), std::vector<double>(hidden, 0.0));
  for (int y = 0; y < h; ++y)
    for (int xx = 0; xx < w; ++xx)
      for (std::size_t c = 0; c < hidden; ++c) {
        double acc = p.dw_b[c];
        for (int ky = 0; ky < 3; ++ky)
          for (int kx = 0; kx < 3; ++kx) {
            const int iy = y + ky - 1, ix = xx + kx - 1;
            if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
            acc += a[static_cast<std::size_t>(iy * w + ix)][c] * p.dw_w[c][static_cast<std::size_t>(ky * 3 + kx)];
          }
        d[static_cast<std::size_t>(y * w + xx)][c] = gelu(acc);
      }
  Mat out = matmul(d, p.fc2_w);
  for (auto& row : out)
    for (std::size_t j = 0; j < row.size(); ++j) row[j] += p.fc2_b[j];
  return out;
}

// Metrics from per-pixel loops over raw mask values.
struct PixelScore {
  double iou, mcc;
  std::optional<double> nmm;
};

inline PixelScore score_masks(const mstaf::Image& pred, const mstaf::Image& gt, double thr) {
  double tp = 0, fp = 0, fn = 0, tn = 0;
  for (int y = 0; y < gt.height; ++y)
    for (int x = 0; x < gt.width; ++x) {
      const bool p = pred.at(0, y, x) >= thr, g = gt.at(0, y, x) >= 0.5f;
      if (p && g) tp += 1;
      else if (p) fp += 1;
      else if (g) fn += 1;
      else tn += 1;
    }
  PixelScore s{};
  s.iou = tp + fp + fn == 0 ? 1.0 : tp / (tp + fp + fn);
  const double den = std::sqrt((tp + fp) * (tp + fn) * (tn + fp) * (tn + fn));
  s.mcc = den == 0 ? 0.0 : (tp * tn - fp * fn) / den;
  const double g = tp + fn;
  if (g > 0) s.nmm = std::max(-1.0, (tp - fn - fp) / g);
  return s;
}

inline bool any_above(const mstaf::Image& m, double thr) {
  for (float v : m.data)
    if (v >= thr) return true;
  return false;
}

inline Mat random_mat(mstaf::Rng& rng, std::size_t rows, std::size_t cols, double scale = 1.0) {
  Mat m(rows, std::vector<double>(cols));
  for (auto& r : m)
    for (auto& v : r) v = rng.normal() * scale;
  return m;
}

}  // namespace oracle
