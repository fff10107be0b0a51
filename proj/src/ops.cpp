#include "mstaf/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mstaf/error.hpp"
#include "mstaf/kernels/kernels.hpp"

namespace mstaf::ops {
namespace {

using detail::make_result;
using std::int64_t;

template <typename T>
void accumulate(std::vector<T>& dst, const std::vector<T>& src) {
  kernels::active<T>().add(static_cast<int64_t>(dst.size()), dst.data(), src.data(), dst.data());
}

template <typename T>
std::vector<T> transposed(const T* src, int64_t rows, int64_t cols) {
  std::vector<T> out(static_cast<std::size_t>(rows * cols));
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t c = 0; c < cols; ++c) out[c * rows + r] = src[r * cols + c];
  return out;
}

// C[m,n] (+)= op(A)[m,k] * op(B)[k,n], where op transposes the stored operand
// when the flag is set (A stored [k,m], B stored [n,k]).
template <typename T>
void gemm_general(int64_t m, int64_t n, int64_t k, const T* a, bool ta, const T* b, bool tb, T* c,
                  bool accumulate_into) {
  std::vector<T> a_packed, b_packed;
  if (ta) {
    a_packed = transposed(a, k, m);
    a = a_packed.data();
  }
  if (tb) {
    b_packed = transposed(b, n, k);
    b = b_packed.data();
  }
  kernels::active<T>().gemm(m, n, k, a, k, b, n, c, n, accumulate_into);
}

void require(bool ok, const std::string& message) {
  if (!ok) throw DimensionError(message);
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  require(a.shape() == b.shape(),
          std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

int64_t normalize_axis(int64_t axis, int64_t ndim, const char* op) {
  if (axis < 0) axis += ndim;
  require(axis >= 0 && axis < ndim, std::string(op) + ": axis out of range");
  return axis;
}

template <typename T>
T gelu_scalar(T x) {
  constexpr T c = T(0.7978845608);
  constexpr T a = T(0.044715);
  const T u = c * (x + a * x * x * x);
  return T(0.5) * x * (T(1) + std::tanh(u));
}

template <typename T>
T gelu_grad_scalar(T x) {
  constexpr T c = T(0.7978845608);
  constexpr T a = T(0.044715);
  const T u = c * (x + a * x * x * x);
  const T t = std::tanh(u);
  return T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * c * (T(1) + T(3) * a * x * x);
}

// Rows are (channel, ky, kx), columns the output positions.
template <typename T>
void im2col(const T* x, int64_t channels, int64_t h, int64_t w, int64_t kh, int64_t kw, int stride,
            int pad, int64_t oh, int64_t ow, T* col) {
  for (int64_t c = 0; c < channels; ++c) {
    for (int64_t ky = 0; ky < kh; ++ky) {
      for (int64_t kx = 0; kx < kw; ++kx) {
        T* dst = col + ((c * kh + ky) * kw + kx) * oh * ow;
        for (int64_t oy = 0; oy < oh; ++oy) {
          const int64_t iy = oy * stride - pad + ky;
          for (int64_t ox = 0; ox < ow; ++ox) {
            const int64_t ix = ox * stride - pad + kx;
            dst[oy * ow + ox] = (iy >= 0 && iy < h && ix >= 0 && ix < w) ? x[(c * h + iy) * w + ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, int64_t channels, int64_t h, int64_t w, int64_t kh, int64_t kw, int stride,
                int pad, int64_t oh, int64_t ow, T* x) {
  for (int64_t c = 0; c < channels; ++c) {
    for (int64_t ky = 0; ky < kh; ++ky) {
      for (int64_t kx = 0; kx < kw; ++kx) {
        const T* src = col + ((c * kh + ky) * kw + kx) * oh * ow;
        for (int64_t oy = 0; oy < oh; ++oy) {
          const int64_t iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          for (int64_t ox = 0; ox < ow; ++ox) {
            const int64_t ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < w) x[(c * h + iy) * w + ix] += src[oy * ow + ox];
          }
        }
      }
    }
  }
}

struct Bilinear {
  int64_t i0, i1;
  double w1;
};

// Align-corners-false source taps for a 2x upsample of an axis of length n.
std::vector<Bilinear> upsample_taps(int64_t n) {
  std::vector<Bilinear> taps(static_cast<std::size_t>(2 * n));
  for (int64_t o = 0; o < 2 * n; ++o) {
    double src = (static_cast<double>(o) + 0.5) / 2.0 - 0.5;
    if (src < 0) src = 0;
    const auto i0 = std::min<int64_t>(static_cast<int64_t>(src), n - 1);
    const auto i1 = std::min<int64_t>(i0 + 1, n - 1);
    taps[o] = {i0, i1, src - static_cast<double>(i0)};
  }
  return taps;
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool trans_a, bool trans_b) {
  require(a.ndim() == b.ndim() && (a.ndim() == 2 || a.ndim() == 3),
          "matmul: expected two 2-D or two 3-D operands, got " + shape_str(a.shape()) + " and " +
              shape_str(b.shape()));
  const bool batched = a.ndim() == 3;
  const int64_t batch = batched ? a.dim(0) : 1;
  require(!batched || b.dim(0) == batch,
          "matmul: batch mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const int64_t m = trans_a ? a.dim(-1) : a.dim(-2);
  const int64_t k = trans_a ? a.dim(-2) : a.dim(-1);
  const int64_t kb = trans_b ? b.dim(-1) : b.dim(-2);
  const int64_t n = trans_b ? b.dim(-2) : b.dim(-1);
  require(k == kb, "matmul: inner extents differ, " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));

  std::vector<T> out(static_cast<std::size_t>(batch * m * n));
  for (int64_t i = 0; i < batch; ++i)
    gemm_general(m, n, k, a.data().data() + i * m * k, trans_a, b.data().data() + i * k * n, trans_b,
                 out.data() + i * m * n, false);

  Shape shape = batched ? Shape{batch, m, n} : Shape{m, n};
  return make_result<T>(std::move(shape), std::move(out), {&a, &b}, "matmul",
                        [a, b, batch, m, n, k, trans_a, trans_b](const std::vector<T>& g) mutable {
                          const T* ad = a.data().data();
                          const T* bd = b.data().data();
                          if (a.requires_grad()) {
                            T* ga = a.grad_buffer().data();
                            for (int64_t i = 0; i < batch; ++i) {
                              const T* gi = g.data() + i * m * n;
                              const T* bi = bd + i * k * n;
                              if (!trans_a)  // dA[m,k] = dC * op(B)^T
                                gemm_general(m, k, n, gi, false, bi, !trans_b, ga + i * m * k, true);
                              else  // dA_stored[k,m] = op(B) * dC^T
                                gemm_general(k, m, n, bi, trans_b, gi, true, ga + i * m * k, true);
                            }
                          }
                          if (b.requires_grad()) {
                            T* gb = b.grad_buffer().data();
                            for (int64_t i = 0; i < batch; ++i) {
                              const T* gi = g.data() + i * m * n;
                              const T* ai = ad + i * m * k;
                              if (!trans_b)  // dB[k,n] = op(A)^T * dC
                                gemm_general(k, n, m, ai, !trans_a, gi, false, gb + i * k * n, true);
                              else  // dB_stored[n,k] = dC^T * op(A)
                                gemm_general(n, k, m, gi, true, ai, trans_a, gb + i * k * n, true);
                            }
                          }
                        });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
  require(w.ndim() == 2, "linear: weight must be 2-D, got " + shape_str(w.shape()));
  require(x.ndim() >= 1 && x.dim(-1) == w.dim(0),
          "linear: input " + shape_str(x.shape()) + " does not match weight " + shape_str(w.shape()));
  const int64_t rows = x.numel() / w.dim(0);
  auto y = matmul(reshape(x, {rows, w.dim(0)}), w);
  if (bias.defined()) y = add_bias(y, bias);
  Shape out = x.shape();
  out.back() = w.dim(1);
  return reshape(y, std::move(out));
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, Conv2dSpec spec) {
  require(x.ndim() == 4 && w.ndim() == 4,
          "conv2d: expected [B,C,H,W] input and [Cout,Cin/g,kh,kw] weight, got " + shape_str(x.shape()) +
              " and " + shape_str(w.shape()));
  if (spec.stride < 1 || spec.padding < 0 || spec.groups < 1)
    throw ConfigError("conv2d: stride must be >= 1, padding >= 0, groups >= 1");
  const int64_t nb = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int64_t cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const int g = spec.groups;
  require(cin % g == 0 && cout % g == 0, "conv2d: channels not divisible by groups");
  require(w.dim(1) == cin / g, "conv2d: weight " + shape_str(w.shape()) + " does not match input " +
                                   shape_str(x.shape()) + " with groups=" + std::to_string(g));
  if (bias.defined()) require(bias.ndim() == 1 && bias.dim(0) == cout, "conv2d: bias must be [Cout]");
  const int64_t oh = conv_out_extent(h, kh, spec.stride, spec.padding);
  const int64_t ow = conv_out_extent(wd, kw, spec.stride, spec.padding);
  if (oh < 1 || ow < 1)
    throw ConfigError("conv2d: non-positive output extent for input " + shape_str(x.shape()) + ", kernel " +
                      std::to_string(kh) + "x" + std::to_string(kw) + ", stride " + std::to_string(spec.stride) +
                      ", padding " + std::to_string(spec.padding));

  const int64_t cin_g = cin / g, cout_g = cout / g;
  const int64_t kdim = cin_g * kh * kw, positions = oh * ow;
  std::vector<T> out(static_cast<std::size_t>(nb * cout * positions));
  std::vector<T> col(static_cast<std::size_t>(kdim * positions));
  const T* xd = x.data().data();
  const T* wdat = w.data().data();
  for (int64_t n = 0; n < nb; ++n) {
    for (int gi = 0; gi < g; ++gi) {
      im2col(xd + (n * cin + gi * cin_g) * h * wd, cin_g, h, wd, kh, kw, spec.stride, spec.padding, oh, ow,
             col.data());
      kernels::active<T>().gemm(cout_g, positions, kdim, wdat + gi * cout_g * kdim, kdim, col.data(), positions,
                                out.data() + (n * cout + gi * cout_g) * positions, positions, false);
    }
    if (bias.defined()) {
      const T* bd = bias.data().data();
      for (int64_t c = 0; c < cout; ++c) {
        T* dst = out.data() + (n * cout + c) * positions;
        for (int64_t p = 0; p < positions; ++p) dst[p] += bd[c];
      }
    }
  }

  return make_result<T>(
      {nb, cout, oh, ow}, std::move(out), {&x, &w, &bias}, "conv2d",
      [x, w, bias, spec, nb, cin, h, wd, cout, kh, kw, oh, ow, cin_g, cout_g, kdim,
       positions](const std::vector<T>& grad) mutable {
        const int g = spec.groups;
        std::vector<T> col(static_cast<std::size_t>(kdim * positions));
        std::vector<T> dcol(static_cast<std::size_t>(kdim * positions));
        const T* xd = x.data().data();
        const T* wdat = w.data().data();
        T* gx = x.requires_grad() ? x.grad_buffer().data() : nullptr;
        T* gw = w.requires_grad() ? w.grad_buffer().data() : nullptr;
        for (int64_t n = 0; n < nb; ++n) {
          for (int gi = 0; gi < g; ++gi) {
            const T* gout = grad.data() + (n * cout + gi * cout_g) * positions;
            if (gw) {
              im2col(xd + (n * cin + gi * cin_g) * h * wd, cin_g, h, wd, kh, kw, spec.stride, spec.padding, oh,
                     ow, col.data());
              gemm_general(cout_g, kdim, positions, gout, false, col.data(), true, gw + gi * cout_g * kdim, true);
            }
            if (gx) {
              gemm_general(kdim, positions, cout_g, wdat + gi * cout_g * kdim, true, gout, false, dcol.data(),
                           false);
              col2im_add(dcol.data(), cin_g, h, wd, kh, kw, spec.stride, spec.padding, oh, ow,
                         gx + (n * cin + gi * cin_g) * h * wd);
            }
          }
        }
        if (bias.defined() && bias.requires_grad()) {
          auto& gb = bias.grad_buffer();
          for (int64_t n = 0; n < nb; ++n)
            for (int64_t c = 0; c < cout; ++c) {
              const T* src = grad.data() + (n * cout + c) * positions;
              T acc = 0;
              for (int64_t p = 0; p < positions; ++p) acc += src[p];
              gb[c] += acc;
            }
        }
      });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  require(x.ndim() >= 1, "layer_norm: scalar input");
  const int64_t c = x.dim(-1);
  require(c >= 1, "layer_norm: empty channel axis");
  require(gamma.shape() == Shape{c} && beta.shape() == Shape{c},
          "layer_norm: gamma/beta must be [" + std::to_string(c) + "]");
  const int64_t rows = x.numel() / c;
  std::vector<T> out(x.values().size());
  std::vector<T> xhat(x.values().size());
  std::vector<T> rstd(static_cast<std::size_t>(rows));
  const T* xd = x.data().data();
  const T* gd = gamma.data().data();
  const T* bd = beta.data().data();
  for (int64_t r = 0; r < rows; ++r) {
    const T* row = xd + r * c;
    T mu = 0;
    for (int64_t j = 0; j < c; ++j) mu += row[j];
    mu /= static_cast<T>(c);
    T var = 0;
    for (int64_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<T>(c);
    const T rs = T(1) / std::sqrt(var + eps);
    rstd[r] = rs;
    for (int64_t j = 0; j < c; ++j) {
      const T xh = (row[j] - mu) * rs;
      xhat[r * c + j] = xh;
      out[r * c + j] = xh * gd[j] + bd[j];
    }
  }
  return make_result<T>(x.shape(), std::move(out), {&x, &gamma, &beta}, "layer_norm",
                        [x, gamma, beta, xhat = std::move(xhat), rstd = std::move(rstd), rows,
                         c](const std::vector<T>& g) mutable {
                          const T* gd = gamma.data().data();
                          if (gamma.requires_grad() || beta.requires_grad()) {
                            std::vector<T> dg(static_cast<std::size_t>(c)), db(static_cast<std::size_t>(c));
                            for (int64_t r = 0; r < rows; ++r)
                              for (int64_t j = 0; j < c; ++j) {
                                dg[j] += g[r * c + j] * xhat[r * c + j];
                                db[j] += g[r * c + j];
                              }
                            if (gamma.requires_grad()) accumulate(gamma.grad_buffer(), dg);
                            if (beta.requires_grad()) accumulate(beta.grad_buffer(), db);
                          }
                          if (x.requires_grad()) {
                            auto& gx = x.grad_buffer();
                            for (int64_t r = 0; r < rows; ++r) {
                              T mean_d = 0, mean_dx = 0;
                              for (int64_t j = 0; j < c; ++j) {
                                const T d = g[r * c + j] * gd[j];
                                mean_d += d;
                                mean_dx += d * xhat[r * c + j];
                              }
                              mean_d /= static_cast<T>(c);
                              mean_dx /= static_cast<T>(c);
                              for (int64_t j = 0; j < c; ++j) {
                                const T d = g[r * c + j] * gd[j];
                                gx[r * c + j] += rstd[r] * (d - mean_d - xhat[r * c + j] * mean_dx);
                              }
                            }
                          }
                        });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int64_t axis) {
  axis = normalize_axis(axis, x.ndim(), "softmax");
  const auto& s = x.shape();
  int64_t outer = 1, inner = 1;
  for (int64_t i = 0; i < axis; ++i) outer *= s[i];
  for (int64_t i = axis + 1; i < x.ndim(); ++i) inner *= s[i];
  const int64_t len = s[axis];
  std::vector<T> out(x.values().size());
  const T* xd = x.data().data();
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t in = 0; in < inner; ++in) {
      const int64_t base = o * len * inner + in;
      T mx = -std::numeric_limits<T>::infinity();
      for (int64_t l = 0; l < len; ++l) mx = std::max(mx, xd[base + l * inner]);
      T total = 0;
      for (int64_t l = 0; l < len; ++l) {
        const T e = std::exp(xd[base + l * inner] - mx);
        out[base + l * inner] = e;
        total += e;
      }
      const T inv = T(1) / total;
      for (int64_t l = 0; l < len; ++l) out[base + l * inner] *= inv;
    }
  auto result = make_result<T>(s, std::move(out), {&x}, "softmax", nullptr);
  if (result.requires_grad()) {
    std::weak_ptr<Node<T>> self = result.node_ptr();
    result.node()->backward = [x, self, outer, inner, len](const std::vector<T>& g) mutable {
      const auto& y = self.lock()->value;
      auto& gx = x.grad_buffer();
      for (int64_t o = 0; o < outer; ++o)
        for (int64_t in = 0; in < inner; ++in) {
          const int64_t base = o * len * inner + in;
          T dot = 0;
          for (int64_t l = 0; l < len; ++l) dot += g[base + l * inner] * y[base + l * inner];
          for (int64_t l = 0; l < len; ++l) {
            const int64_t idx = base + l * inner;
            gx[idx] += y[idx] * (g[idx] - dot);
          }
        }
    };
  }
  return result;
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  std::vector<T> out(x.values().size());
  const T* xd = x.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = gelu_scalar(xd[i]);
  return make_result<T>(x.shape(), std::move(out), {&x}, "gelu", [x](const std::vector<T>& g) mutable {
    auto& gx = x.grad_buffer();
    const T* xd = x.data().data();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * gelu_grad_scalar(xd[i]);
  });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  std::vector<T> out(x.values().size());
  const T* xd = x.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T v = xd[i];
    // Branches keep exp() from overflowing for large |v|.
    out[i] = v >= 0 ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
  }
  auto result = make_result<T>(x.shape(), std::move(out), {&x}, "sigmoid", nullptr);
  if (result.requires_grad()) {
    std::weak_ptr<Node<T>> self = result.node_ptr();
    result.node()->backward = [x, self](const std::vector<T>& g) mutable {
      const auto& y = self.lock()->value;
      auto& gx = x.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i] * (T(1) - y[i]);
    };
  }
  return result;
}

template <typename T>
Tensor<T> log(const Tensor<T>& x) {
  std::vector<T> out(x.values().size());
  const T* xd = x.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(xd[i]);
  return make_result<T>(x.shape(), std::move(out), {&x}, "log", [x](const std::vector<T>& g) mutable {
    auto& gx = x.grad_buffer();
    const T* xd = x.data().data();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] / xd[i];
  });
}

template <typename T>
Tensor<T> clamp(const Tensor<T>& x, T lo, T hi) {
  std::vector<T> out(x.values().size());
  const T* xd = x.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::min(std::max(xd[i], lo), hi);
  return make_result<T>(x.shape(), std::move(out), {&x}, "clamp", [x, lo, hi](const std::vector<T>& g) mutable {
    auto& gx = x.grad_buffer();
    const T* xd = x.data().data();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (xd[i] > lo && xd[i] < hi) gx[i] += g[i];
  });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  std::vector<T> out(a.values().size());
  kernels::active<T>().add(a.numel(), a.data().data(), b.data().data(), out.data());
  return make_result<T>(a.shape(), std::move(out), {&a, &b}, "add", [a, b](const std::vector<T>& g) mutable {
    if (a.requires_grad()) accumulate(a.grad_buffer(), g);
    if (b.requires_grad()) accumulate(b.grad_buffer(), g);
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "sub");
  std::vector<T> out(a.values().size());
  const T* ad = a.data().data();
  const T* bd = b.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] - bd[i];
  return make_result<T>(a.shape(), std::move(out), {&a, &b}, "sub", [a, b](const std::vector<T>& g) mutable {
    if (a.requires_grad()) accumulate(a.grad_buffer(), g);
    if (b.requires_grad()) {
      auto& gb = b.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  std::vector<T> out(a.values().size());
  kernels::active<T>().mul(a.numel(), a.data().data(), b.data().data(), out.data());
  return make_result<T>(a.shape(), std::move(out), {&a, &b}, "mul", [a, b](const std::vector<T>& g) mutable {
    const auto& k = kernels::active<T>();
    const int64_t n = static_cast<int64_t>(g.size());
    std::vector<T> tmp(g.size());
    if (a.requires_grad()) {
      k.mul(n, g.data(), b.data().data(), tmp.data());
      accumulate(a.grad_buffer(), tmp);
    }
    if (b.requires_grad()) {
      k.mul(n, g.data(), a.data().data(), tmp.data());
      accumulate(b.grad_buffer(), tmp);
    }
  });
}

template <typename T>
Tensor<T> affine(const Tensor<T>& x, T scale, T shift) {
  std::vector<T> out(x.values().size());
  kernels::active<T>().scale(x.numel(), scale, x.data().data(), out.data());
  if (shift != T(0))
    for (auto& v : out) v += shift;
  return make_result<T>(x.shape(), std::move(out), {&x}, "affine", [x, scale](const std::vector<T>& g) mutable {
    kernels::active<T>().axpy(static_cast<int64_t>(g.size()), scale, g.data(), x.grad_buffer().data());
  });
}

template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  require(x.ndim() >= 1 && bias.ndim() == 1 && bias.dim(0) == x.dim(-1),
          "add_bias: bias " + shape_str(bias.shape()) + " does not match input " + shape_str(x.shape()));
  const int64_t c = bias.dim(0);
  const int64_t rows = x.numel() / c;
  std::vector<T> out(x.values().size());
  const T* xd = x.data().data();
  const T* bd = bias.data().data();
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t j = 0; j < c; ++j) out[r * c + j] = xd[r * c + j] + bd[j];
  return make_result<T>(x.shape(), std::move(out), {&x, &bias}, "add_bias",
                        [x, bias, rows, c](const std::vector<T>& g) mutable {
                          if (x.requires_grad()) accumulate(x.grad_buffer(), g);
                          if (bias.requires_grad()) {
                            auto& gb = bias.grad_buffer();
                            for (int64_t r = 0; r < rows; ++r)
                              for (int64_t j = 0; j < c; ++j) gb[j] += g[r * c + j];
                          }
                        });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int64_t axis) {
  require(!parts.empty(), "concat: no inputs");
  const auto& first = parts.front().shape();
  axis = normalize_axis(axis, parts.front().ndim(), "concat");
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    bool ok = p.ndim() == static_cast<int64_t>(first.size());
    for (int64_t i = 0; ok && i < p.ndim(); ++i)
      if (i != axis && p.shape()[i] != first[i]) ok = false;
    require(ok, "concat: non-axis extents differ, " + shape_str(first) + " vs " + shape_str(p.shape()));
    out_shape[axis] += p.shape()[axis];
  }
  int64_t outer = 1, inner = 1;
  for (int64_t i = 0; i < axis; ++i) outer *= first[i];
  for (int64_t i = axis + 1; i < static_cast<int64_t>(first.size()); ++i) inner *= first[i];
  const int64_t total = out_shape[axis];
  std::vector<T> out(static_cast<std::size_t>(numel(out_shape)));
  std::vector<int64_t> offsets;
  int64_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const int64_t len = p.shape()[axis];
    const T* src = p.data().data();
    for (int64_t o = 0; o < outer; ++o)
      std::copy_n(src + o * len * inner, len * inner, out.data() + (o * total + off) * inner);
    off += len;
  }
  return make_result<T>(std::move(out_shape), std::move(out), parts, "concat",
                        [parts, offsets, axis, outer, inner, total](const std::vector<T>& g) mutable {
                          for (std::size_t i = 0; i < parts.size(); ++i) {
                            auto& p = parts[i];
                            if (!p.requires_grad()) continue;
                            const int64_t len = p.shape()[axis];
                            auto& gp = p.grad_buffer();
                            for (int64_t o = 0; o < outer; ++o) {
                              const T* src = g.data() + (o * total + offsets[i]) * inner;
                              T* dst = gp.data() + o * len * inner;
                              for (int64_t j = 0; j < len * inner; ++j) dst[j] += src[j];
                            }
                          }
                        });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  require(numel(shape) == x.numel(), "reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  return make_result<T>(std::move(shape), x.values(), {&x}, "reshape", [x](const std::vector<T>& g) mutable {
    accumulate(x.grad_buffer(), g);
  });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x, int64_t axis0, int64_t axis1) {
  const int64_t nd = x.ndim();
  axis0 = normalize_axis(axis0, nd, "transpose");
  axis1 = normalize_axis(axis1, nd, "transpose");
  Shape out_shape = x.shape();
  std::swap(out_shape[axis0], out_shape[axis1]);
  // Input strides permuted into output axis order.
  std::vector<int64_t> in_strides(static_cast<std::size_t>(nd), 1);
  for (int64_t i = nd - 2; i >= 0; --i) in_strides[i] = in_strides[i + 1] * x.shape()[i + 1];
  std::swap(in_strides[axis0], in_strides[axis1]);
  const int64_t n = x.numel();
  std::vector<int64_t> src_index(static_cast<std::size_t>(n));
  std::vector<int64_t> idx(static_cast<std::size_t>(nd), 0);
  for (int64_t lin = 0; lin < n; ++lin) {
    int64_t src = 0;
    for (int64_t d = 0; d < nd; ++d) src += idx[d] * in_strides[d];
    src_index[lin] = src;
    for (int64_t d = nd - 1; d >= 0; --d) {
      if (++idx[d] < out_shape[d]) break;
      idx[d] = 0;
    }
  }
  std::vector<T> out(static_cast<std::size_t>(n));
  const T* xd = x.data().data();
  for (int64_t i = 0; i < n; ++i) out[i] = xd[src_index[i]];
  return make_result<T>(std::move(out_shape), std::move(out), {&x}, "transpose",
                        [x, src_index = std::move(src_index)](const std::vector<T>& g) mutable {
                          auto& gx = x.grad_buffer();
                          for (std::size_t i = 0; i < g.size(); ++i) gx[src_index[i]] += g[i];
                        });
}

template <typename T>
Tensor<T> flatten_grid(const Tensor<T>& x) {
  require(x.ndim() == 4, "flatten_grid: expected [B,C,H,W], got " + shape_str(x.shape()));
  return transpose(reshape(x, {x.dim(0), x.dim(1), x.dim(2) * x.dim(3)}), 1, 2);
}

template <typename T>
Tensor<T> unflatten_grid(const Tensor<T>& x, int64_t h, int64_t w) {
  require(x.ndim() == 3 && x.dim(1) == h * w,
          "unflatten_grid: " + shape_str(x.shape()) + " is not a " + std::to_string(h) + "x" + std::to_string(w) +
              " token grid");
  return reshape(transpose(x, 1, 2), {x.dim(0), x.dim(2), h, w});
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T total = 0;
  for (T v : x.data()) total += v;
  return make_result<T>({}, {total}, {&x}, "sum", [x](const std::vector<T>& g) mutable {
    auto& gx = x.grad_buffer();
    for (auto& v : gx) v += g[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  require(x.numel() > 0, "mean: empty tensor");
  return affine(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> upsample2x_bilinear(const Tensor<T>& x) {
  require(x.ndim() == 4 && x.dim(2) >= 1 && x.dim(3) >= 1,
          "upsample2x_bilinear: expected non-empty [B,C,H,W], got " + shape_str(x.shape()));
  const int64_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const auto ty = upsample_taps(h), tx = upsample_taps(w);
  const int64_t oh = 2 * h, ow = 2 * w;
  std::vector<T> out(static_cast<std::size_t>(planes * oh * ow));
  const T* xd = x.data().data();
  for (int64_t p = 0; p < planes; ++p) {
    const T* src = xd + p * h * w;
    T* dst = out.data() + p * oh * ow;
    for (int64_t oy = 0; oy < oh; ++oy) {
      const auto& a = ty[oy];
      const T wy1 = static_cast<T>(a.w1), wy0 = T(1) - wy1;
      for (int64_t ox = 0; ox < ow; ++ox) {
        const auto& b = tx[ox];
        const T wx1 = static_cast<T>(b.w1), wx0 = T(1) - wx1;
        dst[oy * ow + ox] = wy0 * (wx0 * src[a.i0 * w + b.i0] + wx1 * src[a.i0 * w + b.i1]) +
                            wy1 * (wx0 * src[a.i1 * w + b.i0] + wx1 * src[a.i1 * w + b.i1]);
      }
    }
  }
  return make_result<T>({x.dim(0), x.dim(1), oh, ow}, std::move(out), {&x}, "upsample2x_bilinear",
                        [x, ty, tx, planes, h, w, oh, ow](const std::vector<T>& g) mutable {
                          auto& gx = x.grad_buffer();
                          for (int64_t p = 0; p < planes; ++p) {
                            T* dst = gx.data() + p * h * w;
                            const T* src = g.data() + p * oh * ow;
                            for (int64_t oy = 0; oy < oh; ++oy) {
                              const auto& a = ty[oy];
                              const T wy1 = static_cast<T>(a.w1), wy0 = T(1) - wy1;
                              for (int64_t ox = 0; ox < ow; ++ox) {
                                const auto& b = tx[ox];
                                const T wx1 = static_cast<T>(b.w1), wx0 = T(1) - wx1;
                                const T v = src[oy * ow + ox];
                                dst[a.i0 * w + b.i0] += wy0 * wx0 * v;
                                dst[a.i0 * w + b.i1] += wy0 * wx1 * v;
                                dst[a.i1 * w + b.i0] += wy1 * wx0 * v;
                                dst[a.i1 * w + b.i1] += wy1 * wx1 * v;
                              }
                            }
                          }
                        });
}

#define MSTAF_INSTANTIATE(T)                                                                         \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&, bool, bool);                      \
  template Tensor<T> linear<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Conv2dSpec);    \
  template Tensor<T> layer_norm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);         \
  template Tensor<T> softmax<T>(const Tensor<T>&, int64_t);                                          \
  template Tensor<T> gelu<T>(const Tensor<T>&);                                                      \
  template Tensor<T> sigmoid<T>(const Tensor<T>&);                                                   \
  template Tensor<T> log<T>(const Tensor<T>&);                                                       \
  template Tensor<T> clamp<T>(const Tensor<T>&, T, T);                                               \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> affine<T>(const Tensor<T>&, T, T);                                              \
  template Tensor<T> add_bias<T>(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> concat<T>(const std::vector<Tensor<T>>&, int64_t);                              \
  template Tensor<T> reshape<T>(const Tensor<T>&, Shape);                                            \
  template Tensor<T> transpose<T>(const Tensor<T>&, int64_t, int64_t);                               \
  template Tensor<T> flatten_grid<T>(const Tensor<T>&);                                              \
  template Tensor<T> unflatten_grid<T>(const Tensor<T>&, int64_t, int64_t);                          \
  template Tensor<T> sum<T>(const Tensor<T>&);                                                       \
  template Tensor<T> mean<T>(const Tensor<T>&);                                                      \
  template Tensor<T> upsample2x_bilinear<T>(const Tensor<T>&);
MSTAF_INSTANTIATE(float)
MSTAF_INSTANTIATE(double)
#undef MSTAF_INSTANTIATE

}  // namespace mstaf::ops
