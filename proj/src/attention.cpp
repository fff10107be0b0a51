#include "mstaf/attention.hpp"

#include <cmath>

#include "mstaf/error.hpp"
#include "mstaf/ops.hpp"

namespace mstaf {

double softmax_scale_divisor(SoftmaxScale scale, std::int64_t channels) {
  const double c = static_cast<double>(channels);
  return scale == SoftmaxScale::sqrt_c ? std::sqrt(c) : std::sqrt(c / 2.0);
}

template <typename T>
Projection<T> project_qkv(const TokenGrid<T>& f, const QkvParams<T>& params) {
  f.validate();
  if (params.wq.ndim() != 2 || params.wq.dim(0) != f.channels())
    throw DimensionError("project_qkv: tokens have " + std::to_string(f.channels()) +
                         " channels but W_Q is " + shape_str(params.wq.shape()));
  return Projection<T>{ops::linear(f.tokens, params.wq), ops::linear(f.tokens, params.wk),
                       ops::linear(f.tokens, params.wv), {{f.h, f.w}}};
}

template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, double divisor,
                    Tensor<T>* weights) {
  if (q.ndim() != 3 || k.ndim() != 3 || v.ndim() != 3 || q.dim(2) != k.dim(2) || k.dim(1) != v.dim(1))
    throw DimensionError("attention: incompatible q " + shape_str(q.shape()) + ", k " + shape_str(k.shape()) +
                         ", v " + shape_str(v.shape()));
  auto scores = ops::affine(ops::matmul(q, k, false, true), static_cast<T>(1.0 / divisor));
  auto probs = ops::softmax(scores, -1);
  if (weights) *weights = probs;
  return ops::matmul(probs, v);
}

template <typename T>
Tensor<T> head_self(const Projection<T>& own, double divisor, Tensor<T>* weights) {
  return attention(own.q, own.k, own.v, divisor, weights);
}

template <typename T>
Tensor<T> head_cross(const Projection<T>& own, const Projection<T>& other, double divisor, Tensor<T>* weights) {
  return attention(own.q, other.k, other.v, divisor, weights);
}

template <typename T>
Tensor<T> mix_ffn(const Tensor<T>& x, std::int64_t h, std::int64_t w, const MixFfnParams<T>& params) {
  if (x.ndim() != 3 || x.dim(1) != h * w)
    throw UsageError("mix_ffn: " + shape_str(x.shape()) + " is not a " + std::to_string(h) + "x" +
                     std::to_string(w) + " token grid");
  const auto hidden_c = params.fc1_w.dim(1);
  auto hidden = ops::linear(x, params.fc1_w, params.fc1_b);
  auto grid = ops::unflatten_grid(hidden, h, w);
  auto mixed = ops::conv2d(grid, params.dw_w, params.dw_b, {1, 1, static_cast<int>(hidden_c)});
  auto act = ops::gelu(ops::flatten_grid(mixed));
  return ops::linear(act, params.fc2_w, params.fc2_b);
}

#define MSTAF_INSTANTIATE(T)                                                                                \
  template Projection<T> project_qkv<T>(const TokenGrid<T>&, const QkvParams<T>&);                          \
  template Tensor<T> attention<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, double, Tensor<T>*); \
  template Tensor<T> head_self<T>(const Projection<T>&, double, Tensor<T>*);                                \
  template Tensor<T> head_cross<T>(const Projection<T>&, const Projection<T>&, double, Tensor<T>*);         \
  template Tensor<T> mix_ffn<T>(const Tensor<T>&, std::int64_t, std::int64_t, const MixFfnParams<T>&);
MSTAF_INSTANTIATE(float)
MSTAF_INSTANTIATE(double)
#undef MSTAF_INSTANTIATE

}  // namespace mstaf
