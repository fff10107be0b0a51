// AArch64 only. Mirrors the AVX2 variant with 128-bit registers.
#include "mstaf/kernels/kernels.hpp"

#include <arm_neon.h>

#include <cmath>

namespace mstaf::kernels {
namespace {

template <typename T>
struct Vec;

template <>
struct Vec<float> {
  using reg = float32x4_t;
  static constexpr int width = 4;
  static reg zero() { return vdupq_n_f32(0.0f); }
  static reg set1(float x) { return vdupq_n_f32(x); }
  static reg load(const float* p) { return vld1q_f32(p); }
  static void store(float* p, reg v) { vst1q_f32(p, v); }
  static reg fmadd(reg a, reg b, reg c) { return vfmaq_f32(c, a, b); }
  static reg add(reg a, reg b) { return vaddq_f32(a, b); }
  static reg mul(reg a, reg b) { return vmulq_f32(a, b); }
  static reg sub(reg a, reg b) { return vsubq_f32(a, b); }
  static reg div(reg a, reg b) { return vdivq_f32(a, b); }
  static reg sqrt(reg a) { return vsqrtq_f32(a); }
};

template <>
struct Vec<double> {
  using reg = float64x2_t;
  static constexpr int width = 2;
  static reg zero() { return vdupq_n_f64(0.0); }
  static reg set1(double x) { return vdupq_n_f64(x); }
  static reg load(const double* p) { return vld1q_f64(p); }
  static void store(double* p, reg v) { vst1q_f64(p, v); }
  static reg fmadd(reg a, reg b, reg c) { return vfmaq_f64(c, a, b); }
  static reg add(reg a, reg b) { return vaddq_f64(a, b); }
  static reg mul(reg a, reg b) { return vmulq_f64(a, b); }
  static reg sub(reg a, reg b) { return vsubq_f64(a, b); }
  static reg div(reg a, reg b) { return vdivq_f64(a, b); }
  static reg sqrt(reg a) { return vsqrtq_f64(a); }
};

template <typename T>
void gemm_neon(std::int64_t m, std::int64_t n, std::int64_t k, const T* a, std::int64_t lda,
               const T* b, std::int64_t ldb, T* c, std::int64_t ldc, bool accumulate) {
  using V = Vec<T>;
  constexpr int W = V::width;
  const std::int64_t n1 = n - n % W;
  for (std::int64_t i = 0; i < m; ++i) {
    const T* arow = a + i * lda;
    for (std::int64_t j = 0; j < n1; j += W) {
      auto acc = V::zero();
      for (std::int64_t p = 0; p < k; ++p) acc = V::fmadd(V::set1(arow[p]), V::load(b + p * ldb + j), acc);
      T* dst = c + i * ldc + j;
      V::store(dst, accumulate ? V::add(V::load(dst), acc) : acc);
    }
    for (std::int64_t j = n1; j < n; ++j) {
      T acc = 0;
      for (std::int64_t p = 0; p < k; ++p) acc = std::fma(arow[p], b[p * ldb + j], acc);
      T& dst = c[i * ldc + j];
      dst = accumulate ? dst + acc : acc;
    }
  }
}

template <typename T>
void axpy_neon(std::int64_t n, T alpha, const T* x, T* y) {
  using V = Vec<T>;
  const auto av = V::set1(alpha);
  std::int64_t i = 0;
  for (; i + V::width <= n; i += V::width) V::store(y + i, V::fmadd(av, V::load(x + i), V::load(y + i)));
  for (; i < n; ++i) y[i] = std::fma(alpha, x[i], y[i]);
}

template <typename T>
void add_neon(std::int64_t n, const T* a, const T* b, T* out) {
  using V = Vec<T>;
  std::int64_t i = 0;
  for (; i + V::width <= n; i += V::width) V::store(out + i, V::add(V::load(a + i), V::load(b + i)));
  for (; i < n; ++i) out[i] = a[i] + b[i];
}

template <typename T>
void mul_neon(std::int64_t n, const T* a, const T* b, T* out) {
  using V = Vec<T>;
  std::int64_t i = 0;
  for (; i + V::width <= n; i += V::width) V::store(out + i, V::mul(V::load(a + i), V::load(b + i)));
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

template <typename T>
void scale_neon(std::int64_t n, T s, const T* x, T* out) {
  using V = Vec<T>;
  const auto sv = V::set1(s);
  std::int64_t i = 0;
  for (; i + V::width <= n; i += V::width) V::store(out + i, V::mul(sv, V::load(x + i)));
  for (; i < n; ++i) out[i] = s * x[i];
}

template <typename T>
void adam_neon(std::int64_t n, T* param, const T* grad, T* m, T* v, T lr, T beta1, T beta2, T eps,
               T bc1, T bc2) {
  using V = Vec<T>;
  const T one_b1 = T(1) - beta1;
  const T one_b2 = T(1) - beta2;
  std::int64_t i = 0;
  for (; i + V::width <= n; i += V::width) {
    const auto g = V::load(grad + i);
    const auto mi = V::add(V::mul(V::set1(beta1), V::load(m + i)), V::mul(V::set1(one_b1), g));
    const auto vi = V::add(V::mul(V::set1(beta2), V::load(v + i)), V::mul(V::set1(one_b2), V::mul(g, g)));
    V::store(m + i, mi);
    V::store(v + i, vi);
    const auto mhat = V::div(mi, V::set1(bc1));
    const auto vhat = V::div(vi, V::set1(bc2));
    const auto step = V::div(V::mul(V::set1(lr), mhat), V::add(V::sqrt(vhat), V::set1(eps)));
    V::store(param + i, V::sub(V::load(param + i), step));
  }
  for (; i < n; ++i) {
    const T g = grad[i];
    m[i] = beta1 * m[i] + one_b1 * g;
    v[i] = beta2 * v[i] + one_b2 * (g * g);
    const T mhat = m[i] / bc1;
    const T vhat = v[i] / bc2;
    param[i] = param[i] - lr * mhat / (std::sqrt(vhat) + eps);
  }
}

}  // namespace

template <typename T>
const KernelTable<T>& neon_kernels() {
  static const KernelTable<T> table{Isa::neon,    &gemm_neon<T>,  &axpy_neon<T>, &add_neon<T>,
                                    &mul_neon<T>, &scale_neon<T>, &adam_neon<T>};
  return table;
}

template const KernelTable<float>& neon_kernels<float>();
template const KernelTable<double>& neon_kernels<double>();

}  // namespace mstaf::kernels
