// Compiled with -mavx2 -mfma. Only reached after the runtime CPU check.
#include "mstaf/kernels/kernels.hpp"

#include <immintrin.h>

#include <cmath>

namespace mstaf::kernels {
namespace {

template <typename T>
struct Vec;

template <>
struct Vec<float> {
  using reg = __m256;
  static constexpr int width = 8;
  static reg zero() { return _mm256_setzero_ps(); }
  static reg set1(float x) { return _mm256_set1_ps(x); }
  static reg load(const float* p) { return _mm256_loadu_ps(p); }
  static void store(float* p, reg v) { _mm256_storeu_ps(p, v); }
  static reg fmadd(reg a, reg b, reg c) { return _mm256_fmadd_ps(a, b, c); }
  static reg add(reg a, reg b) { return _mm256_add_ps(a, b); }
  static reg mul(reg a, reg b) { return _mm256_mul_ps(a, b); }
  static reg sub(reg a, reg b) { return _mm256_sub_ps(a, b); }
  static reg div(reg a, reg b) { return _mm256_div_ps(a, b); }
  static reg sqrt(reg a) { return _mm256_sqrt_ps(a); }
};

template <>
struct Vec<double> {
  using reg = __m256d;
  static constexpr int width = 4;
  static reg zero() { return _mm256_setzero_pd(); }
  static reg set1(double x) { return _mm256_set1_pd(x); }
  static reg load(const double* p) { return _mm256_loadu_pd(p); }
  static void store(double* p, reg v) { _mm256_storeu_pd(p, v); }
  static reg fmadd(reg a, reg b, reg c) { return _mm256_fmadd_pd(a, b, c); }
  static reg add(reg a, reg b) { return _mm256_add_pd(a, b); }
  static reg mul(reg a, reg b) { return _mm256_mul_pd(a, b); }
  static reg sub(reg a, reg b) { return _mm256_sub_pd(a, b); }
  static reg div(reg a, reg b) { return _mm256_div_pd(a, b); }
  static reg sqrt(reg a) { return _mm256_sqrt_pd(a); }
};

template <typename T>
inline void finish(T* c, typename Vec<T>::reg acc, bool accumulate) {
  using V = Vec<T>;
  V::store(c, accumulate ? V::add(V::load(c), acc) : acc);
}

// 4 rows x 2 vectors register block.
template <typename T>
void block_4x2(std::int64_t k, const T* a, std::int64_t lda, const T* b, std::int64_t ldb, T* c,
               std::int64_t ldc, bool accumulate) {
  using V = Vec<T>;
  constexpr int W = V::width;
  auto c00 = V::zero(), c01 = V::zero(), c10 = V::zero(), c11 = V::zero();
  auto c20 = V::zero(), c21 = V::zero(), c30 = V::zero(), c31 = V::zero();
  const T* a0 = a;
  const T* a1 = a + lda;
  const T* a2 = a + 2 * lda;
  const T* a3 = a + 3 * lda;
  for (std::int64_t p = 0; p < k; ++p) {
    const auto b0 = V::load(b + p * ldb);
    const auto b1 = V::load(b + p * ldb + W);
    auto av = V::set1(a0[p]);
    c00 = V::fmadd(av, b0, c00);
    c01 = V::fmadd(av, b1, c01);
    av = V::set1(a1[p]);
    c10 = V::fmadd(av, b0, c10);
    c11 = V::fmadd(av, b1, c11);
    av = V::set1(a2[p]);
    c20 = V::fmadd(av, b0, c20);
    c21 = V::fmadd(av, b1, c21);
    av = V::set1(a3[p]);
    c30 = V::fmadd(av, b0, c30);
    c31 = V::fmadd(av, b1, c31);
  }
  finish<T>(c, c00, accumulate);
  finish<T>(c + W, c01, accumulate);
  finish<T>(c + ldc, c10, accumulate);
  finish<T>(c + ldc + W, c11, accumulate);
  finish<T>(c + 2 * ldc, c20, accumulate);
  finish<T>(c + 2 * ldc + W, c21, accumulate);
  finish<T>(c + 3 * ldc, c30, accumulate);
  finish<T>(c + 3 * ldc + W, c31, accumulate);
}

// 1 row x 1 vector.
template <typename T>
void block_1x1(std::int64_t k, const T* a, const T* b, std::int64_t ldb, T* c, bool accumulate) {
  using V = Vec<T>;
  auto acc = V::zero();
  for (std::int64_t p = 0; p < k; ++p) acc = V::fmadd(V::set1(a[p]), V::load(b + p * ldb), acc);
  finish<T>(c, acc, accumulate);
}

template <typename T>
void gemm_avx2(std::int64_t m, std::int64_t n, std::int64_t k, const T* a, std::int64_t lda,
               const T* b, std::int64_t ldb, T* c, std::int64_t ldc, bool accumulate) {
  constexpr int W = Vec<T>::width;
  const std::int64_t n2 = n - n % (2 * W);
  const std::int64_t n1 = n - n % W;
  const std::int64_t m4 = m - m % 4;
  for (std::int64_t i = 0; i < m4; i += 4) {
    for (std::int64_t j = 0; j < n2; j += 2 * W)
      block_4x2<T>(k, a + i * lda, lda, b + j, ldb, c + i * ldc + j, ldc, accumulate);
    for (std::int64_t r = 0; r < 4; ++r)
      for (std::int64_t j = n2; j < n1; j += W)
        block_1x1<T>(k, a + (i + r) * lda, b + j, ldb, c + (i + r) * ldc + j, accumulate);
  }
  for (std::int64_t i = m4; i < m; ++i)
    for (std::int64_t j = 0; j < n1; j += W)
      block_1x1<T>(k, a + i * lda, b + j, ldb, c + i * ldc + j, accumulate);
  if (n1 < n) {
    for (std::int64_t i = 0; i < m; ++i) {
      for (std::int64_t j = n1; j < n; ++j) {
        T acc = 0;
        for (std::int64_t p = 0; p < k; ++p) acc = std::fma(a[i * lda + p], b[p * ldb + j], acc);
        T& dst = c[i * ldc + j];
        dst = accumulate ? dst + acc : acc;
      }
    }
  }
}

template <typename T>
void axpy_avx2(std::int64_t n, T alpha, const T* x, T* y) {
  using V = Vec<T>;
  const auto av = V::set1(alpha);
  std::int64_t i = 0;
  for (; i + V::width <= n; i += V::width) V::store(y + i, V::fmadd(av, V::load(x + i), V::load(y + i)));
  for (; i < n; ++i) y[i] = std::fma(alpha, x[i], y[i]);
}

template <typename T>
void add_avx2(std::int64_t n, const T* a, const T* b, T* out) {
  using V = Vec<T>;
  std::int64_t i = 0;
  for (; i + V::width <= n; i += V::width) V::store(out + i, V::add(V::load(a + i), V::load(b + i)));
  for (; i < n; ++i) out[i] = a[i] + b[i];
}

template <typename T>
void mul_avx2(std::int64_t n, const T* a, const T* b, T* out) {
  using V = Vec<T>;
  std::int64_t i = 0;
  for (; i + V::width <= n; i += V::width) V::store(out + i, V::mul(V::load(a + i), V::load(b + i)));
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

template <typename T>
void scale_avx2(std::int64_t n, T s, const T* x, T* out) {
  using V = Vec<T>;
  const auto sv = V::set1(s);
  std::int64_t i = 0;
  for (; i + V::width <= n; i += V::width) V::store(out + i, V::mul(sv, V::load(x + i)));
  for (; i < n; ++i) out[i] = s * x[i];
}

template <typename T>
void adam_avx2(std::int64_t n, T* param, const T* grad, T* m, T* v, T lr, T beta1, T beta2, T eps,
               T bc1, T bc2) {
  using V = Vec<T>;
  const T one_b1 = T(1) - beta1;
  const T one_b2 = T(1) - beta2;
  const auto vb1 = V::set1(beta1), vb2 = V::set1(beta2);
  const auto v1b1 = V::set1(one_b1), v1b2 = V::set1(one_b2);
  const auto vlr = V::set1(lr), veps = V::set1(eps), vbc1 = V::set1(bc1), vbc2 = V::set1(bc2);
  std::int64_t i = 0;
  for (; i + V::width <= n; i += V::width) {
    const auto g = V::load(grad + i);
    const auto mi = V::add(V::mul(vb1, V::load(m + i)), V::mul(v1b1, g));
    const auto vi = V::add(V::mul(vb2, V::load(v + i)), V::mul(v1b2, V::mul(g, g)));
    V::store(m + i, mi);
    V::store(v + i, vi);
    const auto mhat = V::div(mi, vbc1);
    const auto vhat = V::div(vi, vbc2);
    const auto step = V::div(V::mul(vlr, mhat), V::add(V::sqrt(vhat), veps));
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
const KernelTable<T>& avx2_kernels() {
  static const KernelTable<T> table{Isa::avx2,    &gemm_avx2<T>, &axpy_avx2<T>, &add_avx2<T>,
                                    &mul_avx2<T>, &scale_avx2<T>, &adam_avx2<T>};
  return table;
}

template const KernelTable<float>& avx2_kernels<float>();
template const KernelTable<double>& avx2_kernels<double>();

}  // namespace mstaf::kernels
