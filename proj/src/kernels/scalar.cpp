#include "mstaf/kernels/kernels.hpp"

#include <cmath>
#include <vector>

namespace mstaf::kernels {
namespace {

template <typename T>
void gemm_scalar(std::int64_t m, std::int64_t n, std::int64_t k, const T* a, std::int64_t lda,
                 const T* b, std::int64_t ldb, T* c, std::int64_t ldc, bool accumulate) {
  std::vector<T> acc(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < m; ++i) {
    std::fill(acc.begin(), acc.end(), T(0));
    const T* arow = a + i * lda;
    for (std::int64_t p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* brow = b + p * ldb;
      for (std::int64_t j = 0; j < n; ++j) acc[j] = std::fma(av, brow[j], acc[j]);
    }
    T* crow = c + i * ldc;
    if (accumulate) {
      for (std::int64_t j = 0; j < n; ++j) crow[j] = crow[j] + acc[j];
    } else {
      for (std::int64_t j = 0; j < n; ++j) crow[j] = acc[j];
    }
  }
}

template <typename T>
void axpy_scalar(std::int64_t n, T alpha, const T* x, T* y) {
  for (std::int64_t i = 0; i < n; ++i) y[i] = std::fma(alpha, x[i], y[i]);
}

template <typename T>
void add_scalar(std::int64_t n, const T* a, const T* b, T* out) {
  for (std::int64_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

template <typename T>
void mul_scalar(std::int64_t n, const T* a, const T* b, T* out) {
  for (std::int64_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

template <typename T>
void scale_scalar(std::int64_t n, T s, const T* x, T* out) {
  for (std::int64_t i = 0; i < n; ++i) out[i] = s * x[i];
}

template <typename T>
void adam_scalar(std::int64_t n, T* param, const T* grad, T* m, T* v, T lr, T beta1, T beta2,
                 T eps, T bc1, T bc2) {
  const T one_b1 = T(1) - beta1;
  const T one_b2 = T(1) - beta2;
  for (std::int64_t i = 0; i < n; ++i) {
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
const KernelTable<T>& scalar_kernels() {
  static const KernelTable<T> table{Isa::scalar,   &gemm_scalar<T>,  &axpy_scalar<T>,
                                    &add_scalar<T>, &mul_scalar<T>,   &scale_scalar<T>,
                                    &adam_scalar<T>};
  return table;
}

template const KernelTable<float>& scalar_kernels<float>();
template const KernelTable<double>& scalar_kernels<double>();

}  // namespace mstaf::kernels
