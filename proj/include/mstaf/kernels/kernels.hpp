#pragma once
// Inner-loop kernels with a scalar reference and SIMD variants picked at runtime.
//
// Every variant performs the same IEEE operations in the same order per output
// element (products accumulated with fused multiply-add along k, no
// reassociation), so scalar and SIMD results are bit-identical. The
// equivalence tests rely on this.

#include <cstdint>
#include <string>
#include <vector>

namespace mstaf::kernels {

enum class Isa { scalar, avx2, neon };

const char* isa_name(Isa isa);

template <typename T>
struct KernelTable {
  Isa isa;
  // C[m x n] (+)= A[m x k] * B[k x n], row-major with leading dimensions.
  // Each C element is acc = 0; acc = fma(a, b, acc) for k ascending; then
  // stored or added to C.
  void (*gemm)(std::int64_t m, std::int64_t n, std::int64_t k, const T* a, std::int64_t lda,
               const T* b, std::int64_t ldb, T* c, std::int64_t ldc, bool accumulate);
  // y = fma(alpha, x, y)
  void (*axpy)(std::int64_t n, T alpha, const T* x, T* y);
  void (*add)(std::int64_t n, const T* a, const T* b, T* out);
  void (*mul)(std::int64_t n, const T* a, const T* b, T* out);
  void (*scale)(std::int64_t n, T s, const T* x, T* out);
  // One bias-corrected Adam update. bc1 = 1 - beta1^t, bc2 = 1 - beta2^t.
  void (*adam)(std::int64_t n, T* param, const T* grad, T* m, T* v, T lr, T beta1, T beta2,
               T eps, T bc1, T bc2);
};

template <typename T>
const KernelTable<T>& scalar_kernels();
#if defined(MSTAF_HAVE_AVX2)
template <typename T>
const KernelTable<T>& avx2_kernels();
#endif
#if defined(MSTAF_HAVE_NEON)
template <typename T>
const KernelTable<T>& neon_kernels();
#endif

// ISAs compiled in and supported by the running CPU, scalar first.
std::vector<Isa> available_isas();

// Best available ISA, or the one named by MSTAF_ISA (scalar|avx2|neon) if set.
Isa default_isa();

// Overrides the process-wide selection. Throws ConfigError if unavailable.
void set_isa(Isa isa);
Isa active_isa();

template <typename T>
const KernelTable<T>& table_for(Isa isa);

template <typename T>
const KernelTable<T>& active() {
  return table_for<T>(active_isa());
}

}  // namespace mstaf::kernels
