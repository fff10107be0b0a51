#include <atomic>
#include <cstdlib>
#include <string>

#include "mstaf/error.hpp"
#include "mstaf/kernels/kernels.hpp"

namespace mstaf::kernels {
namespace {

bool cpu_supports(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return true;
    case Isa::avx2:
#if defined(MSTAF_HAVE_AVX2)
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
    case Isa::neon:
#if defined(MSTAF_HAVE_NEON)
      return true;
#else
      return false;
#endif
  }
  return false;
}

Isa detect() {
  if (const char* env = std::getenv("MSTAF_ISA")) {
    const std::string want(env);
    for (Isa isa : available_isas())
      if (want == isa_name(isa)) return isa;
    if (want != "auto") throw ConfigError("MSTAF_ISA=" + want + " is not available on this build/CPU");
  }
  return available_isas().back();
}

std::atomic<int>& selected() {
  static std::atomic<int> isa{static_cast<int>(detect())};
  return isa;
}

}  // namespace

const char* isa_name(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return "scalar";
    case Isa::avx2:
      return "avx2";
    case Isa::neon:
      return "neon";
  }
  return "?";
}

std::vector<Isa> available_isas() {
  std::vector<Isa> out{Isa::scalar};
  for (Isa isa : {Isa::avx2, Isa::neon})
    if (cpu_supports(isa)) out.push_back(isa);
  return out;
}

Isa default_isa() { return detect(); }

void set_isa(Isa isa) {
  if (!cpu_supports(isa)) throw ConfigError(std::string("ISA not available: ") + isa_name(isa));
  selected().store(static_cast<int>(isa));
}

Isa active_isa() { return static_cast<Isa>(selected().load()); }

template <typename T>
const KernelTable<T>& table_for(Isa isa) {
  switch (isa) {
#if defined(MSTAF_HAVE_AVX2)
    case Isa::avx2:
      return avx2_kernels<T>();
#endif
#if defined(MSTAF_HAVE_NEON)
    case Isa::neon:
      return neon_kernels<T>();
#endif
    default:
      return scalar_kernels<T>();
  }
}

template const KernelTable<float>& table_for<float>(Isa);
template const KernelTable<double>& table_for<double>(Isa);

}  // namespace mstaf::kernels
