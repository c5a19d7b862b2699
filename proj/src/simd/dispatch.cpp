// SPDX-License-Identifier: Apache-2.0
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "emoface/simd/kernels.hpp"

namespace emoface::simd {

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::scalar: return "scalar";
    case Isa::avx2: return "avx2";
    case Isa::avx512: return "avx512";
  }
  return "unknown";
}

bool isa_supported(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return true;
    case Isa::avx2:
#if defined(EMOFACE_HAVE_AVX2)
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
    case Isa::avx512:
#if defined(EMOFACE_HAVE_AVX512)
      return __builtin_cpu_supports("avx512f");
#else
      return false;
#endif
  }
  return false;
}

const KernelTable& kernels_for(Isa isa) {
  if (!isa_supported(isa))
    throw std::runtime_error("simd: " + std::string(isa_name(isa)) + " not supported on this CPU");
  switch (isa) {
#if defined(EMOFACE_HAVE_AVX2)
    case Isa::avx2: return detail::avx2_table;
#endif
#if defined(EMOFACE_HAVE_AVX512)
    case Isa::avx512: return detail::avx512_table;
#endif
    default: return detail::scalar_table;
  }
}

namespace {

const KernelTable& select() {
  Isa cap = Isa::avx512;
  if (const char* env = std::getenv("EMOFACE_SIMD")) {
    const std::string_view v(env);
    if (v == "scalar") cap = Isa::scalar;
    else if (v == "avx2") cap = Isa::avx2;
  }
  if (cap == Isa::avx512 && isa_supported(Isa::avx512)) return kernels_for(Isa::avx512);
  if (cap != Isa::scalar && isa_supported(Isa::avx2)) return kernels_for(Isa::avx2);
  return detail::scalar_table;
}

}  // namespace

const KernelTable& kernels() {
  static const KernelTable& table = select();
  return table;
}

}  // namespace emoface::simd
