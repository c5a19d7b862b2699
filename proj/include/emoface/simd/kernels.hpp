// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string_view>

namespace emoface::simd {

enum class Isa { scalar, avx2, avx512 };

std::string_view isa_name(Isa isa);

/// Table of the data-parallel inner loops used by the tensor engine.
///
/// Every entry has a scalar reference implementation; vector variants must
/// agree with it exactly for elementwise kernels and to rounding for the
/// reductions (gemm, dot, sum), where FMA contraction changes the last bits.
struct KernelTable {
  Isa isa;

  // C[m,n] = alpha * op(A) * op(B) + beta * C, row-major.
  // op(A) is m x k: A is m x k (lda >= k), or k x m when trans_a (lda >= m).
  void (*gemm)(bool trans_a, bool trans_b, std::size_t m, std::size_t n,
               std::size_t k, double alpha, const double* a, std::size_t lda,
               const double* b, std::size_t ldb, double beta, double* c,
               std::size_t ldc);

  void (*axpy)(std::size_t n, double alpha, const double* x, double* y);
  double (*dot)(std::size_t n, const double* x, const double* y);
  double (*sum)(std::size_t n, const double* x);
  void (*add)(std::size_t n, const double* x, const double* y, double* out);
  void (*sub)(std::size_t n, const double* x, const double* y, double* out);
  void (*mul)(std::size_t n, const double* x, const double* y, double* out);
  void (*scale)(std::size_t n, double alpha, const double* x, double* out);
};

bool isa_supported(Isa isa);

/// Kernels for a specific instruction set. Throws if unsupported.
const KernelTable& kernels_for(Isa isa);

/// Best supported kernels, chosen once per process. EMOFACE_SIMD=scalar|avx2|avx512
/// caps the selection.
const KernelTable& kernels();

namespace detail {
extern const KernelTable scalar_table;
#if defined(EMOFACE_HAVE_AVX2)
extern const KernelTable avx2_table;
#endif
#if defined(EMOFACE_HAVE_AVX512)
extern const KernelTable avx512_table;
#endif
}  // namespace detail

}  // namespace emoface::simd
