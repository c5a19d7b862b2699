// SPDX-License-Identifier: Apache-2.0
// AVX-512F kernels. Compiled with -mavx512f; reached only after a runtime check.

#include <immintrin.h>

#include "emoface/simd/kernels.hpp"
#include "gemm_driver.hpp"

namespace emoface::simd::detail {
namespace {

// 8x16 tile: 16 zmm accumulators.
struct MicroAvx512 {
  static constexpr std::size_t MR = 8;
  static constexpr std::size_t NR = 16;

  static void run(std::size_t kc, const double* a, const double* b, double* c,
                  std::size_t ldc, double alpha) {
    __m512d acc[MR][2];
#pragma GCC unroll 8
    for (std::size_t r = 0; r < MR; ++r) {
      acc[r][0] = _mm512_setzero_pd();
      acc[r][1] = _mm512_setzero_pd();
    }
    for (std::size_t p = 0; p < kc; ++p) {
      const __m512d b0 = _mm512_load_pd(b);
      const __m512d b1 = _mm512_load_pd(b + 8);
#pragma GCC unroll 8
      for (std::size_t r = 0; r < MR; ++r) {
        const __m512d av = _mm512_set1_pd(a[r]);
        acc[r][0] = _mm512_fmadd_pd(av, b0, acc[r][0]);
        acc[r][1] = _mm512_fmadd_pd(av, b1, acc[r][1]);
      }
      a += MR;
      b += NR;
    }
    const __m512d al = _mm512_set1_pd(alpha);
#pragma GCC unroll 8
    for (std::size_t r = 0; r < MR; ++r) {
      double* row = c + r * ldc;
      _mm512_storeu_pd(row, _mm512_fmadd_pd(al, acc[r][0], _mm512_loadu_pd(row)));
      _mm512_storeu_pd(row + 8, _mm512_fmadd_pd(al, acc[r][1], _mm512_loadu_pd(row + 8)));
    }
  }
};

void gemm_avx512(bool trans_a, bool trans_b, std::size_t m, std::size_t n,
                 std::size_t k, double alpha, const double* a, std::size_t lda,
                 const double* b, std::size_t ldb, double beta, double* c,
                 std::size_t ldc) {
  gemm_blocked<MicroAvx512>(trans_a, trans_b, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

void axpy_avx512(std::size_t n, double alpha, const double* x, double* y) {
  const __m512d al = _mm512_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm512_storeu_pd(y + i, _mm512_fmadd_pd(al, _mm512_loadu_pd(x + i), _mm512_loadu_pd(y + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

double dot_avx512(std::size_t n, const double* x, const double* y) {
  __m512d acc = _mm512_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    acc = _mm512_fmadd_pd(_mm512_loadu_pd(x + i), _mm512_loadu_pd(y + i), acc);
  double s = _mm512_reduce_add_pd(acc);
  for (; i < n; ++i) s += x[i] * y[i];
  return s;
}

double sum_avx512(std::size_t n, const double* x) {
  __m512d acc = _mm512_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) acc = _mm512_add_pd(acc, _mm512_loadu_pd(x + i));
  double s = _mm512_reduce_add_pd(acc);
  for (; i < n; ++i) s += x[i];
  return s;
}

void add_avx512(std::size_t n, const double* x, const double* y, double* out) {
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm512_storeu_pd(out + i, _mm512_add_pd(_mm512_loadu_pd(x + i), _mm512_loadu_pd(y + i)));
  for (; i < n; ++i) out[i] = x[i] + y[i];
}

void sub_avx512(std::size_t n, const double* x, const double* y, double* out) {
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm512_storeu_pd(out + i, _mm512_sub_pd(_mm512_loadu_pd(x + i), _mm512_loadu_pd(y + i)));
  for (; i < n; ++i) out[i] = x[i] - y[i];
}

void mul_avx512(std::size_t n, const double* x, const double* y, double* out) {
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm512_storeu_pd(out + i, _mm512_mul_pd(_mm512_loadu_pd(x + i), _mm512_loadu_pd(y + i)));
  for (; i < n; ++i) out[i] = x[i] * y[i];
}

void scale_avx512(std::size_t n, double alpha, const double* x, double* out) {
  const __m512d al = _mm512_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) _mm512_storeu_pd(out + i, _mm512_mul_pd(al, _mm512_loadu_pd(x + i)));
  for (; i < n; ++i) out[i] = alpha * x[i];
}

}  // namespace

const KernelTable avx512_table{Isa::avx512, gemm_avx512, axpy_avx512, dot_avx512, sum_avx512,
                               add_avx512,  sub_avx512,  mul_avx512,  scale_avx512};

}  // namespace emoface::simd::detail
