// SPDX-License-Identifier: Apache-2.0
// AVX2 + FMA kernels. Compiled with -mavx2 -mfma; only reached through the
// dispatch table after a runtime CPU check.

#include <immintrin.h>

#include "emoface/simd/kernels.hpp"
#include "gemm_driver.hpp"

namespace emoface::simd::detail {
namespace {

// 6x8 register tile: 12 accumulators, 2 B vectors, 1 broadcast.
struct MicroAvx2 {
  static constexpr std::size_t MR = 6;
  static constexpr std::size_t NR = 8;

  static void run(std::size_t kc, const double* a, const double* b, double* c,
                  std::size_t ldc, double alpha) {
    __m256d c00 = _mm256_setzero_pd(), c01 = _mm256_setzero_pd();
    __m256d c10 = _mm256_setzero_pd(), c11 = _mm256_setzero_pd();
    __m256d c20 = _mm256_setzero_pd(), c21 = _mm256_setzero_pd();
    __m256d c30 = _mm256_setzero_pd(), c31 = _mm256_setzero_pd();
    __m256d c40 = _mm256_setzero_pd(), c41 = _mm256_setzero_pd();
    __m256d c50 = _mm256_setzero_pd(), c51 = _mm256_setzero_pd();
    for (std::size_t p = 0; p < kc; ++p) {
      const __m256d b0 = _mm256_load_pd(b);
      const __m256d b1 = _mm256_load_pd(b + 4);
      __m256d av = _mm256_broadcast_sd(a + 0);
      c00 = _mm256_fmadd_pd(av, b0, c00);
      c01 = _mm256_fmadd_pd(av, b1, c01);
      av = _mm256_broadcast_sd(a + 1);
      c10 = _mm256_fmadd_pd(av, b0, c10);
      c11 = _mm256_fmadd_pd(av, b1, c11);
      av = _mm256_broadcast_sd(a + 2);
      c20 = _mm256_fmadd_pd(av, b0, c20);
      c21 = _mm256_fmadd_pd(av, b1, c21);
      av = _mm256_broadcast_sd(a + 3);
      c30 = _mm256_fmadd_pd(av, b0, c30);
      c31 = _mm256_fmadd_pd(av, b1, c31);
      av = _mm256_broadcast_sd(a + 4);
      c40 = _mm256_fmadd_pd(av, b0, c40);
      c41 = _mm256_fmadd_pd(av, b1, c41);
      av = _mm256_broadcast_sd(a + 5);
      c50 = _mm256_fmadd_pd(av, b0, c50);
      c51 = _mm256_fmadd_pd(av, b1, c51);
      a += MR;
      b += NR;
    }
    const __m256d al = _mm256_set1_pd(alpha);
    auto store = [&](double* row, __m256d lo, __m256d hi) {
      _mm256_storeu_pd(row, _mm256_fmadd_pd(al, lo, _mm256_loadu_pd(row)));
      _mm256_storeu_pd(row + 4, _mm256_fmadd_pd(al, hi, _mm256_loadu_pd(row + 4)));
    };
    store(c + 0 * ldc, c00, c01);
    store(c + 1 * ldc, c10, c11);
    store(c + 2 * ldc, c20, c21);
    store(c + 3 * ldc, c30, c31);
    store(c + 4 * ldc, c40, c41);
    store(c + 5 * ldc, c50, c51);
  }
};

void gemm_avx2(bool trans_a, bool trans_b, std::size_t m, std::size_t n,
               std::size_t k, double alpha, const double* a, std::size_t lda,
               const double* b, std::size_t ldb, double beta, double* c,
               std::size_t ldc) {
  gemm_blocked<MicroAvx2>(trans_a, trans_b, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

void axpy_avx2(std::size_t n, double alpha, const double* x, double* y) {
  const __m256d al = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(al, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

double dot_avx2(std::size_t n, const double* x, const double* y) {
  __m256d acc0 = _mm256_setzero_pd(), acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), acc1);
  }
  double s = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) s += x[i] * y[i];
  return s;
}

double sum_avx2(std::size_t n, const double* x) {
  __m256d acc0 = _mm256_setzero_pd(), acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_add_pd(acc0, _mm256_loadu_pd(x + i));
    acc1 = _mm256_add_pd(acc1, _mm256_loadu_pd(x + i + 4));
  }
  double s = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) s += x[i];
  return s;
}

void add_avx2(std::size_t n, const double* x, const double* y, double* out) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) out[i] = x[i] + y[i];
}

void sub_avx2(std::size_t n, const double* x, const double* y, double* out) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_sub_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) out[i] = x[i] - y[i];
}

void mul_avx2(std::size_t n, const double* x, const double* y, double* out) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) out[i] = x[i] * y[i];
}

void scale_avx2(std::size_t n, double alpha, const double* x, double* out) {
  const __m256d al = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) _mm256_storeu_pd(out + i, _mm256_mul_pd(al, _mm256_loadu_pd(x + i)));
  for (; i < n; ++i) out[i] = alpha * x[i];
}

}  // namespace

const KernelTable avx2_table{Isa::avx2, gemm_avx2, axpy_avx2, dot_avx2, sum_avx2,
                             add_avx2,  sub_avx2,  mul_avx2,  scale_avx2};

}  // namespace emoface::simd::detail
