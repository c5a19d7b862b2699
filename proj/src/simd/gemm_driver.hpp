// SPDX-License-Identifier: Apache-2.0
// Blocked GEMM driver shared by the vector kernel translation units.
//
// Included only from ISA-specific .cpp files. Everything here lives in an
// anonymous namespace so each translation unit gets its own copy compiled
// with its own target flags; no std:: templates are instantiated here, so
// the linker can never fold an AVX body into a baseline caller.
#pragma once

#include <cstddef>

namespace emoface::simd::detail {
namespace {

constexpr std::size_t kBlockK = 256;
constexpr std::size_t kBlockM = 96;
constexpr std::size_t kBlockN = 512;

inline std::size_t min_size(std::size_t a, std::size_t b) { return a < b ? a : b; }

// Packs rows [i0, i0+mc) x cols [p0, p0+kc) of op(A) into MR-row panels,
// zero-filling the ragged last panel.
template <std::size_t MR>
void pack_a(bool trans, const double* a, std::size_t lda, std::size_t i0,
            std::size_t mc, std::size_t p0, std::size_t kc, double* out) {
  for (std::size_t ir = 0; ir < mc; ir += MR) {
    const std::size_t rows = min_size(MR, mc - ir);
    for (std::size_t p = 0; p < kc; ++p) {
      for (std::size_t r = 0; r < MR; ++r) {
        double v = 0.0;
        if (r < rows) {
          const std::size_t i = i0 + ir + r;
          const std::size_t q = p0 + p;
          v = trans ? a[q * lda + i] : a[i * lda + q];
        }
        *out++ = v;
      }
    }
  }
}

template <std::size_t NR>
void pack_b(bool trans, const double* b, std::size_t ldb, std::size_t p0,
            std::size_t kc, std::size_t j0, std::size_t nc, double* out) {
  for (std::size_t jr = 0; jr < nc; jr += NR) {
    const std::size_t cols = min_size(NR, nc - jr);
    for (std::size_t p = 0; p < kc; ++p) {
      const std::size_t q = p0 + p;
      if (!trans && cols == NR) {
        const double* src = b + q * ldb + j0 + jr;
        for (std::size_t c = 0; c < NR; ++c) out[c] = src[c];
        out += NR;
        continue;
      }
      for (std::size_t c = 0; c < NR; ++c) {
        double v = 0.0;
        if (c < cols) {
          const std::size_t j = j0 + jr + c;
          v = trans ? b[j * ldb + q] : b[q * ldb + j];
        }
        *out++ = v;
      }
    }
  }
}

// Micro must provide MR, NR and
//   static void run(std::size_t kc, const double* a, const double* b,
//                   double* c, std::size_t ldc, double alpha);
// accumulating alpha * (packed A panel) * (packed B panel) into an MR x NR tile.
template <typename Micro>
void gemm_blocked(bool trans_a, bool trans_b, std::size_t m, std::size_t n,
                  std::size_t k, double alpha, const double* a, std::size_t lda,
                  const double* b, std::size_t ldb, double beta, double* c,
                  std::size_t ldc) {
  constexpr std::size_t MR = Micro::MR;
  constexpr std::size_t NR = Micro::NR;
  static_assert(kBlockM % MR == 0);
  static_assert(kBlockN % NR == 0);

  for (std::size_t i = 0; i < m; ++i) {
    double* row = c + i * ldc;
    if (beta == 0.0) {
      for (std::size_t j = 0; j < n; ++j) row[j] = 0.0;
    } else if (beta != 1.0) {
      for (std::size_t j = 0; j < n; ++j) row[j] *= beta;
    }
  }
  if (k == 0 || alpha == 0.0) return;

  alignas(64) static thread_local double packed_a[kBlockM * kBlockK];
  alignas(64) static thread_local double packed_b[kBlockK * kBlockN];
  alignas(64) double edge[MR * NR];

  for (std::size_t jc = 0; jc < n; jc += kBlockN) {
    const std::size_t nc = min_size(kBlockN, n - jc);
    for (std::size_t pc = 0; pc < k; pc += kBlockK) {
      const std::size_t kc = min_size(kBlockK, k - pc);
      pack_b<NR>(trans_b, b, ldb, pc, kc, jc, nc, packed_b);
      for (std::size_t ic = 0; ic < m; ic += kBlockM) {
        const std::size_t mc = min_size(kBlockM, m - ic);
        pack_a<MR>(trans_a, a, lda, ic, mc, pc, kc, packed_a);
        for (std::size_t jr = 0; jr < nc; jr += NR) {
          const std::size_t cols = min_size(NR, nc - jr);
          const double* bp = packed_b + jr * kc;
          for (std::size_t ir = 0; ir < mc; ir += MR) {
            const std::size_t rows = min_size(MR, mc - ir);
            const double* ap = packed_a + ir * kc;
            double* ct = c + (ic + ir) * ldc + jc + jr;
            if (rows == MR && cols == NR) {
              Micro::run(kc, ap, bp, ct, ldc, alpha);
            } else {
              for (std::size_t q = 0; q < MR * NR; ++q) edge[q] = 0.0;
              Micro::run(kc, ap, bp, edge, NR, alpha);
              for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t q = 0; q < cols; ++q) ct[r * ldc + q] += edge[r * NR + q];
            }
          }
        }
      }
    }
  }
}

}  // namespace
}  // namespace emoface::simd::detail
