// SPDX-License-Identifier: Apache-2.0
#include "emoface/conv.hpp"

#include <algorithm>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

#include "emoface/simd/kernels.hpp"

namespace emoface::conv {

Geometry Geometry::make(std::size_t n, std::size_t c, std::size_t h, std::size_t w,
                        std::size_t o, std::size_t kh, std::size_t kw, std::size_t stride,
                        std::size_t pad) {
  if (stride == 0) throw std::invalid_argument("conv: stride must be positive");
  if (h + 2 * pad < kh || w + 2 * pad < kw)
    throw std::invalid_argument("conv: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                                " larger than padded input " + std::to_string(h) + "x" +
                                std::to_string(w));
  Geometry g{n, c, h, w, o, kh, kw, stride, pad, 0, 0};
  g.ho = (h + 2 * pad - kh) / stride + 1;
  g.wo = (w + 2 * pad - kw) / stride + 1;
  return g;
}

namespace {

bool is_pointwise(const Geometry& g) {
  return g.kh == 1 && g.kw == 1 && g.stride == 1 && g.pad == 0;
}

// Valid output column range [lo, hi) for kernel column kj.
void valid_range(std::size_t out, std::size_t in, std::size_t k, std::size_t stride,
                 std::size_t pad, std::size_t& lo, std::size_t& hi) {
  // in index = o*stride + k - pad, need 0 <= . < in
  lo = k >= pad ? 0 : (pad - k + stride - 1) / stride;
  const std::size_t limit = in + pad > k ? in + pad - k : 0;  // o*stride < limit
  hi = limit == 0 ? 0 : std::min(out, (limit - 1) / stride + 1);
  if (lo > hi) lo = hi;
}

// cols[(c*kh+ki)*kw+kj][oh*wo+ow] = x[c][oh*s+ki-p][ow*s+kj-p]
void im2col(const Geometry& g, const double* x, double* cols) {
  const std::size_t plane = g.ho * g.wo;
  for (std::size_t c = 0; c < g.c; ++c) {
    const double* xc = x + c * g.h * g.w;
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      std::size_t oh_lo, oh_hi;
      valid_range(g.ho, g.h, ki, g.stride, g.pad, oh_lo, oh_hi);
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        std::size_t ow_lo, ow_hi;
        valid_range(g.wo, g.w, kj, g.stride, g.pad, ow_lo, ow_hi);
        double* row = cols + ((c * g.kh + ki) * g.kw + kj) * plane;
        std::fill(row, row + oh_lo * g.wo, 0.0);
        for (std::size_t oh = oh_lo; oh < oh_hi; ++oh) {
          double* dst = row + oh * g.wo;
          const double* src = xc + (oh * g.stride + ki - g.pad) * g.w;
          std::fill(dst, dst + ow_lo, 0.0);
          if (g.stride == 1) {
            std::memcpy(dst + ow_lo, src + ow_lo + kj - g.pad, (ow_hi - ow_lo) * sizeof(double));
          } else {
            for (std::size_t ow = ow_lo; ow < ow_hi; ++ow) dst[ow] = src[ow * g.stride + kj - g.pad];
          }
          std::fill(dst + ow_hi, dst + g.wo, 0.0);
        }
        std::fill(row + oh_hi * g.wo, row + plane, 0.0);
      }
    }
  }
}

// x[c][...] += cols scattered back; x must be pre-zeroed by the caller.
void col2im(const Geometry& g, const double* cols, double* x) {
  const std::size_t plane = g.ho * g.wo;
  const auto& k = simd::kernels();
  for (std::size_t c = 0; c < g.c; ++c) {
    double* xc = x + c * g.h * g.w;
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      std::size_t oh_lo, oh_hi;
      valid_range(g.ho, g.h, ki, g.stride, g.pad, oh_lo, oh_hi);
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        std::size_t ow_lo, ow_hi;
        valid_range(g.wo, g.w, kj, g.stride, g.pad, ow_lo, ow_hi);
        const double* row = cols + ((c * g.kh + ki) * g.kw + kj) * plane;
        for (std::size_t oh = oh_lo; oh < oh_hi; ++oh) {
          const double* src = row + oh * g.wo;
          double* dst = xc + (oh * g.stride + ki - g.pad) * g.w;
          if (g.stride == 1) {
            k.axpy(ow_hi - ow_lo, 1.0, src + ow_lo, dst + ow_lo + kj - g.pad);
          } else {
            for (std::size_t ow = ow_lo; ow < ow_hi; ++ow) dst[ow * g.stride + kj - g.pad] += src[ow];
          }
        }
      }
    }
  }
}

std::vector<double>& scratch() {
  thread_local std::vector<double> buf;
  return buf;
}

}  // namespace

void forward(const Geometry& g, const double* x, const double* w, double* y) {
  const auto& k = simd::kernels();
  const std::size_t ckk = g.c * g.kh * g.kw;
  const std::size_t plane = g.ho * g.wo;
  const std::size_t in_stride = g.c * g.h * g.w;
  auto& cols = scratch();
  if (!is_pointwise(g)) cols.resize(ckk * plane);
  for (std::size_t n = 0; n < g.n; ++n) {
    const double* xn = x + n * in_stride;
    const double* b = xn;
    if (!is_pointwise(g)) {
      im2col(g, xn, cols.data());
      b = cols.data();
    }
    k.gemm(false, false, g.o, plane, ckk, 1.0, w, ckk, b, plane, 0.0, y + n * g.o * plane, plane);
  }
}

void backward_input(const Geometry& g, const double* gy, const double* w, double* gx) {
  const auto& k = simd::kernels();
  const std::size_t ckk = g.c * g.kh * g.kw;
  const std::size_t plane = g.ho * g.wo;
  const std::size_t in_stride = g.c * g.h * g.w;
  auto& cols = scratch();
  if (!is_pointwise(g)) cols.resize(ckk * plane);
  for (std::size_t n = 0; n < g.n; ++n) {
    double* gxn = gx + n * in_stride;
    const double* gyn = gy + n * g.o * plane;
    if (is_pointwise(g)) {
      k.gemm(true, false, ckk, plane, g.o, 1.0, w, ckk, gyn, plane, 0.0, gxn, plane);
      continue;
    }
    k.gemm(true, false, ckk, plane, g.o, 1.0, w, ckk, gyn, plane, 0.0, cols.data(), plane);
    std::fill(gxn, gxn + in_stride, 0.0);
    col2im(g, cols.data(), gxn);
  }
}

void backward_weight(const Geometry& g, const double* x, const double* gy, double* gw) {
  const auto& k = simd::kernels();
  const std::size_t ckk = g.c * g.kh * g.kw;
  const std::size_t plane = g.ho * g.wo;
  const std::size_t in_stride = g.c * g.h * g.w;
  auto& cols = scratch();
  if (!is_pointwise(g)) cols.resize(ckk * plane);
  std::fill(gw, gw + g.o * ckk, 0.0);
  for (std::size_t n = 0; n < g.n; ++n) {
    const double* xn = x + n * in_stride;
    const double* b = xn;
    if (!is_pointwise(g)) {
      im2col(g, xn, cols.data());
      b = cols.data();
    }
    k.gemm(false, true, g.o, ckk, plane, 1.0, gy + n * g.o * plane, plane, b, plane, 1.0, gw, ckk);
  }
}

}  // namespace emoface::conv
