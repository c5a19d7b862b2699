// SPDX-License-Identifier: Apache-2.0
// im2col + GEMM convolution kernels on raw NCHW buffers.
#pragma once

#include <cstddef>

namespace emoface::conv {

struct Geometry {
  std::size_t n, c, h, w;  // input
  std::size_t o, kh, kw;   // filters
  std::size_t stride, pad;
  std::size_t ho, wo;      // output

  static Geometry make(std::size_t n, std::size_t c, std::size_t h, std::size_t w,
                       std::size_t o, std::size_t kh, std::size_t kw, std::size_t stride,
                       std::size_t pad);
};

/// y[n,o,:,:] = sum_c w[o,c] * x[n,c] (cross-correlation). Overwrites y.
void forward(const Geometry& g, const double* x, const double* w, double* y);

/// gx = adjoint of forward w.r.t. x applied to gy. Overwrites gx.
void backward_input(const Geometry& g, const double* gy, const double* w, double* gx);

/// gw = adjoint of forward w.r.t. w applied to gy, summed over the batch. Overwrites gw.
void backward_weight(const Geometry& g, const double* x, const double* gy, double* gw);

}  // namespace emoface::conv
