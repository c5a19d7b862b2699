// SPDX-License-Identifier: Apache-2.0
// Differentiable tensor operations.
//
// Shapes must match exactly unless an op says otherwise; there is no
// implicit broadcasting. Ops marked "first order" have fused backward
// kernels and cannot sit on a double-backward path.
#pragma once

#include <cstdint>
#include <vector>

#include "emoface/autograd.hpp"

namespace emoface::ops {

Var constant(Tensor value);
Var detach(const Var& x);

// Elementwise.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var add_scalar(const Var& x, double s);
Var mul_scalar(const Var& x, double s);
Var neg(const Var& x);
Var square(const Var& x);
/// x * mask for a constant tensor of the same shape.
Var mul_const(const Var& x, const Tensor& mask);

Var relu(const Var& x);
Var leaky_relu(const Var& x, double slope);
Var sigmoid(const Var& x);  // first order
Var tanh(const Var& x);     // first order
Var sqrt(const Var& x);     // first order; zero gradient at 0
Var abs(const Var& x);      // first order; zero gradient at 0
Var log(const Var& x);      // first order

// Reductions and shape.
Var sum(const Var& x);  // -> [1]
Var mean(const Var& x);
Var reshape(const Var& x, Shape shape);
/// Sum over one axis, keeping it with extent 1.
Var sum_axis(const Var& x, std::size_t axis);
/// Repeat an extent-1 axis n times (adjoint of sum_axis).
Var expand_axis(const Var& x, std::size_t axis, std::size_t n);
/// [len] slice of one axis starting at start.
Var narrow(const Var& x, std::size_t axis, std::size_t start, std::size_t len);
/// Zero-padded embedding of x into an axis of extent full_len at offset start.
Var unnarrow(const Var& x, std::size_t axis, std::size_t full_len, std::size_t start);
Var concat(const std::vector<Var>& xs, std::size_t axis);

// Per-channel ops on [N, C, ...] tensors (a matrix [N, C] counts too).
Var bias_nc(const Var& x, const Var& bias);
Var sum_nc(const Var& x);  // -> [C]
Var broadcast_nc(const Var& v, const Shape& shape);
Var scale_nc(const Var& x, const Var& gamma);

// Linear algebra.
Var matmul(const Var& a, const Var& b, bool trans_a = false, bool trans_b = false);

struct Conv2dParams {
  std::size_t stride = 1;
  std::size_t pad = 0;
};

/// x [N,C,H,W], w [O,C,KH,KW] -> [N,O,Ho,Wo]; zero padding.
Var conv2d(const Var& x, const Var& w, Conv2dParams p);
/// Adjoint of conv2d in x: g [N,O,Ho,Wo], w [O,C,KH,KW] -> in_shape.
Var conv2d_input_grad(const Var& g, const Var& w, const Shape& in_shape, Conv2dParams p);
/// Adjoint of conv2d in w: x [N,C,H,W], g [N,O,Ho,Wo] -> w_shape.
Var conv2d_weight_grad(const Var& x, const Var& g, const Shape& w_shape, Conv2dParams p);
/// Transposed convolution: x [N,Cin,H,W], w [Cin,Cout,KH,KW] -> [N,Cout,Ho,Wo]
/// with Ho = (H-1)*stride - 2*pad + KH.
Var conv_transpose2d(const Var& x, const Var& w, Conv2dParams p);

/// Per-sample per-channel normalization of [N,C,H,W]; first order.
Var instance_norm(const Var& x, double eps = 1e-5);
/// instance_norm followed by a per-channel scale and shift, as one op.
Var instance_norm_affine(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);

/// Rows of table [V,D] gathered by ids -> [B,D]; first order.
Var embedding(const Var& table, const std::vector<std::int64_t>& ids);

/// sum_b weights[b] * -log softmax(logits[b])[targets[b]] -> [1]; first order.
/// Rows with weight 0 are skipped.
Var cross_entropy(const Var& logits, const std::vector<std::int64_t>& targets,
                  const std::vector<double>& weights);

}  // namespace emoface::ops
