// SPDX-License-Identifier: Apache-2.0
#include "emoface/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>

#include "emoface/conv.hpp"
#include "emoface/simd/kernels.hpp"

namespace emoface::ops {

namespace {

const simd::KernelTable& K() { return simd::kernels(); }

void require_same_shape(const char* op, const Var& a, const Var& b) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
}

const Var& input(const Var& out, std::size_t i) { return out.node()->inputs[i]; }

// outer x len x inner decomposition around one axis.
struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_axis(const Shape& s, std::size_t axis, const char* op) {
  if (axis >= s.size())
    throw std::invalid_argument(std::string(op) + ": axis " + std::to_string(axis) +
                                " out of range for " + shape_str(s));
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.len = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

// [N, C, rest] decomposition for the per-channel ops.
struct ChannelSplit {
  std::size_t n = 1, c = 1, rest = 1;
};

ChannelSplit split_nc(const Shape& s, const char* op) {
  if (s.size() < 2)
    throw std::invalid_argument(std::string(op) + ": need rank >= 2, got " + shape_str(s));
  ChannelSplit r{s[0], s[1], 1};
  for (std::size_t i = 2; i < s.size(); ++i) r.rest *= s[i];
  return r;
}

template <typename F>
Tensor map_unary(const Tensor& x, F f) {
  Tensor out(x.shape());
  const double* xp = x.ptr();
  double* op = out.ptr();
  for (std::size_t i = 0; i < x.size(); ++i) op[i] = f(xp[i]);
  return out;
}

}  // namespace

Var constant(Tensor value) { return Var(std::move(value), false); }

Var detach(const Var& x) { return Var(x.value(), false); }

Var add(const Var& a, const Var& b) {
  require_same_shape("add", a, b);
  Tensor out(a.shape());
  K().add(out.size(), a.value().ptr(), b.value().ptr(), out.ptr());
  return make_op(std::move(out), "add", {a, b},
                 [](const Var&, const Var& g) { return std::vector<Var>{g, g}; });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape("sub", a, b);
  Tensor out(a.shape());
  K().sub(out.size(), a.value().ptr(), b.value().ptr(), out.ptr());
  return make_op(std::move(out), "sub", {a, b},
                 [](const Var&, const Var& g) { return std::vector<Var>{g, neg(g)}; });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape("mul", a, b);
  Tensor out(a.shape());
  K().mul(out.size(), a.value().ptr(), b.value().ptr(), out.ptr());
  return make_op(std::move(out), "mul", {a, b}, [](const Var& out, const Var& g) {
    const Var& x = input(out, 0);
    const Var& y = input(out, 1);
    return std::vector<Var>{x.requires_grad() ? mul(g, y) : Var(),
                            y.requires_grad() ? mul(g, x) : Var()};
  });
}

Var add_scalar(const Var& x, double s) {
  Tensor out = map_unary(x.value(), [s](double v) { return v + s; });
  return make_op(std::move(out), "add_scalar", {x},
                 [](const Var&, const Var& g) { return std::vector<Var>{g}; });
}

Var mul_scalar(const Var& x, double s) {
  Tensor out(x.shape());
  K().scale(out.size(), s, x.value().ptr(), out.ptr());
  return make_op(std::move(out), "mul_scalar", {x}, [s](const Var&, const Var& g) {
    return std::vector<Var>{mul_scalar(g, s)};
  });
}

Var neg(const Var& x) { return mul_scalar(x, -1.0); }

Var square(const Var& x) { return mul(x, x); }

Var mul_const(const Var& x, const Tensor& mask) {
  if (x.shape() != mask.shape())
    throw std::invalid_argument("mul_const: shape mismatch " + shape_str(x.shape()) + " vs " +
                                shape_str(mask.shape()));
  auto m = std::make_shared<const Tensor>(mask);
  Tensor out(x.shape());
  K().mul(out.size(), x.value().ptr(), m->ptr(), out.ptr());
  return make_op(std::move(out), "mul_const", {x}, [m](const Var&, const Var& g) {
    return std::vector<Var>{mul_const(g, *m)};
  });
}

Var relu(const Var& x) { return leaky_relu(x, 0.0); }

Var leaky_relu(const Var& x, double slope) {
  const auto slope_of = [slope](double v) { return v > 0.0 ? 1.0 : slope; };
  Tensor out = map_unary(x.value(), [slope_of](double v) { return v * slope_of(v); });
  // The mask is rebuilt from the input on the way back instead of being kept.
  return make_op(std::move(out), "leaky_relu", {x}, [slope_of](const Var& out, const Var& g) {
    return std::vector<Var>{mul_const(g, map_unary(input(out, 0).value(), slope_of))};
  });
}

Var sigmoid(const Var& x) {
  auto y = std::make_shared<Tensor>(map_unary(x.value(), [](double v) {
    return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  }));
  return make_op(
      *y, "sigmoid", {x},
      [y](const Var&, const Var& g) {
        Tensor d(g.shape());
        for (std::size_t i = 0; i < d.size(); ++i) d[i] = g.value()[i] * (*y)[i] * (1.0 - (*y)[i]);
        return std::vector<Var>{Var(std::move(d))};
      },
      false);
}

Var tanh(const Var& x) {
  auto y = std::make_shared<Tensor>(map_unary(x.value(), [](double v) { return std::tanh(v); }));
  return make_op(
      *y, "tanh", {x},
      [y](const Var&, const Var& g) {
        Tensor d(g.shape());
        for (std::size_t i = 0; i < d.size(); ++i) d[i] = g.value()[i] * (1.0 - (*y)[i] * (*y)[i]);
        return std::vector<Var>{Var(std::move(d))};
      },
      false);
}

Var sqrt(const Var& x) {
  auto y = std::make_shared<Tensor>(map_unary(x.value(), [](double v) {
    if (v < 0.0) throw std::domain_error("sqrt: negative input");
    return std::sqrt(v);
  }));
  return make_op(
      *y, "sqrt", {x},
      [y](const Var&, const Var& g) {
        Tensor d(g.shape());
        for (std::size_t i = 0; i < d.size(); ++i)
          d[i] = (*y)[i] > 0.0 ? g.value()[i] * 0.5 / (*y)[i] : 0.0;
        return std::vector<Var>{Var(std::move(d))};
      },
      false);
}

Var abs(const Var& x) {
  auto sign = std::make_shared<Tensor>(
      map_unary(x.value(), [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }));
  return make_op(
      map_unary(x.value(), [](double v) { return std::fabs(v); }), "abs", {x},
      [sign](const Var&, const Var& g) {
        Tensor d(g.shape());
        K().mul(d.size(), g.value().ptr(), sign->ptr(), d.ptr());
        return std::vector<Var>{Var(std::move(d))};
      },
      false);
}

Var log(const Var& x) {
  return make_op(
      map_unary(x.value(), [](double v) { return std::log(v); }), "log", {x},
      [](const Var& out, const Var& g) {
        const Tensor& xv = input(out, 0).value();
        Tensor d(g.shape());
        for (std::size_t i = 0; i < d.size(); ++i) d[i] = g.value()[i] / xv[i];
        return std::vector<Var>{Var(std::move(d))};
      },
      false);
}

Var sum(const Var& x) {
  const Shape in_shape = x.shape();
  Tensor out = Tensor::scalar(K().sum(x.size(), x.value().ptr()));
  return make_op(std::move(out), "sum", {x}, [in_shape](const Var&, const Var& g) {
    const std::size_t n = shape_numel(in_shape);
    return std::vector<Var>{reshape(expand_axis(g, 0, n), in_shape)};
  });
}

Var mean(const Var& x) {
  if (x.size() == 0) throw std::invalid_argument("mean: empty tensor");
  return mul_scalar(sum(x), 1.0 / static_cast<double>(x.size()));
}

Var reshape(const Var& x, Shape shape) {
  const Shape in_shape = x.shape();
  Tensor out = x.value().reshaped(std::move(shape));
  return make_op(std::move(out), "reshape", {x}, [in_shape](const Var&, const Var& g) {
    return std::vector<Var>{reshape(g, in_shape)};
  });
}

Var sum_axis(const Var& x, std::size_t axis) {
  const AxisSplit s = split_axis(x.shape(), axis, "sum_axis");
  Shape out_shape = x.shape();
  out_shape[axis] = 1;
  Tensor out(out_shape, 0.0);
  const double* xp = x.value().ptr();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t l = 0; l < s.len; ++l)
      K().add(s.inner, out.ptr() + o * s.inner, xp + (o * s.len + l) * s.inner,
              out.ptr() + o * s.inner);
  const std::size_t len = s.len;
  return make_op(std::move(out), "sum_axis", {x}, [axis, len](const Var&, const Var& g) {
    return std::vector<Var>{expand_axis(g, axis, len)};
  });
}

Var expand_axis(const Var& x, std::size_t axis, std::size_t n) {
  const AxisSplit s = split_axis(x.shape(), axis, "expand_axis");
  if (s.len != 1)
    throw std::invalid_argument("expand_axis: axis extent must be 1, got " + shape_str(x.shape()));
  Shape out_shape = x.shape();
  out_shape[axis] = n;
  Tensor out(out_shape);
  const double* xp = x.value().ptr();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t l = 0; l < n; ++l)
      std::copy(xp + o * s.inner, xp + (o + 1) * s.inner, out.ptr() + (o * n + l) * s.inner);
  return make_op(std::move(out), "expand_axis", {x}, [axis](const Var&, const Var& g) {
    return std::vector<Var>{sum_axis(g, axis)};
  });
}

Var narrow(const Var& x, std::size_t axis, std::size_t start, std::size_t len) {
  const AxisSplit s = split_axis(x.shape(), axis, "narrow");
  if (start + len > s.len)
    throw std::invalid_argument("narrow: range [" + std::to_string(start) + "," +
                                std::to_string(start + len) + ") exceeds axis of " +
                                shape_str(x.shape()));
  Shape out_shape = x.shape();
  out_shape[axis] = len;
  Tensor out(out_shape);
  const double* xp = x.value().ptr();
  for (std::size_t o = 0; o < s.outer; ++o)
    std::copy(xp + (o * s.len + start) * s.inner, xp + (o * s.len + start + len) * s.inner,
              out.ptr() + o * len * s.inner);
  const std::size_t full = s.len;
  return make_op(std::move(out), "narrow", {x}, [axis, full, start](const Var&, const Var& g) {
    return std::vector<Var>{unnarrow(g, axis, full, start)};
  });
}

Var unnarrow(const Var& x, std::size_t axis, std::size_t full_len, std::size_t start) {
  const AxisSplit s = split_axis(x.shape(), axis, "unnarrow");
  if (start + s.len > full_len) throw std::invalid_argument("unnarrow: slice exceeds full length");
  Shape out_shape = x.shape();
  out_shape[axis] = full_len;
  Tensor out(out_shape, 0.0);
  const double* xp = x.value().ptr();
  for (std::size_t o = 0; o < s.outer; ++o)
    std::copy(xp + o * s.len * s.inner, xp + (o + 1) * s.len * s.inner,
              out.ptr() + (o * full_len + start) * s.inner);
  const std::size_t len = s.len;
  return make_op(std::move(out), "unnarrow", {x}, [axis, start, len](const Var&, const Var& g) {
    return std::vector<Var>{narrow(g, axis, start, len)};
  });
}

Var concat(const std::vector<Var>& xs, std::size_t axis) {
  if (xs.empty()) throw std::invalid_argument("concat: no inputs");
  Shape out_shape = xs[0].shape();
  split_axis(out_shape, axis, "concat");
  std::size_t total = 0;
  for (const auto& x : xs) {
    Shape a = x.shape(), b = out_shape;
    if (a.size() != b.size()) throw std::invalid_argument("concat: rank mismatch");
    a[axis] = b[axis] = 0;
    if (a != b)
      throw std::invalid_argument("concat: incompatible shapes " + shape_str(x.shape()) + " and " +
                                  shape_str(xs[0].shape()));
    total += x.shape()[axis];
  }
  out_shape[axis] = total;
  Tensor out(out_shape);
  const AxisSplit so = split_axis(out_shape, axis, "concat");
  std::vector<std::size_t> offsets, lens;
  std::size_t off = 0;
  for (const auto& x : xs) {
    const std::size_t len = x.shape()[axis];
    const double* xp = x.value().ptr();
    for (std::size_t o = 0; o < so.outer; ++o)
      std::copy(xp + o * len * so.inner, xp + (o + 1) * len * so.inner,
                out.ptr() + (o * total + off) * so.inner);
    offsets.push_back(off);
    lens.push_back(len);
    off += len;
  }
  return make_op(std::move(out), "concat", xs, [axis, offsets, lens](const Var&, const Var& g) {
    std::vector<Var> grads;
    for (std::size_t i = 0; i < offsets.size(); ++i) grads.push_back(narrow(g, axis, offsets[i], lens[i]));
    return grads;
  });
}

Var bias_nc(const Var& x, const Var& bias) {
  const ChannelSplit s = split_nc(x.shape(), "bias_nc");
  if (bias.shape() != Shape{s.c})
    throw std::invalid_argument("bias_nc: bias " + shape_str(bias.shape()) + " for input " +
                                shape_str(x.shape()));
  Tensor out(x.shape());
  const double* xp = x.value().ptr();
  const double* bp = bias.value().ptr();
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c) {
      const std::size_t base = (n * s.c + c) * s.rest;
      for (std::size_t r = 0; r < s.rest; ++r) out[base + r] = xp[base + r] + bp[c];
    }
  return make_op(std::move(out), "bias_nc", {x, bias}, [](const Var&, const Var& g) {
    return std::vector<Var>{g, sum_nc(g)};
  });
}

Var sum_nc(const Var& x) {
  const ChannelSplit s = split_nc(x.shape(), "sum_nc");
  Tensor out(Shape{s.c}, 0.0);
  const double* xp = x.value().ptr();
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c) out[c] += K().sum(s.rest, xp + (n * s.c + c) * s.rest);
  const Shape in_shape = x.shape();
  return make_op(std::move(out), "sum_nc", {x}, [in_shape](const Var&, const Var& g) {
    return std::vector<Var>{broadcast_nc(g, in_shape)};
  });
}

Var broadcast_nc(const Var& v, const Shape& shape) {
  const ChannelSplit s = split_nc(shape, "broadcast_nc");
  if (v.shape() != Shape{s.c})
    throw std::invalid_argument("broadcast_nc: vector " + shape_str(v.shape()) + " for shape " +
                                shape_str(shape));
  Tensor out(shape);
  const double* vp = v.value().ptr();
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      std::fill_n(out.ptr() + (n * s.c + c) * s.rest, s.rest, vp[c]);
  return make_op(std::move(out), "broadcast_nc", {v}, [](const Var&, const Var& g) {
    return std::vector<Var>{sum_nc(g)};
  });
}

Var scale_nc(const Var& x, const Var& gamma) { return mul(x, broadcast_nc(gamma, x.shape())); }

Var matmul(const Var& a, const Var& b, bool trans_a, bool trans_b) {
  if (a.shape().size() != 2 || b.shape().size() != 2)
    throw std::invalid_argument("matmul: expects matrices, got " + shape_str(a.shape()) + " and " +
                                shape_str(b.shape()));
  const std::size_t m = trans_a ? a.shape()[1] : a.shape()[0];
  const std::size_t k = trans_a ? a.shape()[0] : a.shape()[1];
  const std::size_t kb = trans_b ? b.shape()[1] : b.shape()[0];
  const std::size_t n = trans_b ? b.shape()[0] : b.shape()[1];
  if (k != kb)
    throw std::invalid_argument("matmul: inner dimensions differ: " + shape_str(a.shape()) +
                                (trans_a ? "^T" : "") + " x " + shape_str(b.shape()) +
                                (trans_b ? "^T" : ""));
  Tensor out(Shape{m, n});
  K().gemm(trans_a, trans_b, m, n, k, 1.0, a.value().ptr(), a.shape()[1], b.value().ptr(),
           b.shape()[1], 0.0, out.ptr(), n);
  return make_op(std::move(out), "matmul", {a, b}, [trans_a, trans_b](const Var& out, const Var& g) {
    const Var& x = input(out, 0);
    const Var& y = input(out, 1);
    Var ga, gb;
    if (x.requires_grad()) ga = trans_a ? matmul(y, g, trans_b, true) : matmul(g, y, false, !trans_b);
    if (y.requires_grad()) gb = trans_b ? matmul(g, x, true, trans_a) : matmul(x, g, !trans_a, false);
    return std::vector<Var>{ga, gb};
  });
}

namespace {

conv::Geometry conv_geometry(const Shape& in, const Shape& w, Conv2dParams p, const char* op) {
  if (in.size() != 4 || w.size() != 4)
    throw std::invalid_argument(std::string(op) + ": expects 4-d input and weight, got " +
                                shape_str(in) + " and " + shape_str(w));
  if (in[1] != w[1])
    throw std::invalid_argument(std::string(op) + ": input channels " + std::to_string(in[1]) +
                                " != weight channels " + std::to_string(w[1]));
  return conv::Geometry::make(in[0], in[1], in[2], in[3], w[0], w[2], w[3], p.stride, p.pad);
}

}  // namespace

Var conv2d(const Var& x, const Var& w, Conv2dParams p) {
  const auto geo = conv_geometry(x.shape(), w.shape(), p, "conv2d");
  Tensor out(Shape{geo.n, geo.o, geo.ho, geo.wo});
  conv::forward(geo, x.value().ptr(), w.value().ptr(), out.ptr());
  return make_op(std::move(out), "conv2d", {x, w}, [p](const Var& out, const Var& g) {
    const Var& xi = input(out, 0);
    const Var& wi = input(out, 1);
    Var gx, gw;
    if (xi.requires_grad()) gx = conv2d_input_grad(g, wi, xi.shape(), p);
    if (wi.requires_grad()) gw = conv2d_weight_grad(xi, g, wi.shape(), p);
    return std::vector<Var>{gx, gw};
  });
}

Var conv2d_input_grad(const Var& g, const Var& w, const Shape& in_shape, Conv2dParams p) {
  const auto geo = conv_geometry(in_shape, w.shape(), p, "conv2d_input_grad");
  if (g.shape() != Shape{geo.n, geo.o, geo.ho, geo.wo})
    throw std::invalid_argument("conv2d_input_grad: gradient " + shape_str(g.shape()) +
                                " does not match geometry");
  Tensor out(in_shape);
  conv::backward_input(geo, g.value().ptr(), w.value().ptr(), out.ptr());
  return make_op(std::move(out), "conv2d_input_grad", {g, w}, [p](const Var& out, const Var& u) {
    const Var& gi = input(out, 0);
    const Var& wi = input(out, 1);
    Var dg, dw;
    if (gi.requires_grad()) dg = conv2d(u, wi, p);
    if (wi.requires_grad()) dw = conv2d_weight_grad(u, gi, wi.shape(), p);
    return std::vector<Var>{dg, dw};
  });
}

Var conv2d_weight_grad(const Var& x, const Var& g, const Shape& w_shape, Conv2dParams p) {
  const auto geo = conv_geometry(x.shape(), w_shape, p, "conv2d_weight_grad");
  if (g.shape() != Shape{geo.n, geo.o, geo.ho, geo.wo})
    throw std::invalid_argument("conv2d_weight_grad: gradient " + shape_str(g.shape()) +
                                " does not match geometry");
  Tensor out(w_shape);
  conv::backward_weight(geo, x.value().ptr(), g.value().ptr(), out.ptr());
  return make_op(std::move(out), "conv2d_weight_grad", {x, g}, [p](const Var& out, const Var& u) {
    const Var& xi = input(out, 0);
    const Var& gi = input(out, 1);
    Var dx, dg;
    if (xi.requires_grad()) dx = conv2d_input_grad(gi, u, xi.shape(), p);
    if (gi.requires_grad()) dg = conv2d(xi, u, p);
    return std::vector<Var>{dx, dg};
  });
}

Var conv_transpose2d(const Var& x, const Var& w, Conv2dParams p) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (xs.size() != 4 || ws.size() != 4 || xs[1] != ws[0])
    throw std::invalid_argument("conv_transpose2d: input " + shape_str(xs) + " vs weight " +
                                shape_str(ws));
  if ((xs[2] - 1) * p.stride + ws[2] < 2 * p.pad || (xs[3] - 1) * p.stride + ws[3] < 2 * p.pad)
    throw std::invalid_argument("conv_transpose2d: padding too large");
  const Shape out_shape{xs[0], ws[1], (xs[2] - 1) * p.stride + ws[2] - 2 * p.pad,
                        (xs[3] - 1) * p.stride + ws[3] - 2 * p.pad};
  return conv2d_input_grad(x, w, out_shape, p);
}

namespace {

struct ChannelStats {
  std::vector<double> mean, inv_std;
};

ChannelStats channel_stats(const Tensor& x, const ChannelSplit& s, double eps) {
  ChannelStats st{std::vector<double>(s.n * s.c), std::vector<double>(s.n * s.c)};
  const double m = static_cast<double>(s.rest);
  for (std::size_t nc = 0; nc < s.n * s.c; ++nc) {
    const double* xi = x.ptr() + nc * s.rest;
    const double mu = K().sum(s.rest, xi) / m;
    double var = 0.0;
    for (std::size_t r = 0; r < s.rest; ++r) var += (xi[r] - mu) * (xi[r] - mu);
    st.mean[nc] = mu;
    st.inv_std[nc] = 1.0 / std::sqrt(var / m + eps);
  }
  return st;
}

}  // namespace

Var instance_norm(const Var& x, double eps) {
  if (x.shape().size() != 4)
    throw std::invalid_argument("instance_norm: expects [N,C,H,W], got " + shape_str(x.shape()));
  const ChannelSplit s = split_nc(x.shape(), "instance_norm");
  auto st = std::make_shared<ChannelStats>(channel_stats(x.value(), s, eps));
  Tensor y(x.shape());
  for (std::size_t nc = 0; nc < s.n * s.c; ++nc) {
    const double* xi = x.value().ptr() + nc * s.rest;
    double* yi = y.ptr() + nc * s.rest;
    for (std::size_t r = 0; r < s.rest; ++r) yi[r] = (xi[r] - st->mean[nc]) * st->inv_std[nc];
  }
  return make_op(
      std::move(y), "instance_norm", {x},
      [st, s](const Var& out, const Var& g) {
        Tensor d(g.shape());
        const double* gp = g.value().ptr();
        const double m = static_cast<double>(s.rest);
        for (std::size_t nc = 0; nc < s.n * s.c; ++nc) {
          const double* gi = gp + nc * s.rest;
          const double* yi = out.value().ptr() + nc * s.rest;
          const double gmean = K().sum(s.rest, gi) / m;
          const double gymean = K().dot(s.rest, gi, yi) / m;
          const double inv = st->inv_std[nc];
          double* di = d.ptr() + nc * s.rest;
          for (std::size_t r = 0; r < s.rest; ++r) di[r] = inv * (gi[r] - gmean - yi[r] * gymean);
        }
        return std::vector<Var>{Var(std::move(d))};
      },
      false);
}

Var instance_norm_affine(const Var& x, const Var& gamma, const Var& beta, double eps) {
  if (x.shape().size() != 4)
    throw std::invalid_argument("instance_norm_affine: expects [N,C,H,W], got " + shape_str(x.shape()));
  const ChannelSplit s = split_nc(x.shape(), "instance_norm_affine");
  if (gamma.shape() != Shape{s.c} || beta.shape() != Shape{s.c})
    throw std::invalid_argument("instance_norm_affine: gamma " + shape_str(gamma.shape()) + " and beta " +
                                shape_str(beta.shape()) + " for " + std::to_string(s.c) + " channels");
  auto st = std::make_shared<ChannelStats>(channel_stats(x.value(), s, eps));
  Tensor y(x.shape());
  for (std::size_t nc = 0; nc < s.n * s.c; ++nc) {
    const std::size_t c = nc % s.c;
    const double a = gamma.value()[c] * st->inv_std[nc];
    const double b = beta.value()[c] - a * st->mean[nc];
    const double* xi = x.value().ptr() + nc * s.rest;
    double* yi = y.ptr() + nc * s.rest;
    for (std::size_t r = 0; r < s.rest; ++r) yi[r] = a * xi[r] + b;
  }
  // Backward recomputes the normalized input from x and the channel statistics,
  // so the only full-size tensor this op adds is its output.
  return make_op(
      std::move(y), "instance_norm_affine", {x, gamma, beta},
      [st, s](const Var& out, const Var& g) {
        const Tensor& xv = input(out, 0).value();
        const Tensor& gv = input(out, 1).value();
        Tensor dx(xv.shape()), dgamma(Shape{s.c}, 0.0), dbeta(Shape{s.c}, 0.0);
        const double m = static_cast<double>(s.rest);
        for (std::size_t nc = 0; nc < s.n * s.c; ++nc) {
          const std::size_t c = nc % s.c;
          const double mu = st->mean[nc], inv = st->inv_std[nc];
          const double* gi = g.value().ptr() + nc * s.rest;
          const double* xi = xv.ptr() + nc * s.rest;
          double gsum = 0.0, gxhat = 0.0;
          for (std::size_t r = 0; r < s.rest; ++r) {
            gsum += gi[r];
            gxhat += gi[r] * (xi[r] - mu) * inv;
          }
          dgamma[c] += gxhat;
          dbeta[c] += gsum;
          const double k = gv[c] * inv;
          double* di = dx.ptr() + nc * s.rest;
          for (std::size_t r = 0; r < s.rest; ++r)
            di[r] = k * (gi[r] - gsum / m - (xi[r] - mu) * inv * gxhat / m);
        }
        return std::vector<Var>{Var(std::move(dx)), Var(std::move(dgamma)), Var(std::move(dbeta))};
      },
      false);
}

Var embedding(const Var& table, const std::vector<std::int64_t>& ids) {
  if (table.shape().size() != 2) throw std::invalid_argument("embedding: table must be [V,D]");
  const std::size_t v = table.shape()[0];
  const std::size_t d = table.shape()[1];
  Tensor out(Shape{ids.size(), d});
  for (std::size_t b = 0; b < ids.size(); ++b) {
    if (ids[b] < 0 || static_cast<std::size_t>(ids[b]) >= v)
      throw std::out_of_range("embedding: id " + std::to_string(ids[b]) + " outside vocabulary of " +
                              std::to_string(v));
    const double* row = table.value().ptr() + static_cast<std::size_t>(ids[b]) * d;
    std::copy(row, row + d, out.ptr() + b * d);
  }
  return make_op(
      std::move(out), "embedding", {table},
      [ids, v, d](const Var&, const Var& g) {
        Tensor gt(Shape{v, d}, 0.0);
        for (std::size_t b = 0; b < ids.size(); ++b)
          K().add(d, gt.ptr() + static_cast<std::size_t>(ids[b]) * d, g.value().ptr() + b * d,
                  gt.ptr() + static_cast<std::size_t>(ids[b]) * d);
        return std::vector<Var>{Var(std::move(gt))};
      },
      false);
}

Var cross_entropy(const Var& logits, const std::vector<std::int64_t>& targets,
                  const std::vector<double>& weights) {
  if (logits.shape().size() != 2) throw std::invalid_argument("cross_entropy: logits must be [B,V]");
  const std::size_t b = logits.shape()[0];
  const std::size_t v = logits.shape()[1];
  if (targets.size() != b || weights.size() != b)
    throw std::invalid_argument("cross_entropy: batch size mismatch");
  auto probs = std::make_shared<Tensor>(Shape{b, v}, 0.0);
  double total = 0.0;
  const double* lp = logits.value().ptr();
  for (std::size_t i = 0; i < b; ++i) {
    if (weights[i] == 0.0) continue;
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= v)
      throw std::out_of_range("cross_entropy: target " + std::to_string(targets[i]) +
                              " outside " + std::to_string(v) + " classes");
    const double* row = lp + i * v;
    const double mx = *std::max_element(row, row + v);
    double z = 0.0;
    for (std::size_t j = 0; j < v; ++j) z += std::exp(row[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < v; ++j) (*probs)[i * v + j] = std::exp(row[j] - lse);
    total += weights[i] * (lse - row[targets[i]]);
  }
  return make_op(
      Tensor::scalar(total), "cross_entropy", {logits},
      [probs, targets, weights, b, v](const Var&, const Var& g) {
        const double gs = g.value()[0];
        Tensor d(Shape{b, v}, 0.0);
        for (std::size_t i = 0; i < b; ++i) {
          if (weights[i] == 0.0) continue;
          const double s = gs * weights[i];
          for (std::size_t j = 0; j < v; ++j) d[i * v + j] = s * (*probs)[i * v + j];
          d[i * v + static_cast<std::size_t>(targets[i])] -= s;
        }
        return std::vector<Var>{Var(std::move(d))};
      },
      false);
}

}  // namespace emoface::ops
