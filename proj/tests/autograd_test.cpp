// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <random>

#include "doctest.h"
#include "emoface/conv.hpp"
#include "emoface/ops.hpp"
#include "support/gradcheck.hpp"

using namespace emoface;
using emoface::testing::check_gradients;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape));
  for (auto& v : t.storage()) v = u(rng);
  return t;
}

// Direct seven-loop cross-correlation, independent of im2col.
Tensor conv_direct(const Tensor& x, const Tensor& w, std::size_t stride, std::size_t pad) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t o = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const std::size_t ho = (h + 2 * pad - kh) / stride + 1, wo = (wd + 2 * pad - kw) / stride + 1;
  Tensor y(Shape{n, o, ho, wo}, 0.0);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t oc = 0; oc < o; ++oc)
      for (std::size_t i = 0; i < ho; ++i)
        for (std::size_t j = 0; j < wo; ++j) {
          double s = 0.0;
          for (std::size_t ic = 0; ic < c; ++ic)
            for (std::size_t a = 0; a < kh; ++a)
              for (std::size_t bb = 0; bb < kw; ++bb) {
                const long ii = static_cast<long>(i * stride + a) - static_cast<long>(pad);
                const long jj = static_cast<long>(j * stride + bb) - static_cast<long>(pad);
                if (ii < 0 || jj < 0 || ii >= static_cast<long>(h) || jj >= static_cast<long>(wd)) continue;
                s += w[((oc * c + ic) * kh + a) * kw + bb] * x[((b * c + ic) * h + ii) * wd + jj];
              }
          y[((b * o + oc) * ho + i) * wo + j] = s;
        }
  return y;
}

double inner(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

TEST_CASE("conv forward matches the direct oracle across geometries") {
  std::mt19937_64 rng(3);
  struct G {
    std::size_t n, c, h, o, k, s, p;
  };
  const G cases[] = {{2, 3, 8, 4, 3, 1, 1}, {1, 2, 8, 3, 4, 2, 1}, {2, 5, 7, 2, 7, 1, 3},
                     {1, 3, 6, 2, 1, 1, 0}, {3, 2, 4, 5, 4, 2, 1}, {1, 1, 2, 1, 3, 1, 1},
                     {2, 4, 1, 3, 3, 1, 1}, {1, 2, 4, 2, 4, 1, 0}};
  for (const auto& g : cases) {
    Tensor x = random_tensor({g.n, g.c, g.h, g.h}, rng);
    Tensor w = random_tensor({g.o, g.c, g.k, g.k}, rng);
    const Tensor expected = conv_direct(x, w, g.s, g.p);
    const Var y = ops::conv2d(Var(x), Var(w), {g.s, g.p});
    REQUIRE(y.shape() == expected.shape());
    for (std::size_t i = 0; i < expected.size(); ++i) CHECK(y.value()[i] == doctest::Approx(expected[i]).epsilon(1e-12));
  }
}

TEST_CASE("conv adjoints satisfy the inner-product identity") {
  std::mt19937_64 rng(5);
  const Tensor x = random_tensor({2, 3, 9, 9}, rng);
  const Tensor w = random_tensor({4, 3, 4, 4}, rng);
  const ops::Conv2dParams p{2, 1};
  const Var y = ops::conv2d(Var(x), Var(w), p);
  const Tensor u = random_tensor(y.shape(), rng);
  const Var gx = ops::conv2d_input_grad(Var(u), Var(w), x.shape(), p);
  const Var gw = ops::conv2d_weight_grad(Var(x), Var(u), w.shape(), p);
  const double lhs = inner(u, y.value());
  CHECK(inner(gx.value(), x) == doctest::Approx(lhs).epsilon(1e-12));
  CHECK(inner(gw.value(), w) == doctest::Approx(lhs).epsilon(1e-12));
}

TEST_CASE("conv rejects mismatched channels") {
  CHECK_THROWS_AS(ops::conv2d(Var(Tensor({1, 2, 4, 4})), Var(Tensor({1, 3, 3, 3})), {1, 1}),
                  std::invalid_argument);
}

TEST_CASE("elementwise and shape ops pass gradient checks") {
  std::mt19937_64 rng(9);
  Var a = Var::parameter(random_tensor({2, 3, 4}, rng));
  Var b = Var::parameter(random_tensor({2, 3, 4}, rng, 0.5, 2.0));
  Var bias = Var::parameter(random_tensor({3}, rng));
  auto loss = [&] {
    Var t = ops::mul(ops::add(a, b), ops::sub(a, ops::mul_scalar(b, 0.3)));
    t = ops::add(t, ops::square(ops::sigmoid(a)));
    t = ops::add(t, ops::tanh(ops::mul(a, b)));
    t = ops::add(t, ops::sqrt(b));
    t = ops::add(t, ops::log(b));
    t = ops::add(t, ops::abs(a));
    t = ops::bias_nc(t, bias);
    t = ops::leaky_relu(t, 0.1);
    Var s = ops::sum_axis(t, 1);
    s = ops::expand_axis(s, 1, 3);
    Var c = ops::concat({ops::narrow(s, 2, 1, 2), ops::narrow(t, 2, 0, 3)}, 2);
    c = ops::unnarrow(c, 0, 3, 1);
    return ops::mean(ops::mul(c, ops::reshape(ops::scale_nc(ops::reshape(c, {3, 3, 5}), ops::sum_nc(t)), {3, 3, 5})));
  };
  const auto report = check_gradients(loss, {a, b, bias}, 1e-6);
  INFO(report.worst);
  CHECK(report.max_rel_error < 1e-5);
}

TEST_CASE("matmul gradients for every transpose combination") {
  std::mt19937_64 rng(13);
  for (int ta = 0; ta < 2; ++ta)
    for (int tb = 0; tb < 2; ++tb) {
      Var a = Var::parameter(random_tensor(ta ? Shape{4, 3} : Shape{3, 4}, rng));
      Var b = Var::parameter(random_tensor(tb ? Shape{5, 4} : Shape{4, 5}, rng));
      auto loss = [&] { return ops::sum(ops::square(ops::matmul(a, b, ta, tb))); };
      const auto report = check_gradients(loss, {a, b});
      INFO(report.worst);
      CHECK(report.max_rel_error < 1e-6);
    }
}

TEST_CASE("conv, transposed conv and instance norm gradients") {
  std::mt19937_64 rng(17);
  Var x = Var::parameter(random_tensor({2, 2, 6, 6}, rng));
  Var w1 = Var::parameter(random_tensor({3, 2, 3, 3}, rng));
  Var w2 = Var::parameter(random_tensor({3, 2, 4, 4}, rng));
  Var gamma = Var::parameter(random_tensor({3}, rng));
  auto loss = [&] {
    Var h = ops::conv2d(x, w1, {1, 1});
    h = ops::instance_norm(h);
    h = ops::scale_nc(h, gamma);
    h = ops::tanh(h);
    Var up = ops::conv_transpose2d(h, w2, {2, 1});  // 6 -> 12
    return ops::mean(ops::square(up));
  };
  const auto report = check_gradients(loss, {x, w1, w2, gamma});
  INFO(report.worst);
  CHECK(report.max_rel_error < 1e-5);
}

TEST_CASE("fused instance norm with affine matches the composed ops") {
  std::mt19937_64 rng(23);
  Var x = Var::parameter(random_tensor({2, 3, 5, 4}, rng));
  Var gamma = Var::parameter(random_tensor({3}, rng, 0.5, 1.5));
  Var beta = Var::parameter(random_tensor({3}, rng));
  const Tensor fused = ops::instance_norm_affine(x, gamma, beta).value();
  const Tensor composed = ops::bias_nc(ops::scale_nc(ops::instance_norm(x), gamma), beta).value();
  for (std::size_t i = 0; i < fused.size(); ++i) CHECK(fused[i] == doctest::Approx(composed[i]).epsilon(1e-12));

  Var w = Var::parameter(random_tensor({2, 3, 3, 3}, rng));
  auto loss = [&] {
    Var h = ops::instance_norm_affine(x, gamma, beta);
    return ops::mean(ops::square(ops::tanh(ops::conv2d(h, w, {1, 1}))));
  };
  const auto report = check_gradients(loss, {x, gamma, beta, w});
  INFO(report.worst);
  CHECK(report.max_rel_error < 1e-5);
}

TEST_CASE("embedding and cross entropy gradients") {
  std::mt19937_64 rng(19);
  Var table = Var::parameter(random_tensor({6, 4}, rng));
  Var proj = Var::parameter(random_tensor({4, 5}, rng));
  const std::vector<std::int64_t> ids{1, 5, 1, 0};
  const std::vector<std::int64_t> targets{2, 0, 4, 1};
  const std::vector<double> weights{0.5, 0.25, 0.0, 1.0};
  auto loss = [&] {
    return ops::cross_entropy(ops::matmul(ops::embedding(table, ids), proj), targets, weights);
  };
  const auto report = check_gradients(loss, {table, proj});
  INFO(report.worst);
  CHECK(report.max_rel_error < 1e-6);
}

TEST_CASE("cross entropy of uniform logits is ln V") {
  Var logits(Tensor({2, 7}, 0.3));
  const Var l = ops::cross_entropy(logits, {3, 6}, {0.5, 0.5});
  CHECK(l.item() == doctest::Approx(std::log(7.0)).epsilon(1e-12));
}

TEST_CASE("double backward through a leaky conv critic matches finite differences") {
  // phi(w) = sum_n (||d/dx sum D(x_n)|| - 1)^2 with D a two-layer conv net.
  std::mt19937_64 rng(23);
  const Tensor x = random_tensor({2, 2, 6, 6}, rng);
  Var w1 = Var::parameter(random_tensor({3, 2, 4, 4}, rng, -0.5, 0.5));
  Var b1 = Var::parameter(random_tensor({3}, rng, -0.1, 0.1));
  Var w2 = Var::parameter(random_tensor({1, 3, 3, 3}, rng, -0.5, 0.5));
  auto penalty = [&] {
    Var xi(x, true);
    Var h = ops::leaky_relu(ops::bias_nc(ops::conv2d(xi, w1, {2, 1}), b1), 0.2);
    Var d = ops::conv2d(h, w2, {1, 1});
    Var gx = grad(ops::sum(d), std::vector<Var>{xi}, true)[0];
    Var norms = ops::sqrt(ops::sum_axis(ops::reshape(ops::square(gx), {2, 72}), 1));
    return ops::sum(ops::square(ops::add_scalar(norms, -1.0)));
  };
  const auto report = check_gradients(penalty, {w1, b1, w2}, 1e-6);
  INFO(report.worst);
  CHECK(report.max_rel_error < 1e-5);
}

TEST_CASE("first-order ops refuse double backward") {
  Var x(Tensor({3}, 0.2), true);
  Var y = ops::sum(ops::sigmoid(x));
  Var g = grad(y, std::vector<Var>{x}, false)[0];
  CHECK(g.value()[0] == doctest::Approx(0.2 >= 0 ? (1 / (1 + std::exp(-0.2))) * (1 - 1 / (1 + std::exp(-0.2))) : 0));
  CHECK_THROWS_AS(grad(y, std::vector<Var>{x}, true), std::logic_error);
}

TEST_CASE("backward restricted to some leaves leaves others untouched") {
  Var a = Var::parameter(Tensor({2}, 1.0));
  Var b = Var::parameter(Tensor({2}, 2.0));
  Var l = ops::sum(ops::mul(a, b));
  backward(l, std::vector<Var>{a});
  CHECK(a.grad()[0] == 2.0);
  CHECK(b.grad().empty());
}

TEST_CASE("no-grad mode records nothing") {
  Var a = Var::parameter(Tensor({2}, 1.0));
  NoGradGuard guard;
  Var l = ops::sum(ops::mul(a, a));
  CHECK_FALSE(l.requires_grad());
}
