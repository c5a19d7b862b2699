// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <filesystem>
#include <random>

#include "doctest.h"
#include "emoface/nn.hpp"
#include "support/gradcheck.hpp"

using namespace emoface;
using emoface::testing::check_gradients;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Tensor t(std::move(shape));
  for (auto& v : t.storage()) v = u(rng);
  return t;
}

double sigm(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

TEST_CASE("conditioned conv equals convolving the explicit concatenation") {
  std::mt19937_64 rng(1);
  for (auto [k, s, p] : {std::tuple{7u, 1u, 3u}, std::tuple{4u, 2u, 1u}, std::tuple{3u, 1u, 0u}}) {
    nn::ParameterStore local;
    nn::ConditionedConv2d layer(local, "c", 3, 5, 4, k, {s, p}, rng);
    const Tensor x = random_tensor({2, 3, 8, 8}, rng);
    const Tensor z = random_tensor({2, 5}, rng);
    Tensor full({2, 8, 8, 8});
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t c = 0; c < 8; ++c)
        for (std::size_t i = 0; i < 64; ++i)
          full[(n * 8 + c) * 64 + i] = c < 3 ? x[(n * 3 + c) * 64 + i] : z[n * 5 + c - 3];
    const Var expected =
        ops::bias_nc(ops::conv2d(Var(full), layer.weight, {s, p}), layer.bias);
    const Var got = layer(Var(x), Var(z));
    REQUIRE(got.shape() == expected.shape());
    for (std::size_t i = 0; i < got.size(); ++i)
      CHECK(got.value()[i] == doctest::Approx(expected.value()[i]).epsilon(1e-12));
  }
}

TEST_CASE("gru cell matches a scalar oracle") {
  std::mt19937_64 rng(2);
  nn::ParameterStore store;
  const std::size_t in = 3, H = 4;
  nn::GruCell cell(store, "g", in, H, rng);
  const Tensor x = random_tensor({1, in}, rng);
  const Tensor h = random_tensor({1, H}, rng);
  const Var out = cell(Var(x), Var(h));
  const Tensor& wi = cell.w_input.value();
  const Tensor& wh = cell.w_hidden.value();
  const Tensor& bi = cell.b_input.value();
  const Tensor& bh = cell.b_hidden.value();
  for (std::size_t j = 0; j < H; ++j) {
    double a[3], b[3];
    for (std::size_t g = 0; g < 3; ++g) {
      a[g] = bi[g * H + j];
      b[g] = bh[g * H + j];
      for (std::size_t i = 0; i < in; ++i) a[g] += x[i] * wi[i * 3 * H + g * H + j];
      for (std::size_t i = 0; i < H; ++i) b[g] += h[i] * wh[i * 3 * H + g * H + j];
    }
    const double r = sigm(a[0] + b[0]);
    const double z = sigm(a[1] + b[1]);
    const double n = std::tanh(a[2] + r * b[2]);
    CHECK(out.value()[j] == doctest::Approx((1 - z) * n + z * h[j]).epsilon(1e-12));
  }
}

TEST_CASE("layer gradients pass finite differences") {
  std::mt19937_64 rng(3);
  nn::ParameterStore store;
  nn::ConditionedConv2d first(store, "first", 2, 3, 3, 3, {1, 1}, rng);
  nn::InstanceNorm2d norm(store, "norm", 3);
  nn::ConvTranspose2d up(store, "up", 3, 2, 4, {2, 1}, rng);
  nn::GruCell cell(store, "gru", 2, 3, rng);
  nn::Linear head(store, "head", 3, 2, rng);
  norm.gamma.value_mut() = random_tensor({3}, rng);
  const Tensor x = random_tensor({2, 2, 4, 4}, rng);
  const Tensor z = random_tensor({2, 3}, rng);
  auto loss = [&] {
    Var h = ops::relu(norm(first(Var(x), Var(z))));
    Var img = up(h);
    Var seq = ops::reshape(ops::mean(img), {1, 1});
    Var hid = cell(ops::concat({seq, seq}, 1), ops::constant(Tensor({1, 3}, 0.1)));
    return ops::sum(ops::square(head(hid)));
  };
  const auto report = check_gradients(loss, store.all(), 1e-6, 1e-4);
  INFO(report.worst);
  CHECK(report.max_rel_error < 1e-5);
}

TEST_CASE("adam first step moves each weight by lr against the gradient sign") {
  Var w = Var::parameter(Tensor({3}, std::vector<double>{1.0, -2.0, 0.5}));
  nn::Adam opt({w}, {.lr = 0.01});
  w.grad_mut() = Tensor({3}, std::vector<double>{0.3, -4.0, 0.0});
  opt.step();
  // Bias-corrected moments make the first update lr * g / (|g| + eps).
  CHECK(w.value()[0] == doctest::Approx(0.99).epsilon(1e-9));
  CHECK(w.value()[1] == doctest::Approx(-1.99).epsilon(1e-9));
  CHECK(w.value()[2] == 0.5);
}

TEST_CASE("adam with zero learning rate leaves parameters unchanged") {
  Var w = Var::parameter(Tensor({2}, 1.5));
  nn::Adam opt({w}, {.lr = 0.0});
  w.grad_mut() = Tensor({2}, 3.0);
  opt.step();
  CHECK(w.value()[0] == 1.5);
}

TEST_CASE("weights round-trip and reject mismatched models") {
  std::mt19937_64 rng(4);
  nn::ParameterStore a;
  nn::Linear la(a, "l", 3, 2, rng);
  const auto path = std::filesystem::temp_directory_path() / "emoface_nn_test.bin";
  nn::save_weights(path, a);

  nn::ParameterStore b;
  nn::Linear lb(b, "l", 3, 2, rng);
  nn::load_weights(path, b);
  CHECK(lb.weight.value().storage() == la.weight.value().storage());
  CHECK(lb.bias.value().storage() == la.bias.value().storage());

  nn::ParameterStore c;
  nn::Linear lc(c, "l", 2, 2, rng);
  CHECK_THROWS_AS(nn::load_weights(path, c), std::runtime_error);
  std::filesystem::remove(path);
}
