// SPDX-License-Identifier: Apache-2.0
#include "emoface/nn.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace emoface::nn {

Var ParameterStore::add(const std::string& name, Tensor init) {
  for (const auto& [n, _] : params_)
    if (n == name) throw std::invalid_argument("duplicate parameter name " + name);
  Var p = Var::parameter(std::move(init));
  params_.emplace_back(name, p);
  return p;
}

std::vector<Var> ParameterStore::all() const {
  std::vector<Var> out;
  out.reserve(params_.size());
  for (const auto& [_, v] : params_) out.push_back(v);
  return out;
}

std::size_t ParameterStore::count() const {
  std::size_t n = 0;
  for (const auto& [_, v] : params_) n += v.size();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& [_, v] : params_) v.zero_grad();
}

void ParameterStore::copy_from(const ParameterStore& other) {
  if (other.params_.size() != params_.size())
    throw std::invalid_argument("parameter stores differ in size");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& [name, src] = other.params_[i];
    auto& [dst_name, dst] = params_[i];
    if (name != dst_name || src.shape() != dst.shape())
      throw std::invalid_argument("parameter mismatch at " + dst_name);
    dst.value_mut() = src.value();
  }
}

Tensor uniform_init(Shape shape, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  Tensor t(std::move(shape));
  for (auto& v : t.storage()) v = u(rng);
  return t;
}

Tensor normal_init(Shape shape, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> d(0.0, stddev);
  Tensor t(std::move(shape));
  for (auto& v : t.storage()) v = d(rng);
  return t;
}

Linear::Linear(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out,
               std::mt19937_64& rng, bool with_bias) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  weight = store.add(name + ".weight", uniform_init({in, out}, bound, rng));
  if (with_bias) bias = store.add(name + ".bias", uniform_init({out}, bound, rng));
}

Var Linear::operator()(const Var& x) const {
  Var y = ops::matmul(x, weight);
  return bias.defined() ? ops::bias_nc(y, bias) : y;
}

Conv2d::Conv2d(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out,
               std::size_t kernel, ops::Conv2dParams p, std::mt19937_64& rng, bool with_bias)
    : params(p) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in * kernel * kernel));
  weight = store.add(name + ".weight", uniform_init({out, in, kernel, kernel}, bound, rng));
  if (with_bias) bias = store.add(name + ".bias", uniform_init({out}, bound, rng));
}

Var Conv2d::operator()(const Var& x) const {
  Var y = ops::conv2d(x, weight, params);
  return bias.defined() ? ops::bias_nc(y, bias) : y;
}

ConditionedConv2d::ConditionedConv2d(ParameterStore& store, const std::string& name,
                                     std::size_t in_channels, std::size_t cond_channels,
                                     std::size_t out, std::size_t kernel, ops::Conv2dParams p,
                                     std::mt19937_64& rng)
    : params(p), in(in_channels), cond(cond_channels) {
  const std::size_t fan_in = (in + cond) * kernel * kernel;
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  weight = store.add(name + ".weight", uniform_init({out, in + cond, kernel, kernel}, bound, rng));
  bias = store.add(name + ".bias", uniform_init({out}, bound, rng));
}

Var ConditionedConv2d::operator()(const Var& x, const Var& z) const {
  const Shape& xs = x.shape();
  if (xs.size() != 4 || xs[1] != in || z.shape() != Shape{xs[0], cond})
    throw std::invalid_argument("conditioned conv: input " + shape_str(xs) + " with condition " +
                                shape_str(z.shape()));
  const Shape& ws = weight.shape();
  const std::size_t out = ws[0];
  Var y = ops::conv2d(x, ops::narrow(weight, 1, 0, in), params);
  const std::size_t ho = y.shape()[2], wo = y.shape()[3], plane = ho * wo;

  // maps[o, c] = response of a unit plane on condition channel c.
  const Var wz = ops::reshape(ops::narrow(weight, 1, in, cond), {out * cond, 1, ws[2], ws[3]});
  const Var ones = ops::constant(Tensor({1, 1, xs[2], xs[3]}, 1.0));
  const Var maps = ops::reshape(ops::conv2d(ones, wz, params), {out, cond * plane});
  std::vector<Var> per_out;
  per_out.reserve(out);
  for (std::size_t o = 0; o < out; ++o) {
    const Var m = ops::reshape(ops::narrow(maps, 0, o, 1), {cond, plane});
    per_out.push_back(ops::reshape(ops::matmul(z, m), {xs[0], 1, plane}));
  }
  const Var cond_term = ops::reshape(ops::concat(per_out, 1), y.shape());
  return ops::bias_nc(ops::add(y, cond_term), bias);
}

ConvTranspose2d::ConvTranspose2d(ParameterStore& store, const std::string& name, std::size_t in,
                                 std::size_t out, std::size_t kernel, ops::Conv2dParams p,
                                 std::mt19937_64& rng, bool with_bias)
    : params(p) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(out * kernel * kernel));
  weight = store.add(name + ".weight", uniform_init({in, out, kernel, kernel}, bound, rng));
  if (with_bias) bias = store.add(name + ".bias", uniform_init({out}, bound, rng));
}

Var ConvTranspose2d::operator()(const Var& x) const {
  Var y = ops::conv_transpose2d(x, weight, params);
  return bias.defined() ? ops::bias_nc(y, bias) : y;
}

InstanceNorm2d::InstanceNorm2d(ParameterStore& store, const std::string& name,
                               std::size_t channels) {
  gamma = store.add(name + ".gamma", Tensor({channels}, 1.0));
  beta = store.add(name + ".beta", Tensor({channels}, 0.0));
}

Var InstanceNorm2d::operator()(const Var& x) const {
  return ops::instance_norm_affine(x, gamma, beta);
}

Embedding::Embedding(ParameterStore& store, const std::string& name, std::size_t vocab,
                     std::size_t dim, std::mt19937_64& rng) {
  table = store.add(name + ".table", normal_init({vocab, dim}, 1.0, rng));
}

Var Embedding::operator()(const std::vector<std::int64_t>& ids) const {
  return ops::embedding(table, ids);
}

GruCell::GruCell(ParameterStore& store, const std::string& name, std::size_t in, std::size_t h,
                 std::mt19937_64& rng)
    : hidden(h) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(h));
  w_input = store.add(name + ".w_input", uniform_init({in, 3 * h}, bound, rng));
  w_hidden = store.add(name + ".w_hidden", uniform_init({h, 3 * h}, bound, rng));
  b_input = store.add(name + ".b_input", uniform_init({3 * h}, bound, rng));
  b_hidden = store.add(name + ".b_hidden", uniform_init({3 * h}, bound, rng));
}

Var GruCell::operator()(const Var& x, const Var& h) const {
  const Var gi = ops::bias_nc(ops::matmul(x, w_input), b_input);
  const Var gh = ops::bias_nc(ops::matmul(h, w_hidden), b_hidden);
  const std::size_t H = hidden;
  const Var r = ops::sigmoid(ops::add(ops::narrow(gi, 1, 0, H), ops::narrow(gh, 1, 0, H)));
  const Var z = ops::sigmoid(ops::add(ops::narrow(gi, 1, H, H), ops::narrow(gh, 1, H, H)));
  const Var n =
      ops::tanh(ops::add(ops::narrow(gi, 1, 2 * H, H), ops::mul(r, ops::narrow(gh, 1, 2 * H, H))));
  return ops::add(n, ops::mul(z, ops::sub(h, n)));
}

Adam::Adam(std::vector<Var> params, Options options)
    : params_(std::move(params)), options_(options) {
  for (const auto& p : params_) {
    m_.emplace_back(p.shape(), 0.0);
    v_.emplace_back(p.shape(), 0.0);
  }
}

void Adam::step() {
  ++t_;
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const Tensor& g = params_[i].grad();
    if (g.empty()) continue;
    Tensor& w = params_[i].value_mut();
    double* m = m_[i].ptr();
    double* v = v_[i].ptr();
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = b1 * m[j] + (1.0 - b1) * g[j];
      v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
      w[j] -= options_.lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + options_.eps);
    }
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

namespace {

constexpr char kMagic[4] = {'E', 'M', 'F', 'W'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& in, const std::filesystem::path& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("truncated weights file " + path.string());
  return v;
}

}  // namespace

void save_weights(const std::filesystem::path& path, const ParameterStore& store) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(kMagic, 4);
  put<std::uint32_t>(out, kVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(store.named().size()));
  for (const auto& [name, v] : store.named()) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(v.shape().size()));
    for (auto d : v.shape()) put<std::uint64_t>(out, d);
    out.write(reinterpret_cast<const char*>(v.value().ptr()),
              static_cast<std::streamsize>(v.size() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

void load_weights(const std::filesystem::path& path, ParameterStore& store) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error(path.string() + " is not a weights file");
  if (get<std::uint32_t>(in, path) != kVersion)
    throw std::runtime_error("unsupported weights version in " + path.string());
  const auto count = get<std::uint32_t>(in, path);
  if (count != store.named().size())
    throw std::runtime_error(path.string() + ": expected " + std::to_string(store.named().size()) +
                             " tensors, found " + std::to_string(count));
  for (const auto& [name, v] : store.named()) {
    std::string stored(get<std::uint32_t>(in, path), '\0');
    in.read(stored.data(), static_cast<std::streamsize>(stored.size()));
    if (stored != name)
      throw std::runtime_error(path.string() + ": expected tensor " + name + ", found " + stored);
    Shape shape(get<std::uint32_t>(in, path));
    for (auto& d : shape) d = get<std::uint64_t>(in, path);
    if (shape != v.shape())
      throw std::runtime_error(path.string() + ": " + name + " has shape " + shape_str(shape) +
                               ", model expects " + shape_str(v.shape()));
    Var target = v;
    in.read(reinterpret_cast<char*>(target.value_mut().ptr()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
    if (!in) throw std::runtime_error("truncated weights file " + path.string());
  }
}

}  // namespace emoface::nn
