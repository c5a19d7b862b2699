// SPDX-License-Identifier: Apache-2.0
// Layers, parameter bookkeeping, Adam, and the weights file format.
#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "emoface/ops.hpp"

namespace emoface::nn {

/// Ordered, named collection of trainable leaves.
class ParameterStore {
 public:
  Var add(const std::string& name, Tensor init);
  const std::vector<std::pair<std::string, Var>>& named() const { return params_; }
  std::vector<Var> all() const;
  std::size_t count() const;  // scalar parameters
  void zero_grad();

  /// Copies values from another store with identical names and shapes.
  void copy_from(const ParameterStore& other);

 private:
  std::vector<std::pair<std::string, Var>> params_;
};

Tensor uniform_init(Shape shape, double bound, std::mt19937_64& rng);
Tensor normal_init(Shape shape, double stddev, std::mt19937_64& rng);

struct Linear {
  Var weight;  // [in, out]
  Var bias;    // [out]

  Linear() = default;
  Linear(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out,
         std::mt19937_64& rng, bool with_bias = true);
  Var operator()(const Var& x) const;
};

struct Conv2d {
  Var weight;  // [out, in, k, k]
  Var bias;    // [out] or undefined
  ops::Conv2dParams params;

  Conv2d() = default;
  Conv2d(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out,
         std::size_t kernel, ops::Conv2dParams p, std::mt19937_64& rng, bool with_bias = true);
  Var operator()(const Var& x) const;
};

/// Convolution of concat(x, z broadcast over space) without materializing
/// the constant planes: their response is conv(ones, w_z) weighted by z.
struct ConditionedConv2d {
  Var weight;  // [out, in + cond, k, k]
  Var bias;
  ops::Conv2dParams params;
  std::size_t in = 0;
  std::size_t cond = 0;

  ConditionedConv2d() = default;
  ConditionedConv2d(ParameterStore& store, const std::string& name, std::size_t in,
                    std::size_t cond, std::size_t out, std::size_t kernel, ops::Conv2dParams p,
                    std::mt19937_64& rng);
  /// x [N,in,H,W], z [N,cond].
  Var operator()(const Var& x, const Var& z) const;
};

struct ConvTranspose2d {
  Var weight;  // [in, out, k, k]
  Var bias;
  ops::Conv2dParams params;

  ConvTranspose2d() = default;
  ConvTranspose2d(ParameterStore& store, const std::string& name, std::size_t in,
                  std::size_t out, std::size_t kernel, ops::Conv2dParams p, std::mt19937_64& rng,
                  bool with_bias = true);
  Var operator()(const Var& x) const;
};

/// Instance normalization with a learned per-channel affine transform.
struct InstanceNorm2d {
  Var gamma;
  Var beta;

  InstanceNorm2d() = default;
  InstanceNorm2d(ParameterStore& store, const std::string& name, std::size_t channels);
  Var operator()(const Var& x) const;
};

struct Embedding {
  Var table;  // [vocab, dim]

  Embedding() = default;
  Embedding(ParameterStore& store, const std::string& name, std::size_t vocab, std::size_t dim,
            std::mt19937_64& rng);
  Var operator()(const std::vector<std::int64_t>& ids) const;
};

/// Gated recurrent unit with gates ordered (reset, update, candidate):
///   r = s(x Wr + br + h Ur + cr), z = s(x Wz + bz + h Uz + cz)
///   n = tanh(x Wn + bn + r * (h Un + cn)), h' = (1 - z) * n + z * h
struct GruCell {
  Var w_input;   // [in, 3H]
  Var w_hidden;  // [H, 3H]
  Var b_input;   // [3H]
  Var b_hidden;  // [3H]
  std::size_t hidden = 0;

  GruCell() = default;
  GruCell(ParameterStore& store, const std::string& name, std::size_t in, std::size_t hidden,
          std::mt19937_64& rng);
  Var operator()(const Var& x, const Var& h) const;
};

/// Adaptive-moment optimizer over a fixed parameter list.
class Adam {
 public:
  struct Options {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  };

  Adam(std::vector<Var> params, Options options);
  void step();
  void zero_grad();
  const Options& options() const { return options_; }
  void set_lr(double lr) { options_.lr = lr; }

 private:
  std::vector<Var> params_;
  std::vector<Tensor> m_, v_;
  Options options_;
  std::int64_t t_ = 0;
};

/// Binary weights file: "EMFW", u32 version, u32 count, then per tensor
/// u32 name length, name, u32 rank, u64 dims, f64 data (little endian).
void save_weights(const std::filesystem::path& path, const ParameterStore& store);
void load_weights(const std::filesystem::path& path, ParameterStore& store);

}  // namespace emoface::nn
