// SPDX-License-Identifier: Apache-2.0
// Attention-masked conditional GAN for AU-driven expression editing.
//
// Images are [N,3,H,W] in [-1,1], AU targets [N,17] in [0,1]. The generator
// predicts an attention mask A and a color mask C and composes
//   I_d = (1 - A) * C + A * I_o.
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "emoface/au_bridge.hpp"
#include "emoface/data_prep.hpp"
#include "emoface/nn.hpp"
#include "json.hpp"

namespace emoface {

struct GanHyperParams {
  double lambda_gp = 10.0;
  double lambda_tv = 1e-5;
  double lambda_a = 0.1;
  double lambda_z = 160.0;
  double lambda_cycle = 10.0;
  /// +1 penalizes ||A||, -1 rewards it (the alternative reading of the
  /// attention regularizer).
  double attention_norm_sign = 1.0;
  std::size_t critic_steps = 5;
  double lr_g = 1e-4;
  double lr_d = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  std::size_t batch_size = 16;

  void validate() const;
};

struct FaceGanConfig {
  std::size_t image_size = 64;
  std::size_t gen_channels = 64;
  std::size_t gen_res_blocks = 6;
  std::size_t critic_channels = 64;
  std::size_t critic_layers = 6;
  std::size_t critic_max_channels = 2048;
  std::size_t steps = 2000;
  std::uint64_t seed = 0;
  GanHyperParams hp;

  void validate() const;
  nlohmann::json to_json() const;
  static FaceGanConfig from_json(const nlohmann::json& j);
};

/// Elementwise (1 - A) * C + A * I with A [N,1,H,W] broadcast over channels.
Var compose(const Var& attention, const Var& color, const Var& image);

struct GeneratorOutput {
  Var attention;  // [N,1,H,W], sigmoid
  Var color;      // [N,3,H,W], tanh
  Var image;      // composed
};

class Generator {
 public:
  Generator(const FaceGanConfig& cfg, std::mt19937_64& rng);
  GeneratorOutput operator()(const Var& image, const Var& au) const;
  nn::ParameterStore& params() { return store_; }
  const nn::ParameterStore& params() const { return store_; }

 private:
  struct ResBlock {
    nn::Conv2d conv1, conv2;
    nn::InstanceNorm2d norm1, norm2;
  };
  std::size_t image_size_;
  nn::ParameterStore store_;
  nn::ConditionedConv2d stem_;
  nn::InstanceNorm2d stem_norm_;
  std::vector<nn::Conv2d> down_;
  std::vector<nn::InstanceNorm2d> down_norm_;
  std::vector<ResBlock> blocks_;
  std::vector<nn::ConvTranspose2d> up_;
  std::vector<nn::InstanceNorm2d> up_norm_;
  nn::Conv2d head_;  // channel 0 attention, 1..3 color
};

struct CriticOutput {
  Var patch;  // [N,1,h',w']
  Var score;  // [N], patch mean
  Var au;     // [N,17]
};

class Critic {
 public:
  Critic(const FaceGanConfig& cfg, std::mt19937_64& rng);
  CriticOutput operator()(const Var& image) const;
  /// Per-image realism score only (skips the AU head).
  Var score(const Var& image) const;
  nn::ParameterStore& params() { return store_; }
  const nn::ParameterStore& params() const { return store_; }
  std::size_t patch_size() const { return patch_size_; }

 private:
  Var trunk(const Var& image) const;

  nn::ParameterStore store_;
  std::vector<nn::Conv2d> layers_;
  nn::Conv2d head_image_, head_au_;
  std::size_t patch_size_ = 1;
};

/// Per-image critic scores [N] as a function of a batch.
using ScoreFn = std::function<Var(const Var&)>;

/// Interpolates x = eps * real + (1 - eps) * fake per sample and returns
/// mean_n (||d score_n / d x_n||_2 - 1)^2, differentiable in the critic.
Var gradient_penalty(const ScoreFn& critic, const Tensor& real, const Tensor& fake,
                     const std::vector<double>& eps);

struct AdversarialTerms {
  Var critic_loss;  // E[D(fake)] - E[D(real)] + lambda_gp * gp
  Var penalty;      // gp before weighting
  Var generator;    // -E[D(fake)]
};

/// Critic-side terms use the fake batch as a constant; the generator term
/// keeps its graph. eps empty means one fresh uniform draw per sample.
AdversarialTerms adversarial_loss(const ScoreFn& critic, const Var& real, const Var& fake,
                                  double lambda_gp, std::mt19937_64& rng,
                                  std::vector<double> eps = {});

/// Sum over the two masks of the batch mean of
///   lambda_tv * sum_ij [(A_i+1,j - A_ij)^2 + (A_i,j+1 - A_ij)^2] + sign * ||A||_2.
Var attention_loss(const Var& a_fake, const Var& a_cycle, double lambda_tv, double sign = 1.0);
Var total_variation(const Var& a);  // per-sample TV sums [N]
Var mask_norm(const Var& a);        // per-sample l2 norms [N]

/// mean_n ||dz_fake - z_d||^2 + mean_n ||dz_real - z_o||^2; an undefined
/// half is skipped.
Var condition_loss(const Var& dz_fake, const Tensor& z_d, const Var& dz_real, const Tensor& z_o);

/// Mean absolute difference over every element.
Var cycle_loss(const Var& reconstructed, const Tensor& original);

struct ObjectiveParts {
  double adversarial = 0, attention = 0, condition = 0, cycle = 0;
};
double full_objective(const ObjectiveParts& parts, const GanHyperParams& hp);
Var full_objective(const Var& adversarial, const Var& attention, const Var& condition,
                   const Var& cycle, const GanHyperParams& hp);

struct FaceBatch {
  Tensor images;  // [N,3,H,W]
  Tensor au;      // [N,17]
};

struct StepMetrics {
  std::size_t step = 0;
  double critic_loss = 0, gradient_penalty = 0, d_real = 0, d_fake = 0, cond_real = 0;
  double gen_adv = 0, attention = 0, cond_fake = 0, cycle = 0, gen_total = 0;
  double mean_attention = 0;

  nlohmann::json to_json() const;
};

struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Both networks plus their optimizers.
class FaceGan {
 public:
  explicit FaceGan(const FaceGanConfig& cfg);

  const FaceGanConfig& config() const { return cfg_; }
  Generator& generator() { return gen_; }
  const Generator& generator() const { return gen_; }
  Critic& critic() { return critic_; }
  const Critic& critic() const { return critic_; }

  /// critic_steps critic updates, then one generator update. z_d is the
  /// batch's z_o under a random cyclic permutation.
  StepMetrics train_step(const FaceBatch& batch, std::mt19937_64& rng);

  /// Inference: composed image for one [3,H,W] image and AU vector.
  Tensor synthesize(const Tensor& image, const AuVector& au) const;

 private:
  FaceGanConfig cfg_;
  std::mt19937_64 init_rng_;
  Generator gen_;
  Critic critic_;
  nn::Adam opt_g_, opt_d_;
  std::size_t step_ = 0;
};

/// Cyclic permutation of 0..n-1 (no fixed points when n > 1).
std::vector<std::size_t> cyclic_permutation(std::size_t n, std::mt19937_64& rng);

FaceBatch make_face_batch(const std::vector<Tensor>& images, const std::vector<AuVector>& aus,
                          const std::vector<std::size_t>& indices);

/// Faces with their images loaded, in corpus order.
struct FaceDataset {
  std::vector<FaceRecord> records;
  std::vector<Tensor> images;  // [3,H,W]
  std::vector<AuVector> aus;
};

/// <dir>/faces/index.csv, <dir>/faces/au.csv and the images they list
/// (paths relative to <dir>/faces). Every image must be size x size.
FaceDataset load_face_dataset(const std::filesystem::path& data_dir, std::size_t size,
                              FaceFilter filter = {});

/// Runs cfg.steps train steps over shuffled passes of the dataset.
std::vector<StepMetrics> train_face(FaceGan& gan, const FaceDataset& data,
                                    const std::function<void(const StepMetrics&)>& on_step = {});

struct FaceOverfitReport {
  double condition_error = 0;       // mean ||D_z(G(I_i|z_j)) - z_j||_2 over i != j
  double self_reconstruction = 0;   // mean |G(I_i|z_i) - I_i|
};
FaceOverfitReport evaluate_face_overfit(const FaceGan& gan, const FaceDataset& data);

/// Checkpoint directory: generator.bin, critic.bin, manifest.json.
void save_face_checkpoint(const std::filesystem::path& dir, const FaceGan& gan, std::size_t step);
struct FaceCheckpoint {
  FaceGanConfig config;
  std::shared_ptr<Generator> generator;
  nlohmann::json manifest;
};
/// Loads the generator only (inference).
FaceCheckpoint load_face_checkpoint(const std::filesystem::path& dir);
Tensor synthesize(const Generator& gen, const Tensor& image, const AuVector& au);

}  // namespace emoface
