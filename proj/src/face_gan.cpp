// SPDX-License-Identifier: Apache-2.0
#include "emoface/face_gan.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "emoface/image_io.hpp"

namespace emoface {

using json = nlohmann::json;
namespace o = ops;

void GanHyperParams::validate() const {
  auto need = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("gan config: ") + what);
  };
  need(lambda_gp >= 0 && lambda_tv >= 0 && lambda_a >= 0 && lambda_z >= 0 && lambda_cycle >= 0,
       "loss weights must be non-negative");
  need(attention_norm_sign == 1.0 || attention_norm_sign == -1.0,
       "attention_norm_sign must be 1 or -1");
  need(critic_steps >= 1, "critic_steps must be at least 1");
  need(lr_g >= 0 && lr_d >= 0, "learning rates must be non-negative");
  need(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1, "betas must lie in [0,1)");
  need(batch_size >= 2, "batch_size must be at least 2");
}

void FaceGanConfig::validate() const {
  auto need = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("gan config: ") + what);
  };
  need(image_size >= 4 && image_size <= 128 && image_size % 4 == 0,
       "image_size must be a multiple of 4 no larger than 128");
  need(gen_channels > 0 && critic_channels > 0 && critic_max_channels > 0,
       "channel counts must be positive");
  need(critic_layers >= 1 && critic_layers < 8 && image_size % (std::size_t{1} << critic_layers) == 0,
       "image_size must be divisible by 2^critic_layers");
  hp.validate();
}

json FaceGanConfig::to_json() const {
  return {{"image_size", image_size},
          {"gen_channels", gen_channels},
          {"gen_res_blocks", gen_res_blocks},
          {"critic_channels", critic_channels},
          {"critic_layers", critic_layers},
          {"critic_max_channels", critic_max_channels},
          {"steps", steps},
          {"seed", seed},
          {"loss",
           {{"lambda_gp", hp.lambda_gp},
            {"lambda_tv", hp.lambda_tv},
            {"lambda_a", hp.lambda_a},
            {"lambda_z", hp.lambda_z},
            {"lambda_cycle", hp.lambda_cycle},
            {"attention_norm_sign", hp.attention_norm_sign}}},
          {"optim",
           {{"critic_steps", hp.critic_steps},
            {"lr_g", hp.lr_g},
            {"lr_d", hp.lr_d},
            {"beta1", hp.beta1},
            {"beta2", hp.beta2},
            {"batch_size", hp.batch_size}}}};
}

FaceGanConfig FaceGanConfig::from_json(const json& j) {
  FaceGanConfig c;
  auto& h = c.hp;
  for (const auto& [key, v] : j.items()) {
    if (key == "image_size") c.image_size = v.get<std::size_t>();
    else if (key == "gen_channels") c.gen_channels = v.get<std::size_t>();
    else if (key == "gen_res_blocks") c.gen_res_blocks = v.get<std::size_t>();
    else if (key == "critic_channels") c.critic_channels = v.get<std::size_t>();
    else if (key == "critic_layers") c.critic_layers = v.get<std::size_t>();
    else if (key == "critic_max_channels") c.critic_max_channels = v.get<std::size_t>();
    else if (key == "steps") c.steps = v.get<std::size_t>();
    else if (key == "seed") c.seed = v.get<std::uint64_t>();
    else if (key == "loss") {
      for (const auto& [k, x] : v.items()) {
        if (k == "lambda_gp") h.lambda_gp = x.get<double>();
        else if (k == "lambda_tv") h.lambda_tv = x.get<double>();
        else if (k == "lambda_a") h.lambda_a = x.get<double>();
        else if (k == "lambda_z") h.lambda_z = x.get<double>();
        else if (k == "lambda_cycle") h.lambda_cycle = x.get<double>();
        else if (k == "attention_norm_sign") h.attention_norm_sign = x.get<double>();
        else throw std::invalid_argument("gan config: unknown key loss." + k);
      }
    } else if (key == "optim") {
      for (const auto& [k, x] : v.items()) {
        if (k == "critic_steps") h.critic_steps = x.get<std::size_t>();
        else if (k == "lr_g") h.lr_g = x.get<double>();
        else if (k == "lr_d") h.lr_d = x.get<double>();
        else if (k == "beta1") h.beta1 = x.get<double>();
        else if (k == "beta2") h.beta2 = x.get<double>();
        else if (k == "batch_size") h.batch_size = x.get<std::size_t>();
        else throw std::invalid_argument("gan config: unknown key optim." + k);
      }
    } else throw std::invalid_argument("gan config: unknown key " + key);
  }
  return c;
}

Var compose(const Var& attention, const Var& color, const Var& image) {
  const Shape& as = attention.shape();
  const Shape& is = image.shape();
  if (is.size() != 4 || is[1] != 3 || color.shape() != is ||
      as != Shape{is[0], 1, is[2], is[3]})
    throw std::invalid_argument("compose: attention " + shape_str(as) + ", color " +
                                shape_str(color.shape()) + ", image " + shape_str(is));
  const Var a3 = o::expand_axis(attention, 1, 3);
  return o::add(o::mul(o::add_scalar(o::neg(a3), 1.0), color), o::mul(a3, image));
}

namespace {

constexpr o::Conv2dParams kSame3{1, 1};
constexpr o::Conv2dParams kDown{2, 1};

// [N, ...] -> [N] sums of each sample's elements.
Var per_sample_sum(const Var& x) {
  const std::size_t n = x.shape()[0];
  return o::reshape(o::sum_axis(o::reshape(x, {n, x.size() / n}), 1), {n});
}

void require_finite(const Tensor& t, const std::string& what) {
  if (t.all_finite()) return;
  std::size_t i = 0;
  while (std::isfinite(t[i])) ++i;
  std::string where;
  if (t.rank() > 1 && t.dim(0) > 0)
    where = " at batch index " + std::to_string(i / (t.size() / t.dim(0)));
  throw NumericalError(what + " is non-finite" + where);
}

}  // namespace

Generator::Generator(const FaceGanConfig& cfg, std::mt19937_64& rng) : image_size_(cfg.image_size) {
  const std::size_t c = cfg.gen_channels;
  stem_ = nn::ConditionedConv2d(store_, "gen.stem", 3, kAuCount, c, 7, {1, 3}, rng);
  stem_norm_ = nn::InstanceNorm2d(store_, "gen.stem_norm", c);
  std::size_t ch = c;
  for (int i = 0; i < 2; ++i) {
    const std::string name = "gen.down" + std::to_string(i);
    down_.emplace_back(store_, name, ch, 2 * ch, 4, kDown, rng, false);
    down_norm_.emplace_back(store_, name + "_norm", 2 * ch);
    ch *= 2;
  }
  for (std::size_t i = 0; i < cfg.gen_res_blocks; ++i) {
    const std::string name = "gen.res" + std::to_string(i);
    blocks_.push_back({nn::Conv2d(store_, name + ".conv1", ch, ch, 3, kSame3, rng, false),
                       nn::Conv2d(store_, name + ".conv2", ch, ch, 3, kSame3, rng, false),
                       nn::InstanceNorm2d(store_, name + ".norm1", ch),
                       nn::InstanceNorm2d(store_, name + ".norm2", ch)});
  }
  for (int i = 0; i < 2; ++i) {
    const std::string name = "gen.up" + std::to_string(i);
    up_.emplace_back(store_, name, ch, ch / 2, 4, kDown, rng, false);
    up_norm_.emplace_back(store_, name + "_norm", ch / 2);
    ch /= 2;
  }
  head_ = nn::Conv2d(store_, "gen.head", ch, 4, 7, {1, 3}, rng);
  head_.bias.value_mut()[0] = 0.0;  // attention starts centred at 0.5
}

GeneratorOutput Generator::operator()(const Var& image, const Var& au) const {
  const Shape& s = image.shape();
  if (s.size() != 4 || s[1] != 3 || s[2] != image_size_ || s[3] != image_size_ ||
      au.shape() != Shape{s[0], kAuCount})
    throw std::invalid_argument("generator: image " + shape_str(s) + " with AU " +
                                shape_str(au.shape()) + ", expected [N,3," +
                                std::to_string(image_size_) + "," + std::to_string(image_size_) +
                                "] and [N,17]");
  Var x = o::relu(stem_norm_(stem_(image, au)));
  for (std::size_t i = 0; i < down_.size(); ++i) x = o::relu(down_norm_[i](down_[i](x)));
  for (const auto& b : blocks_)
    x = o::add(x, b.norm2(b.conv2(o::relu(b.norm1(b.conv1(x))))));
  for (std::size_t i = 0; i < up_.size(); ++i) x = o::relu(up_norm_[i](up_[i](x)));
  const Var h = head_(x);
  GeneratorOutput out;
  out.attention = o::sigmoid(o::narrow(h, 1, 0, 1));
  out.color = o::tanh(o::narrow(h, 1, 1, 3));
  out.image = compose(out.attention, out.color, image);
  return out;
}

Critic::Critic(const FaceGanConfig& cfg, std::mt19937_64& rng) {
  std::size_t in = 3, ch = cfg.critic_channels;
  for (std::size_t i = 0; i < cfg.critic_layers; ++i) {
    layers_.emplace_back(store_, "critic.conv" + std::to_string(i), in, ch, 4, kDown, rng);
    in = ch;
    ch = std::min(2 * ch, cfg.critic_max_channels);
  }
  patch_size_ = cfg.image_size >> cfg.critic_layers;
  head_image_ = nn::Conv2d(store_, "critic.head_image", in, 1, 3, kSame3, rng, false);
  head_au_ = nn::Conv2d(store_, "critic.head_au", in, kAuCount, patch_size_, {1, 0}, rng, false);
}

Var Critic::trunk(const Var& image) const {
  Var x = image;
  for (const auto& l : layers_) x = o::leaky_relu(l(x), 0.01);
  return x;
}

Var Critic::score(const Var& image) const {
  const Var patch = head_image_(trunk(image));
  return o::mul_scalar(per_sample_sum(patch), 1.0 / static_cast<double>(patch_size_ * patch_size_));
}

CriticOutput Critic::operator()(const Var& image) const {
  const Var t = trunk(image);
  CriticOutput out;
  out.patch = head_image_(t);
  out.score = o::mul_scalar(per_sample_sum(out.patch),
                            1.0 / static_cast<double>(patch_size_ * patch_size_));
  out.au = o::reshape(head_au_(t), {image.shape()[0], kAuCount});
  return out;
}

Var gradient_penalty(const ScoreFn& critic, const Tensor& real, const Tensor& fake,
                     const std::vector<double>& eps) {
  if (real.shape() != fake.shape() || real.rank() < 2)
    throw std::invalid_argument("gradient penalty: real " + shape_str(real.shape()) + " vs fake " +
                                shape_str(fake.shape()));
  const std::size_t n = real.dim(0), per = real.size() / n;
  if (eps.size() != n) throw std::invalid_argument("gradient penalty: one eps per sample");
  Tensor mixed(real.shape());
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t i = b * per; i < (b + 1) * per; ++i)
      mixed[i] = eps[b] * real[i] + (1.0 - eps[b]) * fake[i];
  const Var x(std::move(mixed), true);
  // Samples are scored independently, so the gradient of the summed scores
  // holds every per-sample input gradient.
  const Var total = o::sum(critic(x));
  const std::vector<Var> wrt{x};
  const Var g = grad(total, wrt, true)[0];
  const Var norm = o::sqrt(per_sample_sum(o::square(g)));
  return o::mean(o::square(o::add_scalar(norm, -1.0)));
}

AdversarialTerms adversarial_loss(const ScoreFn& critic, const Var& real, const Var& fake,
                                  double lambda_gp, std::mt19937_64& rng, std::vector<double> eps) {
  const std::size_t n = real.shape()[0];
  if (eps.empty()) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t i = 0; i < n; ++i) eps.push_back(u(rng));
  }
  AdversarialTerms t;
  t.penalty = gradient_penalty(critic, real.value(), fake.value(), eps);
  const Var d_real = o::mean(critic(real));
  const Var d_fake = o::mean(critic(o::detach(fake)));
  t.critic_loss = o::add(o::sub(d_fake, d_real), o::mul_scalar(t.penalty, lambda_gp));
  t.generator = o::neg(o::mean(critic(fake)));
  return t;
}

Var total_variation(const Var& a) {
  const Shape& s = a.shape();
  if (s.size() != 4 || s[1] != 1) throw std::invalid_argument("total variation: mask " + shape_str(s));
  const std::size_t h = s[2], w = s[3];
  Var tv = o::constant(Tensor({s[0]}, 0.0));
  if (h > 1) {
    const Var dv = o::sub(o::narrow(a, 2, 1, h - 1), o::narrow(a, 2, 0, h - 1));
    tv = o::add(tv, per_sample_sum(o::square(dv)));
  }
  if (w > 1) {
    const Var dh = o::sub(o::narrow(a, 3, 1, w - 1), o::narrow(a, 3, 0, w - 1));
    tv = o::add(tv, per_sample_sum(o::square(dh)));
  }
  return tv;
}

Var mask_norm(const Var& a) { return o::sqrt(per_sample_sum(o::square(a))); }

Var attention_loss(const Var& a_fake, const Var& a_cycle, double lambda_tv, double sign) {
  auto one = [&](const Var& a) {
    return o::mean(o::add(o::mul_scalar(total_variation(a), lambda_tv),
                          o::mul_scalar(mask_norm(a), sign)));
  };
  return o::add(one(a_fake), one(a_cycle));
}

Var condition_loss(const Var& dz_fake, const Tensor& z_d, const Var& dz_real, const Tensor& z_o) {
  auto half = [](const Var& dz, const Tensor& z) {
    if (dz.shape() != z.shape())
      throw std::invalid_argument("condition loss: estimate " + shape_str(dz.shape()) +
                                  " vs target " + shape_str(z.shape()));
    return o::mean(per_sample_sum(o::square(o::sub(dz, o::constant(z)))));
  };
  if (dz_fake.defined() && dz_real.defined()) return o::add(half(dz_fake, z_d), half(dz_real, z_o));
  if (dz_fake.defined()) return half(dz_fake, z_d);
  if (dz_real.defined()) return half(dz_real, z_o);
  throw std::invalid_argument("condition loss: no estimates given");
}

Var cycle_loss(const Var& reconstructed, const Tensor& original) {
  if (reconstructed.shape() != original.shape())
    throw std::invalid_argument("cycle loss: " + shape_str(reconstructed.shape()) + " vs " +
                                shape_str(original.shape()));
  return o::mean(o::abs(o::sub(reconstructed, o::constant(original))));
}

double full_objective(const ObjectiveParts& p, const GanHyperParams& hp) {
  return p.adversarial + hp.lambda_a * p.attention + hp.lambda_z * p.condition +
         hp.lambda_cycle * p.cycle;
}

Var full_objective(const Var& adversarial, const Var& attention, const Var& condition,
                   const Var& cycle, const GanHyperParams& hp) {
  return o::add(o::add(adversarial, o::mul_scalar(attention, hp.lambda_a)),
                o::add(o::mul_scalar(condition, hp.lambda_z), o::mul_scalar(cycle, hp.lambda_cycle)));
}

json StepMetrics::to_json() const {
  return {{"step", step},
          {"critic_loss", critic_loss},
          {"gradient_penalty", gradient_penalty},
          {"d_real", d_real},
          {"d_fake", d_fake},
          {"cond_real", cond_real},
          {"gen_adv", gen_adv},
          {"attention", attention},
          {"cond_fake", cond_fake},
          {"cycle", cycle},
          {"gen_total", gen_total},
          {"mean_attention", mean_attention}};
}

namespace {

const FaceGanConfig& validated(const FaceGanConfig& cfg) {
  cfg.validate();
  return cfg;
}

}  // namespace

FaceGan::FaceGan(const FaceGanConfig& cfg)
    : cfg_(validated(cfg)),
      init_rng_(cfg.seed),
      gen_(cfg_, init_rng_),
      critic_(cfg_, init_rng_),
      opt_g_(gen_.params().all(), {cfg.hp.lr_g, cfg.hp.beta1, cfg.hp.beta2, 1e-8}),
      opt_d_(critic_.params().all(), {cfg.hp.lr_d, cfg.hp.beta1, cfg.hp.beta2, 1e-8}) {}

std::vector<std::size_t> cyclic_permutation(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), std::size_t{0});
  for (std::size_t i = n; i-- > 1;) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(p[i], p[pick(rng)]);
  }
  return p;
}

StepMetrics FaceGan::train_step(const FaceBatch& batch, std::mt19937_64& rng) {
  const auto& hp = cfg_.hp;
  const std::size_t n = batch.images.dim(0);
  if (n < 2 || batch.au.shape() != Shape{n, kAuCount})
    throw std::invalid_argument("train step: need at least 2 images with [N,17] AU targets");
  require_finite(batch.images, "input image");

  const auto perm = cyclic_permutation(n, rng);
  Tensor z_d({n, kAuCount});
  for (std::size_t i = 0; i < n; ++i)
    std::copy_n(batch.au.ptr() + perm[i] * kAuCount, kAuCount, z_d.ptr() + i * kAuCount);

  const Var real = o::constant(batch.images);
  const GeneratorOutput fake = gen_(real, o::constant(z_d));
  require_finite(fake.image.value(), "generated image");
  const Var fake_const = o::constant(fake.image.value());

  StepMetrics m;
  m.step = ++step_;
  const std::vector<Var> critic_params = critic_.params().all();
  const ScoreFn score = [this](const Var& x) { return critic_.score(x); };
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t k = 0; k < hp.critic_steps; ++k) {
    opt_d_.zero_grad();
    const CriticOutput r = critic_(real);
    const Var d_fake = o::mean(critic_.score(fake_const));
    std::vector<double> eps(n);
    for (auto& e : eps) e = unit(rng);
    const Var gp = gradient_penalty(score, batch.images, fake.image.value(), eps);
    const Var cond = condition_loss({}, {}, r.au, batch.au);
    const Var d_real = o::mean(r.score);
    const Var loss = o::add(o::add(o::sub(d_fake, d_real), o::mul_scalar(gp, hp.lambda_gp)),
                            o::mul_scalar(cond, hp.lambda_z));
    require_finite(r.score.value(), "critic score");
    require_finite(r.au.value(), "critic AU estimate");
    require_finite(loss.value(), "critic loss");
    backward(loss, critic_params);
    opt_d_.step();
    m.critic_loss = loss.item();
    m.gradient_penalty = gp.item();
    m.d_real = d_real.item();
    m.d_fake = d_fake.item();
    m.cond_real = cond.item();
  }

  opt_g_.zero_grad();
  const GeneratorOutput rec = gen_(fake.image, o::constant(batch.au));
  const CriticOutput f = critic_(fake.image);
  const Var adv = o::neg(o::mean(f.score));
  const Var attn = attention_loss(fake.attention, rec.attention, hp.lambda_tv, hp.attention_norm_sign);
  const Var cond = condition_loss(f.au, z_d, {}, {});
  const Var cyc = cycle_loss(rec.image, batch.images);
  const Var total = full_objective(adv, attn, cond, cyc, hp);
  require_finite(rec.image.value(), "reconstructed image");
  require_finite(f.au.value(), "critic AU estimate on generated images");
  require_finite(total.value(), "generator loss");
  const std::vector<Var> gen_params = gen_.params().all();
  backward(total, gen_params);
  opt_g_.step();

  m.gen_adv = adv.item();
  m.attention = attn.item();
  m.cond_fake = cond.item();
  m.cycle = cyc.item();
  m.gen_total = total.item();
  const auto& a = fake.attention.value();
  m.mean_attention = std::accumulate(a.storage().begin(), a.storage().end(), 0.0) /
                     static_cast<double>(a.size());
  return m;
}

Tensor synthesize(const Generator& gen, const Tensor& image, const AuVector& au) {
  if (image.rank() != 3 || image.dim(0) != 3)
    throw std::invalid_argument("synthesize: image " + shape_str(image.shape()) + ", expected [3,H,W]");
  const auto bad = validate_au_vector({au.begin(), au.end()});
  if (!bad.empty()) throw std::invalid_argument("synthesize: " + bad.front());
  NoGradGuard no_grad;
  const Var x = o::constant(image.reshaped({1, 3, image.dim(1), image.dim(2)}));
  const Var z = o::constant(Tensor({1, kAuCount}, std::vector<double>(au.begin(), au.end())));
  return gen(x, z).image.value().reshaped(image.shape());
}

Tensor FaceGan::synthesize(const Tensor& image, const AuVector& au) const {
  return emoface::synthesize(gen_, image, au);
}

FaceBatch make_face_batch(const std::vector<Tensor>& images, const std::vector<AuVector>& aus,
                          const std::vector<std::size_t>& indices) {
  if (indices.empty() || images.size() != aus.size())
    throw std::invalid_argument("face batch: empty selection or image/AU count mismatch");
  const Shape& s = images.at(indices.front()).shape();
  const std::size_t per = images[indices.front()].size();
  FaceBatch b{Tensor({indices.size(), s[0], s[1], s[2]}), Tensor({indices.size(), kAuCount})};
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const Tensor& img = images.at(indices[i]);
    if (img.shape() != s) throw std::invalid_argument("face batch: mixed image sizes");
    std::copy_n(img.ptr(), per, b.images.ptr() + i * per);
    std::copy_n(aus[indices[i]].data(), kAuCount, b.au.ptr() + i * kAuCount);
  }
  return b;
}

FaceDataset load_face_dataset(const std::filesystem::path& data_dir, std::size_t size,
                              FaceFilter filter) {
  const auto faces = data_dir / "faces";
  FaceDataset d;
  d.records = load_face_corpus(faces / "index.csv", faces / "au.csv", filter);
  if (d.records.empty()) throw DataError("no faces under " + faces.string());
  for (const auto& r : d.records) {
    Tensor img = read_png(faces / r.image_path);
    if (img.shape() != Shape{3, size, size})
      throw DataError(r.image_path + ": image is " + shape_str(img.shape()) + ", expected [3," +
                      std::to_string(size) + "," + std::to_string(size) + "]");
    d.images.push_back(std::move(img));
    d.aus.push_back(r.au);
  }
  return d;
}

std::vector<StepMetrics> train_face(FaceGan& gan, const FaceDataset& data,
                                    const std::function<void(const StepMetrics&)>& on_step) {
  const auto& cfg = gan.config();
  const std::size_t n = data.images.size();
  if (n < 2) throw DataError("face training needs at least 2 images");
  const std::size_t bs = std::min(cfg.hp.batch_size, n);
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t pos = n;
  std::vector<StepMetrics> history;
  history.reserve(cfg.steps);
  for (std::size_t s = 0; s < cfg.steps; ++s) {
    if (pos + bs > n) {
      std::shuffle(order.begin(), order.end(), rng);
      pos = 0;
    }
    const std::vector<std::size_t> idx(order.begin() + pos, order.begin() + pos + bs);
    pos += bs;
    history.push_back(gan.train_step(make_face_batch(data.images, data.aus, idx), rng));
    if (on_step) on_step(history.back());
  }
  return history;
}

FaceOverfitReport evaluate_face_overfit(const FaceGan& gan, const FaceDataset& data) {
  const std::size_t n = data.images.size();
  if (n < 2) throw DataError("overfit evaluation needs at least 2 images");
  NoGradGuard no_grad;
  FaceOverfitReport rep;
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), std::size_t{0});
  const FaceBatch own = make_face_batch(data.images, data.aus, all);
  const Tensor self = gan.generator()(o::constant(own.images), o::constant(own.au)).image.value();
  for (std::size_t i = 0; i < self.size(); ++i) rep.self_reconstruction += std::fabs(self[i] - own.images[i]);
  rep.self_reconstruction /= static_cast<double>(self.size());

  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::size_t> targets;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) targets.push_back(j);
    const FaceBatch tb = make_face_batch(data.images, data.aus, targets);
    const std::vector<std::size_t> source(targets.size(), i);
    const FaceBatch sb = make_face_batch(data.images, data.aus, source);
    const Var edited = gan.generator()(o::constant(sb.images), o::constant(tb.au)).image;
    const Tensor est = gan.critic()(edited).au.value();
    for (std::size_t k = 0; k < targets.size(); ++k) {
      double sq = 0;
      for (std::size_t c = 0; c < kAuCount; ++c) {
        const double d = est[k * kAuCount + c] - tb.au[k * kAuCount + c];
        sq += d * d;
      }
      rep.condition_error += std::sqrt(sq);
    }
  }
  rep.condition_error /= static_cast<double>(n * (n - 1));
  return rep;
}

void save_face_checkpoint(const std::filesystem::path& dir, const FaceGan& gan, std::size_t step) {
  std::filesystem::create_directories(dir);
  nn::save_weights(dir / "generator.bin", gan.generator().params());
  nn::save_weights(dir / "critic.bin", gan.critic().params());
  json manifest{{"kind", "face"},
                {"config", gan.config().to_json()},
                {"au_order", std::vector<std::string>(kAuNames.begin(), kAuNames.end())},
                {"image_size", gan.config().image_size},
                {"seed", gan.config().seed},
                {"step", step}};
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  out << manifest.dump(2) << '\n';
  if (!out) throw std::runtime_error("cannot write " + (dir / "manifest.json").string());
}

FaceCheckpoint load_face_checkpoint(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw std::runtime_error("missing " + (dir / "manifest.json").string());
  json manifest = json::parse(in);
  if (manifest.value("kind", "") != "face")
    throw std::runtime_error(dir.string() + " is not a face checkpoint");
  if (manifest.at("au_order").get<std::vector<std::string>>() !=
      std::vector<std::string>(kAuNames.begin(), kAuNames.end()))
    throw std::runtime_error(dir.string() + ": AU ordering differs from this build");
  FaceCheckpoint ck;
  ck.config = FaceGanConfig::from_json(manifest.at("config"));
  ck.config.validate();
  std::mt19937_64 rng(ck.config.seed);
  ck.generator = std::make_shared<Generator>(ck.config, rng);
  nn::load_weights(dir / "generator.bin", ck.generator->params());
  ck.manifest = std::move(manifest);
  return ck;
}

}  // namespace emoface
