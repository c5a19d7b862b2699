// SPDX-License-Identifier: Apache-2.0
// Acceptance run: one PASS/FAIL line per criterion.
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "commands.hpp"
#include "emoface/image_io.hpp"
#include "emoface/synthetic.hpp"
#include "support/gan_fixtures.hpp"
#include "support/gradcheck.hpp"
#include "support/nlg_oracle.hpp"

using namespace emoface;
namespace fs = std::filesystem;
using json = nlohmann::json;
using emoface::testing::uniform_tensor;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Context {
  fs::path root;   // source tree
  fs::path work;   // scratch space
  fs::path cli;    // emoface executable
  std::ostream* log = nullptr;
};

bool close_rel(double got, double want, double tol) {
  return std::fabs(got - want) <= tol * std::max(1.0, std::fabs(want));
}

std::string fmt(double v) {
  std::ostringstream s;
  s << v;
  return s.str();
}

// ---- composition ----------------------------------------------------------

Outcome composition(const Context&) {
  std::mt19937_64 rng(2024);
  std::size_t mismatches = 0, identity_failures = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const Tensor a = uniform_tensor({1, 1, 4, 4}, 0, 1, rng);
    const Tensor c = uniform_tensor({1, 3, 4, 4}, -1, 1, rng);
    const Tensor img = uniform_tensor({1, 3, 4, 4}, -1, 1, rng);
    const Tensor out = compose(Var(a), Var(c), Var(img)).value();
    for (std::size_t ch = 0; ch < 3; ++ch)
      for (std::size_t i = 0; i < 16; ++i) {
        const std::size_t k = ch * 16 + i;
        if (out[k] != (1.0 - a[i]) * c[k] + a[i] * img[k]) ++mismatches;
      }
    if (compose(Var(Tensor({1, 1, 4, 4}, 1.0)), Var(c), Var(img)).value().storage() != img.storage())
      ++identity_failures;
    if (compose(Var(Tensor({1, 1, 4, 4}, 0.0)), Var(c), Var(img)).value().storage() != c.storage())
      ++identity_failures;
  }
  return {mismatches == 0 && identity_failures == 0,
          "1000 triples, " + std::to_string(mismatches) + " element mismatches, " +
              std::to_string(identity_failures) + " identity failures"};
}

// ---- loss suite -----------------------------------------------------------

Var per_sample_linear(const Var& x, const Tensor& w) {
  const std::size_t n = x.shape()[0];
  Tensor tiled(x.shape());
  for (std::size_t i = 0; i < tiled.size(); ++i) tiled[i] = w[i % w.size()];
  return ops::reshape(ops::sum_axis(ops::reshape(ops::mul_const(x, tiled), {n, w.size()}), 1), {n});
}

Outcome loss_suite(const Context&) {
  std::vector<std::string> failed;
  std::mt19937_64 rng(7);
  const std::size_t n = 3 * 4 * 4;
  const double lambda = 10.0;

  Tensor w = uniform_tensor({n}, -1, 1, rng);
  double norm = 0;
  for (double v : w.storage()) norm += v * v;
  for (auto& v : w.storage()) v /= std::sqrt(norm);
  const ScoreFn unit = [&](const Var& x) { return per_sample_linear(x, w); };
  const Tensor real = uniform_tensor({4, 3, 4, 4}, -1, 1, rng);
  const Tensor fake = uniform_tensor({4, 3, 4, 4}, -1, 1, rng);
  const double gp_unit = gradient_penalty(unit, real, fake, {0.1, 0.4, 0.7, 1.0}).item();
  if (std::fabs(gp_unit) > 1e-6) failed.push_back("unit-norm penalty " + fmt(gp_unit));

  const ScoreFn doubled = [&](const Var& x) { return per_sample_linear(x, Tensor({n}, 2.0)); };
  const double gp_doubled = lambda * gradient_penalty(doubled, real, fake, {0.2, 0.5, 0.6, 0.9}).item();
  const double gp_expected = lambda * std::pow(2.0 * std::sqrt(static_cast<double>(n)) - 1.0, 2);
  if (!close_rel(gp_doubled, gp_expected, 1e-6)) failed.push_back("doubled-sum penalty " + fmt(gp_doubled));

  const double tv = total_variation(Var(Tensor({1, 1, 2, 2}, std::vector<double>{0, 1, 1, 0}))).item();
  if (!close_rel(tv, 4.0, 1e-6)) failed.push_back("checkerboard TV " + fmt(tv));

  const Tensor img = uniform_tensor({2, 3, 4, 4}, -1, 1, rng);
  const Var saturated(Tensor({2, 1, 4, 4}, 1.0));
  const Var color(uniform_tensor({2, 3, 4, 4}, -1, 1, rng));
  const double cyc = cycle_loss(compose(saturated, color, compose(saturated, color, Var(img))), img).item();
  if (cyc != 0.0) failed.push_back("identity cycle " + fmt(cyc));

  std::uniform_real_distribution<double> u(0.1, 3.0);
  for (int t = 0; t < 100; ++t) {
    GanHyperParams hp;
    hp.lambda_a = u(rng);
    hp.lambda_z = u(rng);
    hp.lambda_cycle = u(rng);
    const ObjectiveParts p{u(rng), u(rng), u(rng), u(rng)};
    const double want = p.adversarial + hp.lambda_a * p.attention + hp.lambda_z * p.condition +
                        hp.lambda_cycle * p.cycle;
    const double got = full_objective(Var(Tensor::scalar(p.adversarial)), Var(Tensor::scalar(p.attention)),
                                      Var(Tensor::scalar(p.condition)), Var(Tensor::scalar(p.cycle)), hp)
                           .item();
    if (!close_rel(full_objective(p, hp), want, 1e-6) || !close_rel(got, want, 1e-6)) {
      failed.push_back("objective combination trial " + std::to_string(t));
      break;
    }
  }
  std::string detail = failed.empty() ? "penalties, TV, cycle and objective exact to 1e-6" : "";
  for (const auto& f : failed) detail += (detail.empty() ? "" : "; ") + f;
  return {failed.empty(), detail};
}

// ---- gradient checks ------------------------------------------------------

Outcome gradient_checks(const Context&) {
  double worst = 0;
  std::string where;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    NlgModel model(testing::tiny_nlg_config(seed));
    std::mt19937_64 data_rng(seed + 100);
    const auto batch = testing::random_nlg_examples(2, 20, data_rng);
    auto loss = [&] {
      std::mt19937_64 rng(0);
      return nlg_loss(model, batch, 1.0, rng).total;
    };
    const auto r = testing::check_gradients(loss, model.params().all(), 1e-4, 1e-6);
    if (r.max_rel_error > worst) worst = r.max_rel_error, where = "nlg seed " + std::to_string(seed);
    for (const auto& c : testing::gan_grad_cases(seed)) {
      const auto g = testing::check_gan_case(c);
      if (g.max_rel_error > worst) worst = g.max_rel_error, where = c.name + " seed " + std::to_string(seed);
    }
  }
  return {worst < 1e-3, "5 seeds x (nlg + 5 GAN cases), worst relative error " + fmt(worst) + " (" + where + ")"};
}

// ---- teacher forcing boundary --------------------------------------------

Outcome teacher_forcing(const Context&) {
  double worst = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    NlgModel model(testing::tiny_nlg_config(seed));
    std::mt19937_64 rng(seed);
    const auto batch = testing::random_nlg_examples(4, 20, rng);
    const double got = nlg_loss(model, batch, 1.0, rng).total.item();
    const double want = testing::NlgOracle(model).loss(batch).total;
    worst = std::max(worst, std::fabs(got - want) / std::fabs(want));
  }
  return {worst < 1e-6, "tf=1 loss vs plain-loop pass, worst relative difference " + fmt(worst)};
}

// ---- NLG overfit ----------------------------------------------------------

Outcome nlg_overfit(const Context& ctx) {
  const NlgConfig cfg = cli::load_nlg_config(ctx.root / "configs" / "nlg_overfit.json");
  const auto run = cli::train_nlg_dir(ctx.root / "data" / "synthetic", cfg, ctx.work / "models" / "nlg", ctx.log, 50);
  const auto& e = run.train_eval;
  return {e.emotion_accuracy == 1.0 && e.exact_match == 1.0,
          std::to_string(run.data.examples.size()) + " examples, emotion accuracy " + fmt(e.emotion_accuracy) +
              ", exact greedy match " + fmt(e.exact_match) + " after " + std::to_string(cfg.epochs) + " epochs"};
}

// ---- face overfit ---------------------------------------------------------

Outcome face_overfit(const Context& ctx) {
  const FaceGanConfig cfg = cli::load_face_config(ctx.root / "configs" / "face_overfit.json");
  const auto run = cli::train_face_dir(ctx.root / "data" / "synthetic", cfg, ctx.work / "models" / "face", ctx.log, 250);
  const auto& r = run.report;
  return {r.condition_error < 0.15 && r.self_reconstruction < 0.1,
          std::to_string(cfg.steps) + " steps, condition error " + fmt(r.condition_error) +
              " (< 0.15), self-reconstruction " + fmt(r.self_reconstruction) + " (< 0.1)"};
}

// ---- full-config smoke ---------------------------------------------------

Outcome full_config_smoke(const Context& ctx) {
  NlgConfig nc = cli::load_nlg_config(ctx.root / "configs" / "nlg_full.json");
  const bool nlg_values = nc.batch_size == 256 && nc.epochs == 100 && nc.hidden_dim == 200 && nc.embedding_dim == 50;
  nc.epochs = 1;
  nc.min_freq = 1;
  const auto nlg = cli::train_nlg_dir(ctx.root / "data" / "synthetic", nc, ctx.work / "smoke" / "nlg", nullptr);

  FaceGanConfig fc = cli::load_face_config(ctx.root / "configs" / "face_full.json");
  const FaceDataset faces = load_face_dataset(ctx.root / "data" / "synthetic", fc.image_size);
  fc.steps = (faces.images.size() + fc.hp.batch_size - 1) / fc.hp.batch_size;
  const auto face = cli::train_face_dir(ctx.root / "data" / "synthetic", fc, ctx.work / "smoke" / "face", nullptr);

  const bool finite = std::isfinite(nlg.history.back().loss) && std::isfinite(face.history.back().gen_total);
  return {nlg_values && finite,
          "nlg batch 256/hidden 200/embedding 50 for 1 epoch (loss " + fmt(nlg.history.back().loss) +
              "), face generator " + std::to_string(fc.gen_channels) + "ch/" +
              std::to_string(fc.gen_res_blocks) + " blocks for 1 epoch (" + std::to_string(fc.steps) +
              " step, generator loss " + fmt(face.history.back().gen_total) + ")"};
}

// ---- chat determinism -----------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Checkpoints from the overfit criteria when present, otherwise quick ones.
fs::path ensure_models(const Context& ctx) {
  fs::path models = ctx.work / "models";
  if (fs::exists(models / "nlg" / "manifest.json") && fs::exists(models / "face" / "manifest.json")) return models;
  models = ctx.work / "quick_models";
  NlgConfig nc = cli::load_nlg_config(ctx.root / "configs" / "nlg_overfit.json");
  nc.epochs = 5;
  nc.hidden_dim = 16;
  nc.embedding_dim = 8;
  cli::train_nlg_dir(ctx.root / "data" / "synthetic", nc, models / "nlg", nullptr);
  FaceGanConfig fc = cli::load_face_config(ctx.root / "configs" / "face_overfit.json");
  fc.steps = 2;
  cli::train_face_dir(ctx.root / "data" / "synthetic", fc, models / "face", nullptr);
  return models;
}

Outcome chat_determinism(const Context& ctx) {
  const fs::path models = ensure_models(ctx);
  const fs::path dir = ctx.work / "chat";
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::ofstream(dir / "service.json") << json{{"nlg_checkpoint", fs::absolute(models / "nlg").string()},
                                             {"face_checkpoint", fs::absolute(models / "face").string()},
                                             {"faces", fs::absolute(ctx.root / "data" / "synthetic").string()}}
                                             .dump(2);
  std::ofstream(dir / "input.txt") << "I finally passed my driving test today!\n"
                                      "My old dog passed away last night.\n"
                                      "Someone scratched my car and drove off.\n"
                                      "/emotion surprise\n"
                                      "Guess who showed up at my door today?\n";
  std::vector<std::string> transcripts;
  for (int run = 0; run < 2; ++run) {
    const fs::path out = dir / ("run" + std::to_string(run));
    const std::string cmd = "EMOFACE_SEED=1234 '" + ctx.cli.string() + "' chat --no-prompt --config '" +
                            (dir / "service.json").string() + "' --dump-dir '" + out.string() + "' < '" +
                            (dir / "input.txt").string() + "' > '" + (dir / ("stdout" + std::to_string(run))).string() +
                            "' 2>&1";
    if (std::system(cmd.c_str()) != 0)
      return {false, "chat exited with an error: " + slurp(dir / ("stdout" + std::to_string(run)))};
    transcripts.push_back(slurp(dir / ("stdout" + std::to_string(run))));
  }
  std::size_t pngs = 0, differing = 0;
  for (const auto& e : fs::directory_iterator(dir / "run0")) {
    ++pngs;
    if (sha256_file(e.path()) != sha256_file(dir / "run1" / e.path().filename())) ++differing;
  }
  const bool ok = transcripts[0] == transcripts[1] && pngs == 5 && differing == 0;
  return {ok, "2 runs x 4 turns, transcripts " + std::string(transcripts[0] == transcripts[1] ? "identical" : "differ") +
                  ", " + std::to_string(pngs) + " PNGs, " + std::to_string(differing) + " differing"};
}

struct Criterion {
  std::string name;
  double budget_s;
  std::function<Outcome(const Context&)> run;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  Context ctx;
  ctx.root = EMOFACE_SOURCE_DIR;
  ctx.cli = EMOFACE_CLI_PATH;
  ctx.work = fs::temp_directory_path() / "emoface_acceptance";
  std::vector<std::string> only;
  bool verbose = false;
  app.add_option("--root", ctx.root, "Source tree with configs/ and data/");
  app.add_option("--work", ctx.work, "Scratch directory");
  app.add_option("--cli", ctx.cli, "emoface executable");
  app.add_option("--only", only, "Run only these criteria")->delimiter(',');
  app.add_flag("-v,--verbose", verbose, "Print training progress");
  CLI11_PARSE(app, argc, argv);
  if (verbose) ctx.log = &std::cerr;

  const std::vector<Criterion> criteria{
      {"composition_identities", 5, composition},
      {"loss_term_suite", 60, loss_suite},
      {"gradient_checks", 120, gradient_checks},
      {"teacher_forcing_boundary", 60, teacher_forcing},
      {"nlg_overfit", 300, nlg_overfit},
      {"face_overfit", 1800, face_overfit},
      {"full_config_smoke", 1800, full_config_smoke},
      {"chat_determinism", 600, chat_determinism},
  };
  const std::set<std::string> selected(only.begin(), only.end());
  for (const auto& name : selected) {
    bool known = false;
    for (const auto& c : criteria) known = known || c.name == name;
    if (!known) {
      std::cerr << "unknown criterion " << name << "\n";
      return 2;
    }
  }

  fs::create_directories(ctx.work);
  int failures = 0;
  for (const auto& c : criteria) {
    if (!selected.empty() && !selected.contains(c.name)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run(ctx);
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (secs > c.budget_s) {
      o.pass = false;
      o.detail += "; over the " + fmt(c.budget_s) + " s budget";
    }
    if (!o.pass) ++failures;
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1f s", secs);
    std::cout << (o.pass ? "PASS " : "FAIL ") << c.name << " [" << buf << "] " << o.detail << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
