// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "emoface/nlg_model.hpp"
#include "emoface/synthetic.hpp"
#include "support/gradcheck.hpp"
#include "support/nlg_oracle.hpp"

using namespace emoface;
using emoface::testing::NlgOracle;
using emoface::testing::random_nlg_examples;
using emoface::testing::tiny_nlg_config;

TEST_CASE("full teacher forcing equals the independent forward pass") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    NlgModel model(tiny_nlg_config(seed));
    std::mt19937_64 rng(seed);
    const auto batch = random_nlg_examples(3, 20, rng);
    const NlgLoss loss = nlg_loss(model, batch, 1.0, rng);
    const auto oracle = NlgOracle(model).loss(batch);
    CHECK(loss.seq_ce.item() == doctest::Approx(oracle.seq_ce).epsilon(1e-9));
    CHECK(loss.emo_ce.item() == doctest::Approx(oracle.emo_ce).epsilon(1e-9));
    CHECK(loss.total.item() == doctest::Approx(oracle.total).epsilon(1e-9));
  }
}

TEST_CASE("nlg loss gradients match finite differences") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    NlgModel model(tiny_nlg_config(seed));
    std::mt19937_64 data_rng(seed + 100);
    const auto batch = random_nlg_examples(2, 20, data_rng);
    auto loss = [&] {
      std::mt19937_64 rng(0);
      return nlg_loss(model, batch, 1.0, rng).total;
    };
    const auto report = emoface::testing::check_gradients(loss, model.params().all(), 1e-4, 1e-6);
    INFO("seed " << seed << ": " << report.worst);
    CHECK(report.max_rel_error < 1e-3);
  }
}

TEST_CASE("teacher forcing feeds the gold previous token") {
  NlgModel model(tiny_nlg_config(3));
  std::mt19937_64 rng(3);
  const auto batch = random_nlg_examples(4, 20, rng);
  DecodeTrace trace;
  nlg_loss(model, batch, 1.0, rng, &trace);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    REQUIRE(trace.inputs[b].size() == batch[b].target.size());
    CHECK(trace.inputs[b][0] == Vocabulary::bos);
    for (std::size_t t = 1; t < batch[b].target.size(); ++t) CHECK(trace.inputs[b][t] == batch[b].target[t - 1]);
  }
}

TEST_CASE("free-running steps feed the previous argmax") {
  NlgModel model(tiny_nlg_config(4));
  std::mt19937_64 rng(4);
  const auto batch = random_nlg_examples(1, 20, rng);
  DecodeTrace trace;
  nlg_loss(model, batch, 0.0, rng, &trace);
  const auto greedy = model.generate(batch[0].context, batch[0].target.size());
  for (std::size_t t = 1; t < trace.inputs[0].size() && t - 1 < greedy.tokens.size(); ++t)
    CHECK(trace.inputs[0][t] == greedy.tokens[t - 1]);
}

TEST_CASE("same seed gives bit-identical losses") {
  NlgModel model(tiny_nlg_config(5));
  std::mt19937_64 data_rng(5);
  const auto batch = random_nlg_examples(3, 20, data_rng);
  for (double p : {1.0, 0.5}) {
    std::mt19937_64 a(9), b(9);
    CHECK(nlg_loss(model, batch, p, a).total.item() == nlg_loss(model, batch, p, b).total.item());
  }
}

TEST_CASE("uniform logits give ln V per token") {
  NlgConfig cfg = tiny_nlg_config(6);
  NlgModel model(cfg);
  for (const auto& [name, p] : model.params().named())
    if (name.rfind("output.", 0) == 0 || name.rfind("emotion_head.", 0) == 0) {
      Var v = p;
      v.value_mut().fill(0.0);
    }
  std::mt19937_64 rng(6);
  const auto batch = random_nlg_examples(2, 20, rng);
  const NlgLoss loss = nlg_loss(model, batch, 1.0, rng);
  CHECK(loss.seq_ce.item() == doctest::Approx(std::log(20.0)).epsilon(1e-12));
  CHECK(loss.emo_ce.item() == doctest::Approx(std::log(8.0)).epsilon(1e-12));
}

TEST_CASE("loss errors and non-negativity") {
  NlgModel model(tiny_nlg_config(7));
  std::mt19937_64 rng(7);
  auto batch = random_nlg_examples(2, 20, rng);
  const NlgLoss loss = nlg_loss(model, batch, 0.7, rng);
  CHECK(loss.seq_ce.item() >= 0.0);
  CHECK(loss.emo_ce.item() >= 0.0);
  CHECK_THROWS_AS(nlg_loss(model, batch, 1.5, rng), std::invalid_argument);
  for (auto& ex : batch) ex.target.assign(3, Vocabulary::pad);
  CHECK_THROWS_AS(nlg_loss(model, batch, 1.0, rng), std::invalid_argument);
}

TEST_CASE("single example emotion loss is the negative log probability") {
  NlgModel model(tiny_nlg_config(8));
  std::mt19937_64 rng(8);
  const auto batch = random_nlg_examples(1, 20, rng);
  const auto pred = model.generate(batch[0].context, 0);
  double m = pred.emotion_logits[0], s = 0;
  for (double v : pred.emotion_logits) m = std::max(m, v);
  for (double v : pred.emotion_logits) s += std::exp(v - m);
  const double p = std::exp(pred.emotion_logits[static_cast<int>(batch[0].emotion)] - m) / s;
  CHECK(nlg_loss(model, batch, 1.0, rng).emo_ce.item() == doctest::Approx(-std::log(p)).epsilon(1e-12));
}

TEST_CASE("emotion prediction: argmax rules and softmax normalization") {
  const double peaked[8] = {9, 0, 0, 0, 0, 0, 0, 0};
  CHECK(argmax(peaked, 8) == 0);
  const double flat[8] = {1, 1, 1, 1, 1, 1, 1, 1};
  CHECK(argmax(flat, 8) == 0);

  NlgModel model(tiny_nlg_config(9));
  std::mt19937_64 rng(9);
  for (const auto& ex : random_nlg_examples(10, 20, rng)) {
    const auto pred = model.generate(ex.context, 5);
    auto logits = pred.emotion_logits;
    REQUIRE(logits.size() == 8);
    CHECK(static_cast<std::size_t>(pred.emotion) == argmax(logits.data(), 8));
    double m = logits[0], s = 0;
    for (double v : logits) m = std::max(m, v);
    double total = 0;
    for (double v : logits) s += std::exp(v - m);
    for (double v : logits) total += std::exp(v - m) / s;
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    for (double shift : {-50.0, 3.5, 1e3}) {
      auto moved = logits;
      for (auto& v : moved) v += shift;
      CHECK(argmax(moved.data(), 8) == argmax(logits.data(), 8));
    }
  }
}

TEST_CASE("encoder shape, determinism and order sensitivity") {
  NlgModel model(tiny_nlg_config(10));
  const auto one = model.encode_context({5});
  CHECK(one.states.size() == 1);
  CHECK(one.summary.shape() == Shape{1, 16});
  const auto a = model.encode_context({5, 6});
  const auto b = model.encode_context({5, 6});
  const auto swapped = model.encode_context({6, 5});
  CHECK(a.summary.value().storage() == b.summary.value().storage());
  CHECK(a.summary.value().storage() != swapped.summary.value().storage());
  CHECK_THROWS_AS(model.encode_context({20}), std::out_of_range);
  CHECK_THROWS_AS(model.encode_context({-1}), std::out_of_range);
}

TEST_CASE("padded batches encode like single examples") {
  NlgModel model(tiny_nlg_config(11));
  const std::vector<std::int64_t> shortc{5, 6}, longc{7, 8, 9, 10};
  const auto batch = model.encode({shortc, longc});
  const auto alone = model.encode_context(shortc);
  for (std::size_t i = 0; i < 16; ++i)
    CHECK(batch.summary.value()[i] == doctest::Approx(alone.summary.value()[i]).epsilon(1e-14));
}

TEST_CASE("decode step and generation contracts") {
  NlgModel model(tiny_nlg_config(12));
  const auto enc = model.encode_context({4, 5, 6});
  const auto st = model.decode_step(model.init_decoder(enc.summary), {Vocabulary::bos});
  CHECK(st.logits.shape() == Shape{1, 20});
  CHECK(st.hidden.shape() == Shape{1, 8});
  CHECK_THROWS_AS(model.decode_step(st, {25}), std::out_of_range);

  const auto none = model.generate({4, 5}, 0);
  CHECK(none.tokens.empty());
  CHECK(none.emotion_logits.size() == 8);

  const auto g1 = model.generate({4, 5}, 12);
  const auto g2 = model.generate({4, 5}, 12);
  CHECK(g1.tokens == g2.tokens);
  CHECK(g1.tokens.size() <= 12);
  for (std::size_t i = 0; i < g1.tokens.size(); ++i) {
    CHECK(g1.tokens[i] != Vocabulary::pad);
    if (g1.tokens[i] == Vocabulary::eos) CHECK(i + 1 == g1.tokens.size());
  }
}

TEST_CASE("teacher forcing schedule decays linearly") {
  NlgConfig cfg = tiny_nlg_config(1);
  cfg.tf_start = 1.0;
  cfg.tf_end = 0.5;
  cfg.tf_decay_epochs = 10;
  CHECK(teacher_forcing_prob(cfg, 0) == 1.0);
  CHECK(teacher_forcing_prob(cfg, 5) == doctest::Approx(0.75));
  CHECK(teacher_forcing_prob(cfg, 10) == 0.5);
  CHECK(teacher_forcing_prob(cfg, 50) == 0.5);
}

TEST_CASE("config json round trip and validation") {
  NlgConfig c = tiny_nlg_config(4);
  c.tf_end = 0.25;
  CHECK(NlgConfig::from_json(c.to_json()).to_json() == c.to_json());
  CHECK_THROWS_AS(NlgConfig::from_json({{"hidden", 3}}), std::invalid_argument);
  NlgConfig bad = c;
  bad.tf_start = 1.5;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = c;
  bad.hidden_dim = 0;
  CHECK_THROWS_AS(NlgModel{bad}, std::invalid_argument);
}

TEST_CASE("context and target construction") {
  auto dialogues = synthetic::dialogues();
  const Vocabulary vocab = build_vocab(dialogues, 1);
  vocab.encode_turns(dialogues);
  NlgConfig cfg = tiny_nlg_config(1);
  cfg.vocab_size = vocab.size();
  cfg.context_turns = 2;
  cfg.max_context_len = 6;
  cfg.max_utterance_len = 4;
  const auto examples = make_examples(dialogues, cfg.context_turns, NonNeutralPolicy::neutral);
  const auto ex = make_nlg_example(examples.back(), vocab, cfg);
  CHECK(ex.context.size() <= 6);
  CHECK(ex.target.size() <= 4);
  CHECK(ex.target.back() == Vocabulary::eos);
  CHECK(ex.emotion == examples.back().target.emotion);
}

TEST_CASE("training reduces the loss and checkpoints round trip") {
  auto dialogues = synthetic::dialogues();
  const Vocabulary vocab = build_vocab(dialogues, 1);
  vocab.encode_turns(dialogues);
  NlgConfig cfg;
  cfg.vocab_size = vocab.size();
  cfg.embedding_dim = 8;
  cfg.hidden_dim = 16;
  cfg.batch_size = 8;
  cfg.lr = 1e-2;
  cfg.epochs = 15;
  const auto data = make_nlg_examples(make_examples(dialogues, 3, NonNeutralPolicy::neutral), vocab, cfg);
  NlgModel model(cfg);
  const auto hist = train_nlg(model, data);
  CHECK(hist.back().loss < hist.front().loss);

  const auto dir = std::filesystem::temp_directory_path() / "emoface_nlg_ckpt_test";
  std::filesystem::remove_all(dir);
  save_nlg_checkpoint(dir, model, vocab, cfg.epochs);
  const auto ck = load_nlg_checkpoint(dir);
  CHECK(ck.vocab.serialize() == vocab.serialize());
  CHECK(ck.model.generate(data[0].context, 10).tokens == model.generate(data[0].context, 10).tokens);
  CHECK(ck.manifest.at("epoch") == cfg.epochs);

  std::ofstream(dir / "vocab.txt", std::ios::app) << "extra\n";
  CHECK_THROWS(load_nlg_checkpoint(dir));
  std::filesystem::remove_all(dir);
}
