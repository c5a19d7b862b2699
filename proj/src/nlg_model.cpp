// SPDX-License-Identifier: Apache-2.0
#include "emoface/nlg_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "emoface/image_io.hpp"

namespace emoface {

using json = nlohmann::json;

void NlgConfig::validate() const {
  auto need = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("nlg config: ") + what);
  };
  need(vocab_size > Vocabulary::reserved, "vocab_size must exceed the reserved ids");
  need(embedding_dim > 0 && hidden_dim > 0, "dimensions must be positive");
  need(max_context_len > 0 && max_utterance_len > 1, "length limits must be positive");
  need(emotion_classes == kEmotionCount, "emotion_classes must be 8");
  need(tf_start >= 0 && tf_start <= 1 && tf_end >= 0 && tf_end <= 1,
       "teacher forcing probabilities must lie in [0,1]");
  need(emotion_loss_weight >= 0, "emotion_loss_weight must be non-negative");
  need(min_freq >= 1, "min_freq must be at least 1");
  need(batch_size > 0, "batch_size must be positive");
  need(lr >= 0, "lr must be non-negative");
}

json NlgConfig::to_json() const {
  return {{"vocab_size", vocab_size},
          {"embedding_dim", embedding_dim},
          {"hidden_dim", hidden_dim},
          {"max_decode_len", max_decode_len},
          {"max_context_len", max_context_len},
          {"emotion_classes", emotion_classes},
          {"teacher_forcing", {{"start", tf_start}, {"end", tf_end}, {"decay_epochs", tf_decay_epochs}}},
          {"emotion_loss_weight", emotion_loss_weight},
          {"context_turns", context_turns},
          {"max_utterance_len", max_utterance_len},
          {"min_freq", min_freq},
          {"epochs", epochs},
          {"batch_size", batch_size},
          {"lr", lr},
          {"seed", seed}};
}

NlgConfig NlgConfig::from_json(const json& j) {
  NlgConfig c;
  for (const auto& [key, v] : j.items()) {
    if (key == "vocab_size") c.vocab_size = v.get<std::size_t>();
    else if (key == "embedding_dim") c.embedding_dim = v.get<std::size_t>();
    else if (key == "hidden_dim") c.hidden_dim = v.get<std::size_t>();
    else if (key == "max_decode_len") c.max_decode_len = v.get<std::size_t>();
    else if (key == "max_context_len") c.max_context_len = v.get<std::size_t>();
    else if (key == "emotion_classes") c.emotion_classes = v.get<std::size_t>();
    else if (key == "teacher_forcing") {
      c.tf_start = v.value("start", c.tf_start);
      c.tf_end = v.value("end", c.tf_end);
      c.tf_decay_epochs = v.value("decay_epochs", c.tf_decay_epochs);
    } else if (key == "emotion_loss_weight") c.emotion_loss_weight = v.get<double>();
    else if (key == "context_turns") c.context_turns = v.get<std::size_t>();
    else if (key == "max_utterance_len") c.max_utterance_len = v.get<std::size_t>();
    else if (key == "min_freq") c.min_freq = v.get<int>();
    else if (key == "epochs") c.epochs = v.get<std::size_t>();
    else if (key == "batch_size") c.batch_size = v.get<std::size_t>();
    else if (key == "lr") c.lr = v.get<double>();
    else if (key == "seed") c.seed = v.get<std::uint64_t>();
    else throw std::invalid_argument("nlg config: unknown key " + key);
  }
  return c;
}

double teacher_forcing_prob(const NlgConfig& cfg, std::size_t epoch) {
  if (cfg.tf_decay_epochs == 0) return cfg.tf_end;
  const double f = std::min(1.0, static_cast<double>(epoch) / static_cast<double>(cfg.tf_decay_epochs));
  return cfg.tf_start + (cfg.tf_end - cfg.tf_start) * f;
}

std::size_t argmax(const double* values, std::size_t n) {
  return static_cast<std::size_t>(std::max_element(values, values + n) - values);
}

NlgModel::NlgModel(const NlgConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(cfg_.seed);
  const std::size_t E = cfg_.embedding_dim, H = cfg_.hidden_dim, V = cfg_.vocab_size;
  embed_ = nn::Embedding(store_, "embedding", V, E, rng);
  enc_fwd_ = nn::GruCell(store_, "encoder.forward", E, H, rng);
  enc_bwd_ = nn::GruCell(store_, "encoder.backward", E, H, rng);
  bridge_ = nn::Linear(store_, "bridge", 2 * H, H, rng);
  dec_ = nn::GruCell(store_, "decoder", E, H, rng);
  out_ = nn::Linear(store_, "output", H, V, rng);
  emotion_head_ = nn::Linear(store_, "emotion_head", 2 * H, cfg_.emotion_classes, rng);
}

void NlgModel::check_ids(const std::vector<std::int64_t>& ids, const char* what) const {
  for (auto id : ids)
    if (id < 0 || static_cast<std::size_t>(id) >= cfg_.vocab_size)
      throw std::out_of_range(std::string(what) + ": token id " + std::to_string(id) +
                              " outside vocabulary of " + std::to_string(cfg_.vocab_size));
}

EncoderOutput NlgModel::encode(const std::vector<std::vector<std::int64_t>>& contexts) const {
  if (contexts.empty()) throw std::invalid_argument("encode: empty batch");
  const std::size_t B = contexts.size(), H = cfg_.hidden_dim;
  std::size_t T = 0;
  for (const auto& c : contexts) {
    if (c.empty()) throw std::invalid_argument("encode: empty context");
    check_ids(c, "encode");
    T = std::max(T, c.size());
  }
  std::vector<Var> inputs(T);
  std::vector<Tensor> masks(T);
  std::vector<bool> full(T, true);
  for (std::size_t t = 0; t < T; ++t) {
    std::vector<std::int64_t> ids(B, Vocabulary::pad);
    masks[t] = Tensor(Shape{B, H}, 0.0);
    for (std::size_t b = 0; b < B; ++b) {
      if (t < contexts[b].size()) {
        ids[b] = contexts[b][t];
        std::fill(masks[t].ptr() + b * H, masks[t].ptr() + (b + 1) * H, 1.0);
      } else {
        full[t] = false;
      }
    }
    inputs[t] = embed_(ids);
  }
  auto step = [&](const nn::GruCell& cell, const Var& h, std::size_t t) {
    const Var next = cell(inputs[t], h);
    return full[t] ? next : ops::add(h, ops::mul_const(ops::sub(next, h), masks[t]));
  };
  const Var h0 = ops::constant(Tensor(Shape{B, H}, 0.0));
  std::vector<Var> fwd(T), bwd(T);
  Var h = h0;
  for (std::size_t t = 0; t < T; ++t) fwd[t] = h = step(enc_fwd_, h, t);
  h = h0;
  for (std::size_t t = T; t-- > 0;) bwd[t] = h = step(enc_bwd_, h, t);

  EncoderOutput out;
  out.summary = ops::concat({fwd[T - 1], bwd[0]}, 1);
  out.states.reserve(T);
  for (std::size_t t = 0; t < T; ++t) out.states.push_back(ops::concat({fwd[t], bwd[t]}, 1));
  return out;
}

EncoderOutput NlgModel::encode_context(const std::vector<std::int64_t>& ids) const {
  return encode({ids});
}

Var NlgModel::emotion_logits(const Var& summary) const { return emotion_head_(summary); }

DecoderState NlgModel::init_decoder(const Var& summary) const { return {bridge_(summary), Var()}; }

DecoderState NlgModel::decode_step(const DecoderState& state, const std::vector<std::int64_t>& prev) const {
  check_ids(prev, "decode_step");
  if (prev.size() != state.hidden.shape()[0])
    throw std::invalid_argument("decode_step: batch size mismatch");
  DecoderState next;
  next.hidden = dec_(embed_(prev), state.hidden);
  next.logits = out_(next.hidden);
  return next;
}

NlgPrediction NlgModel::generate(const std::vector<std::int64_t>& context, std::size_t max_len) const {
  NoGradGuard no_grad;
  const EncoderOutput enc = encode_context(context);
  NlgPrediction pred;
  const Var emo = emotion_logits(enc.summary);
  pred.emotion_logits.assign(emo.value().ptr(), emo.value().ptr() + emo.size());
  pred.emotion = static_cast<Emotion>(argmax(pred.emotion_logits.data(), pred.emotion_logits.size()));

  DecoderState state = init_decoder(enc.summary);
  std::int64_t prev = Vocabulary::bos;
  while (pred.tokens.size() < max_len) {
    state = decode_step(state, {prev});
    prev = static_cast<std::int64_t>(argmax(state.logits.value().ptr(), cfg_.vocab_size));
    pred.tokens.push_back(prev);
    if (prev == Vocabulary::eos) break;
  }
  return pred;
}

NlgLoss nlg_loss(const NlgModel& model, const std::vector<NlgExample>& batch, double tf_prob,
                 std::mt19937_64& rng, DecodeTrace* trace) {
  if (batch.empty()) throw std::invalid_argument("nlg_loss: empty batch");
  if (tf_prob < 0.0 || tf_prob > 1.0) throw std::invalid_argument("nlg_loss: probability outside [0,1]");
  const std::size_t B = batch.size(), V = model.config().vocab_size;
  std::vector<std::vector<std::int64_t>> contexts;
  std::size_t T = 0, count = 0;
  for (const auto& ex : batch) {
    contexts.push_back(ex.context);
    T = std::max(T, ex.target.size());
    for (auto id : ex.target) count += id != Vocabulary::pad;
  }
  if (count == 0) throw std::invalid_argument("nlg_loss: every target token is padding");

  const EncoderOutput enc = model.encode(contexts);
  std::vector<std::int64_t> emotions(B);
  for (std::size_t b = 0; b < B; ++b) emotions[b] = static_cast<std::int64_t>(batch[b].emotion);
  const Var emo_ce = ops::cross_entropy(model.emotion_logits(enc.summary), emotions,
                                        std::vector<double>(B, 1.0 / static_cast<double>(B)));

  if (trace) trace->inputs.assign(B, {});
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  DecoderState state = model.init_decoder(enc.summary);
  Var seq_ce;
  std::vector<std::int64_t> prev(B, Vocabulary::bos);
  const double w = 1.0 / static_cast<double>(count);
  for (std::size_t t = 0; t < T; ++t) {
    if (t > 0) {
      const double* logits = state.logits.value().ptr();
      for (std::size_t b = 0; b < B; ++b) {
        const bool teacher = coin(rng) < tf_prob;
        const auto& target = batch[b].target;
        if (t - 1 >= target.size()) prev[b] = Vocabulary::pad;
        else if (teacher) prev[b] = target[t - 1];
        else prev[b] = static_cast<std::int64_t>(argmax(logits + b * V, V));
      }
    }
    if (trace)
      for (std::size_t b = 0; b < B; ++b)
        if (t < batch[b].target.size()) trace->inputs[b].push_back(prev[b]);
    state = model.decode_step(state, prev);
    std::vector<std::int64_t> gold(B, Vocabulary::pad);
    std::vector<double> weights(B, 0.0);
    for (std::size_t b = 0; b < B; ++b) {
      if (t < batch[b].target.size() && batch[b].target[t] != Vocabulary::pad) {
        gold[b] = batch[b].target[t];
        weights[b] = w;
      }
    }
    const Var ce = ops::cross_entropy(state.logits, gold, weights);
    seq_ce = seq_ce.defined() ? ops::add(seq_ce, ce) : ce;
  }
  NlgLoss loss;
  loss.seq_ce = seq_ce;
  loss.emo_ce = emo_ce;
  loss.total = ops::add(seq_ce, ops::mul_scalar(emo_ce, model.config().emotion_loss_weight));
  return loss;
}

std::vector<std::int64_t> encode_context_turns(const std::vector<DialogueTurn>& turns,
                                               const Vocabulary& vocab, const NlgConfig& cfg) {
  std::vector<std::int64_t> ids;
  const std::size_t first = turns.size() > cfg.context_turns ? turns.size() - cfg.context_turns : 0;
  for (std::size_t i = first; i < turns.size(); ++i) {
    if (!ids.empty()) ids.push_back(Vocabulary::eos);
    const auto words = vocab.encode(turns[i].words);
    ids.insert(ids.end(), words.begin(), words.end());
  }
  if (ids.size() > cfg.max_context_len)
    ids.erase(ids.begin(), ids.end() - static_cast<std::ptrdiff_t>(cfg.max_context_len));
  if (ids.empty()) ids.push_back(Vocabulary::eos);
  return ids;
}

NlgExample make_nlg_example(const Example& ex, const Vocabulary& vocab, const NlgConfig& cfg) {
  NlgExample out;
  out.context = encode_context_turns(ex.context, vocab, cfg);
  out.target = vocab.encode(ex.target.words);
  if (out.target.size() > cfg.max_utterance_len - 1) out.target.resize(cfg.max_utterance_len - 1);
  out.target.push_back(Vocabulary::eos);
  out.emotion = ex.target.emotion;
  return out;
}

std::vector<NlgExample> make_nlg_examples(const std::vector<Example>& examples,
                                          const Vocabulary& vocab, const NlgConfig& cfg) {
  std::vector<NlgExample> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) out.push_back(make_nlg_example(ex, vocab, cfg));
  return out;
}

std::vector<NlgEpochMetrics> train_nlg(NlgModel& model, const std::vector<NlgExample>& data,
                                       const std::function<void(const NlgEpochMetrics&)>& on_epoch) {
  if (data.empty()) throw std::invalid_argument("train_nlg: no training examples");
  const NlgConfig& cfg = model.config();
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  nn::Adam opt(model.params().all(), {.lr = cfg.lr});
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<NlgEpochMetrics> history;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    NlgEpochMetrics m;
    m.epoch = epoch;
    m.tf_prob = teacher_forcing_prob(cfg, epoch);
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      std::vector<NlgExample> batch;
      for (std::size_t i = start; i < std::min(order.size(), start + cfg.batch_size); ++i)
        batch.push_back(data[order[i]]);
      opt.zero_grad();
      const NlgLoss loss = nlg_loss(model, batch, m.tf_prob, rng);
      if (!std::isfinite(loss.total.item()))
        throw std::runtime_error("train_nlg: non-finite loss at epoch " + std::to_string(epoch));
      backward(loss.total);
      opt.step();
      m.loss += loss.total.item();
      m.seq_ce += loss.seq_ce.item();
      m.emo_ce += loss.emo_ce.item();
      ++batches;
    }
    m.loss /= static_cast<double>(batches);
    m.seq_ce /= static_cast<double>(batches);
    m.emo_ce /= static_cast<double>(batches);
    history.push_back(m);
    if (on_epoch) on_epoch(m);
  }
  return history;
}

NlgEval evaluate_nlg(const NlgModel& model, const std::vector<NlgExample>& data) {
  if (data.empty()) throw std::invalid_argument("evaluate_nlg: no examples");
  NoGradGuard no_grad;
  NlgEval ev;
  double nll = 0.0;
  std::size_t tokens = 0, correct = 0, exact = 0;
  std::mt19937_64 rng(0);
  for (const auto& ex : data) {
    const NlgLoss loss = nlg_loss(model, {ex}, 1.0, rng);
    nll += loss.seq_ce.item() * static_cast<double>(ex.target.size());
    tokens += ex.target.size();
    const NlgPrediction pred = model.generate(ex.context, ex.target.size());
    correct += pred.emotion == ex.emotion;
    exact += pred.tokens == ex.target;
  }
  const double n = static_cast<double>(data.size());
  ev.perplexity = std::exp(nll / static_cast<double>(tokens));
  ev.emotion_accuracy = static_cast<double>(correct) / n;
  ev.exact_match = static_cast<double>(exact) / n;
  return ev;
}

void save_nlg_checkpoint(const std::filesystem::path& dir, const NlgModel& model,
                         const Vocabulary& vocab, std::size_t epoch) {
  std::filesystem::create_directories(dir);
  nn::save_weights(dir / "weights.bin", model.params());
  vocab.save(dir / "vocab.txt");
  const std::string text = vocab.serialize();
  json manifest{{"kind", "nlg"},
                {"config", model.config().to_json()},
                {"vocab_sha256", sha256_hex({text.begin(), text.end()})},
                {"epoch", epoch},
                {"seed", model.config().seed}};
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  out << manifest.dump(2) << '\n';
  if (!out) throw std::runtime_error("cannot write " + (dir / "manifest.json").string());
}

NlgCheckpoint load_nlg_checkpoint(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw std::runtime_error("missing " + (dir / "manifest.json").string());
  json manifest = json::parse(in);
  if (manifest.value("kind", "") != "nlg")
    throw std::runtime_error(dir.string() + " is not an NLG checkpoint");
  Vocabulary vocab = Vocabulary::load(dir / "vocab.txt");
  const std::string text = vocab.serialize();
  if (sha256_hex({text.begin(), text.end()}) != manifest.at("vocab_sha256").get<std::string>())
    throw std::runtime_error(dir.string() + ": vocabulary does not match the manifest hash");
  const NlgConfig cfg = NlgConfig::from_json(manifest.at("config"));
  if (cfg.vocab_size != vocab.size())
    throw std::runtime_error(dir.string() + ": vocabulary has " + std::to_string(vocab.size()) +
                             " entries, model expects " + std::to_string(cfg.vocab_size));
  NlgCheckpoint ck{NlgModel(cfg), std::move(vocab), std::move(manifest)};
  nn::load_weights(dir / "weights.bin", ck.model.params());
  return ck;
}

}  // namespace emoface
