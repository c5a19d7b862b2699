// SPDX-License-Identifier: Apache-2.0
// Multi-task encoder-decoder: BiGRU context encoder, GRU response decoder,
// and an emotion classifier on the encoder summary.
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <vector>

#include "emoface/data_prep.hpp"
#include "emoface/nn.hpp"
#include "json.hpp"

namespace emoface {

struct NlgConfig {
  std::size_t vocab_size = 0;
  std::size_t embedding_dim = 50;
  std::size_t hidden_dim = 200;
  std::size_t max_decode_len = 30;
  std::size_t max_context_len = 90;
  std::size_t emotion_classes = kEmotionCount;
  double tf_start = 1.0;
  double tf_end = 0.5;
  std::size_t tf_decay_epochs = 100;
  double emotion_loss_weight = 1.0;

  // Data and optimization.
  std::size_t context_turns = 3;
  std::size_t max_utterance_len = 30;
  int min_freq = 2;
  std::size_t epochs = 100;
  std::size_t batch_size = 256;
  double lr = 1e-3;
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument naming the first bad field.
  void validate() const;
  nlohmann::json to_json() const;
  /// Missing keys keep their defaults; unknown keys are rejected.
  static NlgConfig from_json(const nlohmann::json& j);
};

/// Linear decay from tf_start at epoch 0 to tf_end at tf_decay_epochs.
double teacher_forcing_prob(const NlgConfig& cfg, std::size_t epoch);

/// Lowest index among equal maxima.
std::size_t argmax(const double* values, std::size_t n);

struct EncoderOutput {
  Var summary;              // [B, 2H]: final forward state, final backward state
  std::vector<Var> states;  // per step [B, 2H]
};

struct DecoderState {
  Var hidden;  // [B, H]
  Var logits;  // [B, V] after a step
};

struct NlgPrediction {
  std::vector<std::int64_t> tokens;  // ends with eos unless the budget ran out
  Emotion emotion = Emotion::neutral;
  std::vector<double> emotion_logits;
};

struct NlgExample {
  std::vector<std::int64_t> context;  // turns joined by eos
  std::vector<std::int64_t> target;   // response ids followed by eos
  Emotion emotion = Emotion::neutral;
};

/// Tokens actually fed to the decoder, [example][step].
struct DecodeTrace {
  std::vector<std::vector<std::int64_t>> inputs;
};

struct NlgLoss {
  Var total;
  Var seq_ce;
  Var emo_ce;
};

class NlgModel {
 public:
  explicit NlgModel(const NlgConfig& cfg);

  const NlgConfig& config() const { return cfg_; }
  nn::ParameterStore& params() { return store_; }
  const nn::ParameterStore& params() const { return store_; }

  /// Right-padded batch; pad positions leave the recurrent state unchanged.
  EncoderOutput encode(const std::vector<std::vector<std::int64_t>>& contexts) const;
  EncoderOutput encode_context(const std::vector<std::int64_t>& ids) const;
  Var emotion_logits(const Var& summary) const;
  DecoderState init_decoder(const Var& summary) const;
  DecoderState decode_step(const DecoderState& state, const std::vector<std::int64_t>& prev) const;

  /// Greedy decoding from bos; the emotion comes from the same encoding.
  NlgPrediction generate(const std::vector<std::int64_t>& context, std::size_t max_len) const;

 private:
  void check_ids(const std::vector<std::int64_t>& ids, const char* what) const;

  NlgConfig cfg_;
  nn::ParameterStore store_;
  nn::Embedding embed_;
  nn::GruCell enc_fwd_, enc_bwd_, dec_;
  nn::Linear bridge_, out_, emotion_head_;
};

/// total = seq_ce + weight * emo_ce. seq_ce is the mean over non-pad target
/// tokens; at each step the gold previous token is fed with probability
/// tf_prob, otherwise the previous step's argmax. One uniform draw is taken
/// per (example, step) regardless of tf_prob.
NlgLoss nlg_loss(const NlgModel& model, const std::vector<NlgExample>& batch, double tf_prob,
                 std::mt19937_64& rng, DecodeTrace* trace = nullptr);

/// Context ids: the last context_turns turns joined by eos, keeping the most
/// recent max_context_len tokens. Target: first max_utterance_len - 1 words
/// plus eos.
NlgExample make_nlg_example(const Example& ex, const Vocabulary& vocab, const NlgConfig& cfg);
std::vector<NlgExample> make_nlg_examples(const std::vector<Example>& examples,
                                          const Vocabulary& vocab, const NlgConfig& cfg);
std::vector<std::int64_t> encode_context_turns(const std::vector<DialogueTurn>& turns,
                                               const Vocabulary& vocab, const NlgConfig& cfg);

struct NlgEpochMetrics {
  std::size_t epoch = 0;
  double tf_prob = 1.0;
  double loss = 0.0;
  double seq_ce = 0.0;
  double emo_ce = 0.0;
};

/// Adam over shuffled minibatches; calls on_epoch after every epoch.
std::vector<NlgEpochMetrics> train_nlg(NlgModel& model, const std::vector<NlgExample>& data,
                                       const std::function<void(const NlgEpochMetrics&)>& on_epoch = {});

struct NlgEval {
  double perplexity = 0.0;       // exp of teacher-forced token cross entropy
  double emotion_accuracy = 0.0;
  double exact_match = 0.0;      // greedy output equals the target
};

NlgEval evaluate_nlg(const NlgModel& model, const std::vector<NlgExample>& data);

/// Checkpoint directory: weights.bin, vocab.txt, manifest.json.
void save_nlg_checkpoint(const std::filesystem::path& dir, const NlgModel& model,
                         const Vocabulary& vocab, std::size_t epoch);
struct NlgCheckpoint {
  NlgModel model;
  Vocabulary vocab;
  nlohmann::json manifest;
};
NlgCheckpoint load_nlg_checkpoint(const std::filesystem::path& dir);

}  // namespace emoface
