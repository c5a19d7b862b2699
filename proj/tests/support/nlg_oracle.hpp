// SPDX-License-Identifier: Apache-2.0
// Plain-loop teacher-forced forward pass of the NLG model, read straight
// from the parameter values. Shares no code with the autograd path.
#pragma once

#include <cmath>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "emoface/nlg_model.hpp"

namespace emoface::testing {

struct OracleLoss {
  double seq_ce = 0, emo_ce = 0, total = 0;
};

class NlgOracle {
 public:
  explicit NlgOracle(const NlgModel& model) : cfg_(model.config()) {
    for (const auto& [name, v] : model.params().named()) p_[name] = &v.value();
  }

  OracleLoss loss(const std::vector<NlgExample>& batch) const {
    const std::size_t H = cfg_.hidden_dim;
    OracleLoss out;
    std::size_t count = 0;
    for (const auto& ex : batch) {
      std::vector<double> fwd(H, 0.0), bwd(H, 0.0);
      for (std::size_t t = 0; t < ex.context.size(); ++t) fwd = gru("encoder.forward", embed(ex.context[t]), fwd);
      for (std::size_t t = ex.context.size(); t-- > 0;) bwd = gru("encoder.backward", embed(ex.context[t]), bwd);
      std::vector<double> summary = fwd;
      summary.insert(summary.end(), bwd.begin(), bwd.end());

      out.emo_ce += cross_entropy(linear("emotion_head", summary), static_cast<std::size_t>(ex.emotion)) /
                    static_cast<double>(batch.size());

      std::vector<double> h = linear("bridge", summary);
      std::int64_t prev = Vocabulary::bos;
      for (std::int64_t gold : ex.target) {
        h = gru("decoder", embed(prev), h);
        if (gold != Vocabulary::pad) {
          out.seq_ce += cross_entropy(linear("output", h), static_cast<std::size_t>(gold));
          ++count;
        }
        prev = gold;
      }
    }
    out.seq_ce /= static_cast<double>(count);
    out.total = out.seq_ce + cfg_.emotion_loss_weight * out.emo_ce;
    return out;
  }

 private:
  const Tensor& at(const std::string& name) const { return *p_.at(name); }

  std::vector<double> embed(std::int64_t id) const {
    const Tensor& t = at("embedding.table");
    const std::size_t d = t.dim(1);
    return {t.ptr() + id * d, t.ptr() + (id + 1) * d};
  }

  std::vector<double> linear(const std::string& name, const std::vector<double>& x) const {
    const Tensor& w = at(name + ".weight");
    const Tensor& b = at(name + ".bias");
    const std::size_t out = w.dim(1);
    std::vector<double> y(out);
    for (std::size_t j = 0; j < out; ++j) {
      double s = b[j];
      for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * w[i * out + j];
      y[j] = s;
    }
    return y;
  }

  std::vector<double> gru(const std::string& name, const std::vector<double>& x,
                          const std::vector<double>& h) const {
    const Tensor& wi = at(name + ".w_input");
    const Tensor& wh = at(name + ".w_hidden");
    const Tensor& bi = at(name + ".b_input");
    const Tensor& bh = at(name + ".b_hidden");
    const std::size_t H = h.size(), G = 3 * H;
    auto gate_in = [&](std::size_t j) {
      double s = bi[j];
      for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * wi[i * G + j];
      return s;
    };
    auto gate_h = [&](std::size_t j) {
      double s = bh[j];
      for (std::size_t i = 0; i < H; ++i) s += h[i] * wh[i * G + j];
      return s;
    };
    auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
    std::vector<double> next(H);
    for (std::size_t j = 0; j < H; ++j) {
      const double r = sig(gate_in(j) + gate_h(j));
      const double z = sig(gate_in(H + j) + gate_h(H + j));
      const double n = std::tanh(gate_in(2 * H + j) + r * gate_h(2 * H + j));
      next[j] = (1.0 - z) * n + z * h[j];
    }
    return next;
  }

  static double cross_entropy(const std::vector<double>& logits, std::size_t gold) {
    double m = logits[0];
    for (double v : logits) m = std::max(m, v);
    double s = 0;
    for (double v : logits) s += std::exp(v - m);
    return m + std::log(s) - logits[gold];
  }

  NlgConfig cfg_;
  std::map<std::string, const Tensor*> p_;
};

/// Random examples with ids drawn above the reserved range.
inline std::vector<NlgExample> random_nlg_examples(std::size_t n, std::size_t vocab,
                                                   std::mt19937_64& rng) {
  std::uniform_int_distribution<std::int64_t> tok(Vocabulary::reserved, static_cast<std::int64_t>(vocab) - 1);
  std::uniform_int_distribution<std::size_t> len(1, 5);
  std::uniform_int_distribution<int> emo(0, 7);
  std::vector<NlgExample> out(n);
  for (auto& ex : out) {
    for (std::size_t i = len(rng) + 1; i-- > 0;) ex.context.push_back(tok(rng));
    for (std::size_t i = len(rng); i-- > 0;) ex.target.push_back(tok(rng));
    ex.target.push_back(Vocabulary::eos);
    ex.emotion = static_cast<Emotion>(emo(rng));
  }
  return out;
}

inline NlgConfig tiny_nlg_config(std::uint64_t seed) {
  NlgConfig c;
  c.vocab_size = 20;
  c.embedding_dim = 5;
  c.hidden_dim = 8;
  c.seed = seed;
  return c;
}

}  // namespace emoface::testing
