#pragma once

#include "acg/corpus.hpp"
#include "acg/decoder.hpp"
#include "acg/model.hpp"
#include "acg/rng.hpp"
#include "acg/trainer.hpp"

#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace acg::testing {

// Vocabulary of `total` entries: the reserved block plus w0, w1, ...
inline corpus::Vocabulary toy_vocab(int total) {
  std::vector<std::string> words;
  for (int i = 0; i < total - corpus::Vocabulary::kReservedCount; ++i) words.push_back("w" + std::to_string(i));
  return corpus::Vocabulary::from_tokens(words);
}

inline ModelConfig toy_config(int vocab_size, int hidden, std::uint64_t seed) {
  ModelConfig c;
  c.vocab_size = vocab_size;
  c.embed_dim = hidden;
  c.word_hidden = hidden;
  c.query_hidden = hidden;
  c.decoder_hidden = hidden;
  c.seed = seed;
  return c;
}

// Perturbs every parameter so that zero-initialized biases are exercised too.
inline void jitter(Model& model, double scale, std::uint64_t seed) {
  Rng rng(seed);
  for (std::size_t i = 0; i < model.store.size(); ++i) {
    auto& m = model.store.at(i).value;
    for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] += scale * (2.0 * rng.uniform() - 1.0);
  }
}

// Random query of length [1, max_len] over the given word list.
inline corpus::Query random_query(Rng& rng, const std::vector<std::string>& words, std::size_t max_len) {
  corpus::Query q(1 + rng.below(max_len));
  for (auto& w : q) w = words[rng.below(words.size())];
  return q;
}

// Sum of the three losses and its reverse-mode gradient for one example.
inline double full_loss(const Model& model, const corpus::TrainingExample& ex, trainer::LossConfig cfg,
                        num::Gradients* grads) {
  cfg.copy_head = model.config.use_copy;
  auto pass = decoder::teacher_force(model, ex.context, ex.decoder_inputs);
  auto l = trainer::compute_losses(ex, pass.outputs, model.config.vocab_size, cfg);
  if (grads) {
    for (auto kind : {trainer::LossKind::kCopy, trainer::LossKind::kGenerate, trainer::LossKind::kSwitch}) {
      auto g = trainer::loss_gradients(ex, pass.outputs, kind, model.config.vocab_size, cfg);
      decoder::backward(model, pass, g, *grads);
    }
  }
  return l.generate + l.copy + l.switch_loss;
}

// Generator-only model whose next token is a fixed function of the previous
// one: <s> -> a, a -> </q>, </q> -> b, b -> </q>. Every step puts all mass
// on that token. Vocabulary: reserved block, a, b.
struct ForcedModel {
  corpus::Vocabulary vocab = corpus::Vocabulary::from_tokens({"a", "b"});
  Model model{make_config()};

  static ModelConfig make_config() {
    ModelConfig c;
    c.vocab_size = 7;
    c.embed_dim = 7;
    c.word_hidden = 2;
    c.query_hidden = 2;
    c.decoder_hidden = 7;
    c.use_copy = false;
    return c;
  }

  ForcedModel() {
    using corpus::Vocabulary;
    auto& st = model.store;
    const int S = 7, D = 7;
    st.value(model.embedding) = num::Mat::Identity(7, 7);
    auto& W = st.value(model.decoder_cell.w);
    W.setZero();
    W.block(2 * S, 0, S, D) = 10.0 * num::Mat::Identity(S, D);
    st.value(model.decoder_cell.u).setZero();
    auto& b = st.value(model.decoder_cell.b);
    b.setZero();
    b.block(S, 0, S, 1).setConstant(-40.0);  // update gate closed: s_t = tanh(10 e(y_{t-1}))
    auto& out = st.value(model.generator.w);
    out.setZero();
    st.value(model.generator.b).setZero();
    const int a = vocab.id("a"), bb = vocab.id("b");
    out(a, Vocabulary::kStart) = 200.0;
    out(Vocabulary::kEndOfQuery, a) = 200.0;
    out(bb, Vocabulary::kEndOfQuery) = 200.0;
    out(Vocabulary::kEndOfQuery, bb) = 200.0;
  }
};

// Exhaustive search over fused-mixture sequences ending in </q> or at
// max_length; ties go to the lexicographically smaller sequence.
struct BruteForceBest {
  std::vector<std::string> tokens;
  double log_prob = -std::numeric_limits<double>::infinity();
  std::size_t leaves = 0;
};

inline void brute_force_walk(const Model& model, const corpus::Vocabulary& vocab, const decoder::EncodedContext& enc,
                             const decoder::DecoderState& state, int prev, std::vector<std::string>& prefix,
                             double log_prob, int max_length, BruteForceBest& best) {
  auto out = decoder::decoder_step(model, enc, state, prev);
  auto mix = decoder::fuse(out, enc.context, vocab);
  for (std::size_t k = 0; k < mix.tokens.size(); ++k) {
    if (mix.probs[k] <= 0.0) continue;
    prefix.push_back(mix.tokens[k]);
    const double lp = log_prob + std::log(mix.probs[k]);
    if (mix.tokens[k] == "</q>" || static_cast<int>(prefix.size()) == max_length) {
      ++best.leaves;
      if (lp > best.log_prob || (lp == best.log_prob && prefix < best.tokens)) {
        best.log_prob = lp;
        best.tokens = prefix;
      }
    } else {
      brute_force_walk(model, vocab, enc, out.state, vocab.id(mix.tokens[k]), prefix, lp, max_length, best);
    }
    prefix.pop_back();
  }
}

inline BruteForceBest brute_force_best(const Model& model, const corpus::Vocabulary& vocab,
                                       const decoder::EncodedContext& enc, int max_length) {
  BruteForceBest best;
  std::vector<std::string> prefix;
  brute_force_walk(model, vocab, enc, decoder::initial_state(enc), corpus::Vocabulary::kStart, prefix, 0.0, max_length,
                   best);
  return best;
}

}  // namespace acg::testing
