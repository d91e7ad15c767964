#pragma once

// Word-level and query-level bidirectional encoders.

#include "acg/corpus.hpp"
#include "acg/model.hpp"
#include "acg/rng.hpp"

#include <span>
#include <vector>

namespace acg::encoder {

using num::Vec;

struct WordEncodings {
  std::vector<Vec> inputs;    // embedded tokens after dropout
  std::vector<Vec> dropout;   // per-position masks (empty when dropout is off)
  std::vector<Vec> forward;   // →h_i
  std::vector<Vec> backward;  // ←h_i
  std::vector<Vec> states;    // h_i = [→h_i ; ←h_i]
  std::vector<num::GruLayer::Cache> forward_cache, backward_cache;

  std::size_t length() const { return states.size(); }
};

struct QueryEncodings {
  std::vector<Vec> summaries;  // q_j
  std::vector<Vec> states;     // g_j = [→g_j ; ←g_j]
  std::vector<Vec> forward, backward;
  std::vector<num::GruLayer::Cache> forward_cache, backward_cache;

  std::size_t count() const { return states.size(); }
};

// Dropout masks are drawn from `dropout_rng` when given and the model's
// dropout rate is positive.
WordEncodings encode_words(const Model& model, std::span<const int> token_ids,
                           Rng* dropout_rng = nullptr);

// q_j is the forward word state at the j-th separator (or a perceptron of it).
QueryEncodings encode_queries(const Model& model, const WordEncodings& words,
                              std::span<const std::size_t> separators);

// Reverse passes. d_forward/d_backward carry extra gradient into →h_i / ←h_i
// on top of d_states (gradient w.r.t. h_i); they are consumed in place.
void encode_queries_backward(const Model& model, const WordEncodings& words,
                             std::span<const std::size_t> separators, const QueryEncodings& queries,
                             std::span<const Vec> d_states, num::Gradients& grads,
                             std::vector<Vec>& d_word_forward);

void encode_words_backward(const Model& model, std::span<const int> token_ids,
                           const WordEncodings& words, std::span<const Vec> d_states,
                           std::vector<Vec>& d_forward, std::vector<Vec>& d_backward,
                           num::Gradients& grads);

}  // namespace acg::encoder
