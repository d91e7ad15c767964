#pragma once

// Query-aware attention: word-level weights, query-level weights, their
// product renormalized over positions, and the resulting context vector.

#include "acg/model.hpp"

#include <span>
#include <vector>

namespace acg::attention {

using num::Vec;

struct AttentionWeights {
  Vec word;      // over positions
  Vec query;     // over queries (empty when query attention is disabled)
  Vec combined;  // over positions
};

// Per-logit tanh activations kept for the reverse pass.
struct ScorerCache {
  std::vector<Vec> activations;
};

// W_h h_i for every position, computed once per context.
std::vector<Vec> word_keys(const Model& model, std::span<const Vec> word_states);
std::vector<Vec> query_keys(const Model& model, std::span<const Vec> query_states);

// softmax_i η_w(s_{t-1}, h_i)
Vec word_attention(const Model& model, const Vec& prev_state, std::span<const Vec> keys,
                   ScorerCache* cache = nullptr);

// softmax_j η_q(s_{t-1}, g_j, y_{t-1})
Vec query_attention(const Model& model, const Vec& prev_state, std::span<const Vec> keys,
                    const Vec& prev_output_embedding, ScorerCache* cache = nullptr);

// owner[i] = smallest j with i ≤ separators[j]; the separator belongs to its query.
std::vector<std::size_t> position_owners(std::span<const std::size_t> separators, std::size_t length);

// a_i = a^w_i a^q_{owner(i)} / Σ_i' a^w_i' a^q_{owner(i')}
Vec combine(const Vec& word_weights, const Vec& query_weights, std::span<const std::size_t> owner);

Vec context_vector(const Vec& weights, std::span<const Vec> states);

struct CombineGrad {
  Vec d_word;
  Vec d_query;
};
CombineGrad combine_backward(const Vec& word_weights, const Vec& query_weights,
                             std::span<const std::size_t> owner, const Vec& combined,
                             const Vec& d_combined);

// Gradients flow into parameters, ds_prev, and the per-position states.
void word_attention_backward(const Model& model, const Vec& prev_state, std::span<const Vec> states,
                             const Vec& weights, const ScorerCache& cache, const Vec& d_weights,
                             num::Gradients& grads, Vec& d_prev_state, std::vector<Vec>& d_states);

void query_attention_backward(const Model& model, const Vec& prev_state, std::span<const Vec> states,
                              const Vec& prev_output_embedding, const Vec& weights,
                              const ScorerCache& cache, const Vec& d_weights, num::Gradients& grads,
                              Vec& d_prev_state, std::vector<Vec>& d_states, Vec& d_prev_output);

}  // namespace acg::attention
