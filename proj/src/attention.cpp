#include "acg/attention.hpp"

#include "acg/error.hpp"

namespace acg::attention {

std::vector<Vec> word_keys(const Model& model, std::span<const Vec> word_states) {
  std::vector<Vec> keys;
  keys.reserve(word_states.size());
  for (const auto& h : word_states) keys.push_back(model.word_scorer.project(model.store, 1, h));
  return keys;
}

std::vector<Vec> query_keys(const Model& model, std::span<const Vec> query_states) {
  std::vector<Vec> keys;
  keys.reserve(query_states.size());
  for (const auto& g : query_states) keys.push_back(model.query_scorer.project(model.store, 1, g));
  return keys;
}

namespace {

Vec score_all(const num::EtaLayer& scorer, const num::ParameterStore& store, const Vec& shared,
              std::span<const Vec> keys, ScorerCache* cache) {
  Vec logits(static_cast<Eigen::Index>(keys.size()));
  if (cache) cache->activations.resize(keys.size());
  for (std::size_t i = 0; i < keys.size(); ++i)
    logits[static_cast<Eigen::Index>(i)] =
        scorer.finish(store, shared + keys[i], cache ? &cache->activations[i] : nullptr);
  return logits;
}

// Back through the scorer logits; returns Σ_i d(pre_i) for the shared blocks.
Vec scorer_backward(const num::EtaLayer& scorer, const num::ParameterStore& store,
                    std::size_t key_block, std::span<const Vec> states, const Vec& d_logits,
                    const ScorerCache& cache, num::Gradients& grads, std::vector<Vec>& d_states) {
  Vec d_shared = Vec::Zero(scorer.hidden_dim);
  for (std::size_t i = 0; i < states.size(); ++i) {
    const double dl = d_logits[static_cast<Eigen::Index>(i)];
    if (dl == 0.0) continue;
    Vec dpre = scorer.backward_finish(store, dl, cache.activations[i], grads);
    scorer.backward_project(store, key_block, states[i], dpre, grads, &d_states[i]);
    d_shared += dpre;
  }
  return d_shared;
}

}  // namespace

Vec word_attention(const Model& model, const Vec& prev_state, std::span<const Vec> keys,
                   ScorerCache* cache) {
  if (keys.empty()) throw std::invalid_argument("word_attention: no positions");
  Vec shared = model.word_scorer.project(model.store, 0, prev_state);
  return num::softmax(score_all(model.word_scorer, model.store, shared, keys, cache));
}

Vec query_attention(const Model& model, const Vec& prev_state, std::span<const Vec> keys,
                    const Vec& prev_output_embedding, ScorerCache* cache) {
  if (keys.empty()) throw std::invalid_argument("query_attention: no queries");
  Vec shared = model.query_scorer.project(model.store, 0, prev_state) +
               model.query_scorer.project(model.store, 2, prev_output_embedding);
  return num::softmax(score_all(model.query_scorer, model.store, shared, keys, cache));
}

std::vector<std::size_t> position_owners(std::span<const std::size_t> separators, std::size_t length) {
  if (separators.empty() || separators.back() + 1 != length)
    throw std::invalid_argument("position_owners: the last position must be a separator");
  std::vector<std::size_t> owner(length);
  std::size_t j = 0;
  for (std::size_t i = 0; i < length; ++i) {
    while (i > separators[j]) ++j;
    owner[i] = j;
  }
  return owner;
}

Vec combine(const Vec& word_weights, const Vec& query_weights, std::span<const std::size_t> owner) {
  if (static_cast<std::size_t>(word_weights.size()) != owner.size())
    throw DimensionError("combine: word weights and owner map differ in length");
  Vec product(word_weights.size());
  for (Eigen::Index i = 0; i < product.size(); ++i) {
    const auto j = static_cast<Eigen::Index>(owner[static_cast<std::size_t>(i)]);
    if (j >= query_weights.size()) throw DimensionError("combine: owner index outside query weights");
    product[i] = word_weights[i] * query_weights[j];
  }
  const double z = product.sum();
  if (!(z > 0.0)) throw NumericError("combine: word and query attention have no overlapping mass");
  return product / z;
}

Vec context_vector(const Vec& weights, std::span<const Vec> states) {
  if (static_cast<std::size_t>(weights.size()) != states.size() || states.empty())
    throw DimensionError("context_vector: weights and states differ in length");
  Vec c = Vec::Zero(states.front().size());
  for (std::size_t i = 0; i < states.size(); ++i) c += weights[static_cast<Eigen::Index>(i)] * states[i];
  return c;
}

CombineGrad combine_backward(const Vec& word_weights, const Vec& query_weights,
                             std::span<const std::size_t> owner, const Vec& combined,
                             const Vec& d_combined) {
  double z = 0.0;
  for (Eigen::Index i = 0; i < word_weights.size(); ++i)
    z += word_weights[i] * query_weights[static_cast<Eigen::Index>(owner[static_cast<std::size_t>(i)])];
  const double mean = combined.dot(d_combined);
  CombineGrad g{Vec::Zero(word_weights.size()), Vec::Zero(query_weights.size())};
  for (Eigen::Index i = 0; i < word_weights.size(); ++i) {
    const auto j = static_cast<Eigen::Index>(owner[static_cast<std::size_t>(i)]);
    const double dp = (d_combined[i] - mean) / z;
    g.d_word[i] = dp * query_weights[j];
    g.d_query[j] += dp * word_weights[i];
  }
  return g;
}

void word_attention_backward(const Model& model, const Vec& prev_state, std::span<const Vec> states,
                             const Vec& weights, const ScorerCache& cache, const Vec& d_weights,
                             num::Gradients& grads, Vec& d_prev_state, std::vector<Vec>& d_states) {
  Vec d_logits = num::softmax_backward(weights, d_weights);
  Vec d_shared = scorer_backward(model.word_scorer, model.store, 1, states, d_logits, cache, grads, d_states);
  model.word_scorer.backward_project(model.store, 0, prev_state, d_shared, grads, &d_prev_state);
}

void query_attention_backward(const Model& model, const Vec& prev_state, std::span<const Vec> states,
                              const Vec& prev_output_embedding, const Vec& weights,
                              const ScorerCache& cache, const Vec& d_weights, num::Gradients& grads,
                              Vec& d_prev_state, std::vector<Vec>& d_states, Vec& d_prev_output) {
  Vec d_logits = num::softmax_backward(weights, d_weights);
  Vec d_shared = scorer_backward(model.query_scorer, model.store, 1, states, d_logits, cache, grads, d_states);
  model.query_scorer.backward_project(model.store, 0, prev_state, d_shared, grads, &d_prev_state);
  model.query_scorer.backward_project(model.store, 2, prev_output_embedding, d_shared, grads, &d_prev_output);
}

}  // namespace acg::attention
