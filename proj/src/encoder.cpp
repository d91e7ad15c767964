#include "acg/encoder.hpp"

#include "acg/error.hpp"

namespace acg::encoder {

WordEncodings encode_words(const Model& model, std::span<const int> token_ids, Rng* dropout_rng) {
  const std::size_t n = token_ids.size();
  if (n == 0) throw std::invalid_argument("encode_words: empty context");
  const int H = model.config.word_hidden;
  const double rate = model.config.dropout;

  WordEncodings w;
  w.inputs.reserve(n);
  for (int id : token_ids) {
    Vec e = model.embed(id);
    if (dropout_rng && rate > 0.0) {
      Vec mask(e.size());
      for (Eigen::Index k = 0; k < mask.size(); ++k)
        mask[k] = dropout_rng->bernoulli(rate) ? 0.0 : 1.0 / (1.0 - rate);
      e = e.cwiseProduct(mask);
      w.dropout.push_back(std::move(mask));
    }
    w.inputs.push_back(std::move(e));
  }

  w.forward.resize(n);
  w.backward.resize(n);
  w.forward_cache.resize(n);
  w.backward_cache.resize(n);
  Vec h = Vec::Zero(H);
  for (std::size_t i = 0; i < n; ++i) {
    h = model.word_forward.forward(model.store, w.inputs[i], h, &w.forward_cache[i]);
    w.forward[i] = h;
  }
  h = Vec::Zero(H);
  for (std::size_t i = n; i-- > 0;) {
    h = model.word_backward.forward(model.store, w.inputs[i], h, &w.backward_cache[i]);
    w.backward[i] = h;
  }
  w.states.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Vec s(2 * H);
    s << w.forward[i], w.backward[i];
    w.states.push_back(std::move(s));
  }
  return w;
}

QueryEncodings encode_queries(const Model& model, const WordEncodings& words,
                              std::span<const std::size_t> separators) {
  const std::size_t m = separators.size();
  if (m == 0) throw std::invalid_argument("encode_queries: no separators");
  const int Q = model.config.query_hidden;
  QueryEncodings q;
  for (std::size_t k : separators) {
    if (k >= words.length()) throw std::out_of_range("encode_queries: separator position out of range");
    if (model.config.query_summary_mlp) {
      Vec s = model.query_summary.forward(model.store, words.forward[k]).array().tanh().matrix();
      q.summaries.push_back(std::move(s));
    } else {
      q.summaries.push_back(words.forward[k]);
    }
  }
  q.forward.resize(m);
  q.backward.resize(m);
  q.forward_cache.resize(m);
  q.backward_cache.resize(m);
  Vec g = Vec::Zero(Q);
  for (std::size_t j = 0; j < m; ++j) {
    g = model.query_forward.forward(model.store, q.summaries[j], g, &q.forward_cache[j]);
    q.forward[j] = g;
  }
  g = Vec::Zero(Q);
  for (std::size_t j = m; j-- > 0;) {
    g = model.query_backward.forward(model.store, q.summaries[j], g, &q.backward_cache[j]);
    q.backward[j] = g;
  }
  for (std::size_t j = 0; j < m; ++j) {
    Vec s(2 * Q);
    s << q.forward[j], q.backward[j];
    q.states.push_back(std::move(s));
  }
  return q;
}

void encode_queries_backward(const Model& model, const WordEncodings& words,
                             std::span<const std::size_t> separators, const QueryEncodings& queries,
                             std::span<const Vec> d_states, num::Gradients& grads,
                             std::vector<Vec>& d_word_forward) {
  const std::size_t m = queries.count();
  const int Q = model.config.query_hidden;
  const int H = model.config.word_hidden;
  std::vector<Vec> d_summary(m, Vec::Zero(H));

  Vec dg = Vec::Zero(Q);
  for (std::size_t j = m; j-- > 0;) {
    dg += d_states[j].head(Q);
    Vec dprev = Vec::Zero(Q);
    model.query_forward.backward(model.store, queries.forward_cache[j], dg, grads, &d_summary[j], dprev);
    dg = std::move(dprev);
  }
  dg = Vec::Zero(Q);
  for (std::size_t j = 0; j < m; ++j) {
    dg += d_states[j].tail(Q);
    Vec dprev = Vec::Zero(Q);
    model.query_backward.backward(model.store, queries.backward_cache[j], dg, grads, &d_summary[j], dprev);
    dg = std::move(dprev);
  }
  for (std::size_t j = 0; j < m; ++j) {
    const std::size_t k = separators[j];
    if (model.config.query_summary_mlp) {
      const Vec& s = queries.summaries[j];
      Vec dpre = d_summary[j].cwiseProduct(Vec::Ones(s.size()) - s.cwiseAbs2());
      model.query_summary.backward(model.store, words.forward[k], dpre, grads, &d_word_forward[k]);
    } else {
      d_word_forward[k] += d_summary[j];
    }
  }
}

void encode_words_backward(const Model& model, std::span<const int> token_ids,
                           const WordEncodings& words, std::span<const Vec> d_states,
                           std::vector<Vec>& d_forward, std::vector<Vec>& d_backward,
                           num::Gradients& grads) {
  const std::size_t n = words.length();
  const int H = model.config.word_hidden;
  const int D = model.config.embed_dim;
  std::vector<Vec> d_inputs(n, Vec::Zero(D));

  Vec dh = Vec::Zero(H);
  for (std::size_t i = n; i-- > 0;) {
    dh += d_forward[i] + d_states[i].head(H);
    Vec dprev = Vec::Zero(H);
    model.word_forward.backward(model.store, words.forward_cache[i], dh, grads, &d_inputs[i], dprev);
    dh = std::move(dprev);
  }
  dh = Vec::Zero(H);
  for (std::size_t i = 0; i < n; ++i) {
    dh += d_backward[i] + d_states[i].tail(H);
    Vec dprev = Vec::Zero(H);
    model.word_backward.backward(model.store, words.backward_cache[i], dh, grads, &d_inputs[i], dprev);
    dh = std::move(dprev);
  }
  auto& dE = grads[model.embedding];
  for (std::size_t i = 0; i < n; ++i) {
    Vec de = words.dropout.empty() ? d_inputs[i] : Vec(d_inputs[i].cwiseProduct(words.dropout[i]));
    dE.row(token_ids[i]) += de.transpose();
  }
}

}  // namespace acg::encoder
