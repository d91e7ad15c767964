#include "acg/decoder.hpp"

#include "acg/error.hpp"

#include <algorithm>
#include <cmath>

namespace acg::decoder {

using corpus::Vocabulary;

EncodedContext encode_context(const Model& model, const corpus::LinearizedContext& context,
                              Rng* dropout_rng) {
  EncodedContext enc;
  enc.context = context;
  enc.words = encoder::encode_words(model, context.token_ids, dropout_rng);
  enc.queries = encoder::encode_queries(model, enc.words, context.separator_positions);
  enc.owners = attention::position_owners(context.separator_positions, context.length());
  enc.word_keys = attention::word_keys(model, enc.words.states);
  if (model.config.use_query_attention) enc.query_keys = attention::query_keys(model, enc.queries.states);

  enc.unk_input = model.unk_projection.forward(model.store, model.embed(Vocabulary::kUnk));
  enc.copy_keys.reserve(context.length() + 1);
  enc.copy_keys.push_back(model.copy_scorer.project(model.store, 1, enc.unk_input));
  for (const auto& h : enc.words.states) enc.copy_keys.push_back(model.copy_scorer.project(model.store, 1, h));

  const int H = model.config.word_hidden;
  enc.init_input.resize(2 * H);
  enc.init_input << enc.words.forward.back(), enc.words.backward.front();
  enc.initial_state = model.decoder_init.forward(model.store, enc.init_input).array().tanh().matrix();
  return enc;
}

DecoderStepOutput decoder_step(const Model& model, const EncodedContext& enc, const DecoderState& prev,
                               int prev_token_id, StepCache* cache, Rng* dropout_rng) {
  const auto& cfg = model.config;
  if (prev.hidden.size() != cfg.decoder_hidden) throw DimensionError("decoder state dimension mismatch");

  Vec input = model.embed(prev_token_id);
  Vec mask;
  if (dropout_rng && cfg.dropout > 0.0) {
    mask.resize(input.size());
    for (Eigen::Index k = 0; k < mask.size(); ++k)
      mask[k] = dropout_rng->bernoulli(cfg.dropout) ? 0.0 : 1.0 / (1.0 - cfg.dropout);
    input = input.cwiseProduct(mask);
  }

  DecoderStepOutput out;
  out.attention.word = attention::word_attention(model, prev.hidden, enc.word_keys,
                                                 cache ? &cache->word_scores : nullptr);
  if (cfg.use_query_attention) {
    out.attention.query = attention::query_attention(model, prev.hidden, enc.query_keys, input,
                                                     cache ? &cache->query_scores : nullptr);
    out.attention.combined = attention::combine(out.attention.word, out.attention.query, enc.owners);
  } else {
    out.attention.combined = out.attention.word;
  }
  Vec context = attention::context_vector(out.attention.combined, enc.words.states);

  Vec cell_input(input.size() + context.size());
  cell_input << input, context;
  Vec state = model.decoder_cell.forward(model.store, cell_input, prev.hidden, cache ? &cache->cell : nullptr);

  out.gen_logits = model.generator.forward(model.store, state);
  out.gen_dist = num::softmax(out.gen_logits);

  const std::size_t n = enc.context.length();
  if (cfg.use_copy) {
    Vec shared = model.copy_scorer.project(model.store, 0, state);
    out.copy_logits.resize(static_cast<Eigen::Index>(n + 1));
    if (cache) cache->copy_scores.activations.resize(n + 1);
    for (std::size_t i = 0; i <= n; ++i)
      out.copy_logits[static_cast<Eigen::Index>(i)] = model.copy_scorer.finish(
          model.store, shared + enc.copy_keys[i], cache ? &cache->copy_scores.activations[i] : nullptr);
    out.copy_dist = num::softmax(out.copy_logits);
    out.p_copy = num::logistic(model.store.value(model.switch_weights).col(0).dot(state));
  } else {
    out.copy_logits = Vec::Zero(static_cast<Eigen::Index>(n + 1));
    out.copy_dist = Vec::Zero(static_cast<Eigen::Index>(n + 1));
    out.copy_dist[0] = 1.0;
    out.p_copy = 0.0;
  }
  num::require_finite(state, "decoder state");

  if (cache) {
    cache->prev_state = prev.hidden;
    cache->input = input;
    cache->input_mask = std::move(mask);
    cache->input_id = prev_token_id;
    cache->context = std::move(context);
  }
  out.state = DecoderState{std::move(state), prev.step + 1};
  return out;
}

std::optional<std::size_t> MixtureDistribution::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

double MixtureDistribution::prob(std::string_view token) const {
  auto i = find(token);
  return i ? probs[*i] : 0.0;
}

double MixtureDistribution::total() const {
  double t = residual;
  for (double p : probs) t += p;
  return t;
}

namespace {

bool is_emittable_id(int id) { return id == Vocabulary::kEndOfQuery || !Vocabulary::is_reserved(id); }

bool is_reserved_surface(const corpus::Vocabulary& vocab, const std::string& w) {
  return vocab.contains(w) && !is_emittable_id(vocab.id(w));
}

}  // namespace

MixtureDistribution fuse(const DecoderStepOutput& step, const corpus::LinearizedContext& context,
                         const corpus::Vocabulary& vocab) {
  const double pc = step.p_copy;
  const double pg = 1.0 - pc;
  MixtureDistribution mix;
  const int V = vocab.size();
  if (step.gen_dist.size() != V) throw DimensionError("fuse: generator distribution does not match the vocabulary");

  mix.tokens.reserve(static_cast<std::size_t>(V));
  for (int id = 0; id < V; ++id) {
    const double g = pg * step.gen_dist[id];
    if (!is_emittable_id(id)) {
      mix.residual += g;
      continue;
    }
    mix.index_[vocab.token(id)] = mix.tokens.size();
    mix.tokens.push_back(vocab.token(id));
    mix.generated.push_back(g);
    mix.copied.push_back(0.0);
  }
  mix.residual += pc * step.copy_dist[0];
  for (std::size_t i = 0; i < context.surface_tokens.size(); ++i) {
    const std::string& w = context.surface_tokens[i];
    const double c = pc * step.copy_dist[static_cast<Eigen::Index>(i + 1)];
    if (is_reserved_surface(vocab, w)) {
      mix.residual += c;
      continue;
    }
    auto [it, inserted] = mix.index_.try_emplace(w, mix.tokens.size());
    if (inserted) {
      mix.tokens.push_back(w);
      mix.generated.push_back(0.0);
      mix.copied.push_back(0.0);
    }
    mix.copied[it->second] += c;
  }
  mix.probs.resize(mix.tokens.size());
  for (std::size_t k = 0; k < mix.tokens.size(); ++k) mix.probs[k] = mix.generated[k] + mix.copied[k];
  return mix;
}

namespace {

struct Candidate {
  std::size_t parent;
  std::size_t token;  // index into the parent's mixture tokens
  std::string text;
  double log_prob;
};

bool sequence_less(const std::vector<std::string>& a, const std::string& a_last,
                   const std::vector<std::string>& b, const std::string& b_last) {
  const std::size_t n = std::min(a.size(), b.size());
  for (std::size_t i = 0; i < n; ++i)
    if (a[i] != b[i]) return a[i] < b[i];
  if (a.size() != b.size()) return a.size() < b.size();
  return a_last < b_last;
}

double ranking_score(const Hypothesis& h, bool normalize) {
  return normalize && !h.tokens.empty() ? h.log_prob / static_cast<double>(h.tokens.size()) : h.log_prob;
}

// Beam search that finishes a hypothesis after `separators` emitted </q>
// tokens or `max_tokens` tokens.
std::vector<Hypothesis> run_beam(const Model& model, const corpus::Vocabulary& vocab,
                                 const EncodedContext& enc, int beam_size, int separators,
                                 int max_tokens, bool length_normalize) {
  if (beam_size < 1) throw std::invalid_argument("beam size must be at least 1");
  if (max_tokens < 1) throw std::invalid_argument("max length must be at least 1");
  const std::string eoq(Vocabulary::kEndOfQueryToken);

  struct Live {
    Hypothesis hyp;
    int separators_seen = 0;
    int last_id = Vocabulary::kStart;
  };
  std::vector<Live> live(1);
  live[0].hyp.state = initial_state(enc);
  std::vector<Hypothesis> finished;

  for (int depth = 0; depth < max_tokens && !live.empty(); ++depth) {
    std::vector<Candidate> cands;
    std::vector<MixtureDistribution> mixes;
    std::vector<DecoderState> states;
    mixes.reserve(live.size());
    for (std::size_t p = 0; p < live.size(); ++p) {
      auto out = decoder_step(model, enc, live[p].hyp.state, live[p].last_id);
      mixes.push_back(fuse(out, enc.context, vocab));
      states.push_back(std::move(out.state));
      const auto& mix = mixes.back();
      for (std::size_t k = 0; k < mix.tokens.size(); ++k) {
        if (!(mix.probs[k] > 0.0)) continue;
        cands.push_back({p, k, mix.tokens[k], live[p].hyp.log_prob + std::log(mix.probs[k])});
      }
    }
    std::sort(cands.begin(), cands.end(), [&](const Candidate& a, const Candidate& b) {
      if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
      return sequence_less(live[a.parent].hyp.tokens, a.text, live[b.parent].hyp.tokens, b.text);
    });
    if (cands.size() > static_cast<std::size_t>(beam_size)) cands.resize(static_cast<std::size_t>(beam_size));

    std::vector<Live> next;
    for (const auto& c : cands) {
      const Live& parent = live[c.parent];
      Live child;
      child.hyp.tokens = parent.hyp.tokens;
      child.hyp.tokens.push_back(c.text);
      child.hyp.step_log_probs = parent.hyp.step_log_probs;
      child.hyp.step_log_probs.push_back(c.log_prob - parent.hyp.log_prob);
      child.hyp.log_prob = c.log_prob;
      child.hyp.state = states[c.parent];
      child.separators_seen = parent.separators_seen + (c.text == eoq ? 1 : 0);
      child.last_id = vocab.id(c.text);
      if (child.separators_seen >= separators || depth + 1 == max_tokens) {
        child.hyp.finished = true;
        finished.push_back(std::move(child.hyp));
      } else {
        next.push_back(std::move(child));
      }
    }
    live = std::move(next);
  }

  std::stable_sort(finished.begin(), finished.end(), [&](const Hypothesis& a, const Hypothesis& b) {
    const double sa = ranking_score(a, length_normalize), sb = ranking_score(b, length_normalize);
    if (sa != sb) return sa > sb;
    return a.tokens < b.tokens;
  });
  return finished;
}

}  // namespace

std::vector<Hypothesis> beam_search(const Model& model, const corpus::Vocabulary& vocab,
                                    const EncodedContext& enc, const DecodeConfig& config) {
  return run_beam(model, vocab, enc, config.beam_size, 1, config.max_length, config.length_normalize);
}

std::vector<Hypothesis> beam_search(const Model& model, const corpus::Vocabulary& vocab,
                                    const corpus::LinearizedContext& context, const DecodeConfig& config) {
  return beam_search(model, vocab, encode_context(model, context), config);
}

std::vector<Suggestion> suggest_k(const Model& model, const corpus::Vocabulary& vocab,
                                  const corpus::LinearizedContext& context, const DecodeConfig& config) {
  if (config.suggestions < 1) throw std::invalid_argument("suggest_k: k must be at least 1");
  auto enc = encode_context(model, context);
  auto hyps = run_beam(model, vocab, enc, config.beam_size, config.suggestions,
                       config.suggestions * config.max_length, config.length_normalize);
  std::vector<Suggestion> out;
  if (hyps.empty()) return out;
  const Hypothesis& best = hyps.front();
  Suggestion cur;
  for (std::size_t t = 0; t < best.tokens.size(); ++t) {
    cur.log_prob += best.step_log_probs[t];
    if (best.tokens[t] == Vocabulary::kEndOfQueryToken) {
      out.push_back(std::move(cur));
      cur = Suggestion{};
    } else {
      cur.tokens.push_back(best.tokens[t]);
    }
  }
  if (!cur.tokens.empty()) out.push_back(std::move(cur));
  if (out.size() > static_cast<std::size_t>(config.suggestions)) out.resize(static_cast<std::size_t>(config.suggestions));
  return out;
}

QueryScore score_query(const Model& model, const corpus::Vocabulary& vocab, const EncodedContext& enc,
                       const corpus::Query& candidate) {
  if (candidate.empty()) throw std::invalid_argument("score_query: empty candidate");
  std::vector<std::string> targets = candidate;
  targets.emplace_back(Vocabulary::kEndOfQueryToken);
  const auto& surface = enc.context.surface_tokens;

  QueryScore score;
  DecoderState state = initial_state(enc);
  int prev = Vocabulary::kStart;
  for (const auto& w : targets) {
    auto out = decoder_step(model, enc, state, prev);
    const double pc = out.p_copy;
    const int id = vocab.id(w);
    const bool in_vocab = vocab.contains(w) && is_emittable_id(id);
    double copied = 0.0;
    bool in_source = false;
    if (!is_reserved_surface(vocab, w)) {
      for (std::size_t i = 0; i < surface.size(); ++i)
        if (surface[i] == w) {
          copied += out.copy_dist[static_cast<Eigen::Index>(i + 1)];
          in_source = true;
        }
    }
    double p = (in_vocab ? (1.0 - pc) * out.gen_dist[id] : 0.0) + pc * copied;
    if (!in_vocab && !in_source) p = (1.0 - pc) * out.gen_dist[Vocabulary::kOov];
    score.step_probs.push_back(p);
    score.log_prob += std::log(p);
    state = std::move(out.state);
    prev = id;
  }
  score.prob = std::exp(score.log_prob);
  return score;
}

QueryScore score_query(const Model& model, const corpus::Vocabulary& vocab,
                       const corpus::LinearizedContext& context, const corpus::Query& candidate) {
  return score_query(model, vocab, encode_context(model, context), candidate);
}

std::vector<StepTrace> attention_trace(const Model& model, const corpus::Vocabulary& vocab,
                                       const corpus::LinearizedContext& context,
                                       std::span<const std::string> tokens) {
  auto enc = encode_context(model, context);
  std::vector<StepTrace> trace;
  DecoderState state = initial_state(enc);
  int prev = Vocabulary::kStart;
  for (const auto& w : tokens) {
    auto out = decoder_step(model, enc, state, prev);
    trace.push_back({w, out.attention, out.p_copy});
    state = std::move(out.state);
    prev = vocab.id(w);
  }
  return trace;
}

TeacherForcedPass teacher_force(const Model& model, const corpus::LinearizedContext& context,
                                std::span<const int> decoder_inputs, Rng* dropout_rng) {
  TeacherForcedPass pass;
  pass.encoded = encode_context(model, context, dropout_rng);
  pass.caches.resize(decoder_inputs.size());
  DecoderState state = initial_state(pass.encoded);
  for (std::size_t t = 0; t < decoder_inputs.size(); ++t) {
    auto out = decoder_step(model, pass.encoded, state, decoder_inputs[t], &pass.caches[t], dropout_rng);
    state = out.state;
    pass.outputs.push_back(std::move(out));
  }
  return pass;
}

void backward(const Model& model, const TeacherForcedPass& pass, std::span<const StepGradient> step_grads,
              num::Gradients& grads) {
  const auto& cfg = model.config;
  const auto& enc = pass.encoded;
  const std::size_t n = enc.context.length();
  const std::size_t m = enc.queries.count();
  const int H = cfg.word_hidden, D = cfg.embed_dim, S = cfg.decoder_hidden;
  if (step_grads.size() != pass.outputs.size()) throw std::invalid_argument("backward: one gradient per step required");

  std::vector<Vec> d_states(n, Vec::Zero(2 * H));
  std::vector<Vec> d_query_states(m, Vec::Zero(2 * cfg.query_hidden));
  Vec d_unk_input = Vec::Zero(2 * H);
  auto& dE = grads[model.embedding];

  Vec ds_next = Vec::Zero(S);
  for (std::size_t t = pass.outputs.size(); t-- > 0;) {
    const auto& out = pass.outputs[t];
    const auto& cache = pass.caches[t];
    const auto& g = step_grads[t];
    const Vec& state = out.state.hidden;
    Vec ds = ds_next;

    if (g.d_gen_logits.size() > 0) model.generator.backward(model.store, state, g.d_gen_logits, grads, &ds);
    if (cfg.use_copy) {
      if (g.d_copy_logits.size() > 0) {
        Vec d_shared = Vec::Zero(model.copy_scorer.hidden_dim);
        for (std::size_t i = 0; i <= n; ++i) {
          const double dl = g.d_copy_logits[static_cast<Eigen::Index>(i)];
          if (dl == 0.0) continue;
          Vec dpre = model.copy_scorer.backward_finish(model.store, dl, cache.copy_scores.activations[i], grads);
          if (i == 0)
            model.copy_scorer.backward_project(model.store, 1, enc.unk_input, dpre, grads, &d_unk_input);
          else
            model.copy_scorer.backward_project(model.store, 1, enc.words.states[i - 1], dpre, grads, &d_states[i - 1]);
          d_shared += dpre;
        }
        model.copy_scorer.backward_project(model.store, 0, state, d_shared, grads, &ds);
      }
      if (g.d_switch_logit != 0.0) {
        grads[model.switch_weights].col(0) += g.d_switch_logit * state;
        ds += g.d_switch_logit * model.store.value(model.switch_weights).col(0);
      }
    }

    Vec d_cell_input = Vec::Zero(D + 2 * H);
    Vec ds_prev = Vec::Zero(S);
    model.decoder_cell.backward(model.store, cache.cell, ds, grads, &d_cell_input, ds_prev);
    Vec d_input = d_cell_input.head(D);
    Vec d_context = d_cell_input.tail(2 * H);

    const Vec& a = out.attention.combined;
    Vec d_a(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
      d_a[static_cast<Eigen::Index>(i)] = d_context.dot(enc.words.states[i]);
      d_states[i] += a[static_cast<Eigen::Index>(i)] * d_context;
    }
    if (cfg.use_query_attention) {
      auto cg = attention::combine_backward(out.attention.word, out.attention.query, enc.owners, a, d_a);
      attention::query_attention_backward(model, cache.prev_state, enc.queries.states, cache.input,
                                          out.attention.query, cache.query_scores, cg.d_query, grads, ds_prev,
                                          d_query_states, d_input);
      attention::word_attention_backward(model, cache.prev_state, enc.words.states, out.attention.word,
                                         cache.word_scores, cg.d_word, grads, ds_prev, d_states);
    } else {
      attention::word_attention_backward(model, cache.prev_state, enc.words.states, out.attention.word,
                                         cache.word_scores, d_a, grads, ds_prev, d_states);
    }
    if (cache.input_mask.size() > 0) d_input = d_input.cwiseProduct(cache.input_mask);
    dE.row(cache.input_id) += d_input.transpose();
    ds_next = std::move(ds_prev);
  }

  // s_0 = tanh(A [→h_n ; ←h_1] + b)
  std::vector<Vec> d_forward(n, Vec::Zero(H)), d_backward(n, Vec::Zero(H));
  {
    const Vec& s0 = enc.initial_state;
    Vec dpre = ds_next.cwiseProduct(Vec::Ones(S) - s0.cwiseAbs2());
    Vec d_init = Vec::Zero(2 * H);
    model.decoder_init.backward(model.store, enc.init_input, dpre, grads, &d_init);
    d_forward[n - 1] += d_init.head(H);
    d_backward[0] += d_init.tail(H);
  }
  if (cfg.use_copy) {
    Vec d_unk_embedding = Vec::Zero(D);
    model.unk_projection.backward(model.store, model.embed(Vocabulary::kUnk), d_unk_input, grads, &d_unk_embedding);
    dE.row(Vocabulary::kUnk) += d_unk_embedding.transpose();
  }
  if (cfg.use_query_attention)
    encoder::encode_queries_backward(model, enc.words, enc.context.separator_positions, enc.queries, d_query_states,
                                     grads, d_forward);
  encoder::encode_words_backward(model, enc.context.token_ids, enc.words, d_states, d_forward, d_backward, grads);
}

}  // namespace acg::decoder
