#pragma once

// Copy/generate decoder: one recurrent step with query-aware attention, a
// vocabulary head, a position head with an <unk> slot, a switch gate, the
// fused mixture over surface tokens, beam search and candidate scoring.

#include "acg/attention.hpp"
#include "acg/corpus.hpp"
#include "acg/encoder.hpp"
#include "acg/model.hpp"

#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace acg::decoder {

using num::Vec;

// Everything computed once per context before decoding.
struct EncodedContext {
  corpus::LinearizedContext context;
  encoder::WordEncodings words;
  encoder::QueryEncodings queries;
  std::vector<std::size_t> owners;
  std::vector<Vec> word_keys;
  std::vector<Vec> query_keys;
  std::vector<Vec> copy_keys;  // [0] is the projected <unk> embedding
  Vec unk_input;               // proj(e(<unk>))
  Vec init_input;              // [→h_n ; ←h_1]
  Vec initial_state;           // s_0
};

EncodedContext encode_context(const Model& model, const corpus::LinearizedContext& context,
                              Rng* dropout_rng = nullptr);

struct DecoderState {
  Vec hidden;
  std::size_t step = 0;
};

inline DecoderState initial_state(const EncodedContext& enc) { return {enc.initial_state, 0}; }

struct DecoderStepOutput {
  Vec gen_dist;   // over the vocabulary
  Vec copy_dist;  // over 0..n, 0 = <unk>
  double p_copy = 0.0;
  DecoderState state;
  attention::AttentionWeights attention;
  Vec gen_logits;
  Vec copy_logits;
};

// Intermediates needed by the reverse pass.
struct StepCache {
  Vec prev_state;
  Vec input;  // embedding of the previous token, after dropout
  Vec input_mask;
  int input_id = 0;
  attention::ScorerCache word_scores, query_scores, copy_scores;
  Vec context;
  num::GruLayer::Cache cell;
};

DecoderStepOutput decoder_step(const Model& model, const EncodedContext& enc,
                               const DecoderState& prev, int prev_token_id,
                               StepCache* cache = nullptr, Rng* dropout_rng = nullptr);

// Probability over surface tokens: vocabulary entries (minus reserved ids,
// plus </q>) followed by source-only surface forms in first-seen order.
class MixtureDistribution {
 public:
  std::vector<std::string> tokens;
  std::vector<double> probs;
  std::vector<double> generated;  // (1 − p_copy) · gen_dist share
  std::vector<double> copied;     // p_copy · Σ copy_dist over matching positions
  double residual = 0.0;          // <oov>/<unk>/other reserved mass

  std::optional<std::size_t> find(std::string_view token) const;
  double prob(std::string_view token) const;
  double total() const;

 private:
  friend MixtureDistribution fuse(const DecoderStepOutput&, const corpus::LinearizedContext&,
                                  const corpus::Vocabulary&);
  std::unordered_map<std::string, std::size_t> index_;
};

MixtureDistribution fuse(const DecoderStepOutput& step, const corpus::LinearizedContext& context,
                         const corpus::Vocabulary& vocab);

struct DecodeConfig {
  int beam_size = 4;
  int max_length = 10;  // tokens per suggestion, </q> included
  int suggestions = 1;
  bool length_normalize = false;
};

struct Hypothesis {
  std::vector<std::string> tokens;
  std::vector<double> step_log_probs;
  double log_prob = 0.0;
  bool finished = false;
  DecoderState state;
};

// Plain product-of-probabilities beam search; returns finished hypotheses
// ranked best first (ties broken by token sequence).
std::vector<Hypothesis> beam_search(const Model& model, const corpus::Vocabulary& vocab,
                                    const EncodedContext& enc, const DecodeConfig& config);
std::vector<Hypothesis> beam_search(const Model& model, const corpus::Vocabulary& vocab,
                                    const corpus::LinearizedContext& context,
                                    const DecodeConfig& config);

struct Suggestion {
  corpus::Query tokens;
  double log_prob = 0.0;
};

// Continues the best beam past each </q> until `config.suggestions`
// queries have been emitted.
std::vector<Suggestion> suggest_k(const Model& model, const corpus::Vocabulary& vocab,
                                  const corpus::LinearizedContext& context,
                                  const DecodeConfig& config);

struct QueryScore {
  double prob = 0.0;
  double log_prob = 0.0;
  std::vector<double> step_probs;  // one per token plus the terminating </q>
};

// Teacher-forced product of fused step probabilities of candidate + </q>.
QueryScore score_query(const Model& model, const corpus::Vocabulary& vocab,
                       const EncodedContext& enc, const corpus::Query& candidate);
QueryScore score_query(const Model& model, const corpus::Vocabulary& vocab,
                       const corpus::LinearizedContext& context, const corpus::Query& candidate);

struct StepTrace {
  std::string token;
  attention::AttentionWeights attention;
  double p_copy = 0.0;
};

// Per-step attention and switch values while emitting `tokens`.
std::vector<StepTrace> attention_trace(const Model& model, const corpus::Vocabulary& vocab,
                                       const corpus::LinearizedContext& context,
                                       std::span<const std::string> tokens);

struct TeacherForcedPass {
  EncodedContext encoded;
  std::vector<StepCache> caches;
  std::vector<DecoderStepOutput> outputs;
};

TeacherForcedPass teacher_force(const Model& model, const corpus::LinearizedContext& context,
                                std::span<const int> decoder_inputs, Rng* dropout_rng = nullptr);

// Upstream gradients w.r.t. one step's pre-softmax outputs. Empty vectors
// mean no gradient from that head.
struct StepGradient {
  Vec d_gen_logits;
  Vec d_copy_logits;
  double d_switch_logit = 0.0;
};

void backward(const Model& model, const TeacherForcedPass& pass, std::span<const StepGradient> grads,
              num::Gradients& out);

}  // namespace acg::decoder
