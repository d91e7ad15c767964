#pragma once

#include "acg/numcore.hpp"

#include <cstdint>

namespace acg {

struct ModelConfig {
  int vocab_size = 0;
  int embed_dim = 64;
  int word_hidden = 64;
  int query_hidden = 64;
  int decoder_hidden = 64;
  // Hidden width of the three perceptron scorers; 0 means decoder_hidden.
  int scorer_hidden = 0;
  bool use_copy = true;
  bool use_query_attention = true;
  // Replace the identity query summary with tanh(A h + c).
  bool query_summary_mlp = false;
  double dropout = 0.0;
  std::uint64_t seed = 1;

  int scorer_width() const { return scorer_hidden > 0 ? scorer_hidden : decoder_hidden; }

  num::Metadata to_metadata() const;
  static ModelConfig from_metadata(const num::Metadata& meta);
};

// All trainable tensors and the layer handles that index into them.
struct Model {
  ModelConfig config;
  num::ParameterStore store;

  num::ParamId embedding;  // vocab_size x embed_dim, shared by encoder and decoder inputs

  num::GruLayer word_forward, word_backward;
  num::AffineLayer query_summary;  // used only with query_summary_mlp
  num::GruLayer query_forward, query_backward;

  num::AffineLayer decoder_init;  // [→h_n ; ←h_1] -> s_0
  num::GruLayer decoder_cell;     // input [y_{t-1} embedding ; c_t]

  num::EtaLayer word_scorer;   // blocks: s_{t-1}, h_i
  num::EtaLayer query_scorer;  // blocks: s_{t-1}, g_j, y_{t-1}
  num::EtaLayer copy_scorer;   // blocks: s_t, h_i (or the projected <unk> embedding)
  num::AffineLayer unk_projection;  // embedding -> 2·word_hidden

  num::AffineLayer generator;  // s_t -> vocab logits
  num::ParamId switch_weights;  // decoder_hidden x 1, p(copy) = σ(wᵀ s_t)

  explicit Model(const ModelConfig& cfg);

  int word_state_dim() const { return 2 * config.word_hidden; }
  int query_state_dim() const { return 2 * config.query_hidden; }

  num::Vec embed(int token_id) const;
  num::Metadata metadata() const { return config.to_metadata(); }

  void save(const std::string& path) const;
  static Model load(const std::string& path);
};

}  // namespace acg
