#include "acg/model.hpp"

#include "acg/error.hpp"

#include <random>

namespace acg {

using num::Tag;

num::Metadata ModelConfig::to_metadata() const {
  return {
      {"model.vocab_size", std::to_string(vocab_size)},
      {"model.embed_dim", std::to_string(embed_dim)},
      {"model.word_hidden", std::to_string(word_hidden)},
      {"model.query_hidden", std::to_string(query_hidden)},
      {"model.decoder_hidden", std::to_string(decoder_hidden)},
      {"model.scorer_hidden", std::to_string(scorer_hidden)},
      {"model.use_copy", use_copy ? "1" : "0"},
      {"model.use_query_attention", use_query_attention ? "1" : "0"},
      {"model.query_summary_mlp", query_summary_mlp ? "1" : "0"},
  };
}

ModelConfig ModelConfig::from_metadata(const num::Metadata& meta) {
  auto get = [&](const std::string& key) -> const std::string& {
    auto it = meta.find(key);
    if (it == meta.end()) throw CheckpointError("checkpoint metadata lacks '" + key + "'");
    return it->second;
  };
  ModelConfig c;
  try {
    c.vocab_size = std::stoi(get("model.vocab_size"));
    c.embed_dim = std::stoi(get("model.embed_dim"));
    c.word_hidden = std::stoi(get("model.word_hidden"));
    c.query_hidden = std::stoi(get("model.query_hidden"));
    c.decoder_hidden = std::stoi(get("model.decoder_hidden"));
    c.scorer_hidden = std::stoi(get("model.scorer_hidden"));
  } catch (const std::logic_error&) {
    throw CheckpointError("checkpoint metadata holds a non-integer model dimension");
  }
  c.use_copy = get("model.use_copy") == "1";
  c.use_query_attention = get("model.use_query_attention") == "1";
  c.query_summary_mlp = get("model.query_summary_mlp") == "1";
  return c;
}

Model::Model(const ModelConfig& cfg) : config(cfg) {
  if (cfg.vocab_size <= 0 || cfg.embed_dim <= 0 || cfg.word_hidden <= 0 || cfg.query_hidden <= 0 ||
      cfg.decoder_hidden <= 0)
    throw std::invalid_argument("model dimensions must be positive");
  std::mt19937_64 rng(cfg.seed);
  const int D = cfg.embed_dim, H = cfg.word_hidden, Q = cfg.query_hidden, S = cfg.decoder_hidden;
  const int A = cfg.scorer_width();

  embedding = store.add("embedding", Tag::kEmbedding, cfg.vocab_size, D, num::Init::kXavier, rng);
  word_forward = num::GruLayer::create(store, "encoder.forward", Tag::kEncoder, D, H, rng);
  word_backward = num::GruLayer::create(store, "encoder.backward", Tag::kEncoder, D, H, rng);
  if (cfg.query_summary_mlp)
    query_summary = num::AffineLayer::create(store, "query_encoder.summary", Tag::kQueryEncoder, H, H, rng);
  query_forward = num::GruLayer::create(store, "query_encoder.forward", Tag::kQueryEncoder, H, Q, rng);
  query_backward = num::GruLayer::create(store, "query_encoder.backward", Tag::kQueryEncoder, H, Q, rng);

  decoder_init = num::AffineLayer::create(store, "decoder.init", Tag::kDecoder, 2 * H, S, rng);
  decoder_cell = num::GruLayer::create(store, "decoder.cell", Tag::kDecoder, D + 2 * H, S, rng);

  word_scorer = num::EtaLayer::create(store, "attention.word", Tag::kAttention, {S, 2 * H}, A, rng);
  query_scorer = num::EtaLayer::create(store, "attention.query", Tag::kAttention, {S, 2 * Q, D}, A, rng);

  generator = num::AffineLayer::create(store, "generator.output", Tag::kGenerator, S, cfg.vocab_size, rng);

  copy_scorer = num::EtaLayer::create(store, "copier.scorer", Tag::kCopier, {S, 2 * H}, A, rng);
  unk_projection = num::AffineLayer::create(store, "copier.unk_projection", Tag::kCopier, D, 2 * H, rng);

  switch_weights = store.add("switch.w", Tag::kSwitch, S, 1, num::Init::kXavier, rng);
}

num::Vec Model::embed(int token_id) const {
  const auto& E = store.value(embedding);
  if (token_id < 0 || token_id >= E.rows()) throw DimensionError("token id outside the embedding table");
  return E.row(token_id).transpose();
}

void Model::save(const std::string& path) const { num::save_checkpoint(path, store, metadata()); }

Model Model::load(const std::string& path) {
  Model m(ModelConfig::from_metadata(num::read_checkpoint_metadata(path)));
  num::load_checkpoint(path, m.store);
  return m;
}

}  // namespace acg
