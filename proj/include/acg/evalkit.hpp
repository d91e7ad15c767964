#pragma once

// Generation and discrimination metrics: PER, vector-extrema embedding
// similarity, a small query-likelihood retrieval engine with RM3 feedback,
// rank-biased overlap, co-occurrence candidates and MRR, plus the report
// that aggregates them per session-length bucket.

#include "acg/corpus.hpp"
#include "acg/decoder.hpp"
#include "acg/model.hpp"

#include "json.hpp"

#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace acg::eval {

using corpus::Query;
using num::Vec;

// (|G∖T| + |T∖G|) / |T| with multiset differences.
double per(const Query& generated, const Query& target);

class EmbeddingTable {
 public:
  explicit EmbeddingTable(int dim = 0) : dim_(dim) {}

  // `count dim` header, then `word v1 … vd` lines.
  static EmbeddingTable load(std::istream& in);

  void add(const std::string& word, Vec vector);
  const Vec* find(const std::string& word) const;
  int dim() const { return dim_; }
  std::size_t size() const { return vectors_.size(); }

 private:
  int dim_;
  std::unordered_map<std::string, Vec> vectors_;
};

// Per dimension, the value of largest magnitude among the in-table words
// (sign kept; exact-magnitude ties go to the positive value). nullopt when no
// word is in the table.
std::optional<Vec> extrema_embedding(const Query& query, const EmbeddingTable& table);

// Cosine of the two extrema vectors; nullopt when either is missing or zero.
std::optional<double> sim_emb(const Query& generated, const Query& target, const EmbeddingTable& table);

class Index {
 public:
  struct Posting {
    std::uint32_t doc;
    std::uint32_t tf;
  };

  void add_document(const std::string& doc_id, const Query& tokens);
  // `doc_id<TAB>text` lines; text is normalized like queries.
  static Index load(std::istream& in);

  const std::vector<Posting>* postings(const std::string& term) const;
  std::uint64_t collection_frequency(const std::string& term) const;
  std::uint64_t collection_length() const { return collection_length_; }
  std::size_t document_count() const { return doc_ids_.size(); }
  const std::string& doc_id(std::uint32_t doc) const { return doc_ids_[doc]; }
  std::uint32_t doc_length(std::uint32_t doc) const { return doc_lengths_[doc]; }
  std::uint32_t term_frequency(std::uint32_t doc, const std::string& term) const;
  const std::map<std::string, std::uint32_t>& doc_terms(std::uint32_t doc) const { return doc_terms_[doc]; }

 private:
  std::vector<std::string> doc_ids_;
  std::vector<std::uint32_t> doc_lengths_;
  std::vector<std::map<std::string, std::uint32_t>> doc_terms_;
  std::unordered_map<std::string, std::vector<Posting>> postings_;
  std::unordered_map<std::string, std::uint64_t> cf_;
  std::uint64_t collection_length_ = 0;
};

struct RankedEntry {
  std::string doc_id;
  double score;
};
// Sorted by (score desc, doc id asc), no duplicates.
using RankedList = std::vector<RankedEntry>;

using WeightedQuery = std::map<std::string, double>;

// qtf(w) / |Q|
WeightedQuery query_distribution(const Query& query);

// Dirichlet-smoothed query likelihood
//   Σ_w weight(w) · log[(tf(w,D) + μ P(w|C)) / (|D| + μ)]
// over documents containing at least one query term. Terms unseen in the
// collection are skipped.
RankedList retrieve(const Index& index, const WeightedQuery& query, double mu, std::size_t depth);
RankedList retrieve(const Index& index, const Query& query, double mu, std::size_t depth);

struct Rm3Config {
  std::size_t fb_docs = 10;
  std::size_t fb_terms = 10;
  double lambda = 0.5;  // weight of the original query
  double mu = 2500.0;
};

// Relevance model Σ_D P(w|D) P(D|Q) over the top fb_docs, truncated to
// fb_terms and renormalized, interpolated as λ·original + (1 − λ)·model.
WeightedQuery rm3_expand(const Index& index, const Query& query, const Rm3Config& config);

// Truncated (1 − p) Σ_{d≤depth} p^{d−1} |A_d ∩ B_d| / d, or with the
// extrapolated residual (X_depth / depth) · p^depth added.
double rbo(const RankedList& a, const RankedList& b, double p, std::size_t depth, bool extrapolate = false);
double rbo(std::span<const std::string> a, std::span<const std::string> b, double p, std::size_t depth,
           bool extrapolate = false);

// Per-list min-max normalization to [0, 1], then score sum.
RankedList fuse_normalized(std::span<const RankedList> lists);

struct RetrievalConfig {
  double mu = 2500.0;
  std::size_t depth = 100;
  double rbo_p = 0.9;
  bool rbo_extrapolate = false;
  Rm3Config rm3;
};

struct SimRetScores {
  std::optional<double> plain;     // reference: target query
  std::optional<double> expanded;  // reference: RM3-expanded target
  std::optional<double> session;   // reference: fused lists of the session tail
};

// `session_generated` is the suggestion produced from the first ⌊l/2⌋
// queries; `session_tail` holds the remaining ⌈l/2⌉ queries. Either may be
// empty, leaving `session` unset.
SimRetScores sim_ret_suite(const Index& index, const Query& generated, const Query& target,
                           const Query& session_generated, std::span<const Query> session_tail,
                           const RetrievalConfig& config);

// In-session co-occurrence counts: each session counts a pair once.
class CooccurrenceTable {
 public:
  void add_session(const corpus::Session& session);
  static CooccurrenceTable build(std::span<const corpus::Session> sessions);

  // Co-occurring queries by count desc, then lexicographic.
  std::vector<std::string> candidates(const std::string& anchor, std::size_t k = 20) const;

 private:
  std::unordered_map<std::string, std::map<std::string, long>> counts_;
};

std::vector<std::string> mps_candidates(const CooccurrenceTable& table, const Query& anchor, std::size_t k = 20);

// 1 / rank of `relevant` (1-based), 0 when absent.
double reciprocal_rank(std::span<const std::string> ranking, const std::string& relevant);
double mrr(std::span<const std::vector<std::string>> rankings, std::span<const std::string> relevant);

enum class Bucket { kShort, kMedium, kLong };
std::string_view bucket_name(Bucket b);
// 2 → short, 3–4 → medium, > 4 → long.
Bucket bucket_for(std::size_t session_length);

struct MetricStats {
  double sum = 0.0;
  std::size_t count = 0;
  std::size_t skipped = 0;
  double mean() const { return count ? sum / static_cast<double>(count) : 0.0; }
};

class EvalReport {
 public:
  // Records one instance value; nullopt counts as skipped.
  void add(const std::string& metric, std::optional<Bucket> bucket, std::optional<double> value);
  void add_instance(nlohmann::json instance) { instances_.push_back(std::move(instance)); }

  const MetricStats& overall(const std::string& metric) const;
  const MetricStats& bucket(Bucket b, const std::string& metric) const;
  bool has(const std::string& metric) const { return overall_.count(metric) > 0; }

  nlohmann::json to_json() const;

 private:
  std::map<std::string, MetricStats> overall_;
  std::map<Bucket, std::map<std::string, MetricStats>> buckets_;
  std::vector<nlohmann::json> instances_;
};

// Metric families selectable from the CLI.
struct MetricSelection {
  bool per = true;
  bool emb = true;
  bool ret = true;
  bool mrr = true;

  static MetricSelection parse(const std::string& spec);  // "all" or comma list of per,emb,ret,mrr
};

struct EvalResources {
  const EmbeddingTable* embeddings = nullptr;
  const Index* index = nullptr;
  const CooccurrenceTable* cooccurrence = nullptr;
};

struct EvalOptions {
  MetricSelection metrics;
  decoder::DecodeConfig decode;
  RetrievalConfig retrieval;
  std::size_t max_context_tokens = 50;
  std::size_t mps_k = 20;
  bool keep_instances = true;
};

// Scores already generated queries against targets (no model involved).
EvalReport evaluate_pairs(std::span<const Query> generated, std::span<const Query> targets,
                          const EvalResources& resources, const EvalOptions& options);

// For each test session of length l ≥ 2: suggest from the first l − 1
// queries and compare with the last; for l > 2 also suggest from the first
// ⌊l/2⌋ and compare retrieval against the remaining queries; rank MPS
// candidates of the anchor by model score for MRR.
EvalReport evaluate_model(const Model& model, const corpus::Vocabulary& vocab,
                          std::span<const corpus::Session> sessions, const EvalResources& resources,
                          const EvalOptions& options);

}  // namespace acg::eval
