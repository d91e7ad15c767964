#pragma once

// Query-log ingestion: normalization, session segmentation, vocabulary,
// context linearization, per-step training targets and noise injection.

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace acg::corpus {

using Query = std::vector<std::string>;

struct RawLogRecord {
  std::string user_id;
  std::string query_text;
  std::int64_t timestamp = 0;  // seconds since the Unix epoch
};

struct Session {
  std::string user_id;
  std::vector<Query> queries;
  std::vector<std::int64_t> timestamps;
};

inline constexpr std::int64_t kSessionGapSeconds = 30 * 60;

// Lowercase, replace non-alphanumerics with spaces, split on whitespace.
// An empty result marks a record to drop.
Query normalize_query(std::string_view raw);

std::string join(const Query& q, char sep = ' ');
Query split_tokens(std::string_view text);

// "YYYY-MM-DD HH:MM:SS" or "YYYY-MM-DDTHH:MM:SS[Z]". Throws FormatError.
std::int64_t parse_timestamp(std::string_view text);

// Reads `user_id<TAB>query<TAB>timestamp` lines. A first line whose
// timestamp does not parse is treated as a header and skipped.
std::vector<RawLogRecord> read_log(std::istream& in);

// Splits one user's time-ordered records wherever the idle gap reaches 30
// minutes. Records normalizing to nothing are dropped first.
std::vector<Session> segment_sessions(std::span<const RawLogRecord> records);

// Groups records by user (first-appearance order), sorts each user's records
// by time (stable) and segments them.
std::vector<Session> sessions_from_log(std::span<const RawLogRecord> records);

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kEndOfQuery = 1;
  static constexpr int kOov = 2;
  static constexpr int kUnk = 3;
  static constexpr int kStart = 4;
  static constexpr int kReservedCount = 5;

  static constexpr std::string_view kEndOfQueryToken = "</q>";

  Vocabulary();
  // Ids are assigned in the given order after the reserved block.
  static Vocabulary from_tokens(const std::vector<std::string>& tokens);

  int id(std::string_view token) const;  // kOov when absent
  bool contains(std::string_view token) const;
  const std::string& token(int id) const;
  int size() const { return static_cast<int>(tokens_.size()); }
  static bool is_reserved(int id) { return id >= 0 && id < kReservedCount; }

  void save(std::ostream& out) const;
  static Vocabulary load(std::istream& in);

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

// Most frequent tokens (count desc, then lexicographic) filling `size`
// total entries including the reserved block.
Vocabulary build_vocabulary(std::span<const Session> sessions, int size);

struct LinearizedContext {
  std::vector<int> token_ids;
  std::vector<std::size_t> separator_positions;  // 0-based indices of </q>
  std::vector<std::string> surface_tokens;

  std::size_t length() const { return token_ids.size(); }
  std::size_t query_count() const { return separator_positions.size(); }
};

// Concatenates queries, each followed by </q>.
LinearizedContext linearize(std::span<const Query> queries, const Vocabulary& vocab);

// Keeps the most recent queries whose linearized length fits max_tokens;
// a single oversized query keeps its trailing tokens. 0 disables the cutoff.
std::vector<Query> truncate_context(std::span<const Query> queries, std::size_t max_tokens);

struct TrainingExample {
  LinearizedContext context;
  std::vector<std::string> target_tokens;  // surface forms, ending in </q>
  std::vector<int> generator_targets;      // vocab id or kOov
  // Copy-distribution indices: i ≥ 1 is source position i − 1; empty ⇒ <UNK>.
  std::vector<std::vector<std::size_t>> copier_targets;
  std::vector<int> switch_targets;
  // Decoder input ids: <s> first, then the target tokens' ids shifted by one.
  std::vector<int> decoder_inputs;

  std::size_t target_length() const { return target_tokens.size(); }
};

// The four switch rules collapse to: copyable ⇒ 1, otherwise 0.
int switch_target(bool copier_is_unk, bool generator_is_oov);

TrainingExample derive_targets(const LinearizedContext& context, const Query& target_query,
                               const Vocabulary& vocab);

// One example per (prefix, next query) pair of a session with ≥ 2 queries.
std::vector<TrainingExample> make_examples(const Session& session, const Vocabulary& vocab,
                                           std::size_t max_context_tokens);

enum class NoiseMode { kTerm, kQuery, kSession };
NoiseMode parse_noise_mode(std::string_view name);

struct NoiseResources {
  std::vector<std::string> terms;
  std::vector<double> term_weights;
  std::vector<Query> queries;
  std::vector<double> query_weights;
};

const std::vector<std::string>& stopwords();

// Top `term_count` non-stopword terms and top `query_count` queries by
// frequency in the given sessions, weighted by those frequencies.
NoiseResources build_noise_resources(std::span<const Session> sessions,
                                     std::size_t term_count = 200,
                                     std::size_t query_count = 100);

// term: one sampled term inserted at a random slot of a random query.
// query: one sampled query inserted at a random position.
// session: another session of the same user (from `sessions`) prepended.
std::vector<Session> inject_noise(std::span<const Session> sessions, NoiseMode mode,
                                  std::uint64_t seed, const NoiseResources& resources);

// Session files: one session per line, queries joined by TAB, tokens by a
// single space. User ids live in an optional parallel file, one per line.
void write_sessions(std::ostream& out, std::span<const Session> sessions);
std::vector<Session> read_sessions(std::istream& in);
void write_session_users(std::ostream& out, std::span<const Session> sessions);
void read_session_users(std::istream& in, std::span<Session> sessions);

}  // namespace acg::corpus
