#include "acg/corpus.hpp"

#include "acg/error.hpp"
#include "acg/rng.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <unordered_set>

namespace acg::corpus {

Query normalize_query(std::string_view raw) {
  Query tokens;
  std::string current;
  for (unsigned char ch : raw) {
    if (std::isalnum(ch) && ch < 0x80) {
      current.push_back(static_cast<char>(std::tolower(ch)));
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

std::string join(const Query& q, char sep) {
  std::string out;
  for (std::size_t i = 0; i < q.size(); ++i) {
    if (i) out.push_back(sep);
    out += q[i];
  }
  return out;
}

Query split_tokens(std::string_view text) {
  Query out;
  std::istringstream in{std::string(text)};
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

namespace {

// Days since 1970-01-01 for a proleptic Gregorian date.
std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const auto yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    fields.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return fields;
}

void strip_cr(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

}  // namespace

std::int64_t parse_timestamp(std::string_view text) {
  int y, mo, d, h, mi, s;
  char sep;
  std::string buf(text);
  if (std::sscanf(buf.c_str(), "%4d-%2d-%2d%c%2d:%2d:%2d", &y, &mo, &d, &sep, &h, &mi, &s) != 7 ||
      (sep != ' ' && sep != 'T') || mo < 1 || mo > 12 || d < 1 || d > 31 || h > 23 || mi > 59 ||
      s > 60 || h < 0 || mi < 0 || s < 0) {
    throw FormatError("unparseable timestamp '" + buf + "'");
  }
  return days_from_civil(y, static_cast<unsigned>(mo), static_cast<unsigned>(d)) * 86400 +
         h * 3600 + mi * 60 + s;
}

std::vector<RawLogRecord> read_log(std::istream& in) {
  std::vector<RawLogRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    strip_cr(line);
    if (line.empty()) continue;
    auto fields = split_tabs(line);
    if (fields.size() < 3) {
      if (line_no == 1) continue;
      throw FormatError("log line " + std::to_string(line_no) + ": expected 3 tab-separated fields");
    }
    std::int64_t ts;
    try {
      ts = parse_timestamp(fields[2]);
    } catch (const FormatError&) {
      if (line_no == 1) continue;  // header
      throw FormatError("log line " + std::to_string(line_no) + ": bad timestamp '" + fields[2] + "'");
    }
    records.push_back({fields[0], fields[1], ts});
  }
  return records;
}

std::vector<Session> segment_sessions(std::span<const RawLogRecord> records) {
  for (std::size_t i = 1; i < records.size(); ++i) {
    if (records[i].timestamp < records[i - 1].timestamp)
      throw std::invalid_argument("segment_sessions: records are not sorted by timestamp");
  }
  std::vector<Session> sessions;
  std::int64_t last = 0;
  for (const auto& rec : records) {
    Query q = normalize_query(rec.query_text);
    if (q.empty()) continue;
    if (sessions.empty() || rec.timestamp - last >= kSessionGapSeconds) {
      sessions.push_back(Session{rec.user_id, {}, {}});
    }
    sessions.back().queries.push_back(std::move(q));
    sessions.back().timestamps.push_back(rec.timestamp);
    last = rec.timestamp;
  }
  return sessions;
}

std::vector<Session> sessions_from_log(std::span<const RawLogRecord> records) {
  std::vector<std::string> order;
  std::unordered_map<std::string, std::vector<RawLogRecord>> by_user;
  for (const auto& r : records) {
    auto [it, inserted] = by_user.try_emplace(r.user_id);
    if (inserted) order.push_back(r.user_id);
    it->second.push_back(r);
  }
  std::vector<Session> out;
  for (const auto& user : order) {
    auto& recs = by_user[user];
    std::stable_sort(recs.begin(), recs.end(),
                     [](const RawLogRecord& a, const RawLogRecord& b) { return a.timestamp < b.timestamp; });
    for (auto& s : segment_sessions(recs)) out.push_back(std::move(s));
  }
  return out;
}

Vocabulary::Vocabulary() {
  tokens_ = {"<pad>", std::string(kEndOfQueryToken), "<oov>", "<unk>", "<s>"};
  for (int i = 0; i < kReservedCount; ++i) ids_[tokens_[i]] = i;
}

Vocabulary Vocabulary::from_tokens(const std::vector<std::string>& tokens) {
  Vocabulary v;
  for (const auto& t : tokens) {
    if (v.ids_.count(t)) throw std::invalid_argument("duplicate vocabulary token: " + t);
    v.ids_[t] = static_cast<int>(v.tokens_.size());
    v.tokens_.push_back(t);
  }
  return v;
}

int Vocabulary::id(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  return it == ids_.end() ? kOov : it->second;
}

bool Vocabulary::contains(std::string_view token) const { return ids_.count(std::string(token)) > 0; }

const std::string& Vocabulary::token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }

void Vocabulary::save(std::ostream& out) const {
  out << "# acg vocabulary: " << size() << " entries\n";
  out << "# reserved ids: 0 <pad>, 1 </q> (query separator), 2 <oov> (generator out-of-vocabulary),"
         " 3 <unk> (copier not-in-source), 4 <s> (decoder start)\n";
  out << "# each following line is one token; id = " << kReservedCount << " + line offset\n";
  for (int i = kReservedCount; i < size(); ++i) out << tokens_[static_cast<std::size_t>(i)] << '\n';
}

Vocabulary Vocabulary::load(std::istream& in) {
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    strip_cr(line);
    if (line.empty() || line[0] == '#') continue;
    tokens.push_back(line);
  }
  try {
    return from_tokens(tokens);
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("vocabulary file: ") + e.what());
  }
}

Vocabulary build_vocabulary(std::span<const Session> sessions, int size) {
  if (size <= Vocabulary::kReservedCount)
    throw std::invalid_argument("vocabulary size must exceed the reserved block");
  std::map<std::string, long> counts;
  for (const auto& s : sessions)
    for (const auto& q : s.queries)
      for (const auto& t : q) ++counts[t];
  if (counts.empty()) throw std::invalid_argument("build_vocabulary: empty corpus");
  std::vector<std::pair<std::string, long>> ranked(counts.begin(), counts.end());
  // counts is already lexicographic, so a stable sort on count keeps that tie-break
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  const auto keep = std::min<std::size_t>(ranked.size(), static_cast<std::size_t>(size - Vocabulary::kReservedCount));
  std::vector<std::string> tokens;
  for (std::size_t i = 0; i < keep; ++i) tokens.push_back(ranked[i].first);
  return Vocabulary::from_tokens(tokens);
}

LinearizedContext linearize(std::span<const Query> queries, const Vocabulary& vocab) {
  if (queries.empty()) throw std::invalid_argument("linearize: empty query list");
  LinearizedContext ctx;
  for (const auto& q : queries) {
    for (const auto& t : q) {
      ctx.token_ids.push_back(vocab.id(t));
      ctx.surface_tokens.push_back(t);
    }
    ctx.separator_positions.push_back(ctx.token_ids.size());
    ctx.token_ids.push_back(Vocabulary::kEndOfQuery);
    ctx.surface_tokens.emplace_back(Vocabulary::kEndOfQueryToken);
  }
  return ctx;
}

std::vector<Query> truncate_context(std::span<const Query> queries, std::size_t max_tokens) {
  std::vector<Query> out(queries.begin(), queries.end());
  if (max_tokens == 0 || out.empty()) return out;
  auto total = [&] {
    std::size_t n = 0;
    for (const auto& q : out) n += q.size() + 1;
    return n;
  };
  while (out.size() > 1 && total() > max_tokens) out.erase(out.begin());
  if (total() > max_tokens) {
    Query& q = out.front();
    const std::size_t keep = max_tokens > 1 ? max_tokens - 1 : 0;
    q.erase(q.begin(), q.end() - static_cast<std::ptrdiff_t>(std::min(keep, q.size())));
  }
  return out;
}

int switch_target(bool copier_is_unk, bool generator_is_oov) {
  if (copier_is_unk && !generator_is_oov) return 0;  // generate
  if (!copier_is_unk && generator_is_oov) return 1;  // copy
  if (copier_is_unk && generator_is_oov) return 0;   // generate
  return 1;                                          // copy as much as possible
}

TrainingExample derive_targets(const LinearizedContext& context, const Query& target_query,
                               const Vocabulary& vocab) {
  if (target_query.empty()) throw std::invalid_argument("derive_targets: empty target query");
  TrainingExample ex;
  ex.context = context;
  ex.target_tokens = target_query;
  ex.target_tokens.emplace_back(Vocabulary::kEndOfQueryToken);
  ex.decoder_inputs.push_back(Vocabulary::kStart);
  for (const auto& word : ex.target_tokens) {
    const int gen = vocab.id(word);
    std::vector<std::size_t> positions;
    for (std::size_t i = 0; i < context.surface_tokens.size(); ++i)
      if (context.surface_tokens[i] == word) positions.push_back(i + 1);
    ex.switch_targets.push_back(switch_target(positions.empty(), gen == Vocabulary::kOov));
    ex.generator_targets.push_back(gen);
    ex.copier_targets.push_back(std::move(positions));
  }
  for (std::size_t t = 0; t + 1 < ex.target_tokens.size(); ++t)
    ex.decoder_inputs.push_back(vocab.id(ex.target_tokens[t]));
  return ex;
}

std::vector<TrainingExample> make_examples(const Session& session, const Vocabulary& vocab,
                                           std::size_t max_context_tokens) {
  std::vector<TrainingExample> out;
  for (std::size_t t = 1; t < session.queries.size(); ++t) {
    std::span<const Query> prefix(session.queries.data(), t);
    auto ctx = linearize(truncate_context(prefix, max_context_tokens), vocab);
    out.push_back(derive_targets(ctx, session.queries[t], vocab));
  }
  return out;
}

NoiseMode parse_noise_mode(std::string_view name) {
  if (name == "term") return NoiseMode::kTerm;
  if (name == "query") return NoiseMode::kQuery;
  if (name == "session") return NoiseMode::kSession;
  throw UsageError("unknown noise mode '" + std::string(name) + "' (expected term, query or session)");
}

const std::vector<std::string>& stopwords() {
  static const std::vector<std::string> words = {
      "a", "about", "above", "after", "again", "against", "all", "am", "an", "and",
      "any", "are", "as", "at", "be", "because", "been", "before", "being", "below",
      "between", "both", "but", "by", "can", "could", "did", "do", "does", "doing",
      "down", "during", "each", "few", "for", "from", "further", "had", "has", "have",
      "having", "he", "her", "here", "hers", "herself", "him", "himself", "his", "how",
      "i", "if", "in", "into", "is", "it", "its", "itself", "just", "me",
      "more", "most", "my", "myself", "no", "nor", "not", "now", "of", "off",
      "on", "once", "only", "or", "other", "our", "ours", "ourselves", "out", "over",
      "own", "same", "she", "should", "so", "some", "such", "than", "that", "the",
      "their", "theirs", "them", "themselves", "then", "there", "these", "they", "this", "those",
      "through", "to", "too", "under", "until", "up", "very", "was", "we", "were",
      "what", "when", "where", "which", "while", "who", "whom", "why", "will", "with",
      "would", "you", "your", "yours", "yourself", "yourselves", "s", "t", "www", "com",
  };
  return words;
}

NoiseResources build_noise_resources(std::span<const Session> sessions, std::size_t term_count,
                                     std::size_t query_count) {
  const std::unordered_set<std::string> stop(stopwords().begin(), stopwords().end());
  std::map<std::string, long> term_counts;
  std::map<std::string, long> query_counts;
  for (const auto& s : sessions)
    for (const auto& q : s.queries) {
      ++query_counts[join(q)];
      for (const auto& t : q)
        if (!stop.count(t)) ++term_counts[t];
    }
  auto top = [](const std::map<std::string, long>& counts, std::size_t k) {
    std::vector<std::pair<std::string, long>> v(counts.begin(), counts.end());
    std::stable_sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    if (v.size() > k) v.resize(k);
    return v;
  };
  NoiseResources res;
  for (auto& [t, c] : top(term_counts, term_count)) {
    res.terms.push_back(t);
    res.term_weights.push_back(static_cast<double>(c));
  }
  for (auto& [q, c] : top(query_counts, query_count)) {
    res.queries.push_back(split_tokens(q));
    res.query_weights.push_back(static_cast<double>(c));
  }
  return res;
}

std::vector<Session> inject_noise(std::span<const Session> sessions, NoiseMode mode,
                                  std::uint64_t seed, const NoiseResources& resources) {
  if (mode == NoiseMode::kTerm && (resources.terms.empty() || resources.terms.size() != resources.term_weights.size()))
    throw FormatError("term noise requires a non-empty weighted term list");
  if (mode == NoiseMode::kQuery &&
      (resources.queries.empty() || resources.queries.size() != resources.query_weights.size()))
    throw FormatError("query noise requires a non-empty weighted query list");

  std::unordered_map<std::string, std::vector<std::size_t>> by_user;
  if (mode == NoiseMode::kSession)
    for (std::size_t i = 0; i < sessions.size(); ++i) by_user[sessions[i].user_id].push_back(i);

  Rng rng(seed);
  std::vector<Session> out(sessions.begin(), sessions.end());
  for (std::size_t si = 0; si < out.size(); ++si) {
    Session& s = out[si];
    if (s.timestamps.size() != s.queries.size()) s.timestamps.assign(s.queries.size(), 0);
    if (s.queries.empty()) continue;
    switch (mode) {
      case NoiseMode::kTerm: {
        const auto& term = resources.terms[rng.weighted(resources.term_weights)];
        Query& q = s.queries[rng.below(s.queries.size())];
        const auto slot = rng.below(q.size() + 1);
        q.insert(q.begin() + static_cast<std::ptrdiff_t>(slot), term);
        break;
      }
      case NoiseMode::kQuery: {
        const Query& noise = resources.queries[rng.weighted(resources.query_weights)];
        const auto pos = rng.below(s.queries.size() + 1);
        const auto ts = s.timestamps[pos < s.timestamps.size() ? pos : pos - 1];
        s.queries.insert(s.queries.begin() + static_cast<std::ptrdiff_t>(pos), noise);
        s.timestamps.insert(s.timestamps.begin() + static_cast<std::ptrdiff_t>(pos), ts);
        break;
      }
      case NoiseMode::kSession: {
        std::vector<std::size_t> donors;
        for (std::size_t j : by_user[sessions[si].user_id])
          if (j != si) donors.push_back(j);
        if (donors.empty()) break;
        const Session& donor = sessions[donors[rng.below(donors.size())]];
        s.queries.insert(s.queries.begin(), donor.queries.begin(), donor.queries.end());
        std::vector<std::int64_t> ts = donor.timestamps;
        ts.resize(donor.queries.size(), 0);
        s.timestamps.insert(s.timestamps.begin(), ts.begin(), ts.end());
        break;
      }
    }
  }
  return out;
}

void write_sessions(std::ostream& out, std::span<const Session> sessions) {
  for (const auto& s : sessions) {
    for (std::size_t i = 0; i < s.queries.size(); ++i) {
      if (i) out << '\t';
      out << join(s.queries[i]);
    }
    out << '\n';
  }
}

std::vector<Session> read_sessions(std::istream& in) {
  std::vector<Session> sessions;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    strip_cr(line);
    if (line.empty()) continue;
    Session s;
    for (const auto& field : split_tabs(line)) {
      Query q = split_tokens(field);
      if (q.empty()) throw FormatError("session line " + std::to_string(line_no) + ": empty query");
      s.queries.push_back(std::move(q));
    }
    s.timestamps.assign(s.queries.size(), 0);
    sessions.push_back(std::move(s));
  }
  return sessions;
}

void write_session_users(std::ostream& out, std::span<const Session> sessions) {
  for (const auto& s : sessions) out << s.user_id << '\n';
}

void read_session_users(std::istream& in, std::span<Session> sessions) {
  std::string line;
  std::size_t i = 0;
  while (std::getline(in, line)) {
    strip_cr(line);
    if (i >= sessions.size()) throw FormatError("users file has more lines than the session file");
    sessions[i++].user_id = line;
  }
  if (i != sessions.size()) throw FormatError("users file has fewer lines than the session file");
}

}  // namespace acg::corpus
