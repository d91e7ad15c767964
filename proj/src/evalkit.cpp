#include "acg/evalkit.hpp"

#include "acg/error.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <sstream>
#include <unordered_set>

namespace acg::eval {

double per(const Query& generated, const Query& target) {
  if (target.empty()) throw std::invalid_argument("per: empty target query");
  std::map<std::string, long> balance;
  for (const auto& w : generated) ++balance[w];
  for (const auto& w : target) --balance[w];
  long edits = 0;
  for (const auto& [w, c] : balance) edits += std::labs(c);
  return static_cast<double>(edits) / static_cast<double>(target.size());
}

EmbeddingTable EmbeddingTable::load(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("embedding file: missing 'count dim' header");
  std::istringstream header(line);
  long count = 0;
  int dim = 0;
  if (!(header >> count >> dim) || dim <= 0 || count < 0)
    throw FormatError("embedding file: malformed 'count dim' header");
  EmbeddingTable table(dim);
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    Vec v(dim);
    for (int k = 0; k < dim; ++k)
      if (!(ls >> v[k]))
        throw FormatError("embedding file line " + std::to_string(line_no) + ": expected " + std::to_string(dim) +
                          " values");
    if (!v.allFinite()) throw FormatError("embedding file line " + std::to_string(line_no) + ": non-finite value");
    table.add(word, std::move(v));
  }
  return table;
}

void EmbeddingTable::add(const std::string& word, Vec vector) {
  if (dim_ == 0) dim_ = static_cast<int>(vector.size());
  if (vector.size() != dim_) throw DimensionError("embedding dimension mismatch for '" + word + "'");
  vectors_[word] = std::move(vector);
}

const Vec* EmbeddingTable::find(const std::string& word) const {
  auto it = vectors_.find(word);
  return it == vectors_.end() ? nullptr : &it->second;
}

std::optional<Vec> extrema_embedding(const Query& query, const EmbeddingTable& table) {
  std::optional<Vec> out;
  for (const auto& w : query) {
    const Vec* v = table.find(w);
    if (!v) continue;
    if (!out) {
      out = *v;
      continue;
    }
    for (Eigen::Index k = 0; k < v->size(); ++k) {
      const double cur = (*out)[k], cand = (*v)[k];
      // Equal magnitudes resolve to the non-negative value (signbit, so +0
      // beats -0) and the result does not depend on word order.
      if (std::abs(cand) > std::abs(cur) ||
          (std::abs(cand) == std::abs(cur) && std::signbit(cur) && !std::signbit(cand)))
        (*out)[k] = cand;
    }
  }
  return out;
}

std::optional<double> sim_emb(const Query& generated, const Query& target, const EmbeddingTable& table) {
  auto g = extrema_embedding(generated, table);
  auto t = extrema_embedding(target, table);
  if (!g || !t) return std::nullopt;
  const double ng = g->norm(), nt = t->norm();
  if (ng == 0.0 || nt == 0.0) return std::nullopt;
  return std::clamp(g->dot(*t) / (ng * nt), -1.0, 1.0);
}

void Index::add_document(const std::string& doc_id, const Query& tokens) {
  const auto doc = static_cast<std::uint32_t>(doc_ids_.size());
  doc_ids_.push_back(doc_id);
  doc_lengths_.push_back(static_cast<std::uint32_t>(tokens.size()));
  std::map<std::string, std::uint32_t> tf;
  for (const auto& t : tokens) ++tf[t];
  for (const auto& [t, c] : tf) {
    postings_[t].push_back({doc, c});
    cf_[t] += c;
  }
  collection_length_ += tokens.size();
  doc_terms_.push_back(std::move(tf));
}

Index Index::load(std::istream& in) {
  Index index;
  std::string line;
  std::size_t line_no = 0;
  std::unordered_set<std::string> seen;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw FormatError("corpus line " + std::to_string(line_no) + ": expected 'doc_id<TAB>text'");
    std::string id = line.substr(0, tab);
    if (!seen.insert(id).second) throw FormatError("corpus line " + std::to_string(line_no) + ": duplicate doc id " + id);
    index.add_document(id, corpus::normalize_query(std::string_view(line).substr(tab + 1)));
  }
  return index;
}

const std::vector<Index::Posting>* Index::postings(const std::string& term) const {
  auto it = postings_.find(term);
  return it == postings_.end() ? nullptr : &it->second;
}

std::uint64_t Index::collection_frequency(const std::string& term) const {
  auto it = cf_.find(term);
  return it == cf_.end() ? 0 : it->second;
}

std::uint32_t Index::term_frequency(std::uint32_t doc, const std::string& term) const {
  const auto& terms = doc_terms_[doc];
  auto it = terms.find(term);
  return it == terms.end() ? 0 : it->second;
}

WeightedQuery query_distribution(const Query& query) {
  WeightedQuery q;
  for (const auto& w : query) q[w] += 1.0;
  for (auto& [w, v] : q) v /= static_cast<double>(query.size());
  return q;
}

namespace {

void sort_ranked(RankedList& list) {
  std::sort(list.begin(), list.end(), [](const RankedEntry& a, const RankedEntry& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.doc_id < b.doc_id;
  });
}

}  // namespace

RankedList retrieve(const Index& index, const WeightedQuery& query, double mu, std::size_t depth) {
  if (!(mu > 0.0)) throw std::invalid_argument("retrieve: mu must be positive");
  std::vector<std::pair<std::string, double>> terms;
  std::set<std::uint32_t> candidates;
  for (const auto& [w, weight] : query) {
    if (weight == 0.0 || index.collection_frequency(w) == 0) continue;
    terms.emplace_back(w, weight);
    for (const auto& p : *index.postings(w)) candidates.insert(p.doc);
  }
  RankedList out;
  if (terms.empty()) return out;
  const double C = static_cast<double>(index.collection_length());
  for (std::uint32_t doc : candidates) {
    const double len = index.doc_length(doc);
    double score = 0.0;
    for (const auto& [w, weight] : terms) {
      const double pc = static_cast<double>(index.collection_frequency(w)) / C;
      score += weight * std::log((index.term_frequency(doc, w) + mu * pc) / (len + mu));
    }
    out.push_back({index.doc_id(doc), score});
  }
  sort_ranked(out);
  if (out.size() > depth) out.resize(depth);
  return out;
}

RankedList retrieve(const Index& index, const Query& query, double mu, std::size_t depth) {
  WeightedQuery counts;
  for (const auto& w : query) counts[w] += 1.0;
  return retrieve(index, counts, mu, depth);
}

WeightedQuery rm3_expand(const Index& index, const Query& query, const Rm3Config& config) {
  WeightedQuery original = query_distribution(query);
  RankedList feedback = retrieve(index, query, config.mu, config.fb_docs);
  if (feedback.empty()) return original;

  // P(D|Q) ∝ exp(score), normalized over the feedback documents.
  const double top = feedback.front().score;
  std::vector<double> doc_weight;
  double z = 0.0;
  for (const auto& e : feedback) {
    doc_weight.push_back(std::exp(e.score - top));
    z += doc_weight.back();
  }
  std::unordered_map<std::string, std::uint32_t> doc_index;
  for (std::uint32_t d = 0; d < index.document_count(); ++d) doc_index[index.doc_id(d)] = d;

  std::map<std::string, double> relevance;
  for (std::size_t k = 0; k < feedback.size(); ++k) {
    const std::uint32_t d = doc_index.at(feedback[k].doc_id);
    const double len = index.doc_length(d);
    for (const auto& [w, tf] : index.doc_terms(d)) relevance[w] += (tf / len) * (doc_weight[k] / z);
  }
  std::vector<std::pair<std::string, double>> ranked(relevance.begin(), relevance.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  if (ranked.size() > config.fb_terms) ranked.resize(config.fb_terms);
  double mass = 0.0;
  for (const auto& [w, p] : ranked) mass += p;

  WeightedQuery expanded;
  for (const auto& [w, p] : original) expanded[w] += config.lambda * p;
  if (config.lambda < 1.0)
    for (const auto& [w, p] : ranked) expanded[w] += (1.0 - config.lambda) * p / mass;
  return expanded;
}

double rbo(std::span<const std::string> a, std::span<const std::string> b, double p, std::size_t depth,
           bool extrapolate) {
  if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("rbo: persistence must lie in (0, 1)");
  if (depth < 1) throw std::invalid_argument("rbo: depth must be at least 1");
  std::unordered_set<std::string> seen_a, seen_b;
  double overlap = 0.0;
  double sum = 0.0;
  double weight = 1.0;  // p^{d−1}
  for (std::size_t d = 1; d <= depth; ++d) {
    if (d <= a.size()) {
      const auto& x = a[d - 1];
      seen_a.insert(x);
      if (seen_b.count(x)) overlap += 1.0;
    }
    if (d <= b.size()) {
      const auto& y = b[d - 1];
      seen_b.insert(y);
      if (seen_a.count(y)) overlap += 1.0;
    }
    sum += weight * overlap / static_cast<double>(d);
    weight *= p;
  }
  double value = (1.0 - p) * sum;
  if (extrapolate) value += overlap / static_cast<double>(depth) * weight;
  return value;
}

double rbo(const RankedList& a, const RankedList& b, double p, std::size_t depth, bool extrapolate) {
  std::vector<std::string> ia, ib;
  for (const auto& e : a) ia.push_back(e.doc_id);
  for (const auto& e : b) ib.push_back(e.doc_id);
  return rbo(ia, ib, p, depth, extrapolate);
}

RankedList fuse_normalized(std::span<const RankedList> lists) {
  std::map<std::string, double> fused;
  for (const auto& list : lists) {
    if (list.empty()) continue;
    double lo = list.front().score, hi = list.front().score;
    for (const auto& e : list) {
      lo = std::min(lo, e.score);
      hi = std::max(hi, e.score);
    }
    for (const auto& e : list) fused[e.doc_id] += hi > lo ? (e.score - lo) / (hi - lo) : 1.0;
  }
  RankedList out;
  for (auto& [id, s] : fused) out.push_back({id, s});
  sort_ranked(out);
  return out;
}

SimRetScores sim_ret_suite(const Index& index, const Query& generated, const Query& target,
                           const Query& session_generated, std::span<const Query> session_tail,
                           const RetrievalConfig& cfg) {
  SimRetScores s;
  const RankedList gen = retrieve(index, generated, cfg.mu, cfg.depth);
  if (!gen.empty()) {
    const RankedList ref = retrieve(index, target, cfg.mu, cfg.depth);
    if (!ref.empty()) s.plain = rbo(gen, ref, cfg.rbo_p, cfg.depth, cfg.rbo_extrapolate);
    const RankedList ref_plus = retrieve(index, rm3_expand(index, target, cfg.rm3), cfg.mu, cfg.depth);
    if (!ref_plus.empty()) s.expanded = rbo(gen, ref_plus, cfg.rbo_p, cfg.depth, cfg.rbo_extrapolate);
  }
  if (!session_generated.empty() && !session_tail.empty()) {
    const RankedList half = retrieve(index, session_generated, cfg.mu, cfg.depth);
    std::vector<RankedList> lists;
    bool complete = !half.empty();
    for (const auto& q : session_tail) {
      lists.push_back(retrieve(index, q, cfg.mu, cfg.depth));
      if (lists.back().empty()) complete = false;
    }
    if (complete) {
      RankedList merged = fuse_normalized(lists);
      if (merged.size() > cfg.depth) merged.resize(cfg.depth);
      s.session = rbo(half, merged, cfg.rbo_p, cfg.depth, cfg.rbo_extrapolate);
    }
  }
  return s;
}

void CooccurrenceTable::add_session(const corpus::Session& session) {
  std::set<std::string> distinct;
  for (const auto& q : session.queries) distinct.insert(corpus::join(q));
  for (const auto& a : distinct)
    for (const auto& b : distinct)
      if (a != b) ++counts_[a][b];
}

CooccurrenceTable CooccurrenceTable::build(std::span<const corpus::Session> sessions) {
  CooccurrenceTable t;
  for (const auto& s : sessions) t.add_session(s);
  return t;
}

std::vector<std::string> CooccurrenceTable::candidates(const std::string& anchor, std::size_t k) const {
  auto it = counts_.find(anchor);
  if (it == counts_.end()) return {};
  std::vector<std::pair<std::string, long>> ranked(it->second.begin(), it->second.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> out;
  for (std::size_t i = 0; i < ranked.size() && i < k; ++i) out.push_back(ranked[i].first);
  return out;
}

std::vector<std::string> mps_candidates(const CooccurrenceTable& table, const Query& anchor, std::size_t k) {
  return table.candidates(corpus::join(anchor), k);
}

double reciprocal_rank(std::span<const std::string> ranking, const std::string& relevant) {
  for (std::size_t i = 0; i < ranking.size(); ++i)
    if (ranking[i] == relevant) return 1.0 / static_cast<double>(i + 1);
  return 0.0;
}

double mrr(std::span<const std::vector<std::string>> rankings, std::span<const std::string> relevant) {
  if (rankings.size() != relevant.size()) throw std::invalid_argument("mrr: one relevant item per ranking required");
  if (rankings.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < rankings.size(); ++i) total += reciprocal_rank(rankings[i], relevant[i]);
  return total / static_cast<double>(rankings.size());
}

std::string_view bucket_name(Bucket b) {
  switch (b) {
    case Bucket::kShort: return "short";
    case Bucket::kMedium: return "medium";
    case Bucket::kLong: return "long";
  }
  return "?";
}

Bucket bucket_for(std::size_t session_length) {
  if (session_length < 2) throw std::invalid_argument("bucket_for: sessions need at least 2 queries");
  if (session_length == 2) return Bucket::kShort;
  if (session_length <= 4) return Bucket::kMedium;
  return Bucket::kLong;
}

void EvalReport::add(const std::string& metric, std::optional<Bucket> bucket, std::optional<double> value) {
  auto record = [&](MetricStats& s) {
    if (value) {
      s.sum += *value;
      ++s.count;
    } else {
      ++s.skipped;
    }
  };
  record(overall_[metric]);
  if (bucket) record(buckets_[*bucket][metric]);
}

const MetricStats& EvalReport::overall(const std::string& metric) const {
  static const MetricStats empty;
  auto it = overall_.find(metric);
  return it == overall_.end() ? empty : it->second;
}

const MetricStats& EvalReport::bucket(Bucket b, const std::string& metric) const {
  static const MetricStats empty;
  auto bt = buckets_.find(b);
  if (bt == buckets_.end()) return empty;
  auto it = bt->second.find(metric);
  return it == bt->second.end() ? empty : it->second;
}

nlohmann::json EvalReport::to_json() const {
  auto stats = [](const MetricStats& s) {
    return nlohmann::json{{"mean", s.mean()}, {"count", s.count}, {"skipped", s.skipped}};
  };
  nlohmann::json j;
  j["metrics"] = nlohmann::json::object();
  for (const auto& [name, s] : overall_) j["metrics"][name] = stats(s);
  j["buckets"] = nlohmann::json::object();
  for (const auto& [b, metrics] : buckets_) {
    auto& out = j["buckets"][std::string(bucket_name(b))];
    out = nlohmann::json::object();
    for (const auto& [name, s] : metrics) out[name] = stats(s);
  }
  j["instances"] = instances_;
  return j;
}

MetricSelection MetricSelection::parse(const std::string& spec) {
  if (spec == "all") return {};
  MetricSelection m{false, false, false, false};
  std::istringstream in(spec);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (item == "per") m.per = true;
    else if (item == "emb" || item == "sim_emb") m.emb = true;
    else if (item == "ret" || item == "sim_ret") m.ret = true;
    else if (item == "mrr") m.mrr = true;
    else throw UsageError("unknown metric '" + item + "' (expected per, emb, ret, mrr or all)");
  }
  return m;
}

namespace {

void add_generation_metrics(EvalReport& report, nlohmann::json& inst, std::optional<Bucket> bucket,
                            const Query& generated, const Query& target, const Query& session_generated,
                            std::span<const Query> session_tail, const EvalResources& res,
                            const EvalOptions& opt) {
  auto put = [&](const std::string& name, std::optional<double> v) {
    report.add(name, bucket, v);
    inst[name] = v ? nlohmann::json(*v) : nlohmann::json(nullptr);
  };
  if (opt.metrics.per) put("per", per(generated, target));
  if (opt.metrics.emb) {
    if (!res.embeddings) throw UsageError("sim_emb requires an embedding table");
    put("sim_emb", sim_emb(generated, target, *res.embeddings));
  }
  if (opt.metrics.ret) {
    if (!res.index) throw UsageError("retrieval metrics require a document corpus");
    auto s = sim_ret_suite(*res.index, generated, target, session_generated, session_tail, opt.retrieval);
    put("sim_ret", s.plain);
    put("sim_ret_plus", s.expanded);
    if (!session_tail.empty()) put("sim_ret_plus_plus", s.session);
  }
}

}  // namespace

EvalReport evaluate_pairs(std::span<const Query> generated, std::span<const Query> targets,
                          const EvalResources& resources, const EvalOptions& options) {
  if (generated.size() != targets.size())
    throw FormatError("generated and target files differ in line count");
  EvalReport report;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    nlohmann::json inst{{"generated", corpus::join(generated[i])}, {"target", corpus::join(targets[i])}};
    add_generation_metrics(report, inst, std::nullopt, generated[i], targets[i], {}, {}, resources, options);
    if (options.keep_instances) report.add_instance(std::move(inst));
  }
  return report;
}

EvalReport evaluate_model(const Model& model, const corpus::Vocabulary& vocab,
                          std::span<const corpus::Session> sessions, const EvalResources& resources,
                          const EvalOptions& options) {
  EvalReport report;
  decoder::DecodeConfig top1 = options.decode;
  top1.suggestions = 1;
  auto generate = [&](std::span<const Query> context) -> Query {
    auto ctx = corpus::linearize(corpus::truncate_context(context, options.max_context_tokens), vocab);
    auto sugg = decoder::suggest_k(model, vocab, ctx, top1);
    return sugg.empty() ? Query{} : sugg.front().tokens;
  };

  for (const auto& session : sessions) {
    const std::size_t l = session.queries.size();
    if (l < 2) continue;
    const Bucket bucket = bucket_for(l);
    std::span<const Query> context(session.queries.data(), l - 1);
    const Query& target = session.queries.back();
    const Query generated = generate(context);

    Query half_generated;
    std::span<const Query> tail;
    if (options.metrics.ret && l > 2) {
      const std::size_t half = l / 2;
      half_generated = generate(std::span<const Query>(session.queries.data(), half));
      tail = std::span<const Query>(session.queries.data() + half, l - half);
    }

    nlohmann::json context_json = nlohmann::json::array();
    for (const auto& q : context) context_json.push_back(corpus::join(q));
    nlohmann::json inst{{"context", context_json},
                        {"target", corpus::join(target)},
                        {"generated", corpus::join(generated)},
                        {"bucket", std::string(bucket_name(bucket))}};
    add_generation_metrics(report, inst, bucket, generated, target, half_generated, tail, resources, options);

    if (options.metrics.mrr) {
      if (!resources.cooccurrence) throw UsageError("mrr requires training sessions for candidate generation");
      auto cands = mps_candidates(*resources.cooccurrence, context.back(), options.mps_k);
      const std::string relevant = corpus::join(target);
      auto ctx = corpus::linearize(corpus::truncate_context(context, options.max_context_tokens), vocab);
      auto enc = decoder::encode_context(model, ctx);
      std::vector<std::pair<std::string, double>> scored;
      for (const auto& c : cands)
        scored.emplace_back(c, decoder::score_query(model, vocab, enc, corpus::split_tokens(c)).log_prob);
      std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
      });
      std::vector<std::string> ranked;
      for (auto& [c, s] : scored) ranked.push_back(c);
      const double rr = reciprocal_rank(ranked, relevant);
      const double rr_mps = reciprocal_rank(cands, relevant);
      report.add("mrr", bucket, rr);
      report.add("mrr_mps", bucket, rr_mps);
      inst["mrr"] = rr;
      inst["mrr_mps"] = rr_mps;
    }
    if (options.keep_instances) report.add_instance(std::move(inst));
  }
  return report;
}

}  // namespace acg::eval
