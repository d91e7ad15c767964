#include "acg/cli.hpp"

#include "acg/error.hpp"
#include "acg/evalkit.hpp"
#include "acg/trainer.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

namespace acg::cli {

namespace fs = std::filesystem;
using corpus::Query;
using corpus::Session;
using corpus::Vocabulary;
using nlohmann::json;

namespace {

std::ifstream open_in(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw FormatError("cannot open '" + path + "'");
  return f;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream f(path);
  if (!f) throw FormatError("cannot write '" + path + "'");
  return f;
}

std::vector<Session> load_sessions(const std::string& path, std::istream& in) {
  if (path == "-") return corpus::read_sessions(in);
  auto f = open_in(path);
  return corpus::read_sessions(f);
}

void attach_users(std::vector<Session>& sessions, const std::string& path) {
  if (path.empty()) return;
  auto f = open_in(path);
  corpus::read_session_users(f, sessions);
}

Vocabulary load_vocab(const std::string& path) {
  auto f = open_in(path);
  return Vocabulary::load(f);
}

Model load_model(const std::string& path, const Vocabulary& vocab) {
  if (!fs::exists(path)) throw FormatError("cannot open '" + path + "'");
  Model m = Model::load(path);
  if (m.config.vocab_size != vocab.size())
    throw CheckpointError("checkpoint vocabulary size " + std::to_string(m.config.vocab_size) +
                          " does not match vocabulary file (" + std::to_string(vocab.size()) + ")");
  return m;
}

std::vector<Query> load_query_lines(const std::string& path) {
  auto f = open_in(path);
  std::vector<Query> out;
  std::string line;
  while (std::getline(f, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    out.push_back(corpus::split_tokens(line));
  }
  return out;
}

// Writes to `path`, or to `out` when path is "-".
template <class Fn>
void emit(const std::string& path, std::ostream& out, Fn&& fn) {
  if (path == "-") {
    fn(out);
  } else {
    auto f = open_out(path);
    fn(f);
  }
}

corpus::LinearizedContext context_of(std::span<const Query> queries, const Vocabulary& vocab,
                                     std::size_t max_tokens) {
  if (queries.empty()) throw FormatError("empty context");
  return corpus::linearize(corpus::truncate_context(queries, max_tokens), vocab);
}

json vec_json(const num::Vec& v) { return json(std::vector<double>(v.data(), v.data() + v.size())); }

std::string format_suggestions(const std::vector<decoder::Suggestion>& s) {
  std::ostringstream o;
  o << std::setprecision(6);
  for (std::size_t i = 0; i < s.size(); ++i)
    o << i + 1 << ". " << corpus::join(s[i].tokens) << "  (" << s[i].log_prob << ")\n";
  return o.str();
}

// ---- commands ----

struct PreprocessArgs {
  std::string log, out_dir;
  int vocab_size = 90000;
  double valid_fraction = 0.1, test_fraction = 0.1;
  std::uint64_t seed = 1;
};

void cmd_preprocess(const PreprocessArgs& a, std::istream& in, std::ostream& out) {
  std::vector<corpus::RawLogRecord> records;
  if (a.log == "-") {
    records = corpus::read_log(in);
  } else {
    auto f = open_in(a.log);
    records = corpus::read_log(f);
  }
  auto sessions = corpus::sessions_from_log(records);
  if (a.valid_fraction < 0 || a.test_fraction < 0 || a.valid_fraction + a.test_fraction >= 1.0)
    throw UsageError("split fractions must be non-negative and sum below 1");

  Rng rng(a.seed);
  std::vector<std::size_t> order(sessions.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  const auto n = sessions.size();
  const auto n_test = static_cast<std::size_t>(a.test_fraction * static_cast<double>(n));
  const auto n_valid = static_cast<std::size_t>(a.valid_fraction * static_cast<double>(n));
  std::vector<Session> test, valid, train;
  for (std::size_t k = 0; k < n; ++k) {
    auto& dst = k < n_test ? test : k < n_test + n_valid ? valid : train;
    dst.push_back(sessions[order[k]]);
  }

  fs::create_directories(a.out_dir);
  auto write = [&](const std::string& name, const std::vector<Session>& s) {
    auto f = open_out((fs::path(a.out_dir) / (name + ".sessions")).string());
    corpus::write_sessions(f, s);
    auto u = open_out((fs::path(a.out_dir) / (name + ".users")).string());
    corpus::write_session_users(u, s);
  };
  write("train", train);
  write("valid", valid);
  write("test", test);
  auto vocab = corpus::build_vocabulary(train, a.vocab_size);
  auto vf = open_out((fs::path(a.out_dir) / "vocab.txt").string());
  vocab.save(vf);

  out << "# seed " << a.seed << '\n'
      << "records " << records.size() << '\n'
      << "sessions " << n << " (train " << train.size() << ", valid " << valid.size() << ", test "
      << test.size() << ")\n"
      << "vocab " << vocab.size() << '\n';
}

struct TrainArgs {
  std::string config, train, valid, vocab, out_dir;
  std::vector<std::string> overrides;
};

void cmd_train(const TrainArgs& a, std::istream& in, std::ostream& out) {
  trainer::TrainConfig cfg;
  if (!a.config.empty()) {
    auto f = open_in(a.config);
    cfg = trainer::TrainConfig::parse(f);
  }
  for (const auto& kv : a.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
    try {
      cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    } catch (const FormatError& e) {
      throw UsageError(e.what());
    }
  }
  cfg.checkpoint_dir = a.out_dir;
  auto vocab = load_vocab(a.vocab);
  auto to_examples = [&](const std::vector<Session>& sessions) {
    std::vector<corpus::TrainingExample> ex;
    for (const auto& s : sessions) {
      auto e = corpus::make_examples(s, vocab, cfg.max_context_tokens);
      ex.insert(ex.end(), std::make_move_iterator(e.begin()), std::make_move_iterator(e.end()));
    }
    return ex;
  };
  auto train_set = to_examples(load_sessions(a.train, in));
  std::vector<corpus::TrainingExample> valid_set;
  if (!a.valid.empty()) valid_set = to_examples(load_sessions(a.valid, in));
  if (train_set.empty()) throw FormatError("no training pairs (sessions need at least two queries)");

  out << "# seed " << cfg.seed << '\n' << "examples " << train_set.size() << " train, " << valid_set.size()
      << " valid\n";
  auto result = trainer::train(train_set, valid_set, vocab, cfg);
  auto csv = open_out((fs::path(a.out_dir) / "loss.csv").string());
  trainer::write_loss_csv(csv, result.curve);
  out << "steps " << result.steps << '\n';
  if (result.best_val_nll >= 0.0) out << "best_val_nll " << std::setprecision(8) << result.best_val_nll << '\n';
  out << "checkpoint " << (fs::path(a.out_dir) / "final.ckpt").string() << '\n';
}

struct DecodeArgs {
  std::string model, vocab, contexts = "-";
  int k = 1, beam = 4, max_length = 10;
  std::size_t max_context_tokens = 50;
};

decoder::DecodeConfig decode_config(const DecodeArgs& a) {
  if (a.k < 1 || a.beam < 1 || a.max_length < 1) throw UsageError("--k, --beam and --max-length must be positive");
  decoder::DecodeConfig c;
  c.beam_size = a.beam;
  c.max_length = a.max_length;
  c.suggestions = a.k;
  return c;
}

void cmd_suggest(const DecodeArgs& a, bool trace, std::istream& in, std::ostream& out) {
  auto vocab = load_vocab(a.vocab);
  auto model = load_model(a.model, vocab);
  auto cfg = decode_config(a);
  for (const auto& s : load_sessions(a.contexts, in)) {
    auto ctx = context_of(s.queries, vocab, a.max_context_tokens);
    auto sugg = decoder::suggest_k(model, vocab, ctx, cfg);
    json line;
    line["context"] = json::array();
    for (const auto& q : s.queries) line["context"].push_back(corpus::join(q));
    line["suggestions"] = json::array();
    std::vector<std::string> emitted;
    for (const auto& g : sugg) {
      line["suggestions"].push_back({{"tokens", g.tokens}, {"log_prob", g.log_prob}});
      emitted.insert(emitted.end(), g.tokens.begin(), g.tokens.end());
      emitted.emplace_back(Vocabulary::kEndOfQueryToken);
    }
    if (trace) {
      json steps = json::array();
      for (const auto& st : decoder::attention_trace(model, vocab, ctx, emitted))
        steps.push_back({{"token", st.token},
                         {"p_copy", st.p_copy},
                         {"word", vec_json(st.attention.word)},
                         {"query", vec_json(st.attention.query)},
                         {"combined", vec_json(st.attention.combined)}});
      line["attention_trace"] = {{"source", ctx.surface_tokens}, {"steps", steps}};
    }
    out << line.dump() << '\n';
  }
}

void cmd_score(const DecodeArgs& a, const std::string& candidates_path, std::istream& in, std::ostream& out) {
  auto vocab = load_vocab(a.vocab);
  auto model = load_model(a.model, vocab);
  auto contexts = load_sessions(a.contexts, in);
  std::vector<std::optional<decoder::EncodedContext>> encoded(contexts.size());
  auto f = open_in(candidates_path);
  std::string line;
  std::size_t line_no = 0;
  out << std::setprecision(17);
  while (std::getline(f, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    const std::string where = "candidates line " + std::to_string(line_no);
    if (tab == std::string::npos) throw FormatError(where + ": expected context_id<TAB>candidate");
    std::size_t id = 0;
    try {
      std::size_t pos;
      id = std::stoul(line.substr(0, tab), &pos);
      if (pos != tab) throw std::invalid_argument("id");
    } catch (const std::logic_error&) {
      throw FormatError(where + ": bad context id");
    }
    if (id >= contexts.size()) throw FormatError(where + ": context id out of range");
    Query cand = corpus::normalize_query(line.substr(tab + 1));
    if (cand.empty()) throw FormatError(where + ": empty candidate");
    if (!encoded[id])
      encoded[id] = decoder::encode_context(model, context_of(contexts[id].queries, vocab, a.max_context_tokens));
    auto s = decoder::score_query(model, vocab, *encoded[id], cand);
    out << id << '\t' << corpus::join(cand) << '\t' << s.log_prob << '\n';
  }
}

struct EvaluateArgs {
  DecodeArgs decode;
  std::string sessions, users, generated, targets, embeddings, docs, cooccurrence, out = "-";
  std::string metric = "all", noise = "none", noise_source, buckets = "all";
  std::uint64_t seed = 1;
  double mu = 2500.0, rbo_p = 0.9, lambda = 0.5;
  std::size_t depth = 100, fb_docs = 10, fb_terms = 10, mps_k = 20;
  bool rbo_extrapolate = false, no_instances = false;
};

std::vector<Session> filter_buckets(std::vector<Session> sessions, const std::string& spec) {
  if (spec == "all") return sessions;
  std::set<std::string> wanted;
  std::istringstream in(spec);
  for (std::string b; std::getline(in, b, ',');) {
    if (b != "short" && b != "medium" && b != "long") throw UsageError("unknown bucket '" + b + "'");
    wanted.insert(b);
  }
  std::erase_if(sessions, [&](const Session& s) {
    return s.queries.size() < 2 || !wanted.count(std::string(eval::bucket_name(eval::bucket_for(s.queries.size()))));
  });
  return sessions;
}

void cmd_evaluate(const EvaluateArgs& a, std::istream& in, std::ostream& out) {
  eval::EvalOptions opt;
  opt.metrics = eval::MetricSelection::parse(a.metric);
  opt.keep_instances = !a.no_instances;
  opt.max_context_tokens = a.decode.max_context_tokens;
  opt.mps_k = a.mps_k;
  opt.decode = decode_config(a.decode);
  opt.retrieval.mu = a.mu;
  opt.retrieval.depth = a.depth;
  opt.retrieval.rbo_p = a.rbo_p;
  opt.retrieval.rbo_extrapolate = a.rbo_extrapolate;
  opt.retrieval.rm3 = {a.fb_docs, a.fb_terms, a.lambda, a.mu};

  std::optional<eval::EmbeddingTable> embeddings;
  std::optional<eval::Index> index;
  std::optional<eval::CooccurrenceTable> cooc;
  if (opt.metrics.emb && !a.embeddings.empty()) {
    auto f = open_in(a.embeddings);
    embeddings = eval::EmbeddingTable::load(f);
  }
  if (opt.metrics.ret && !a.docs.empty()) {
    auto f = open_in(a.docs);
    index = eval::Index::load(f);
  }

  const bool pairs_mode = !a.generated.empty() || !a.targets.empty();
  eval::EvalReport report;
  json header{{"seed", a.seed}, {"noise", a.noise}, {"metric", a.metric}};
  if (pairs_mode) {
    if (a.generated.empty() || a.targets.empty()) throw UsageError("--generated and --targets go together");
    if (!a.sessions.empty() || a.noise != "none") throw UsageError("--sessions/--noise do not apply to pair files");
    opt.metrics.mrr = false;
    auto gen = load_query_lines(a.generated);
    auto tgt = load_query_lines(a.targets);
    eval::EvalResources res{embeddings ? &*embeddings : nullptr, index ? &*index : nullptr, nullptr};
    report = eval::evaluate_pairs(gen, tgt, res, opt);
  } else {
    if (a.sessions.empty() || a.decode.model.empty() || a.decode.vocab.empty())
      throw UsageError("evaluate needs --sessions, --model and --vocab (or --generated/--targets)");
    auto vocab = load_vocab(a.decode.vocab);
    auto model = load_model(a.decode.model, vocab);
    auto sessions = load_sessions(a.sessions, in);
    attach_users(sessions, a.users);
    if (a.noise != "none") {
      const auto mode = corpus::parse_noise_mode(a.noise);
      std::vector<Session> source = sessions;
      if (!a.noise_source.empty()) source = load_sessions(a.noise_source, in);
      auto resources = corpus::build_noise_resources(source);
      sessions = corpus::inject_noise(sessions, mode, a.seed, resources);
    }
    sessions = filter_buckets(std::move(sessions), a.buckets);
    if (opt.metrics.mrr && !a.cooccurrence.empty()) {
      auto train_sessions = load_sessions(a.cooccurrence, in);
      cooc = eval::CooccurrenceTable::build(train_sessions);
    }
    eval::EvalResources res{embeddings ? &*embeddings : nullptr, index ? &*index : nullptr,
                            cooc ? &*cooc : nullptr};
    report = eval::evaluate_model(model, vocab, sessions, res, opt);
  }
  json j = report.to_json();
  j["header"] = header;
  emit(a.out, out, [&](std::ostream& o) { o << j.dump(2) << '\n'; });
}

struct PerturbArgs {
  std::string sessions, users, mode, out = "-", out_users, resource_sessions;
  std::uint64_t seed = 1;
};

void cmd_perturb(const PerturbArgs& a, std::istream& in, std::ostream& out, std::ostream& err) {
  const auto mode = corpus::parse_noise_mode(a.mode);
  auto sessions = load_sessions(a.sessions, in);
  attach_users(sessions, a.users);
  std::vector<Session> source = sessions;
  if (!a.resource_sessions.empty()) source = load_sessions(a.resource_sessions, in);
  auto resources = corpus::build_noise_resources(source);
  auto noisy = corpus::inject_noise(sessions, mode, a.seed, resources);
  emit(a.out, out, [&](std::ostream& o) { corpus::write_sessions(o, noisy); });
  if (!a.out_users.empty()) {
    auto f = open_out(a.out_users);
    corpus::write_session_users(f, noisy);
  }
  err << "# seed " << a.seed << " mode " << a.mode << " sessions " << noisy.size() << '\n';
}

void cmd_repl(const DecodeArgs& a, std::istream& in, std::ostream& out) {
  auto vocab = load_vocab(a.vocab);
  auto model = load_model(a.model, vocab);
  Repl repl(model, vocab, decode_config(a), a.max_context_tokens);
  out << "Type a query per line; :new starts a new session, :quit exits.\n";
  std::string line;
  while (!repl.done() && std::getline(in, line)) {
    const auto now = std::chrono::duration_cast<std::chrono::seconds>(
                         std::chrono::system_clock::now().time_since_epoch())
                         .count();
    out << repl.feed(line, now) << std::flush;
  }
}

int exit_code(ExitCode c) { return static_cast<int>(c); }

}  // namespace

Repl::Repl(const Model& model, const Vocabulary& vocab, decoder::DecodeConfig decode,
           std::size_t max_context_tokens)
    : model_(model), vocab_(vocab), decode_(decode), max_context_tokens_(max_context_tokens) {}

std::string Repl::feed(const std::string& raw, std::int64_t now) {
  std::string line = raw;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line == ":quit" || line == ":q") {
    done_ = true;
    return "";
  }
  if (line == ":new") {
    session_.clear();
    last_.reset();
    return "(new session)\n";
  }
  std::string prefix;
  if (last_ && now - *last_ >= corpus::kSessionGapSeconds && !session_.empty()) {
    session_.clear();
    prefix = "(idle for 30 minutes; new session)\n";
  }
  Query q = corpus::normalize_query(line);
  if (q.empty()) return prefix;
  last_ = now;
  session_.push_back(std::move(q));
  auto ctx = context_of(session_, vocab_, max_context_tokens_);
  return prefix + format_suggestions(decoder::suggest_k(model_, vocab_, ctx, decode_));
}

int run(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err) {
  CLI::App app{"Query suggestion with attention, copying and generation", "acg"};
  app.require_subcommand(1);

  auto add_decode = [](CLI::App* c, DecodeArgs& d, bool contexts) {
    c->add_option("--model", d.model, "Checkpoint file")->required();
    c->add_option("--vocab", d.vocab, "Vocabulary file")->required();
    if (contexts) c->add_option("--contexts", d.contexts, "Session-format contexts ('-' for stdin)");
    c->add_option("--k", d.k, "Suggestions per context");
    c->add_option("--beam", d.beam, "Beam size");
    c->add_option("--max-length", d.max_length, "Maximum tokens per suggestion");
    c->add_option("--max-context-tokens", d.max_context_tokens, "Context truncation (0 disables)");
  };

  PreprocessArgs pre;
  auto* c_pre = app.add_subcommand("preprocess", "Segment a query log into sessions and build a vocabulary");
  c_pre->add_option("--log", pre.log, "user<TAB>query<TAB>timestamp file ('-' for stdin)")->required();
  c_pre->add_option("--out-dir", pre.out_dir, "Output directory")->required();
  c_pre->add_option("--vocab-size", pre.vocab_size, "Vocabulary entries including reserved tokens");
  c_pre->add_option("--valid-fraction", pre.valid_fraction);
  c_pre->add_option("--test-fraction", pre.test_fraction);
  c_pre->add_option("--seed", pre.seed);

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "Train a model with staged updates");
  c_train->add_option("--config", tr.config, "key = value config file");
  c_train->add_option("--set", tr.overrides, "Config override key=value (repeatable)");
  c_train->add_option("--train", tr.train, "Training sessions")->required();
  c_train->add_option("--valid", tr.valid, "Validation sessions");
  c_train->add_option("--vocab", tr.vocab, "Vocabulary file")->required();
  c_train->add_option("--out", tr.out_dir, "Output directory for checkpoints and loss.csv")->required();

  DecodeArgs sug;
  bool trace = false;
  auto* c_sug = app.add_subcommand("suggest", "Suggest next queries as JSON lines");
  add_decode(c_sug, sug, true);
  c_sug->add_flag("--attention-trace", trace, "Include per-step attention and switch values");

  DecodeArgs sc;
  std::string candidates;
  auto* c_score = app.add_subcommand("score", "Score candidate queries as TSV");
  add_decode(c_score, sc, true);
  c_score->add_option("--candidates", candidates, "context_id<TAB>candidate lines")->required();

  EvaluateArgs ev;
  auto* c_eval = app.add_subcommand("evaluate", "Compute evaluation metrics as a JSON report");
  c_eval->add_option("--model", ev.decode.model);
  c_eval->add_option("--vocab", ev.decode.vocab);
  c_eval->add_option("--sessions", ev.sessions, "Test sessions");
  c_eval->add_option("--users", ev.users, "User ids parallel to --sessions");
  c_eval->add_option("--generated", ev.generated, "Generated queries, one per line");
  c_eval->add_option("--targets", ev.targets, "Target queries, one per line");
  c_eval->add_option("--metric", ev.metric, "all or a comma list of per,emb,ret,mrr");
  c_eval->add_option("--embeddings", ev.embeddings, "Word vectors (count dim header)");
  c_eval->add_option("--docs", ev.docs, "doc_id<TAB>text corpus for retrieval metrics");
  c_eval->add_option("--cooccurrence", ev.cooccurrence, "Sessions used for MPS candidates");
  c_eval->add_option("--noise", ev.noise, "none, term, query or session");
  c_eval->add_option("--noise-source", ev.noise_source, "Sessions used to draw noise terms and queries");
  c_eval->add_option("--seed", ev.seed);
  c_eval->add_option("--bucket", ev.buckets, "all or a comma list of short,medium,long");
  c_eval->add_option("--beam", ev.decode.beam);
  c_eval->add_option("--max-length", ev.decode.max_length);
  c_eval->add_option("--max-context-tokens", ev.decode.max_context_tokens);
  c_eval->add_option("--mu", ev.mu);
  c_eval->add_option("--depth", ev.depth);
  c_eval->add_option("--rbo-p", ev.rbo_p);
  c_eval->add_flag("--rbo-extrapolate", ev.rbo_extrapolate);
  c_eval->add_option("--fb-docs", ev.fb_docs);
  c_eval->add_option("--fb-terms", ev.fb_terms);
  c_eval->add_option("--lambda", ev.lambda);
  c_eval->add_option("--mps-k", ev.mps_k);
  c_eval->add_flag("--no-instances", ev.no_instances);
  c_eval->add_option("--out", ev.out, "Report path ('-' for stdout)");

  PerturbArgs pt;
  auto* c_pert = app.add_subcommand("perturb", "Inject term, query or session noise");
  c_pert->add_option("--sessions", pt.sessions)->required();
  c_pert->add_option("--users", pt.users);
  c_pert->add_option("--mode", pt.mode, "term, query or session")->required();
  c_pert->add_option("--seed", pt.seed);
  c_pert->add_option("--resource-sessions", pt.resource_sessions, "Sessions used to draw noise terms and queries");
  c_pert->add_option("--out", pt.out);
  c_pert->add_option("--out-users", pt.out_users);

  DecodeArgs rp;
  auto* c_repl = app.add_subcommand("repl", "Interactive suggestions for a running session");
  add_decode(c_repl, rp, false);
  rp.k = 3;

  std::vector<const char*> argv = {"acg"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    if (!app.get_subcommands().empty()) err << app.get_subcommands().front()->help();
    else err << app.help();
    return exit_code(ExitCode::kUsage);
  }

  try {
    if (c_pre->parsed()) cmd_preprocess(pre, in, out);
    else if (c_train->parsed()) cmd_train(tr, in, out);
    else if (c_sug->parsed()) cmd_suggest(sug, trace, in, out);
    else if (c_score->parsed()) cmd_score(sc, candidates, in, out);
    else if (c_eval->parsed()) cmd_evaluate(ev, in, out);
    else if (c_pert->parsed()) cmd_perturb(pt, in, out, err);
    else if (c_repl->parsed()) cmd_repl(rp, in, out);
  } catch (const AcgError& e) {
    err << "error: " << e.what() << '\n';
    return exit_code(e.code());
  } catch (const DimensionError& e) {
    err << "error: " << e.what() << '\n';
    return exit_code(ExitCode::kInputFormat);
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
    return exit_code(ExitCode::kUsage);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return exit_code(ExitCode::kOk);
}

}  // namespace acg::cli
