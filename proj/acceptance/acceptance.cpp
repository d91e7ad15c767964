// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
// failure. Run `acceptance [N ...]` to select criteria.

#include "acg/attention.hpp"
#include "acg/evalkit.hpp"
#include "acg/trainer.hpp"
#include "oracles.hpp"
#include "support.hpp"
#include "synthetic.hpp"

#include <chrono>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

namespace acg {
namespace {

namespace fs = std::filesystem;
using corpus::Query;
using corpus::Session;
using corpus::Vocabulary;
using num::Gradients;
using num::ParameterStore;
using num::Tag;
using num::Vec;

struct Outcome {
  bool pass = true;
  std::string detail;
};

class Timer {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(double x, int precision = 3) {
  std::ostringstream o;
  o << std::setprecision(precision) << x;
  return o.str();
}

bool bitwise(const Vec& a, const Vec& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), sizeof(double) * a.size()) == 0;
}

// ---------------------------------------------------------------- 1

Outcome gradient_correctness() {
  Timer timer;
  double worst = 0.0;
  std::string worst_where;
  std::size_t coords = 0;
  auto record = [&](const std::string& where, const num::GradCheckResult& r) {
    coords += r.coordinates_checked;
    if (r.max_rel_error >= worst) {
      worst = r.max_rel_error;
      worst_where = where + ":" + r.worst_param;
    }
  };
  std::mt19937_64 rng(7);

  {
    ParameterStore s;
    auto g = num::GruLayer::create(s, "gru", Tag::kEncoder, 3, 4, rng);
    auto x = s.add("x", Tag::kEncoder, 3, 1, num::Init::kXavier, rng);
    auto h = s.add("h", Tag::kEncoder, 4, 1, num::Init::kXavier, rng);
    auto u = s.add("u", Tag::kEncoder, 4, 1, num::Init::kXavier, rng);
    s.value(g.b).setConstant(0.2);
    record("gru", num::gradient_check(
                      [&](const ParameterStore& st, Gradients* gr) {
                        num::GruLayer::Cache c;
                        Vec out = g.forward(st, st.value(x).col(0), st.value(h).col(0), &c);
                        if (gr) {
                          (*gr)[u].col(0) += out;
                          Vec dx = Vec::Zero(3), dh = Vec::Zero(4);
                          g.backward(st, c, st.value(u).col(0), *gr, &dx, dh);
                          (*gr)[x].col(0) += dx;
                          (*gr)[h].col(0) += dh;
                        }
                        return st.value(u).col(0).dot(out);
                      },
                      s));
  }
  {
    ParameterStore s;
    auto e = num::EtaLayer::create(s, "eta", Tag::kAttention, {2, 3}, 4, rng);
    auto x0 = s.add("x0", Tag::kAttention, 2, 1, num::Init::kXavier, rng);
    auto x1 = s.add("x1", Tag::kAttention, 3, 1, num::Init::kXavier, rng);
    s.value(e.b).setConstant(0.1);
    record("eta", num::gradient_check(
                      [&](const ParameterStore& st, Gradients* gr) {
                        Vec pre = e.project(st, 0, st.value(x0).col(0)) + e.project(st, 1, st.value(x1).col(0));
                        Vec act;
                        const double l = e.finish(st, pre, &act);
                        if (gr) {
                          Vec dpre = e.backward_finish(st, 2.0 * l, act, *gr);
                          Vec d0 = Vec::Zero(2), d1 = Vec::Zero(3);
                          e.backward_project(st, 0, st.value(x0).col(0), dpre, *gr, &d0);
                          e.backward_project(st, 1, st.value(x1).col(0), dpre, *gr, &d1);
                          (*gr)[x0].col(0) += d0;
                          (*gr)[x1].col(0) += d1;
                        }
                        return l * l;
                      },
                      s));
  }
  {
    ParameterStore s;
    auto a = num::AffineLayer::create(s, "affine", Tag::kDecoder, 3, 5, rng);
    auto x = s.add("x", Tag::kDecoder, 3, 1, num::Init::kXavier, rng);
    const int target = 2;
    record("affine+softmax", num::gradient_check(
                                 [&](const ParameterStore& st, Gradients* gr) {
                                   Vec logits = a.forward(st, st.value(x).col(0));
                                   Vec p = num::softmax(logits);
                                   if (gr) {
                                     Vec dp = Vec::Zero(5);
                                     dp[target] = -1.0 / p[target];
                                     Vec dx = Vec::Zero(3);
                                     a.backward(st, st.value(x).col(0), num::softmax_backward(p, dp), *gr, &dx);
                                     (*gr)[x].col(0) += dx;
                                   }
                                   return -std::log(p[target]);
                                 },
                                 s));
  }
  {
    ParameterStore s;
    auto lw = s.add("word_logits", Tag::kAttention, 5, 1, num::Init::kXavier, rng);
    auto lq = s.add("query_logits", Tag::kAttention, 2, 1, num::Init::kXavier, rng);
    auto hs = s.add("states", Tag::kAttention, 5, 3, num::Init::kXavier, rng);
    auto u = s.add("u", Tag::kAttention, 3, 1, num::Init::kXavier, rng);
    const std::vector<std::size_t> owner = {0, 0, 1, 1, 1};
    record("attention", num::gradient_check(
                            [&](const ParameterStore& st, Gradients* gr) {
                              Vec aw = num::softmax(st.value(lw).col(0)), aq = num::softmax(st.value(lq).col(0));
                              Vec a = attention::combine(aw, aq, owner);
                              std::vector<Vec> states;
                              for (int i = 0; i < 5; ++i) states.push_back(st.value(hs).row(i).transpose());
                              Vec c = attention::context_vector(a, states);
                              const Vec uu = st.value(u).col(0);
                              if (gr) {
                                (*gr)[u].col(0) += c;
                                Vec da(5);
                                for (int i = 0; i < 5; ++i) {
                                  da[i] = uu.dot(states[static_cast<std::size_t>(i)]);
                                  (*gr)[hs].row(i) += a[i] * uu.transpose();
                                }
                                auto cg = attention::combine_backward(aw, aq, owner, a, da);
                                (*gr)[lw].col(0) += num::softmax_backward(aw, cg.d_word);
                                (*gr)[lq].col(0) += num::softmax_backward(aq, cg.d_query);
                              }
                              return uu.dot(c);
                            },
                            s));
  }

  auto vocab = testing::toy_vocab(12);
  std::vector<Query> ctx = {{"w0", "zz", "w1"}, {"w1", "w2"}};
  auto ex = corpus::derive_targets(corpus::linearize(ctx, vocab), {"zz", "w1", "w3"}, vocab);
  for (int variant = 0; variant < 4; ++variant) {
    auto cfg = testing::toy_config(12, 4, 3 + static_cast<std::uint64_t>(variant));
    if (variant == 1) cfg.query_summary_mlp = true;
    if (variant == 2) cfg.use_query_attention = false;
    if (variant == 3) cfg.use_copy = false;
    Model model(cfg);
    testing::jitter(model, 0.3, 11 + static_cast<std::uint64_t>(variant));
    trainer::LossConfig lc;
    record("pipeline" + std::to_string(variant),
           num::gradient_check(
               [&](const ParameterStore& st, Gradients* gr) {
                 Model m = model;
                 m.store = st;
                 return testing::full_loss(m, ex, lc, gr);
               },
               model.store));
  }
  const double secs = timer.seconds();
  return {worst < 1e-4 && secs < 30.0, "max rel error " + fmt(worst) + " at " + worst_where + " over " +
                                           std::to_string(coords) + " coordinates, " + fmt(secs) + " s"};
}

// ---------------------------------------------------------------- 2

Outcome normalization() {
  Rng rng(2024);
  double worst = 0.0;
  std::string worst_what;
  bool p_ok = true;
  auto check = [&](const std::string& what, double sum) {
    if (std::abs(sum - 1.0) > worst) {
      worst = std::abs(sum - 1.0);
      worst_what = what;
    }
  };
  const std::vector<std::string> pool = {"w0", "w1", "w2", "w3", "w4", "w5", "zz", "yy", "xx"};
  for (int draw = 0; draw < 1000; ++draw) {
    const int V = 7 + static_cast<int>(rng.below(8));
    auto vocab = testing::toy_vocab(V);
    auto cfg = testing::toy_config(V, 1 + static_cast<int>(rng.below(6)), static_cast<std::uint64_t>(draw));
    cfg.embed_dim = 1 + static_cast<int>(rng.below(6));
    cfg.query_hidden = 1 + static_cast<int>(rng.below(6));
    cfg.scorer_hidden = 1 + static_cast<int>(rng.below(6));
    cfg.query_summary_mlp = rng.below(2) == 0;
    Model model(cfg);
    testing::jitter(model, 3.0 * rng.uniform(), static_cast<std::uint64_t>(draw) + 1000);
    std::vector<Query> qs(1 + rng.below(4));
    for (auto& q : qs) q = testing::random_query(rng, pool, 4);
    auto ctx = corpus::linearize(qs, vocab);
    auto enc = decoder::encode_context(model, ctx);
    auto state = decoder::initial_state(enc);
    int prev = Vocabulary::kStart;
    for (int t = 0; t < 3; ++t) {
      auto out = decoder::decoder_step(model, enc, state, prev);
      check("gen_dist", out.gen_dist.sum());
      check("copy_dist", out.copy_dist.sum());
      check("word attention", out.attention.word.sum());
      check("query attention", out.attention.query.sum());
      check("combined attention", out.attention.combined.sum());
      check("fused mixture", decoder::fuse(out, ctx, vocab).total());
      if (!(out.p_copy > 0.0 && out.p_copy < 1.0)) p_ok = false;
      state = out.state;
      prev = static_cast<int>(rng.below(static_cast<std::size_t>(V)));
    }
  }
  return {worst <= 1e-6 && p_ok, "3000 steps over 1000 draws, max |sum - 1| " + fmt(worst) + " (" + worst_what +
                                     "), p_copy in (0,1): " + (p_ok ? "yes" : "no")};
}

// ---------------------------------------------------------------- 3

Outcome beam_vs_brute_force() {
  Rng rng(33);
  const std::vector<std::string> pool = {"w0", "w1", "zz", "yy"};
  auto vocab = testing::toy_vocab(7);  // emits w0, w1, </q> plus source-only tokens
  int matches = 0;
  std::size_t max_alphabet = 0;
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    Model model(testing::toy_config(7, 1 + static_cast<int>(rng.below(4)), static_cast<std::uint64_t>(trial)));
    testing::jitter(model, 2.0, static_cast<std::uint64_t>(trial) + 500);
    std::vector<Query> qs(1 + rng.below(2));
    for (auto& q : qs) q = testing::random_query(rng, pool, 3);
    auto ctx = corpus::linearize(qs, vocab);
    auto enc = decoder::encode_context(model, ctx);
    const std::size_t alphabet =
        decoder::fuse(decoder::decoder_step(model, enc, decoder::initial_state(enc), Vocabulary::kStart), ctx, vocab)
            .tokens.size();
    max_alphabet = std::max(max_alphabet, alphabet);
    decoder::DecodeConfig cfg;
    cfg.max_length = 1 + static_cast<int>(rng.below(4));
    cfg.beam_size = static_cast<int>(std::pow(static_cast<double>(alphabet), cfg.max_length));
    auto brute = testing::brute_force_best(model, vocab, enc, cfg.max_length);
    auto hyps = decoder::beam_search(model, vocab, enc, cfg);
    if (hyps.empty()) continue;
    const double diff = std::abs(hyps[0].log_prob - brute.log_prob);
    worst = std::max(worst, diff);
    if (hyps[0].tokens == brute.tokens && diff <= 1e-9) ++matches;
  }
  return {matches == 100 && max_alphabet <= 5, std::to_string(matches) + "/100 exact argmax matches, max log-prob diff " +
                                                   fmt(worst) + ", alphabet <= " + std::to_string(max_alphabet)};
}

// ---------------------------------------------------------------- 4

Outcome staged_freeze() {
  auto vocab = testing::toy_vocab(20);
  Rng rng(4);
  std::vector<std::string> words;
  for (int i = 0; i < 15; ++i) words.push_back("w" + std::to_string(i));
  words.push_back("zz");
  std::vector<corpus::TrainingExample> examples;
  for (int i = 0; i < 16; ++i) {
    Session s;
    for (int q = 0; q < 3; ++q) s.queries.push_back(testing::random_query(rng, words, 4));
    auto ex = corpus::make_examples(s, vocab, 50);
    examples.push_back(ex.back());
  }
  std::vector<const corpus::TrainingExample*> batch;
  for (const auto& e : examples) batch.push_back(&e);

  Model model(testing::toy_config(20, 8, 4));
  trainer::TrainConfig cfg;
  cfg.adam.learning_rate = 0.01;
  trainer::StagedUpdater updater(model, cfg);
  const auto schedule = trainer::default_schedule();
  ParameterStore before = model.store;
  int frozen_checks = 0, frozen_ok = 0, trained_changed = 0, trained_checks = 0;
  updater.on_stage = [&](std::size_t stage, const Model& m) {
    for (auto tag : {Tag::kEncoder, Tag::kQueryEncoder, Tag::kAttention, Tag::kDecoder, Tag::kGenerator,
                     Tag::kCopier, Tag::kSwitch}) {
      const bool same = m.store.bitwise_equal(before, tag);
      if (schedule[stage].frozen.contains(tag)) {
        ++frozen_checks;
        frozen_ok += same;
      } else {
        ++trained_checks;
        trained_changed += !same;
      }
    }
    before = m.store;
  };
  Rng step_rng(5);
  for (int step = 0; step < 5; ++step) updater.update(model, batch, step_rng);
  return {frozen_ok == frozen_checks && frozen_checks == 30,
          std::to_string(frozen_ok) + "/" + std::to_string(frozen_checks) +
              " frozen component checks bitwise unchanged over 5 steps; " + std::to_string(trained_changed) + "/" +
              std::to_string(trained_checks) + " unfrozen components moved"};
}

// ---------------------------------------------------------------- 5

Outcome overfit() {
  Timer timer;
  auto sessions = testing::reformulation_sessions(200, 95, 1);
  auto vocab = corpus::build_vocabulary(sessions, 100);
  std::vector<corpus::TrainingExample> examples;
  for (const auto& s : sessions) {
    auto e = corpus::make_examples(s, vocab, 50);
    examples.insert(examples.end(), e.begin(), e.end());
  }
  trainer::TrainConfig cfg;
  cfg.model.embed_dim = 32;
  cfg.model.word_hidden = cfg.model.query_hidden = cfg.model.decoder_hidden = 32;
  cfg.batch_size = 16;
  cfg.max_steps = 2000;
  cfg.eval_every = 100;
  cfg.patience = 0;
  cfg.adam.learning_rate = 0.01;
  cfg.seed = 1;
  auto result = trainer::train(examples, examples, vocab, cfg);
  int first = -1;
  double last = -1.0;
  for (const auto& r : result.curve)
    if (r.val_nll >= 0.0) {
      last = r.val_nll;
      if (first < 0 && r.val_nll < 0.1) first = r.step;
    }
  const double secs = timer.seconds();
  return {first > 0 && secs < 300.0,
          "vocab " + std::to_string(vocab.size()) + ", " + std::to_string(examples.size()) +
              " pairs, per-token NLL < 0.1 first at step " + std::to_string(first) + ", final " + fmt(last) +
              ", " + fmt(secs) + " s"};
}

// ---------------------------------------------------------------- 6

constexpr int kCopyWords = 40;

Vocabulary copy_vocab() {
  std::vector<std::string> toks;
  for (int i = 0; i < kCopyWords; ++i) toks.push_back(testing::word(i));
  toks.push_back("find");
  return Vocabulary::from_tokens(toks);
}

trainer::TrainConfig small_config(int hidden, int steps, std::uint64_t seed) {
  trainer::TrainConfig cfg;
  cfg.model.embed_dim = hidden;
  cfg.model.word_hidden = cfg.model.query_hidden = cfg.model.decoder_hidden = hidden;
  cfg.batch_size = 16;
  cfg.max_steps = steps;
  cfg.eval_every = 0;
  cfg.patience = 0;
  cfg.adam.learning_rate = 0.01;
  cfg.seed = seed;
  return cfg;
}

std::vector<corpus::TrainingExample> last_pairs(std::span<const Session> sessions, const Vocabulary& vocab) {
  std::vector<corpus::TrainingExample> out;
  for (const auto& s : sessions) out.push_back(corpus::make_examples(s, vocab, 50).back());
  return out;
}

Outcome copy_mechanism() {
  auto vocab = copy_vocab();
  auto train_sessions = testing::copy_sessions(1000, kCopyWords, 1, 0);
  auto test_sessions = testing::copy_sessions(500, kCopyWords, 2, 1000000);
  auto train_set = last_pairs(train_sessions, vocab);
  auto result = trainer::train(train_set, {}, vocab, small_config(16, 600, 1));
  const Model& model = result.model;

  std::set<std::string> seen;
  for (const auto& s : train_sessions)
    for (const auto& q : s.queries) seen.insert(q.begin(), q.end());
  int exact = 0, unseen = 0;
  double p_copy = 0.0;
  std::size_t copy_steps = 0;
  decoder::DecodeConfig dc;
  dc.max_length = 5;
  for (const auto& s : test_sessions) {
    const std::string& rare = s.queries.back().back();
    unseen += !seen.count(rare) && !vocab.contains(rare);
    auto ex = corpus::make_examples(s, vocab, 50).back();
    auto sugg = decoder::suggest_k(model, vocab, ex.context, dc);
    exact += !sugg.empty() && sugg[0].tokens == s.queries.back();
    auto pass = decoder::teacher_force(model, ex.context, ex.decoder_inputs);
    for (std::size_t t = 0; t < ex.target_tokens.size(); ++t)
      if (ex.target_tokens[t] == rare) {
        p_copy += pass.outputs[t].p_copy;
        ++copy_steps;
      }
  }
  const double rate = exact / 500.0, mean_p = p_copy / static_cast<double>(copy_steps);
  return {rate >= 0.95 && mean_p > 0.9 && unseen == 500,
          "exact " + fmt(rate) + " on 500 held-out contexts (" + std::to_string(unseen) +
              " with never-seen tokens), mean p_copy on those tokens " + fmt(mean_p)};
}

// ---------------------------------------------------------------- 7

Outcome ablation() {
  auto vocab = copy_vocab();
  int wins = 0;
  std::ostringstream detail;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto train_sessions = testing::copy_sessions(700, kCopyWords, 100 + seed, 0);
    auto extra = testing::reformulation_sessions(300, kCopyWords, 200 + seed);
    train_sessions.insert(train_sessions.end(), extra.begin(), extra.end());
    auto test_sessions = testing::copy_sessions(150, kCopyWords, 300 + seed, 1000000);
    auto test_extra = testing::reformulation_sessions(50, kCopyWords, 400 + seed);
    test_sessions.insert(test_sessions.end(), test_extra.begin(), test_extra.end());

    std::vector<corpus::TrainingExample> train_set;
    for (const auto& s : train_sessions) {
      auto e = corpus::make_examples(s, vocab, 50);
      train_set.insert(train_set.end(), e.begin(), e.end());
    }
    eval::EmbeddingTable table(16);
    Rng erng(seed * 977);
    std::set<std::string> all;
    for (const auto* group : {&train_sessions, &test_sessions})
      for (const auto& s : *group)
        for (const auto& q : s.queries) all.insert(q.begin(), q.end());
    for (const auto& w : all) {
      Vec v(16);
      for (auto& x : v) x = 2.0 * erng.uniform() - 1.0;
      table.add(w, v);
    }
    eval::EvalOptions opt;
    opt.metrics = eval::MetricSelection::parse("per,emb");
    opt.decode.max_length = 5;
    opt.keep_instances = false;
    eval::EvalResources res{&table, nullptr, nullptr};

    double emb[2], one_minus_per[2];
    for (int variant = 0; variant < 2; ++variant) {
      auto cfg = small_config(16, 500, seed);
      cfg.model.use_copy = variant == 0;
      auto model = trainer::train(train_set, {}, vocab, cfg).model;
      auto report = eval::evaluate_model(model, vocab, test_sessions, res, opt);
      emb[variant] = report.overall("sim_emb").mean();
      one_minus_per[variant] = 1.0 - report.overall("per").mean();
    }
    const bool win = emb[0] > emb[1] && one_minus_per[0] > one_minus_per[1];
    wins += win;
    detail << (seed > 1 ? "; " : "") << "seed " << seed << " sim_emb " << fmt(emb[0]) << " vs " << fmt(emb[1])
           << ", 1-PER " << fmt(one_minus_per[0]) << " vs " << fmt(one_minus_per[1]);
  }
  return {wins >= 4, std::to_string(wins) + "/5 seeds favour the full model (" + detail.str() + ")"};
}

// ---------------------------------------------------------------- 8

Outcome metric_oracles() {
  Rng rng(88);
  const std::vector<std::string> words = {"a", "b", "c", "d", "e", "f"};
  int per_ok = 0;
  for (int i = 0; i < 1000; ++i) {
    Query g = rng.below(6) == 0 ? Query{} : testing::random_query(rng, words, 7);
    Query t = testing::random_query(rng, words, 7);
    per_ok += eval::per(g, t) == testing::per_oracle(g, t);
  }

  double rbo_err = 0.0;
  for (int i = 0; i < 500; ++i) {
    const std::size_t universe = 5 + rng.below(200);
    auto draw = [&] {
      std::vector<std::string> ids;
      for (std::size_t k = 0; k < universe; ++k) ids.push_back("d" + std::to_string(k));
      for (std::size_t k = ids.size(); k > 1; --k) std::swap(ids[k - 1], ids[rng.below(k)]);
      ids.resize(1 + rng.below(std::min<std::size_t>(universe, 100)));
      return ids;
    };
    auto a = draw(), b = draw();
    const std::size_t depth = 1 + rng.below(100);
    const double p = 0.05 + 0.9 * rng.uniform();
    rbo_err = std::max(rbo_err, std::abs(eval::rbo(a, b, p, depth) - testing::rbo_series(a, b, p, depth)));
  }

  // Constructed rankings with the relevant item at a known rank (or absent).
  int mrr_ok = 0;
  std::vector<std::vector<std::string>> rankings;
  std::vector<std::string> relevant;
  double expected_sum = 0.0;
  for (int i = 0; i < 50; ++i) {
    std::vector<std::string> r;
    for (int k = 0; k < 10; ++k) r.push_back("c" + std::to_string(k));
    const int rank = i % 11;  // 10 means absent
    relevant.push_back(rank < 10 ? r[static_cast<std::size_t>(rank)] : "missing");
    expected_sum += rank < 10 ? 1.0 / (rank + 1) : 0.0;
    mrr_ok += eval::reciprocal_rank(r, relevant.back()) == (rank < 10 ? 1.0 / (rank + 1) : 0.0);
    rankings.push_back(std::move(r));
  }
  const bool mrr_exact = mrr_ok == 50 && eval::mrr(rankings, relevant) == expected_sum / 50.0;

  eval::EmbeddingTable table(6);
  std::vector<std::string> vocab;
  for (int w = 0; w < 40; ++w) {
    Vec v(6);
    for (auto& x : v) x = std::round((2.0 * rng.uniform() - 1.0) * 4.0) / 4.0;
    vocab.push_back("t" + std::to_string(w));
    table.add(vocab.back(), v);
  }
  int invariant = 0;
  for (int i = 0; i < 1000; ++i) {
    Query q = testing::random_query(rng, vocab, 8);
    auto base = eval::extrema_embedding(q, table);
    for (std::size_t k = q.size(); k > 1; --k) std::swap(q[k - 1], q[rng.below(k)]);
    auto shuffled = eval::extrema_embedding(q, table);
    invariant += base && shuffled && bitwise(*base, *shuffled);
  }
  return {per_ok == 1000 && rbo_err <= 1e-12 && mrr_exact && invariant == 1000,
          "PER exact " + std::to_string(per_ok) + "/1000, RBO max err " + fmt(rbo_err) + " over 500 lists, MRR " +
              (mrr_exact ? "exact" : "mismatch") + ", extrema bitwise invariant " + std::to_string(invariant) +
              "/1000"};
}

// ---------------------------------------------------------------- 9

Outcome retrieval_sanity() {
  eval::Index idx;
  idx.add_document("d1", {"bob", "dylan", "songs"});
  idx.add_document("d2", {"dylan", "photo", "gallery"});
  const Query q = {"dylan", "photo"};
  auto ranked = eval::retrieve(idx, q, 1.0, 10);
  const double p_dylan = 2.0 / 6.0, p_photo = 1.0 / 6.0;
  const double d1 = std::log((1 + p_dylan) / 4.0) + std::log(p_photo / 4.0);
  const double d2 = std::log((1 + p_dylan) / 4.0) + std::log((1 + p_photo) / 4.0);
  const bool ranking_ok = ranked.size() == 2 && ranked[0].doc_id == "d2" && ranked[1].doc_id == "d1" &&
                          std::abs(ranked[0].score - d2) < 1e-12 && std::abs(ranked[1].score - d1) < 1e-12;

  eval::Rm3Config cfg;
  cfg.mu = 1.0;
  cfg.fb_docs = 2;
  cfg.fb_terms = 100;
  cfg.lambda = 1.0;
  const bool identity = eval::rm3_expand(idx, q, cfg) == eval::query_distribution(q);

  // Relevance model written out directly: P(D|Q) ∝ exp(score), P(w|D) = tf/|D|.
  cfg.lambda = 0.0;
  auto pure = eval::rm3_expand(idx, q, cfg);
  const double w2 = 1.0, w1 = std::exp(d1 - d2), z = w1 + w2;
  const std::map<std::string, double> expected = {{"bob", w1 / z / 3},   {"dylan", 1.0 / 3},
                                                  {"songs", w1 / z / 3}, {"photo", w2 / z / 3},
                                                  {"gallery", w2 / z / 3}};
  bool pure_ok = pure.size() == expected.size();
  for (const auto& [w, p] : expected) pure_ok = pure_ok && pure.count(w) && std::abs(pure.at(w) - p) < 1e-15;
  return {ranking_ok && identity && pure_ok, std::string("QL ranking [d2, d1] with hand scores: ") +
                                                 (ranking_ok ? "ok" : "mismatch") + "; lambda=1 identity: " +
                                                 (identity ? "ok" : "mismatch") + "; lambda=0 relevance model: " +
                                                 (pure_ok ? "ok" : "mismatch")};
}

// ---------------------------------------------------------------- 10

std::vector<Session> robustness_sessions(std::size_t count, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::string> words;
  std::vector<double> weights;
  for (int i = 0; i < 300; ++i) {
    words.push_back(testing::word(i));
    weights.push_back(1.0 / (1 + i));
  }
  words.push_back("the");
  weights.push_back(0.5);
  std::vector<Session> out;
  std::size_t user = 0;
  while (out.size() < count) {
    const std::size_t per_user = 1 + rng.below(4);
    for (std::size_t k = 0; k < per_user && out.size() < count; ++k) {
      Session s;
      s.user_id = "u" + std::to_string(user);
      const std::size_t len = 1 + rng.below(7);
      for (std::size_t q = 0; q < len; ++q) {
        Query query(1 + rng.below(3));
        for (auto& w : query) w = words[rng.weighted(weights)];
        s.queries.push_back(query);
      }
      out.push_back(std::move(s));
    }
    ++user;
  }
  return out;
}

bool is_one_insertion(const Query& longer, const Query& shorter) {
  if (longer.size() != shorter.size() + 1) return false;
  for (std::size_t skip = 0; skip < longer.size(); ++skip) {
    Query rest = longer;
    rest.erase(rest.begin() + static_cast<long>(skip));
    if (rest == shorter) return true;
  }
  return false;
}

std::string serialize(std::span<const Session> sessions) {
  std::ostringstream o;
  corpus::write_sessions(o, sessions);
  corpus::write_session_users(o, sessions);
  return o.str();
}

Outcome robustness() {
  Timer timer;
  auto sessions = robustness_sessions(10000, 10);
  auto resources = corpus::build_noise_resources(sessions);
  std::map<std::string, std::vector<std::size_t>> by_user;
  for (std::size_t i = 0; i < sessions.size(); ++i) by_user[sessions[i].user_id].push_back(i);

  std::ostringstream detail;
  bool all_ok = resources.terms.size() == 200 && resources.queries.size() == 100;
  for (auto mode : {corpus::NoiseMode::kTerm, corpus::NoiseMode::kQuery, corpus::NoiseMode::kSession}) {
    auto noisy = corpus::inject_noise(sessions, mode, 7, resources);
    auto again = corpus::inject_noise(sessions, mode, 7, resources);
    const bool identical = serialize(noisy) == serialize(again);
    std::size_t ok = 0, changed = 0;
    for (std::size_t i = 0; i < sessions.size(); ++i) {
      const auto& a = sessions[i].queries;
      const auto& b = noisy[i].queries;
      changed += a != b;
      bool good = noisy[i].user_id == sessions[i].user_id;
      switch (mode) {
        case corpus::NoiseMode::kTerm: {
          std::size_t diffs = 0, tok_a = 0, tok_b = 0;
          good = good && a.size() == b.size();
          for (std::size_t q = 0; good && q < a.size(); ++q) {
            tok_a += a[q].size();
            tok_b += b[q].size();
            if (a[q] != b[q]) {
              ++diffs;
              good = good && is_one_insertion(b[q], a[q]);
            }
          }
          good = good && diffs == 1 && tok_b == tok_a + 1;
          break;
        }
        case corpus::NoiseMode::kQuery: {
          good = good && b.size() == a.size() + 1;
          bool found = false;
          for (std::size_t pos = 0; good && !found && pos < b.size(); ++pos) {
            auto rest = b;
            rest.erase(rest.begin() + static_cast<long>(pos));
            found = rest == a &&
                    std::find(resources.queries.begin(), resources.queries.end(), b[pos]) != resources.queries.end();
          }
          good = good && found;
          break;
        }
        case corpus::NoiseMode::kSession: {
          const auto& mates = by_user[sessions[i].user_id];
          if (mates.size() == 1) {
            good = good && a == b;
          } else {
            bool found = false;
            for (std::size_t j : mates) {
              if (j == i) continue;
              auto expected = sessions[j].queries;
              expected.insert(expected.end(), a.begin(), a.end());
              found = found || expected == b;
            }
            good = good && found;
          }
          break;
        }
      }
      ok += good;
    }
    auto other_seed = corpus::inject_noise(sessions, mode, 8, resources);
    const bool seed_matters = serialize(other_seed) != serialize(noisy);
    all_ok = all_ok && ok == sessions.size() && identical && seed_matters;
    detail << (mode == corpus::NoiseMode::kTerm ? "" : "; ") << "mode "
           << (mode == corpus::NoiseMode::kTerm ? "term" : mode == corpus::NoiseMode::kQuery ? "query" : "session")
           << " invariants " << ok << "/" << sessions.size() << ", changed " << changed
           << (identical ? ", byte-identical" : ", NOT reproducible");
  }

  // End-to-end evaluation on perturbed data with every metric family.
  std::vector<Session> train_part(sessions.begin(), sessions.begin() + 2000);
  std::vector<Session> test_part(sessions.begin() + 2000, sessions.begin() + 2150);
  auto vocab = corpus::build_vocabulary(train_part, 200);
  std::vector<corpus::TrainingExample> train_set;
  for (const auto& s : train_part) {
    auto e = corpus::make_examples(s, vocab, 30);
    train_set.insert(train_set.end(), e.begin(), e.end());
  }
  auto model = trainer::train(train_set, {}, vocab, small_config(8, 60, 3)).model;
  eval::Index index;
  for (std::size_t i = 0; i < train_part.size(); ++i) {
    Query doc;
    for (const auto& q : train_part[i].queries) doc.insert(doc.end(), q.begin(), q.end());
    index.add_document("s" + std::to_string(i), doc);
  }
  eval::EmbeddingTable table(8);
  Rng erng(5);
  for (int i = 0; i < 300; ++i) {
    Vec v(8);
    for (auto& x : v) x = 2.0 * erng.uniform() - 1.0;
    table.add(testing::word(i), v);
  }
  auto cooc = eval::CooccurrenceTable::build(train_part);
  eval::EvalResources res{&table, &index, &cooc};
  eval::EvalOptions opt;
  opt.decode.beam_size = 2;
  opt.decode.max_length = 4;
  opt.keep_instances = false;
  bool buckets_ok = true;
  for (auto mode : {corpus::NoiseMode::kTerm, corpus::NoiseMode::kQuery, corpus::NoiseMode::kSession}) {
    auto noisy = corpus::inject_noise(test_part, mode, 11, resources);
    auto report = eval::evaluate_model(model, vocab, noisy, res, opt).to_json();
    for (const auto* b : {"short", "medium", "long"})
      buckets_ok = buckets_ok && report["buckets"].contains(b) && report["buckets"][b].contains("per") &&
                   report["buckets"][b].contains("mrr");
    buckets_ok = buckets_ok && report["metrics"].contains("sim_ret_plus_plus");
  }
  all_ok = all_ok && buckets_ok;
  detail << "; bucketed reports (short/medium/long) for all modes: " << (buckets_ok ? "yes" : "no") << ", "
         << fmt(timer.seconds()) << " s";
  return {all_ok, detail.str()};
}

// ---------------------------------------------------------------- 11

Outcome determinism() {
  auto sessions = testing::reformulation_sessions(60, 30, 9);
  auto vocab = corpus::build_vocabulary(sessions, 40);
  std::vector<corpus::TrainingExample> examples;
  for (const auto& s : sessions) {
    auto e = corpus::make_examples(s, vocab, 50);
    examples.insert(examples.end(), e.begin(), e.end());
  }
  const fs::path base = fs::temp_directory_path() / "acg_acceptance_determinism";
  fs::remove_all(base);
  std::string bytes[2];
  for (int run = 0; run < 2; ++run) {
    auto cfg = small_config(12, 120, 42);
    cfg.model.dropout = 0.2;
    cfg.eval_every = 40;
    cfg.threads = 1;
    cfg.checkpoint_dir = (base / std::to_string(run)).string();
    trainer::train(examples, examples, vocab, cfg);
    std::ifstream f(fs::path(cfg.checkpoint_dir) / "final.ckpt", std::ios::binary);
    std::stringstream s;
    s << f.rdbuf();
    bytes[run] = s.str();
  }
  fs::remove_all(base);
  const bool same = !bytes[0].empty() && bytes[0] == bytes[1];
  return {same, "two seeded runs (dropout on, 120 staged steps): final checkpoints " +
                    std::string(same ? "bitwise identical" : "DIFFER") + " (" + std::to_string(bytes[0].size()) +
                    " bytes)"};
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace
}  // namespace acg

int main(int argc, char** argv) {
  using namespace acg;
  const std::vector<Criterion> criteria = {
      {1, "gradient correctness", gradient_correctness},
      {2, "normalization", normalization},
      {3, "beam vs brute force", beam_vs_brute_force},
      {4, "staged freeze", staged_freeze},
      {5, "overfit run", overfit},
      {6, "copy mechanism", copy_mechanism},
      {7, "ablation trend", ablation},
      {8, "metric oracles", metric_oracles},
      {9, "retrieval sanity", retrieval_sanity},
      {10, "robustness harness", robustness},
      {11, "determinism", determinism},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  int failures = 0;
  for (const auto& c : criteria) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  criterion " << std::setw(2) << c.id << "  " << c.name << ": "
              << o.detail << std::endl;
  }
  std::cout << (failures ? "FAILED " + std::to_string(failures) + " criteria" : std::string("all criteria passed"))
            << std::endl;
  return failures ? 1 : 0;
}
