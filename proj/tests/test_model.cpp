#include "acg/attention.hpp"
#include "acg/decoder.hpp"
#include "acg/encoder.hpp"
#include "acg/error.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <limits>

namespace acg {
namespace {

using corpus::Vocabulary;
using num::Mat;
using num::Vec;
using testing::jitter;
using testing::toy_config;
using testing::toy_vocab;

bool bit_equal(const Vec& a, const Vec& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), sizeof(double) * a.size()) == 0;
}

const Mat& param(const Model& m, const std::string& name) { return m.store.value(*m.store.find(name)); }
Mat& param(Model& m, const std::string& name) { return m.store.value(*m.store.find(name)); }

void zero_prefix(Model& m, const std::string& prefix) {
  for (std::size_t i = 0; i < m.store.size(); ++i)
    if (m.store.at(i).name.rfind(prefix, 0) == 0) m.store.at(i).value.setZero();
}

// ---- independent loop-based forward oracle ----

using DVec = std::vector<double>;

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

DVec matvec(const Mat& W, const DVec& x) {
  DVec y(static_cast<std::size_t>(W.rows()), 0.0);
  for (Eigen::Index r = 0; r < W.rows(); ++r)
    for (Eigen::Index c = 0; c < W.cols(); ++c) y[r] += W(r, c) * x[static_cast<std::size_t>(c)];
  return y;
}

DVec concat(DVec a, const DVec& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

DVec gru(const Model& m, const std::string& p, const DVec& x, const DVec& h) {
  const Mat &W = param(m, p + ".W"), &U = param(m, p + ".U"), &B = param(m, p + ".b");
  const std::size_t H = h.size();
  DVec wx = matvec(W, x), uh = matvec(U, h);
  DVec r(H), z(H), out(H);
  for (std::size_t k = 0; k < H; ++k) {
    r[k] = sig(wx[k] + uh[k] + B(k, 0));
    z[k] = sig(wx[H + k] + uh[H + k] + B(H + k, 0));
  }
  DVec rh(H);
  for (std::size_t k = 0; k < H; ++k) rh[k] = r[k] * h[k];
  for (std::size_t k = 0; k < H; ++k) {
    double un = 0.0;
    for (std::size_t c = 0; c < H; ++c) un += U(2 * H + k, c) * rh[c];
    const double n = std::tanh(wx[2 * H + k] + un + B(2 * H + k, 0));
    out[k] = z[k] * h[k] + (1 - z[k]) * n;
  }
  return out;
}

double eta(const Model& m, const std::string& p, const std::vector<DVec>& inputs) {
  const Mat& b = param(m, p + ".b");
  DVec pre(static_cast<std::size_t>(b.rows()));
  for (std::size_t k = 0; k < pre.size(); ++k) pre[k] = b(k, 0);
  for (std::size_t blk = 0; blk < inputs.size(); ++blk) {
    DVec y = matvec(param(m, p + ".W" + std::to_string(blk)), inputs[blk]);
    for (std::size_t k = 0; k < pre.size(); ++k) pre[k] += y[k];
  }
  const Mat& v = param(m, p + ".v");
  double out = 0.0;
  for (std::size_t k = 0; k < pre.size(); ++k) out += v(k, 0) * std::tanh(pre[k]);
  return out;
}

DVec soft(const DVec& l) {
  double mx = l[0];
  for (double x : l) mx = std::max(mx, x);
  DVec e(l.size());
  double z = 0.0;
  for (std::size_t i = 0; i < l.size(); ++i) z += (e[i] = std::exp(l[i] - mx));
  for (auto& x : e) x /= z;
  return e;
}

DVec affine(const Model& m, const std::string& p, const DVec& x) {
  DVec y = matvec(param(m, p + ".W"), x);
  const Mat& b = param(m, p + ".b");
  for (std::size_t k = 0; k < y.size(); ++k) y[k] += b(k, 0);
  return y;
}

DVec emb(const Model& m, int id) {
  const Mat& E = param(m, "embedding");
  DVec e(static_cast<std::size_t>(E.cols()));
  for (std::size_t k = 0; k < e.size(); ++k) e[k] = E(id, k);
  return e;
}

struct OracleStep {
  DVec word, query, combined, gen, copy;
  double p_copy;
  DVec state;
};

OracleStep oracle_first_step(const Model& m, const corpus::LinearizedContext& ctx) {
  const std::size_t n = ctx.length(), H = m.config.word_hidden, Q = m.config.query_hidden,
                    S = m.config.decoder_hidden;
  std::vector<DVec> hf(n), hb(n), h(n);
  DVec state(H, 0.0);
  for (std::size_t i = 0; i < n; ++i) state = hf[i] = gru(m, "encoder.forward", emb(m, ctx.token_ids[i]), state);
  state.assign(H, 0.0);
  for (std::size_t i = n; i-- > 0;) state = hb[i] = gru(m, "encoder.backward", emb(m, ctx.token_ids[i]), state);
  for (std::size_t i = 0; i < n; ++i) h[i] = concat(hf[i], hb[i]);
  const std::size_t mq = ctx.separator_positions.size();
  std::vector<DVec> gf(mq), gb(mq), g(mq);
  DVec qs(Q, 0.0);
  for (std::size_t j = 0; j < mq; ++j) qs = gf[j] = gru(m, "query_encoder.forward", hf[ctx.separator_positions[j]], qs);
  qs.assign(Q, 0.0);
  for (std::size_t j = mq; j-- > 0;) qs = gb[j] = gru(m, "query_encoder.backward", hf[ctx.separator_positions[j]], qs);
  for (std::size_t j = 0; j < mq; ++j) g[j] = concat(gf[j], gb[j]);

  DVec s0 = affine(m, "decoder.init", concat(hf[n - 1], hb[0]));
  for (auto& x : s0) x = std::tanh(x);
  const DVec y = emb(m, Vocabulary::kStart);

  OracleStep o;
  DVec lw(n), lq(mq);
  for (std::size_t i = 0; i < n; ++i) lw[i] = eta(m, "attention.word", {s0, h[i]});
  for (std::size_t j = 0; j < mq; ++j) lq[j] = eta(m, "attention.query", {s0, g[j], y});
  o.word = soft(lw);
  o.query = soft(lq);
  o.combined.resize(n);
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t owner = 0;
    while (i > ctx.separator_positions[owner]) ++owner;
    z += (o.combined[i] = o.word[i] * o.query[owner]);
  }
  for (auto& a : o.combined) a /= z;
  DVec c(2 * H, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < 2 * H; ++k) c[k] += o.combined[i] * h[i][k];
  o.state = gru(m, "decoder.cell", concat(y, c), s0);
  o.gen = soft(affine(m, "generator.output", o.state));
  DVec unk = affine(m, "copier.unk_projection", emb(m, Vocabulary::kUnk));
  DVec lc(n + 1);
  lc[0] = eta(m, "copier.scorer", {o.state, unk});
  for (std::size_t i = 0; i < n; ++i) lc[i + 1] = eta(m, "copier.scorer", {o.state, h[i]});
  o.copy = soft(lc);
  const Mat& w = param(m, "switch.w");
  double ws = 0.0;
  for (std::size_t k = 0; k < S; ++k) ws += w(k, 0) * o.state[k];
  o.p_copy = sig(ws);
  return o;
}

void expect_near(const Vec& a, const DVec& b, double tol) {
  ASSERT_EQ(static_cast<std::size_t>(a.size()), b.size());
  for (std::size_t i = 0; i < b.size(); ++i) EXPECT_NEAR(a[static_cast<Eigen::Index>(i)], b[i], tol) << i;
}

TEST(DecoderStep, MatchesLoopOracleOnTinyModels) {
  auto vocab = toy_vocab(8);
  for (int dims : {1, 3}) {
    auto cfg = toy_config(8, dims, 21);
    Model m(cfg);
    jitter(m, 0.4, 5);
    std::vector<corpus::Query> qs = {{"w0", "w1"}, {"w2"}};
    auto ctx = corpus::linearize(qs, vocab);
    auto enc = decoder::encode_context(m, ctx);
    auto out = decoder::decoder_step(m, enc, decoder::initial_state(enc), Vocabulary::kStart);
    auto o = oracle_first_step(m, ctx);
    expect_near(out.attention.word, o.word, 1e-12);
    expect_near(out.attention.query, o.query, 1e-12);
    expect_near(out.attention.combined, o.combined, 1e-12);
    expect_near(out.state.hidden, o.state, 1e-12);
    expect_near(out.gen_dist, o.gen, 1e-12);
    expect_near(out.copy_dist, o.copy, 1e-12);
    EXPECT_NEAR(out.p_copy, o.p_copy, 1e-12);
    EXPECT_EQ(out.state.step, 1u);
  }
}

// ---- encoder ----

struct Enc : ::testing::Test {
  corpus::Vocabulary vocab = toy_vocab(10);
  Model model{toy_config(10, 3, 4)};
  void SetUp() override { jitter(model, 0.2, 8); }
};

TEST_F(Enc, SingleTokenBothPassesSeeSameInput) {
  std::vector<int> ids = {6};
  auto w = encoder::encode_words(model, ids);
  ASSERT_EQ(w.length(), 1u);
  Vec x = model.embed(6);
  EXPECT_TRUE(bit_equal(w.forward[0], model.word_forward.forward(model.store, x, Vec::Zero(3), nullptr)));
  EXPECT_TRUE(bit_equal(w.backward[0], model.word_backward.forward(model.store, x, Vec::Zero(3), nullptr)));
  EXPECT_EQ(w.states[0].size(), 6);
}

TEST_F(Enc, ReversalMirrorsStatesWhenDirectionsSwap) {
  Model swapped = model;
  for (std::string part : {".W", ".U", ".b"})
    std::swap(param(swapped, "encoder.forward" + part), param(swapped, "encoder.backward" + part));
  std::vector<int> ids = {5, 7, 1, 8, 1};
  std::vector<int> rev(ids.rbegin(), ids.rend());
  auto a = encoder::encode_words(model, ids);
  auto b = encoder::encode_words(swapped, rev);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    EXPECT_TRUE(bit_equal(a.forward[i], b.backward[ids.size() - 1 - i]));
    EXPECT_TRUE(bit_equal(a.backward[i], b.forward[ids.size() - 1 - i]));
  }
}

TEST_F(Enc, ZeroWeightGruGivesZeroStates) {
  zero_prefix(model, "encoder.");
  zero_prefix(model, "query_encoder.");
  std::vector<int> ids = {5, 6, 1};
  auto w = encoder::encode_words(model, ids);
  for (const auto& h : w.states) EXPECT_EQ(h.cwiseAbs().maxCoeff(), 0.0);
  std::vector<std::size_t> seps = {2};
  auto q = encoder::encode_queries(model, w, seps);
  for (const auto& g : q.states) EXPECT_EQ(g.cwiseAbs().maxCoeff(), 0.0);
}

TEST_F(Enc, QuerySummaryIsForwardStateAtSeparator) {
  std::vector<int> ids = {5, 6, 1};
  auto w = encoder::encode_words(model, ids);
  std::vector<std::size_t> seps = {2};
  auto q = encoder::encode_queries(model, w, seps);
  ASSERT_EQ(q.count(), 1u);
  EXPECT_TRUE(bit_equal(q.summaries[0], w.forward[2]));
  Vec gf = model.query_forward.forward(model.store, w.forward[2], Vec::Zero(3), nullptr);
  Vec gb = model.query_backward.forward(model.store, w.forward[2], Vec::Zero(3), nullptr);
  EXPECT_TRUE(bit_equal(q.states[0].head(3), gf));
  EXPECT_TRUE(bit_equal(q.states[0].tail(3), gb));
}

TEST_F(Enc, IdenticalQueriesGetDifferentSummaries) {
  std::vector<corpus::Query> qs = {{"w0", "w1"}, {"w0", "w1"}};
  auto ctx = corpus::linearize(qs, vocab);
  auto w = encoder::encode_words(model, ctx.token_ids);
  auto q = encoder::encode_queries(model, w, ctx.separator_positions);
  EXPECT_FALSE(bit_equal(q.summaries[0], q.summaries[1]));
}

TEST_F(Enc, SummaryMlpFlag) {
  auto cfg = toy_config(10, 3, 4);
  cfg.query_summary_mlp = true;
  Model m(cfg);
  std::vector<int> ids = {5, 1};
  auto w = encoder::encode_words(m, ids);
  std::vector<std::size_t> seps = {1};
  auto q = encoder::encode_queries(m, w, seps);
  Vec expected = m.query_summary.forward(m.store, w.forward[1]).array().tanh().matrix();
  EXPECT_TRUE(bit_equal(q.summaries[0], expected));
}

TEST_F(Enc, QuerySummaryIsCausal) {
  std::vector<int> a = {5, 6, 1, 7, 8, 1};
  std::vector<int> b = {5, 6, 1, 9, 5, 1};
  std::vector<std::size_t> seps = {2, 5};
  auto qa = encoder::encode_queries(model, encoder::encode_words(model, a), seps);
  auto qb = encoder::encode_queries(model, encoder::encode_words(model, b), seps);
  EXPECT_TRUE(bit_equal(qa.summaries[0], qb.summaries[0]));
  EXPECT_FALSE(bit_equal(qa.summaries[1], qb.summaries[1]));
  EXPECT_EQ(qa.count(), seps.size());
}

TEST_F(Enc, ErrorCases) {
  std::vector<int> none;
  EXPECT_THROW(encoder::encode_words(model, none), std::invalid_argument);
  std::vector<int> ids = {5, 1};
  auto w = encoder::encode_words(model, ids);
  std::vector<std::size_t> out_of_range = {4};
  EXPECT_THROW(encoder::encode_queries(model, w, out_of_range), std::out_of_range);
  std::vector<int> bad_id = {99};
  EXPECT_THROW(encoder::encode_words(model, bad_id), DimensionError);
}

// ---- attention ----

TEST(Attention, ZeroScorerGivesUniformWeights) {
  Model m(toy_config(10, 3, 2));
  zero_prefix(m, "attention.");
  std::vector<Vec> keys(4, Vec::Zero(3)), qkeys(3, Vec::Zero(3));
  Vec s = Vec::Random(3);
  Vec aw = attention::word_attention(m, s, keys);
  for (int i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(aw[i], 0.25);
  Vec aq = attention::query_attention(m, s, qkeys, Vec::Random(3));
  for (int j = 0; j < 3; ++j) EXPECT_DOUBLE_EQ(aq[j], 1.0 / 3.0);
}

TEST(Attention, SingleEntryIsOne) {
  Model m(toy_config(10, 3, 2));
  std::vector<Vec> one(1, Vec::Random(3));
  EXPECT_EQ(attention::word_attention(m, Vec::Random(3), one)[0], 1.0);
  EXPECT_EQ(attention::query_attention(m, Vec::Random(3), one, Vec::Random(3))[0], 1.0);
}

TEST(Attention, ScalarHandValues) {
  auto cfg = toy_config(6, 1, 2);
  cfg.word_hidden = 1;  // h_i is 2-dim, s is 1-dim, scorer hidden 1
  Model m(cfg);
  param(m, "attention.word.W0") = Mat{{0.5}};
  param(m, "attention.word.W1") = Mat{{1.0, -1.0}};
  param(m, "attention.word.b") = Mat{{0.1}};
  param(m, "attention.word.v") = Mat{{2.0}};
  std::vector<Vec> h = {Vec{{0.3, 0.1}}, Vec{{-0.2, 0.4}}};
  Vec s{{0.6}};
  auto keys = attention::word_keys(m, h);
  Vec a = attention::word_attention(m, s, keys);
  const double l0 = 2.0 * std::tanh(0.3 + 0.3 - 0.1 + 0.1);
  const double l1 = 2.0 * std::tanh(0.3 - 0.2 - 0.4 + 0.1);
  EXPECT_NEAR(a[0], std::exp(l0) / (std::exp(l0) + std::exp(l1)), 1e-15);

  param(m, "attention.query.W0") = Mat{{1.0}};
  param(m, "attention.query.W1") = Mat{{0.0, 2.0}};
  param(m, "attention.query.W2") = Mat{{-1.0}};
  param(m, "attention.query.b") = Mat{{0.0}};
  param(m, "attention.query.v") = Mat{{1.0}};
  std::vector<Vec> g = {Vec{{9.0, 0.25}}, Vec{{9.0, -0.25}}};
  Vec y{{0.5}};
  Vec aq = attention::query_attention(m, s, attention::query_keys(m, g), y);
  const double q0 = std::tanh(0.6 + 0.5 - 0.5), q1 = std::tanh(0.6 - 0.5 - 0.5);
  EXPECT_NEAR(aq[0], 1.0 / (1.0 + std::exp(q1 - q0)), 1e-15);
}

TEST(Attention, OwnersIncludeSeparator) {
  std::vector<std::size_t> seps = {2, 5};
  EXPECT_EQ(attention::position_owners(seps, 6), (std::vector<std::size_t>{0, 0, 0, 1, 1, 1}));
  EXPECT_THROW(attention::position_owners(seps, 7), std::invalid_argument);
}

TEST(Attention, CombineExamples) {
  std::vector<std::size_t> owner = {0, 0, 1, 1};
  Vec c = attention::combine(Vec{{.2, .2, .3, .3}}, Vec{{.5, .5}}, owner);
  EXPECT_NEAR(c[0], .2, 1e-15);
  EXPECT_NEAR(c[2], .3, 1e-15);

  Vec masked = attention::combine(Vec{{.1, .3, .2, .4}}, Vec{{1.0, 0.0}}, owner);
  EXPECT_NEAR(masked[0], .25, 1e-15);
  EXPECT_NEAR(masked[1], .75, 1e-15);
  EXPECT_EQ(masked[2], 0.0);
  EXPECT_EQ(masked[3], 0.0);

  Vec uniform = attention::combine(Vec::Constant(4, .25), Vec::Constant(2, .5), owner);
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(uniform[i], .25, 1e-15);

  EXPECT_THROW(attention::combine(Vec{{0, 0, .5, .5}}, Vec{{1.0, 0.0}}, owner), NumericError);
}

TEST(Attention, CombinePropertiesOnRandomInputs) {
  Rng rng(12);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t m = 1 + rng.below(4);
    std::vector<std::size_t> owner;
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t k = 0; k < 1 + rng.below(3); ++k) owner.push_back(j);
    Vec lw(static_cast<Eigen::Index>(owner.size())), lq(static_cast<Eigen::Index>(m));
    for (auto& x : lw) x = 6 * rng.uniform() - 3;
    for (auto& x : lq) x = 6 * rng.uniform() - 3;
    Vec aw = num::softmax(lw), aq = num::softmax(lq);
    Vec c = attention::combine(aw, aq, owner);
    EXPECT_NEAR(c.sum(), 1.0, 1e-12);
    EXPECT_GE(c.minCoeff(), 0.0);
    // Shifting every word logit leaves the combined weights unchanged.
    Vec c2 = attention::combine(num::softmax((lw.array() + 1.7).matrix()), aq, owner);
    EXPECT_LT((c - c2).cwiseAbs().maxCoeff(), 1e-12);
    // Zero mass on one query zeroes all of its positions.
    Vec aq0 = aq;
    const std::size_t dropped = rng.below(m);
    if (m > 1) {
      aq0[static_cast<Eigen::Index>(dropped)] = 0.0;
      Vec c3 = attention::combine(aw, aq0, owner);
      for (std::size_t i = 0; i < owner.size(); ++i)
        if (owner[i] == dropped) EXPECT_EQ(c3[static_cast<Eigen::Index>(i)], 0.0);
    }
  }
}

TEST(Attention, ContextVectorExamples) {
  std::vector<Vec> h = {Vec{{4.0}}, Vec{{8.0}}};
  EXPECT_DOUBLE_EQ(attention::context_vector(Vec{{.25, .75}}, h)[0], 7.0);
  std::vector<Vec> hs = {Vec{{1.0, 2.0}}, Vec{{3.0, 4.0}}, Vec{{5.0, 6.0}}};
  EXPECT_TRUE(bit_equal(attention::context_vector(Vec{{0.0, 1.0, 0.0}}, hs), hs[1]));
  std::vector<Vec> same(3, Vec{{0.5, -2.0}});
  EXPECT_LT((attention::context_vector(Vec::Constant(3, 1.0 / 3.0), same) - same[0]).norm(), 1e-15);
}

TEST(Attention, CombineAndContextGradientCheck) {
  num::ParameterStore store;
  std::mt19937_64 rng(4);
  auto lw = store.add("lw", num::Tag::kAttention, 5, 1, num::Init::kXavier, rng);
  auto lq = store.add("lq", num::Tag::kAttention, 2, 1, num::Init::kXavier, rng);
  auto hs = store.add("h", num::Tag::kAttention, 5, 3, num::Init::kXavier, rng);
  auto u = store.add("u", num::Tag::kAttention, 3, 1, num::Init::kXavier, rng);
  std::vector<std::size_t> owner = {0, 0, 1, 1, 1};
  auto fn = [&](const num::ParameterStore& s, num::Gradients* g) {
    Vec aw = num::softmax(s.value(lw).col(0)), aq = num::softmax(s.value(lq).col(0));
    Vec a = attention::combine(aw, aq, owner);
    std::vector<Vec> states;
    for (int i = 0; i < 5; ++i) states.push_back(s.value(hs).row(i).transpose());
    Vec c = attention::context_vector(a, states);
    const Vec uu = s.value(u).col(0);
    if (g) {
      (*g)[u].col(0) += c;
      Vec da(5);
      for (int i = 0; i < 5; ++i) {
        da[i] = uu.dot(states[static_cast<std::size_t>(i)]);
        (*g)[hs].row(i) += a[i] * uu.transpose();
      }
      auto cg = attention::combine_backward(aw, aq, owner, a, da);
      (*g)[lw].col(0) += num::softmax_backward(aw, cg.d_word);
      (*g)[lq].col(0) += num::softmax_backward(aq, cg.d_query);
    }
    return uu.dot(c);
  };
  auto r = num::gradient_check(fn, store);
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst_param;
}

// ---- decoder ----

struct Dec : ::testing::Test {
  corpus::Vocabulary vocab = toy_vocab(10);
  Model model{toy_config(10, 3, 6)};
  corpus::LinearizedContext ctx;
  void SetUp() override {
    jitter(model, 0.3, 3);
    std::vector<corpus::Query> qs = {{"w0", "zz"}, {"zz", "w1", "w2"}};
    ctx = corpus::linearize(qs, vocab);
  }
};

TEST_F(Dec, ZeroSwitchWeightsGiveHalf) {
  param(model, "switch.w").setZero();
  auto enc = decoder::encode_context(model, ctx);
  EXPECT_EQ(decoder::decoder_step(model, enc, decoder::initial_state(enc), Vocabulary::kStart).p_copy, 0.5);
}

TEST_F(Dec, SinglePositionCopyDistribution) {
  corpus::LinearizedContext one;
  one.token_ids = {Vocabulary::kEndOfQuery};
  one.separator_positions = {0};
  one.surface_tokens = {"</q>"};
  auto enc = decoder::encode_context(model, one);
  auto out = decoder::decoder_step(model, enc, decoder::initial_state(enc), Vocabulary::kStart);
  ASSERT_EQ(out.copy_dist.size(), 2);
  EXPECT_NEAR(out.copy_dist.sum(), 1.0, 1e-12);
}

TEST_F(Dec, DistributionsNormalizedAndCopyUsesPostUpdateState) {
  auto enc = decoder::encode_context(model, ctx);
  auto out = decoder::decoder_step(model, enc, decoder::initial_state(enc), Vocabulary::kStart);
  EXPECT_NEAR(out.gen_dist.sum(), 1.0, 1e-12);
  EXPECT_NEAR(out.copy_dist.sum(), 1.0, 1e-12);
  EXPECT_EQ(out.copy_dist.size(), static_cast<Eigen::Index>(ctx.length() + 1));
  EXPECT_GT(out.p_copy, 0.0);
  EXPECT_LT(out.p_copy, 1.0);
  std::vector<Vec> in = {out.state.hidden, enc.words.states[0]};
  EXPECT_NEAR(out.copy_logits[1], model.copy_scorer.forward(model.store, in), 1e-12);
}

TEST_F(Dec, StateDimensionChecked) {
  auto enc = decoder::encode_context(model, ctx);
  EXPECT_THROW(decoder::decoder_step(model, enc, {Vec::Zero(5), 0}, Vocabulary::kStart), DimensionError);
}

decoder::DecoderStepOutput manual_step(const corpus::Vocabulary& vocab, std::size_t n, double p_copy) {
  decoder::DecoderStepOutput s;
  s.gen_dist = Vec::Zero(vocab.size());
  s.copy_dist = Vec::Zero(static_cast<Eigen::Index>(n + 1));
  s.p_copy = p_copy;
  return s;
}

TEST(Fuse, HandMixture) {
  auto vocab = Vocabulary::from_tokens({"dylan", "bio", "photo"});
  std::vector<corpus::Query> qs = {{"bob", "dylan"}};
  auto ctx = corpus::linearize(qs, vocab);  // bob dylan </q>
  auto s = manual_step(vocab, ctx.length(), 0.6);
  s.gen_dist[vocab.id("dylan")] = 0.25;
  s.gen_dist[vocab.id("bio")] = 0.5;
  s.gen_dist[Vocabulary::kOov] = 0.25;
  s.copy_dist[2] = 0.5;  // dylan
  s.copy_dist[1] = 0.3;  // bob
  s.copy_dist[0] = 0.2;  // <unk>
  auto mix = decoder::fuse(s, ctx, vocab);
  EXPECT_NEAR(mix.prob("dylan"), 0.4, 1e-15);
  EXPECT_NEAR(mix.prob("bio"), 0.4 * 0.5, 1e-15);
  EXPECT_NEAR(mix.prob("bob"), 0.6 * 0.3, 1e-15);
  EXPECT_NEAR(mix.residual, 0.4 * 0.25 + 0.6 * 0.2, 1e-15);
  EXPECT_NEAR(mix.total(), 1.0, 1e-15);
  EXPECT_FALSE(mix.find("<oov>"));
  EXPECT_FALSE(mix.find("<unk>"));
  EXPECT_TRUE(mix.find("</q>"));
  // Source-only token appended after vocabulary tokens.
  EXPECT_GT(*mix.find("bob"), *mix.find("photo"));
  EXPECT_NEAR(mix.generated[*mix.find("dylan")], 0.1, 1e-15);
  EXPECT_NEAR(mix.copied[*mix.find("dylan")], 0.3, 1e-15);
}

TEST(Fuse, PositionMarginalizationWithFullCopy) {
  auto vocab = Vocabulary::from_tokens({"x"});
  std::vector<corpus::Query> qs = {{"x", "y"}, {"x"}};
  auto ctx = corpus::linearize(qs, vocab);  // x y </q> x </q>
  auto s = manual_step(vocab, ctx.length(), 1.0);
  s.gen_dist[vocab.id("x")] = 1.0;
  s.copy_dist << 0.0, 0.1, 0.5, 0.0, 0.2, 0.2;
  auto mix = decoder::fuse(s, ctx, vocab);
  EXPECT_NEAR(mix.prob("x"), 0.3, 1e-15);
  EXPECT_NEAR(mix.prob("</q>"), 0.2, 1e-15);
  EXPECT_NEAR(mix.total(), 1.0, 1e-15);
}

TEST(Fuse, VocabTokenAbsentFromSourceIsGenerateOnly) {
  auto vocab = Vocabulary::from_tokens({"x", "z"});
  std::vector<corpus::Query> qs = {{"x"}};
  auto ctx = corpus::linearize(qs, vocab);
  auto s = manual_step(vocab, ctx.length(), 0.3);
  s.gen_dist[vocab.id("z")] = 0.8;
  s.gen_dist[vocab.id("x")] = 0.2;
  s.copy_dist[1] = 1.0;
  auto mix = decoder::fuse(s, ctx, vocab);
  EXPECT_NEAR(mix.prob("z"), 0.7 * 0.8, 1e-15);
  EXPECT_EQ(mix.copied[*mix.find("z")], 0.0);
}

TEST(Forced, BeamSuggestAndScore) {
  testing::ForcedModel f;
  std::vector<corpus::Query> qs = {{"a", "b"}};
  auto ctx = corpus::linearize(qs, f.vocab);
  decoder::DecodeConfig cfg;
  auto hyps = decoder::beam_search(f.model, f.vocab, ctx, cfg);
  ASSERT_FALSE(hyps.empty());
  EXPECT_EQ(hyps[0].tokens, (std::vector<std::string>{"a", "</q>"}));
  EXPECT_EQ(hyps[0].log_prob, 0.0);
  EXPECT_TRUE(hyps[0].finished);

  cfg.suggestions = 2;
  auto two = decoder::suggest_k(f.model, f.vocab, ctx, cfg);
  ASSERT_EQ(two.size(), 2u);
  EXPECT_EQ(two[0].tokens, corpus::Query{"a"});
  EXPECT_EQ(two[1].tokens, corpus::Query{"b"});

  auto s = decoder::score_query(f.model, f.vocab, ctx, {"a"});
  EXPECT_EQ(s.prob, 1.0);
  EXPECT_EQ(s.step_probs.size(), 2u);
}

TEST(Beam, FullWidthEqualsExhaustiveSearch) {
  auto vocab = toy_vocab(7);
  std::vector<corpus::Query> qs = {{"w0", "zz"}, {"w1"}};
  auto ctx = corpus::linearize(qs, vocab);
  for (std::uint64_t seed = 0; seed < 12; ++seed) {
    Model m(toy_config(7, 3, seed));
    jitter(m, 0.8, seed + 100);
    auto enc = decoder::encode_context(m, ctx);
    decoder::DecodeConfig cfg;
    cfg.max_length = 3;
    cfg.beam_size = 64;
    auto brute = testing::brute_force_best(m, vocab, enc, cfg.max_length);
    auto hyps = decoder::beam_search(m, vocab, enc, cfg);
    ASSERT_FALSE(hyps.empty());
    EXPECT_EQ(hyps[0].tokens, brute.tokens) << seed;
    EXPECT_NEAR(hyps[0].log_prob, brute.log_prob, 1e-9) << seed;
  }
}

TEST(Beam, WiderBeamNeverLowersTopScoreOnRandomToys) {
  auto vocab = toy_vocab(8);
  std::vector<corpus::Query> qs = {{"w0", "zz", "w2"}, {"w1", "yy"}};
  auto ctx = corpus::linearize(qs, vocab);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Model m(toy_config(8, 3, seed));
    jitter(m, 1.0, seed + 7);
    auto enc = decoder::encode_context(m, ctx);
    decoder::DecodeConfig cfg;
    cfg.max_length = 4;
    double previous = -std::numeric_limits<double>::infinity();
    for (int b = 1; b <= 8; ++b) {
      cfg.beam_size = b;
      const double top = decoder::beam_search(m, vocab, enc, cfg)[0].log_prob;
      EXPECT_GE(top, previous - 1e-12) << "seed " << seed << " b " << b;
      previous = std::max(previous, top);
    }
  }
}

TEST_F(Dec, SuggestOneEqualsBeamTop) {
  decoder::DecodeConfig cfg;
  auto hyps = decoder::beam_search(model, vocab, ctx, cfg);
  auto sug = decoder::suggest_k(model, vocab, ctx, cfg);
  ASSERT_EQ(sug.size(), 1u);
  std::vector<std::string> stripped = hyps[0].tokens;
  if (!stripped.empty() && stripped.back() == "</q>") stripped.pop_back();
  EXPECT_EQ(sug[0].tokens, stripped);
  EXPECT_NEAR(sug[0].log_prob, hyps[0].log_prob, 1e-12);
}

TEST_F(Dec, GreedyIsBeamOfOne) {
  decoder::DecodeConfig cfg;
  cfg.beam_size = 1;
  cfg.max_length = 5;
  auto hyps = decoder::beam_search(model, vocab, ctx, cfg);
  ASSERT_EQ(hyps.size(), 1u);
  auto enc = decoder::encode_context(model, ctx);
  auto state = decoder::initial_state(enc);
  int prev = Vocabulary::kStart;
  std::vector<std::string> greedy;
  for (int t = 0; t < 5; ++t) {
    auto out = decoder::decoder_step(model, enc, state, prev);
    auto mix = decoder::fuse(out, ctx, vocab);
    std::size_t best = 0;
    for (std::size_t k = 1; k < mix.probs.size(); ++k)
      if (mix.probs[k] > mix.probs[best] || (mix.probs[k] == mix.probs[best] && mix.tokens[k] < mix.tokens[best]))
        best = k;
    greedy.push_back(mix.tokens[best]);
    state = out.state;
    prev = vocab.id(mix.tokens[best]);
    if (mix.tokens[best] == "</q>") break;
  }
  EXPECT_EQ(hyps[0].tokens, greedy);
}

TEST_F(Dec, ScoreEqualsProductOfFusedSteps) {
  const corpus::Query cand = {"zz", "w3"};
  auto score = decoder::score_query(model, vocab, ctx, cand);
  auto enc = decoder::encode_context(model, ctx);
  auto state = decoder::initial_state(enc);
  int prev = Vocabulary::kStart;
  double log_p = 0.0;
  for (const std::string w : {"zz", "w3", "</q>"}) {
    auto out = decoder::decoder_step(model, enc, state, prev);
    log_p += std::log(decoder::fuse(out, ctx, vocab).prob(w));
    state = out.state;
    prev = vocab.id(w);
  }
  EXPECT_NEAR(score.log_prob, log_p, 1e-12);
  double sum = 0.0;
  for (double p : score.step_probs) sum += std::log(p);
  EXPECT_NEAR(score.log_prob, sum, 1e-9);
  EXPECT_THROW(decoder::score_query(model, vocab, ctx, {}), std::invalid_argument);
}

TEST_F(Dec, ImpossibleTokenUsesOovMass) {
  auto enc = decoder::encode_context(model, ctx);
  auto out = decoder::decoder_step(model, enc, decoder::initial_state(enc), Vocabulary::kStart);
  auto score = decoder::score_query(model, vocab, enc, {"neverseen"});
  EXPECT_NEAR(score.step_probs[0], (1.0 - out.p_copy) * out.gen_dist[Vocabulary::kOov], 1e-15);
}

TEST_F(Dec, MixtureNeverOffersReservedTokens) {
  decoder::DecodeConfig cfg;
  cfg.beam_size = 8;
  cfg.max_length = 4;
  for (const auto& h : decoder::beam_search(model, vocab, ctx, cfg))
    for (const auto& t : h.tokens) {
      EXPECT_NE(t, "<oov>");
      EXPECT_NE(t, "<unk>");
      EXPECT_NE(t, "<s>");
      EXPECT_NE(t, "<pad>");
    }
}

TEST_F(Dec, HypothesisLogProbNonIncreasing) {
  decoder::DecodeConfig cfg;
  cfg.beam_size = 5;
  cfg.max_length = 6;
  for (const auto& h : decoder::beam_search(model, vocab, ctx, cfg)) {
    for (double s : h.step_log_probs) EXPECT_LE(s, 0.0);
  }
}

TEST_F(Dec, AttentionTraceCoversTokens) {
  std::vector<std::string> toks = {"w1", "</q>"};
  auto trace = decoder::attention_trace(model, vocab, ctx, toks);
  ASSERT_EQ(trace.size(), 2u);
  EXPECT_EQ(trace[1].token, "</q>");
  EXPECT_NEAR(trace[0].attention.combined.sum(), 1.0, 1e-12);
  EXPECT_EQ(trace[0].attention.query.size(), 2);
}

TEST_F(Dec, InvalidConfigRejected) {
  decoder::DecodeConfig cfg;
  cfg.beam_size = 0;
  EXPECT_THROW(decoder::beam_search(model, vocab, ctx, cfg), std::invalid_argument);
  cfg.beam_size = 2;
  cfg.max_length = 0;
  EXPECT_THROW(decoder::beam_search(model, vocab, ctx, cfg), std::invalid_argument);
  cfg.max_length = 3;
  cfg.suggestions = 0;
  EXPECT_THROW(decoder::suggest_k(model, vocab, ctx, cfg), std::invalid_argument);
}

TEST(Model, CheckpointRoundTrip) {
  auto cfg = toy_config(9, 3, 5);
  cfg.scorer_hidden = 2;
  cfg.query_summary_mlp = true;
  Model m(cfg);
  const auto path = (std::filesystem::temp_directory_path() / "acg_model_roundtrip.ckpt").string();
  m.save(path);
  Model back = Model::load(path);
  EXPECT_TRUE(back.store.bitwise_equal(m.store));
  EXPECT_EQ(back.config.scorer_hidden, 2);
  EXPECT_TRUE(back.config.query_summary_mlp);
  std::filesystem::remove(path);
}

TEST(Model, ComponentTagsCoverSchedule) {
  Model m(toy_config(9, 3, 5));
  auto tag_of = [&](const std::string& name) { return m.store.at(m.store.find(name)->index).tag; };
  EXPECT_EQ(tag_of("embedding"), num::Tag::kEmbedding);
  EXPECT_EQ(tag_of("generator.output.W"), num::Tag::kGenerator);
  EXPECT_EQ(tag_of("copier.scorer.v"), num::Tag::kCopier);
  EXPECT_EQ(tag_of("copier.unk_projection.W"), num::Tag::kCopier);
  EXPECT_EQ(tag_of("switch.w"), num::Tag::kSwitch);
  EXPECT_EQ(tag_of("attention.query.W2"), num::Tag::kAttention);
  EXPECT_EQ(tag_of("decoder.cell.U"), num::Tag::kDecoder);
  EXPECT_EQ(tag_of("query_encoder.forward.W"), num::Tag::kQueryEncoder);
}

}  // namespace
}  // namespace acg
