#include "acg/cli.hpp"
#include "acg/error.hpp"
#include "support.hpp"

#include "json.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

namespace acg::cli {
namespace {

namespace fs = std::filesystem;

struct Result {
  int code;
  std::string out, err;
};

Result call(std::vector<std::string> args, const std::string& input = "") {
  std::istringstream in(input);
  std::ostringstream out, err;
  const int code = run(args, in, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p);
  std::stringstream s;
  s << f.rdbuf();
  return s.str();
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream f(p);
  f << text;
}

struct Cli : ::testing::Test {
  fs::path dir;
  void SetUp() override {
    dir = fs::temp_directory_path() / ("acg_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }
  std::string p(const std::string& name) const { return (dir / name).string(); }

  // Forced model plus vocabulary written to disk.
  void write_forced() {
    testing::ForcedModel f;
    f.model.save(p("forced.ckpt"));
    std::ofstream v(p("forced.vocab"));
    f.vocab.save(v);
  }

  void write_log() {
    std::ostringstream log;
    log << "AnonID\tQuery\tQueryTime\n";
    const char* topics[][3] = {{"bob dylan", "bob dylan songs", "bob dylan lyrics"},
                               {"cheap flights", "cheap flights paris", "paris hotels"},
                               {"weather", "weather boston", "boston weather radar"}};
    for (int u = 0; u < 12; ++u) {
      long t = 1141197432 + u * 100000;
      for (int k = 0; k < 3; ++k) {
        const auto& topic = topics[(u + k) % 3];
        for (int q = 0; q < 3; ++q) {
          log << "u" << u << '\t' << topic[q] << '\t' << "2006-03-0" << 1 + (t - 1141197432) / 86400 % 9;
          const long day = t % 86400;
          char buf[16];
          std::snprintf(buf, sizeof buf, " %02ld:%02ld:%02ld", day / 3600, day / 60 % 60, day % 60);
          log << buf << '\n';
          t += 60;
        }
        t += 3 * 3600;
      }
    }
    write_file(p("log.tsv"), log.str());
  }
};

TEST_F(Cli, UsageErrors) {
  EXPECT_EQ(call({}).code, 2);
  EXPECT_EQ(call({"frobnicate"}).code, 2);
  EXPECT_EQ(call({"suggest", "--model", "x"}).code, 2);
  EXPECT_EQ(call({"--help"}).code, 0);
  EXPECT_EQ(call({"perturb", "--sessions", p("none"), "--mode", "term"}).code, 3);
}

TEST_F(Cli, SuggestOnForcedModel) {
  write_forced();
  write_file(p("ctx.sessions"), "a b\n");
  auto r = call({"suggest", "--model", p("forced.ckpt"), "--vocab", p("forced.vocab"), "--contexts",
                 p("ctx.sessions"), "--k", "1"});
  ASSERT_EQ(r.code, 0) << r.err;
  auto j = nlohmann::json::parse(r.out);
  ASSERT_EQ(j["suggestions"].size(), 1u);
  EXPECT_EQ(j["suggestions"][0]["tokens"], nlohmann::json({"a"}));
  EXPECT_EQ(j["suggestions"][0]["log_prob"].get<double>(), 0.0);

  auto two = call({"suggest", "--model", p("forced.ckpt"), "--vocab", p("forced.vocab"), "--k", "2",
                   "--attention-trace"},
                  "a b\n");
  ASSERT_EQ(two.code, 0) << two.err;
  auto j2 = nlohmann::json::parse(two.out);
  EXPECT_EQ(j2["suggestions"][1]["tokens"], nlohmann::json({"b"}));
  EXPECT_EQ(j2["attention_trace"]["steps"].size(), 4u);
  EXPECT_EQ(j2["attention_trace"]["source"].size(), 3u);
}

TEST_F(Cli, ScoreTsv) {
  write_forced();
  write_file(p("ctx.sessions"), "a b\nb\n");
  write_file(p("cands.tsv"), "0\ta\n1\tb\n0\tzzz\n");
  auto r = call({"score", "--model", p("forced.ckpt"), "--vocab", p("forced.vocab"), "--contexts",
                 p("ctx.sessions"), "--candidates", p("cands.tsv")});
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream lines(r.out);
  std::string l1, l2, l3;
  std::getline(lines, l1);
  std::getline(lines, l2);
  std::getline(lines, l3);
  EXPECT_EQ(l1, "0\ta\t0");
  EXPECT_EQ(l2.substr(0, 4), "1\tb\t");
  EXPECT_LT(std::stod(l2.substr(4)), -10.0);
  write_file(p("bad.tsv"), "7\ta\n");
  EXPECT_EQ(call({"score", "--model", p("forced.ckpt"), "--vocab", p("forced.vocab"), "--contexts",
                  p("ctx.sessions"), "--candidates", p("bad.tsv")})
                .code,
            3);
}

TEST_F(Cli, CheckpointErrorsHaveTheirOwnCode) {
  write_forced();
  write_file(p("broken.ckpt"), "acg-checkpoint 99\n");
  EXPECT_EQ(call({"suggest", "--model", p("broken.ckpt"), "--vocab", p("forced.vocab")}, "a\n").code, 4);
  write_file(p("small.vocab"), "w\n");
  EXPECT_EQ(call({"suggest", "--model", p("forced.ckpt"), "--vocab", p("small.vocab")}, "a\n").code, 4);
}

TEST_F(Cli, EvaluatePairsPerIsZeroForIdenticalFiles) {
  write_file(p("gen.txt"), "bob dylan\ncheap flights paris\n");
  auto r = call({"evaluate", "--metric", "per", "--generated", p("gen.txt"), "--targets", p("gen.txt")});
  ASSERT_EQ(r.code, 0) << r.err;
  auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["metrics"]["per"]["mean"].get<double>(), 0.0);
  EXPECT_EQ(j["metrics"]["per"]["count"].get<int>(), 2);
  EXPECT_EQ(call({"evaluate", "--metric", "bleu", "--generated", p("gen.txt"), "--targets", p("gen.txt")}).code, 2);
}

TEST_F(Cli, FullPipeline) {
  write_log();
  auto pre = call({"preprocess", "--log", p("log.tsv"), "--out-dir", p("data"), "--vocab-size", "30", "--seed", "3"});
  ASSERT_EQ(pre.code, 0) << pre.err;
  EXPECT_NE(pre.out.find("# seed 3"), std::string::npos);
  ASSERT_TRUE(fs::exists(dir / "data" / "vocab.txt"));

  write_file(p("train.cfg"), "hidden = 8\nembed_dim = 8\nbatch_size = 4\nsteps = 6\neval_every = 3\nlr = 0.01\n");
  auto tr = call({"train", "--config", p("train.cfg"), "--set", "seed=5", "--train", p("data/train.sessions"),
                  "--valid", p("data/valid.sessions"), "--vocab", p("data/vocab.txt"), "--out", p("run")});
  ASSERT_EQ(tr.code, 0) << tr.err;
  EXPECT_NE(tr.out.find("# seed 5"), std::string::npos);
  ASSERT_TRUE(fs::exists(dir / "run" / "final.ckpt"));
  auto csv = slurp(dir / "run" / "loss.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "step,loss_copy,loss_generate,loss_switch,val_nll");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 7);
  EXPECT_EQ(call({"train", "--set", "bogus=1", "--train", p("data/train.sessions"), "--vocab",
                  p("data/vocab.txt"), "--out", p("run2")})
                .code,
            2);

  const std::string model = p("run/final.ckpt"), vocab = p("data/vocab.txt");
  auto sug = call({"suggest", "--model", model, "--vocab", vocab, "--contexts", p("data/test.sessions"), "--k",
                   "2", "--beam", "2", "--max-length", "4"});
  ASSERT_EQ(sug.code, 0) << sug.err;
  EXPECT_EQ(std::count(sug.out.begin(), sug.out.end(), '\n'),
            std::count(std::istreambuf_iterator<char>(*std::make_unique<std::ifstream>(p("data/test.sessions"))),
                       std::istreambuf_iterator<char>(), '\n'));

  auto per1 = call({"perturb", "--sessions", p("data/test.sessions"), "--mode", "term", "--seed", "7",
                    "--resource-sessions", p("data/train.sessions"), "--out", p("noisy1")});
  auto per2 = call({"perturb", "--sessions", p("data/test.sessions"), "--mode", "term", "--seed", "7",
                    "--resource-sessions", p("data/train.sessions"), "--out", p("noisy2")});
  ASSERT_EQ(per1.code, 0) << per1.err;
  EXPECT_EQ(slurp(p("noisy1")), slurp(p("noisy2")));
  EXPECT_NE(slurp(p("noisy1")), slurp(p("data/test.sessions")));
  auto sess = call({"perturb", "--sessions", p("data/test.sessions"), "--users", p("data/test.users"), "--mode",
                    "session", "--resource-sessions", p("data/train.sessions"), "--seed", "1"});
  EXPECT_EQ(sess.code, 0) << sess.err;

  write_file(p("emb.txt"), "3 2\nbob 1 0\ndylan 0.5 0.5\nweather 0 1\n");
  write_file(p("docs.tsv"), "d1\tbob dylan songs lyrics\nd2\tcheap flights to paris\nd3\tboston weather radar\n");
  auto ev = call({"evaluate", "--model", model, "--vocab", vocab, "--sessions", p("data/test.sessions"),
                  "--embeddings", p("emb.txt"), "--docs", p("docs.tsv"), "--cooccurrence",
                  p("data/train.sessions"), "--noise", "query", "--noise-source", p("data/train.sessions"),
                  "--seed", "4", "--beam", "2", "--max-length", "4", "--out", p("report.json")});
  ASSERT_EQ(ev.code, 0) << ev.err;
  auto report = nlohmann::json::parse(slurp(p("report.json")));
  EXPECT_EQ(report["header"]["seed"].get<int>(), 4);
  for (const auto& m : {"per", "sim_emb", "sim_ret", "sim_ret_plus", "sim_ret_plus_plus", "mrr", "mrr_mps"})
    EXPECT_TRUE(report["metrics"].contains(m)) << m;
  EXPECT_TRUE(report["buckets"].contains("medium"));

  auto only_short = call({"evaluate", "--model", model, "--vocab", vocab, "--sessions", p("data/test.sessions"),
                          "--metric", "per", "--bucket", "short", "--max-length", "3"});
  ASSERT_EQ(only_short.code, 0) << only_short.err;
  // Every generated session has three queries, so nothing is short.
  EXPECT_FALSE(nlohmann::json::parse(only_short.out)["metrics"].contains("per"));
  EXPECT_EQ(call({"evaluate", "--model", model, "--vocab", vocab, "--sessions", p("data/test.sessions")}).code, 2);

  auto repl = call({"repl", "--model", model, "--vocab", vocab, "--k", "2", "--max-length", "3"},
                   "bob dylan\n:new\nweather\n:quit\nnever read\n");
  ASSERT_EQ(repl.code, 0) << repl.err;
  EXPECT_NE(repl.out.find("(new session)"), std::string::npos);
  EXPECT_NE(repl.out.find("2. "), std::string::npos);
}

TEST(ReplState, ResetsOnCommandAndIdleGap) {
  testing::ForcedModel f;
  decoder::DecodeConfig cfg;
  cfg.suggestions = 2;
  Repl repl(f.model, f.vocab, cfg);
  auto out = repl.feed("A!", 1000);
  EXPECT_EQ(out, "1. a  (0)\n2. b  (0)\n");
  repl.feed("b", 1000 + 1799);
  EXPECT_EQ(repl.session().size(), 2u);
  out = repl.feed("b", 1000 + 1799 + 1800);
  EXPECT_NE(out.find("new session"), std::string::npos);
  EXPECT_EQ(repl.session().size(), 1u);
  repl.feed(":new", 5000);
  EXPECT_TRUE(repl.session().empty());
  EXPECT_EQ(repl.feed("   ", 5000), "");
  EXPECT_TRUE(repl.session().empty());
  repl.feed(":quit", 5000);
  EXPECT_TRUE(repl.done());
}

}  // namespace
}  // namespace acg::cli
