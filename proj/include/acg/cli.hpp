#pragma once

// Command-line front end: preprocess, train, suggest, score, evaluate,
// perturb and repl. `run` never exits the process; it returns the exit code.

#include "acg/corpus.hpp"
#include "acg/decoder.hpp"
#include "acg/model.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace acg::cli {

int run(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err);

// Interactive session state. Each query line extends the running session and
// yields the top-k suggestions; `:new` or an idle gap of 30 minutes starts a
// fresh session.
class Repl {
 public:
  Repl(const Model& model, const corpus::Vocabulary& vocab, decoder::DecodeConfig decode,
       std::size_t max_context_tokens = 50);

  // Returns the text to print for one input line; `now` is in seconds.
  std::string feed(const std::string& line, std::int64_t now);

  const std::vector<corpus::Query>& session() const { return session_; }
  bool done() const { return done_; }

 private:
  const Model& model_;
  const corpus::Vocabulary& vocab_;
  decoder::DecodeConfig decode_;
  std::size_t max_context_tokens_;
  std::vector<corpus::Query> session_;
  std::optional<std::int64_t> last_;
  bool done_ = false;
};

}  // namespace acg::cli
