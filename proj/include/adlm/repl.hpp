// Copyright 2026 The ADLM Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include "adlm/corpus.hpp"
#include "adlm/decoding.hpp"
#include "adlm/eval.hpp"

namespace adlm {

namespace detail {

inline void repl_help(std::ostream& out) {
  out << "commands: :alpha X  :topp X  :attr NAME  :seed N  :quit\n";
}

// Applies one meta-command to `g`. Returns false on malformed input, with
// the reason in `message`.
inline bool repl_command(const std::string& line, GenerationConfig& g, const Vocab& vocab, std::string& message) {
  std::istringstream in(line);
  std::string cmd, arg, extra;
  in >> cmd >> arg;
  if (arg.empty() || (in >> extra)) {
    message = "usage: " + cmd + " VALUE";
    return false;
  }
  try {
    std::size_t used = 0;
    if (cmd == ":alpha") {
      const double v = std::stod(arg, &used);
      if (used != arg.size() || !(v >= 0.0)) throw std::invalid_argument(arg);
      g.alpha = v;
    } else if (cmd == ":topp") {
      const double v = std::stod(arg, &used);
      if (used != arg.size() || !(v > 0.0 && v <= 1.0)) throw std::invalid_argument(arg);
      g.top_p = v;
    } else if (cmd == ":seed") {
      const unsigned long long v = std::stoull(arg, &used);
      if (used != arg.size() || arg.front() == '-') throw std::invalid_argument(arg);
      g.seed = v;
    } else if (cmd == ":attr") {
      const int a = vocab.attribute_index(arg);
      if (a == g.undesired_attribute) {
        if (vocab.n_attributes() != 2) {
          message = "attribute '" + arg + "' is the undesired attribute";
          return false;
        }
        g.undesired_attribute = g.desired_attribute;
      }
      g.desired_attribute = a;
    } else {
      message = "unknown command " + cmd;
      return false;
    }
  } catch (const std::invalid_argument&) {
    message = "invalid value '" + arg + "' for " + cmd;
    return false;
  } catch (const std::out_of_range&) {
    message = "value '" + arg + "' out of range for " + cmd;
    return false;
  } catch (const Error& e) {
    message = e.what();
    return false;
  }
  message = cmd.substr(1) + " = " + arg;
  return true;
}

}  // namespace detail

/// Line-oriented session: each prompt line yields one continuation with its
/// oracle toxicity; lines starting with ':' are meta-commands. Successive
/// generations in a session use successive sample indices.
inline void repl(const AdlmParams& params, GenerationConfig g, const Vocab& vocab, std::istream& in, std::ostream& out) {
  detail::repl_help(out);
  std::string line;
  std::size_t turn = 0;
  while (out << "> " << std::flush, std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.front() == ':') {
      if (line == ":quit" || line == ":q") break;
      if (line == ":help") {
        detail::repl_help(out);
        continue;
      }
      std::string message;
      const bool ok = detail::repl_command(line, g, vocab, message);
      out << (ok ? "" : "error: ") << message << "\n";
      if (ok && line.rfind(":seed", 0) == 0) turn = 0;
      continue;
    }
    try {
      const auto prompt = tokenize(line, vocab);
      const auto cont = generate(prompt, params, g, 0, turn++);
      out << detokenize(cont, vocab) << "\n";
      out << "  toxicity " << std::fixed << std::setprecision(3) << toxicity_score(cont, vocab)
          << std::defaultfloat << "\n";
    } catch (const Error& e) {
      out << "error: " << e.what() << "\n";
    }
  }
}

}  // namespace adlm
