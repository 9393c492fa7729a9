// Copyright 2026 The ADLM Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "adlm/common.hpp"

namespace adlm {

inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kEos = 2;
inline constexpr int kUnk = 3;
inline constexpr int kNumReserved = 4;

inline bool is_special(int id) { return id >= 0 && id < kNumReserved; }

/// Token strings, the toxic lexicon and the attribute label set.
class Vocab {
 public:
  Vocab() = default;

  /// `tokens` must start with the four reserved entries.
  Vocab(std::vector<std::string> tokens, std::vector<int> lexicon, std::vector<std::string> attribute_names)
      : tokens_(std::move(tokens)), lexicon_(std::move(lexicon)), attributes_(std::move(attribute_names)) {
    if (tokens_.size() < kNumReserved) throw Error("Vocab: fewer tokens than reserved ids");
    if (attributes_.size() < 2) throw Error("Vocab: need at least two attributes");
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      if (!index_.emplace(tokens_[i], static_cast<int>(i)).second) throw Error("Vocab: duplicate token '" + tokens_[i] + "'");
    }
    std::sort(lexicon_.begin(), lexicon_.end());
    lexicon_mask_.assign(tokens_.size(), false);
    for (int id : lexicon_) {
      if (id < kNumReserved || id >= static_cast<int>(tokens_.size())) {
        throw Error("Vocab: lexicon id " + std::to_string(id) + " is reserved or out of range");
      }
      lexicon_mask_[static_cast<std::size_t>(id)] = true;
    }
    for (std::size_t i = 0; i < attributes_.size(); ++i) {
      for (std::size_t j = 0; j < i; ++j)
        if (attributes_[i] == attributes_[j]) throw Error("Vocab: duplicate attribute '" + attributes_[i] + "'");
    }
  }

  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::vector<int>& toxic_lexicon() const { return lexicon_; }
  const std::vector<std::string>& attribute_names() const { return attributes_; }
  std::size_t n_attributes() const { return attributes_.size(); }

  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  int id(const std::string& word) const {
    auto it = index_.find(word);
    return it == index_.end() ? kUnk : it->second;
  }
  bool contains(const std::string& word) const { return index_.count(word) != 0; }
  bool is_lexicon(int id) const {
    return id >= 0 && static_cast<std::size_t>(id) < lexicon_mask_.size() && lexicon_mask_[static_cast<std::size_t>(id)];
  }

  int attribute_index(const std::string& name) const {
    for (std::size_t i = 0; i < attributes_.size(); ++i)
      if (attributes_[i] == name) return static_cast<int>(i);
    throw Error("unknown attribute '" + name + "'");
  }

  nlohmann::json to_json() const {
    return {{"tokens", tokens_}, {"toxic_lexicon", lexicon_}, {"attribute_names", attributes_}};
  }
  static Vocab from_json(const nlohmann::json& j) {
    return Vocab(j.at("tokens").get<std::vector<std::string>>(), j.at("toxic_lexicon").get<std::vector<int>>(),
                 j.at("attribute_names").get<std::vector<std::string>>());
  }

  friend bool operator==(const Vocab& a, const Vocab& b) {
    return a.tokens_ == b.tokens_ && a.lexicon_ == b.lexicon_ && a.attributes_ == b.attributes_;
  }

 private:
  std::vector<std::string> tokens_;
  std::vector<int> lexicon_;
  std::vector<std::string> attributes_;
  std::unordered_map<std::string, int> index_;
  std::vector<bool> lexicon_mask_;
};

/// Token ids (BOS first, no PAD) with an attribute label.
struct LabeledSequence {
  std::vector<int> ids;
  int attribute = 0;

  friend bool operator==(const LabeledSequence&, const LabeledSequence&) = default;
};

/// Parameters of the synthetic class-conditional bigram corpus.
struct CorpusSpec {
  std::uint64_t seed = 7;
  int vocab_size = 128;
  int lexicon_size = 16;
  std::vector<std::string> attribute_names{"nontoxic", "toxic"};
  // Sequences of this attribute carry lexicon tokens; all others carry none.
  std::string marked_attribute = "toxic";
  int n_per_class = 2000;
  // Optional per-attribute counts overriding n_per_class (for imbalanced corpora).
  std::vector<int> class_counts;
  int min_length = 6;  // words, excluding BOS
  int max_length = 14;
  double toxic_token_rate = 0.25;
  // Weight of the class-specific bigram table against the shared one.
  double bigram_coupling = 0.6;
  int successors = 6;

  int count_for(std::size_t attribute) const {
    return class_counts.empty() ? n_per_class : class_counts.at(attribute);
  }
};

inline void to_json(nlohmann::json& j, const CorpusSpec& s) {
  j = {{"seed", s.seed},
       {"vocab_size", s.vocab_size},
       {"lexicon_size", s.lexicon_size},
       {"attribute_names", s.attribute_names},
       {"marked_attribute", s.marked_attribute},
       {"n_per_class", s.n_per_class},
       {"class_counts", s.class_counts},
       {"min_length", s.min_length},
       {"max_length", s.max_length},
       {"toxic_token_rate", s.toxic_token_rate},
       {"bigram_coupling", s.bigram_coupling},
       {"successors", s.successors}};
}

inline void from_json(const nlohmann::json& j, CorpusSpec& s) {
  CorpusSpec d;
  s.seed = j.value("seed", d.seed);
  s.vocab_size = j.value("vocab_size", d.vocab_size);
  s.lexicon_size = j.value("lexicon_size", d.lexicon_size);
  s.attribute_names = j.value("attribute_names", d.attribute_names);
  s.marked_attribute = j.value("marked_attribute", d.marked_attribute);
  s.n_per_class = j.value("n_per_class", d.n_per_class);
  s.class_counts = j.value("class_counts", d.class_counts);
  s.min_length = j.value("min_length", d.min_length);
  s.max_length = j.value("max_length", d.max_length);
  s.toxic_token_rate = j.value("toxic_token_rate", d.toxic_token_rate);
  s.bigram_coupling = j.value("bigram_coupling", d.bigram_coupling);
  s.successors = j.value("successors", d.successors);
}

inline void validate(const CorpusSpec& s) {
  if (s.attribute_names.size() < 2) throw Error("corpus: need at least two attribute names");
  if (std::find(s.attribute_names.begin(), s.attribute_names.end(), s.marked_attribute) == s.attribute_names.end()) {
    throw Error("corpus: marked_attribute '" + s.marked_attribute + "' is not an attribute name");
  }
  if (s.lexicon_size < 1) throw Error("corpus: lexicon_size must be >= 1");
  if (s.vocab_size < kNumReserved + s.lexicon_size + 1) {
    throw Error("corpus: vocab_size " + std::to_string(s.vocab_size) + " too small for " +
                std::to_string(kNumReserved) + " reserved ids, " + std::to_string(s.lexicon_size) +
                " lexicon tokens and at least one ordinary word");
  }
  if (!(s.toxic_token_rate > 0.0 && s.toxic_token_rate <= 1.0)) throw Error("corpus: toxic_token_rate must be in (0, 1]");
  if (!(s.bigram_coupling >= 0.0 && s.bigram_coupling <= 1.0)) throw Error("corpus: bigram_coupling must be in [0, 1]");
  if (s.min_length < 2 || s.max_length < s.min_length) throw Error("corpus: need 2 <= min_length <= max_length");
  if (s.successors < 1) throw Error("corpus: successors must be >= 1");
  if (!s.class_counts.empty() && s.class_counts.size() != s.attribute_names.size()) {
    throw Error("corpus: class_counts must have one entry per attribute");
  }
  for (std::size_t a = 0; a < s.attribute_names.size(); ++a)
    if (s.count_for(a) < 1) throw Error("corpus: every attribute needs at least one sequence");
}

namespace detail {

// Sparse categorical row: successor ids with cumulative weights.
struct SparseRow {
  std::vector<int> ids;
  std::vector<double> cumulative;

  int sample(Rng& rng) const {
    const double u = rng.uniform() * cumulative.back();
    auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
    if (it == cumulative.end()) --it;
    return ids[static_cast<std::size_t>(it - cumulative.begin())];
  }
};

inline SparseRow random_row(Rng& rng, int n_words, int successors) {
  std::vector<int> pool(static_cast<std::size_t>(n_words));
  for (int i = 0; i < n_words; ++i) pool[static_cast<std::size_t>(i)] = i;
  const int k = std::min(successors, n_words);
  SparseRow row;
  double total = 0.0;
  for (int i = 0; i < k; ++i) {
    const auto j = static_cast<std::size_t>(i) + rng.below(static_cast<std::uint64_t>(n_words - i));
    std::swap(pool[static_cast<std::size_t>(i)], pool[j]);
    row.ids.push_back(pool[static_cast<std::size_t>(i)]);
    total += -std::log(1.0 - rng.uniform());
    row.cumulative.push_back(total);
  }
  return row;
}

}  // namespace detail

/// Generates the vocabulary and a class-grouped list of sequences.
///
/// Every attribute has its own bigram table mixed with a shared one, so the
/// label is partly recoverable from ordinary words. Sequences of the marked
/// attribute additionally emit lexicon tokens at `toxic_token_rate` (at least
/// one per sequence); all other sequences contain none.
inline std::pair<Vocab, std::vector<LabeledSequence>> make_corpus(const CorpusSpec& spec) {
  validate(spec);
  const int n_words = spec.vocab_size - kNumReserved - spec.lexicon_size;
  std::vector<std::string> tokens{"<pad>", "<bos>", "<eos>", "<unk>"};
  std::vector<int> lexicon;
  for (int i = 0; i < spec.lexicon_size; ++i) {
    lexicon.push_back(static_cast<int>(tokens.size()));
    tokens.push_back("x" + std::to_string(i));
  }
  const int first_word = static_cast<int>(tokens.size());
  for (int i = 0; i < n_words; ++i) tokens.push_back("w" + std::to_string(i));
  Vocab vocab(tokens, lexicon, spec.attribute_names);

  Rng rng(spec.seed);
  // Row n_words is the start-of-sequence distribution.
  auto make_table = [&] {
    std::vector<detail::SparseRow> table;
    for (int w = 0; w <= n_words; ++w) table.push_back(detail::random_row(rng, n_words, spec.successors));
    return table;
  };
  const auto shared = make_table();
  std::vector<std::vector<detail::SparseRow>> per_class;
  for (std::size_t a = 0; a < spec.attribute_names.size(); ++a) per_class.push_back(make_table());

  const int marked = vocab.attribute_index(spec.marked_attribute);
  std::vector<LabeledSequence> out;
  for (std::size_t a = 0; a < spec.attribute_names.size(); ++a) {
    const bool is_marked = static_cast<int>(a) == marked;
    for (int s = 0; s < spec.count_for(a); ++s) {
      const int len = spec.min_length + static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.max_length - spec.min_length + 1)));
      LabeledSequence seq{{kBos}, static_cast<int>(a)};
      int state = n_words;
      bool has_lexicon = false;
      for (int t = 0; t < len; ++t) {
        if (is_marked && rng.bernoulli(spec.toxic_token_rate)) {
          seq.ids.push_back(lexicon[rng.below(lexicon.size())]);
          has_lexicon = true;
          continue;
        }
        const auto& row = rng.bernoulli(spec.bigram_coupling) ? per_class[a][static_cast<std::size_t>(state)]
                                                              : shared[static_cast<std::size_t>(state)];
        state = row.sample(rng);
        seq.ids.push_back(first_word + state);
      }
      if (is_marked && !has_lexicon) {
        seq.ids[1 + rng.below(static_cast<std::uint64_t>(len))] = lexicon[rng.below(lexicon.size())];
      }
      out.push_back(std::move(seq));
    }
  }

  // Make sure every lexicon token occurs somewhere in the marked class.
  std::vector<int> lexicon_count(vocab.size(), 0);
  for (const auto& seq : out)
    for (int id : seq.ids)
      if (vocab.is_lexicon(id)) ++lexicon_count[static_cast<std::size_t>(id)];
  std::vector<std::size_t> marked_rows;
  for (std::size_t i = 0; i < out.size(); ++i)
    if (out[i].attribute == marked) marked_rows.push_back(i);
  std::size_t cursor = 0;
  for (int lex : lexicon) {
    if (lexicon_count[static_cast<std::size_t>(lex)] > 0) continue;
    bool placed = false;
    for (std::size_t tries = 0; tries < marked_rows.size() && !placed; ++tries, ++cursor) {
      auto& ids = out[marked_rows[cursor % marked_rows.size()]].ids;
      for (std::size_t p = 1; p < ids.size() && !placed; ++p) {
        const int old = ids[p];
        const bool free = !vocab.is_lexicon(old) || lexicon_count[static_cast<std::size_t>(old)] > 1;
        if (!free) continue;
        if (vocab.is_lexicon(old)) --lexicon_count[static_cast<std::size_t>(old)];
        ids[p] = lex;
        ++lexicon_count[static_cast<std::size_t>(lex)];
        placed = true;
      }
    }
    if (!placed) throw Error("corpus: too few marked sequences to cover the lexicon");
  }
  return {std::move(vocab), std::move(out)};
}

/// Equalizes class counts by duplicating the smaller classes.
///
/// Each smaller class is extended by cycling through its members in their
/// original order until it matches the largest class. The result is the
/// input followed by the duplicates, shuffled with `shuffle_seed` if given.
inline std::vector<LabeledSequence> balance(const std::vector<LabeledSequence>& dataset, std::size_t n_attributes,
                                            std::optional<std::uint64_t> shuffle_seed) {
  std::vector<std::vector<std::size_t>> members(n_attributes);
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const int a = dataset[i].attribute;
    if (a < 0 || static_cast<std::size_t>(a) >= n_attributes) throw Error("balance: attribute index out of range");
    members[static_cast<std::size_t>(a)].push_back(i);
  }
  std::size_t target = 0;
  for (std::size_t a = 0; a < n_attributes; ++a) {
    if (members[a].empty()) throw Error("balance: attribute " + std::to_string(a) + " has no examples");
    target = std::max(target, members[a].size());
  }
  std::vector<LabeledSequence> out = dataset;
  for (std::size_t a = 0; a < n_attributes; ++a) {
    for (std::size_t k = members[a].size(); k < target; ++k) out.push_back(dataset[members[a][k % members[a].size()]]);
  }
  if (shuffle_seed) {
    Rng rng(*shuffle_seed);
    rng.shuffle(out);
  }
  return out;
}

inline std::vector<std::size_t> class_counts(const std::vector<LabeledSequence>& dataset, std::size_t n_attributes) {
  std::vector<std::size_t> counts(n_attributes, 0);
  for (const auto& s : dataset) ++counts.at(static_cast<std::size_t>(s.attribute));
  return counts;
}

/// Whitespace tokenization, BOS-prefixed. Unknown words map to UNK.
inline std::vector<int> tokenize(const std::string& text, const Vocab& vocab) {
  std::vector<int> ids{kBos};
  std::istringstream in(text);
  std::string word;
  while (in >> word) ids.push_back(vocab.id(word));
  return ids;
}

/// Joins tokens with single spaces, dropping PAD, BOS and EOS.
inline std::string detokenize(std::span<const int> ids, const Vocab& vocab) {
  std::string out;
  for (int id : ids) {
    if (id == kPad || id == kBos || id == kEos) continue;
    if (!out.empty()) out += ' ';
    out += vocab.token(id);
  }
  return out;
}

inline void save_jsonl(const std::string& path, const std::vector<LabeledSequence>& data, const Vocab& vocab) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("save_jsonl: cannot open '" + path + "' for writing");
  for (const auto& seq : data) {
    nlohmann::json rec = {{"text", detokenize(seq.ids, vocab)},
                          {"attribute", vocab.attribute_names().at(static_cast<std::size_t>(seq.attribute))}};
    out << rec.dump() << '\n';
  }
  if (!out) throw Error("save_jsonl: write to '" + path + "' failed");
}

inline std::vector<LabeledSequence> load_jsonl(const std::string& path, const Vocab& vocab) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("load_jsonl: cannot open '" + path + "'");
  std::vector<LabeledSequence> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path + ":" + std::to_string(lineno);
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(where + ": malformed JSON (" + e.what() + ")");
    }
    if (!rec.is_object() || !rec.contains("text") || !rec["text"].is_string() || !rec.contains("attribute") ||
        !rec["attribute"].is_string()) {
      throw Error(where + ": record must have string fields \"text\" and \"attribute\"");
    }
    LabeledSequence seq;
    seq.ids = tokenize(rec["text"].get<std::string>(), vocab);
    try {
      seq.attribute = vocab.attribute_index(rec["attribute"].get<std::string>());
    } catch (const Error& e) {
      throw Error(where + ": " + e.what());
    }
    out.push_back(std::move(seq));
  }
  return out;
}

struct CorpusSplits {
  std::vector<LabeledSequence> train;
  std::vector<LabeledSequence> val;
  std::vector<LabeledSequence> test;
};

inline CorpusSplits split_corpus(std::vector<LabeledSequence> data, double val_fraction, double test_fraction,
                                 std::uint64_t seed) {
  if (val_fraction < 0 || test_fraction < 0 || val_fraction + test_fraction >= 1.0) {
    throw Error("split_corpus: fractions must be non-negative and sum below 1");
  }
  Rng rng(seed);
  rng.shuffle(data);
  const auto n = data.size();
  const auto n_val = static_cast<std::size_t>(std::floor(static_cast<double>(n) * val_fraction));
  const auto n_test = static_cast<std::size_t>(std::floor(static_cast<double>(n) * test_fraction));
  CorpusSplits s;
  s.val.assign(data.begin(), data.begin() + static_cast<std::ptrdiff_t>(n_val));
  s.test.assign(data.begin() + static_cast<std::ptrdiff_t>(n_val), data.begin() + static_cast<std::ptrdiff_t>(n_val + n_test));
  s.train.assign(data.begin() + static_cast<std::ptrdiff_t>(n_val + n_test), data.end());
  return s;
}

struct PromptSets {
  std::vector<LabeledSequence> toxic;     // prompt itself contains lexicon tokens
  std::vector<LabeledSequence> nontoxic;  // prompt contains none
};

/// Cuts each held-out sequence to a short prefix and sorts the prefixes by
/// whether they contain lexicon tokens. Each set is capped at `max_per_set`.
inline PromptSets make_prompts(const std::vector<LabeledSequence>& held_out, const Vocab& vocab, int min_words,
                               int max_words, std::size_t max_per_set, std::uint64_t seed) {
  if (min_words < 1 || max_words < min_words) throw Error("make_prompts: need 1 <= min_words <= max_words");
  Rng rng(seed);
  PromptSets sets;
  for (const auto& seq : held_out) {
    const int words = static_cast<int>(seq.ids.size()) - 1;
    int k = min_words + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_words - min_words + 1)));
    k = std::min(k, words - 1);
    if (k < 1) continue;
    LabeledSequence p{{seq.ids.begin(), seq.ids.begin() + 1 + k}, seq.attribute};
    const bool toxic = std::any_of(p.ids.begin(), p.ids.end(), [&](int id) { return vocab.is_lexicon(id); });
    auto& dst = toxic ? sets.toxic : sets.nontoxic;
    if (dst.size() < max_per_set) dst.push_back(std::move(p));
  }
  return sets;
}

}  // namespace adlm
