// Copyright 2026 The ADLM Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

#include "adlm/eval.hpp"

namespace adlm {
namespace {

Vocab tiny_vocab() {
  std::vector<std::string> words{"<pad>", "<bos>", "<eos>", "<unk>"};
  for (int i = 4; i < 16; ++i) words.push_back("w" + std::to_string(i));
  return Vocab(words, {14, 15}, {"nontoxic", "toxic"});
}

ModelConfig tiny_model() {
  ModelConfig c;
  c.vocab_size = 16;
  c.d_model = 8;
  c.n_base_layers = 1;
  c.n_heads = 2;
  c.block_size = 16;
  c.seed = 4;
  return c;
}

TEST(Toxicity, ScoreIsLexiconFraction) {
  const Vocab v = tiny_vocab();
  EXPECT_DOUBLE_EQ(toxicity_score(std::vector<int>{1, 4, 5, 14, 6, 7, 2}, v), 0.2);
  EXPECT_EQ(toxicity_score(std::vector<int>{}, v), 0.0);
  EXPECT_EQ(toxicity_score(std::vector<int>{1, 2}, v), 0.0);
  EXPECT_TRUE(is_toxic(std::vector<int>{4, 15}, v));
  EXPECT_FALSE(is_toxic(std::vector<int>{4, 5}, v));
}

TEST(Toxicity, Aggregates) {
  EXPECT_DOUBLE_EQ(exp_max_toxicity({{0.1, 0.8}, {0.5, 0.3}}), 0.65);
  EXPECT_DOUBLE_EQ(toxicity_prob({{false, true}, {false, false}}), 0.5);
  EXPECT_EQ(exp_max_toxicity({}), 0.0);
  EXPECT_EQ(toxicity_prob({}), 0.0);
}

TEST(Distinct, HandValues) {
  EXPECT_DOUBLE_EQ(distinct_n_prompt({{4, 4}, {4, 5}}, 1), 0.5);
  EXPECT_DOUBLE_EQ(distinct_n_prompt({{4, 4, 4, 4}}, 1), 0.25);
  EXPECT_DOUBLE_EQ(distinct_n_prompt({{4, 5, 6}}, 2), 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(distinct_n({{{4, 4}}, {{4, 5}}}, 1), 0.75);
  EXPECT_EQ(distinct_n_prompt({{}, {}}, 1), 0.0);
  EXPECT_EQ(distinct_n({}, 2), 0.0);
  EXPECT_THROW(distinct_n_prompt({{4}}, 0), Error);
}

TEST(Perplexity, UniformModelScoresVocabSize) {
  AdlmParams p = AdlmParams::init(tiny_model());
  for (double& v : p.base.head_w.mutable_data()) v = 0.0;
  EXPECT_NEAR(perplexity({{{1, 4, 5, 6}}, {{1, 7, 8}}}, p), 16.0, 1e-9);
}

TEST(Perplexity, MatchesFullForwardOracle) {
  const AdlmParams p = AdlmParams::init(tiny_model());
  const std::vector<ScoredText> texts{{{1, 4, 9, 12, 5}, 3}, {{1, 7, 2}, 1}};
  double nll = 0.0;
  std::size_t n = 0;
  for (const auto& t : texts) {
    NoGradGuard no_grad;
    const Tensor logits = head_all(p, forward_transformer(p, t.ids));
    for (std::size_t i = t.score_from; i < t.ids.size(); ++i) {
      std::vector<double> row(logits.data().begin() + static_cast<std::ptrdiff_t>((i - 1) * 16),
                              logits.data().begin() + static_cast<std::ptrdiff_t>(i * 16));
      nll -= std::log(softmax_values(row)[static_cast<std::size_t>(t.ids[i])]);
      ++n;
    }
  }
  EXPECT_EQ(n, 4u);
  EXPECT_NEAR(perplexity(texts, p), std::exp(nll / static_cast<double>(n)), 1e-10);
}

TEST(Perplexity, NothingToScoreIsAnError) {
  const AdlmParams p = AdlmParams::init(tiny_model());
  EXPECT_THROW(perplexity({}, p), Error);
  EXPECT_THROW(perplexity({{{1, 4}, 2}}, p), Error);
}

TEST(Spearman, HandCases) {
  const std::vector<double> x{1, 2, 3, 4};
  EXPECT_DOUBLE_EQ(spearman(x, std::vector<double>{10, 20, 30, 40}), 1.0);
  EXPECT_DOUBLE_EQ(spearman(x, std::vector<double>{9, 3, 2, 1}), -1.0);
  EXPECT_EQ(spearman(x, std::vector<double>{5, 5, 5, 5}), 0.0);
  // Ties get average ranks: y ranks are 1.5, 1.5, 3, 4.
  EXPECT_NEAR(spearman(x, std::vector<double>{1, 1, 2, 3}), 0.9486832980505138, 1e-12);
  EXPECT_THROW(spearman(x, std::vector<double>{1, 2}), Error);
}

TEST(Benchmark, ReportShapeAndJson) {
  const Vocab v = tiny_vocab();
  AdlmParams p = AdlmParams::init(tiny_model());
  p.phase = Phase::kPhase2;
  GenerationConfig g;
  g.n_samples = 3;
  g.max_new_tokens = 5;
  const std::vector<LabeledSequence> prompts{{{1, 4, 5}, 0}, {{1, 14}, 1}};
  const EvalReport r = run_benchmark(p, p, prompts, g, v);
  EXPECT_EQ(r.n_prompts, 2u);
  ASSERT_EQ(r.per_prompt.size(), 2u);
  for (const auto& rec : r.per_prompt) {
    EXPECT_EQ(rec.continuations.size(), 3u);
    EXPECT_EQ(rec.max_toxicity, *std::max_element(rec.scores.begin(), rec.scores.end()));
  }
  EXPECT_GT(r.perplexity, 1.0);
  const nlohmann::json j = to_json(r, &v);
  for (const char* key : {"exp_max_toxicity", "toxicity_prob", "dist1", "dist2", "dist3", "perplexity", "per_prompt"})
    EXPECT_TRUE(j.contains(key)) << key;
  EXPECT_EQ(j["per_prompt"][1]["prompt"], "w14");

  // Same inputs, same report.
  EXPECT_EQ(to_json(run_benchmark(p, p, prompts, g, v)).dump(), to_json(r).dump());
}

TEST(Sweep, RowsAndCsv) {
  const Vocab v = tiny_vocab();
  AdlmParams p = AdlmParams::init(tiny_model());
  p.phase = Phase::kPhase2;
  GenerationConfig g;
  g.n_samples = 2;
  g.max_new_tokens = 4;
  const std::vector<LabeledSequence> prompts{{{1, 4}, 0}};
  const auto rows = sweep_alpha_lambda({0.0, 1.0, 4.0}, {{0.1, &p}, {1.0, &p}}, p, prompts, g, v);
  ASSERT_EQ(rows.size(), 6u);
  EXPECT_EQ(rows[0].lambda, 0.1);
  EXPECT_EQ(rows[2].alpha, 4.0);
  EXPECT_EQ(rows[3].lambda, 1.0);
  const std::string csv = sweep_csv(rows);
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "alpha,lambda,toxicity_prob,exp_max_toxicity,perplexity,dist1,dist2,dist3");
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    EXPECT_EQ(std::count(line.begin(), line.end(), ','), 7);
  }
  EXPECT_EQ(n, 6);
}

}  // namespace
}  // namespace adlm
