// Copyright 2026 The ADLM Authors
// SPDX-License-Identifier: Apache-2.0

// Acceptance suite: one PASS/FAIL line per criterion.
//
// Exit status is 0 when every criterion that ran has the expected outcome:
// PASS, or FAIL for the ids listed in --expect-fail. A known-red criterion
// that turns green also fails the run, so the expectation list has to be
// kept honest.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "adlm/adlm.hpp"
#include "grad_check.hpp"

namespace {

namespace fs = std::filesystem;
using namespace adlm;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int prec = 4) {
  std::ostringstream s;
  s.precision(prec);
  s << v;
  return s.str();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

// ---------------------------------------------------------------------------
// Shared pipeline state

struct PipelineRun {
  fs::path dir;
  CorpusData data;
  AdlmParams base, p1, p2;
  double t_base = 0, t_p1 = 0, t_p2 = 0;
  nlohmann::json report;
};

void write_log(const fs::path& path, const std::vector<json>& lines) {
  std::string text;
  for (const auto& j : lines) text += j.dump() + "\n";
  write_text(path, text);
}

AdlmParams train_and_reload(Phase stage, const RunConfig& cfg, const CorpusData& data, const AdlmParams* init,
                            const fs::path& dir, double& seconds) {
  std::vector<json> log;
  const auto t0 = Clock::now();
  const AdlmParams p = run_stage(stage, cfg, data, init, [&](const json& j) { log.push_back(j); });
  seconds = seconds_since(t0);
  const fs::path ck = dir / "checkpoints" / to_string(stage);
  save_checkpoint(p, ck, checkpoint_meta(cfg, data.vocab));
  write_log(dir / "logs" / (to_string(stage) + ".jsonl"), log);
  return load_checkpoint(ck).params;
}

// The default pipeline as the CLI runs it: each stage starts from the
// checkpoint on disk written by the previous one.
PipelineRun run_pipeline(const RunConfig& cfg, const fs::path& dir) {
  PipelineRun r;
  r.dir = dir;
  fs::remove_all(dir);
  write_corpus_dir(build_corpus(cfg), dir / "corpus");
  r.data = read_corpus_dir(dir / "corpus");
  r.base = train_and_reload(Phase::kBase, cfg, r.data, nullptr, dir, r.t_base);
  r.p1 = train_and_reload(Phase::kPhase1, cfg, r.data, &r.base, dir, r.t_p1);
  r.p2 = train_and_reload(Phase::kPhase2, cfg, r.data, &r.p1, dir, r.t_p2);
  const GenerationConfig g = generation_for(r.p2, cfg.generation);
  write_text(dir / "reports" / "generations.jsonl",
             to_jsonl(generation_records(r.p2, r.data.prompts_nontoxic, g, r.data.vocab)));
  r.report = evaluate_checkpoint(r.p2, r.data, cfg.generation);
  write_text(dir / "reports" / "report.json", r.report.dump(2) + "\n");
  return r;
}

struct Context {
  fs::path workdir;
  RunConfig cfg;
  std::optional<PipelineRun> run_a;
  std::map<double, AdlmParams> by_lambda;  // phase-2 models trained from run A's phase 1
  double lambda_seconds = 0;

  PipelineRun& a() {
    if (!run_a) {
      std::cerr << "  (running default pipeline A)\n";
      run_a = run_pipeline(cfg, workdir / "run_a");
    }
    return *run_a;
  }

  const AdlmParams& phase2_with_lambda(double lambda) {
    if (lambda == cfg.train_adlm.lambda_ewc) return a().p2;
    auto it = by_lambda.find(lambda);
    if (it != by_lambda.end()) return it->second;
    RunConfig c = cfg;
    c.train_adlm.lambda_ewc = lambda;
    std::cerr << "  (phase 2 with lambda " << lambda << ")\n";
    const auto t0 = Clock::now();
    AdlmParams p = run_stage(Phase::kPhase2, c, a().data, &a().p1);
    lambda_seconds += seconds_since(t0);
    return by_lambda.emplace(lambda, std::move(p)).first->second;
  }
};

// ---------------------------------------------------------------------------
// 1. Gradient correctness

Outcome gradient_correctness(Context&) {
  const auto t0 = Clock::now();
  ModelConfig mc;
  mc.vocab_size = 16;
  mc.d_model = 8;
  mc.n_heads = 2;
  mc.n_base_layers = 1;
  mc.block_size = 16;
  mc.seed = 1;
  AdlmParams p = AdlmParams::init(mc);
  p.phase = Phase::kPhase2;
  Rng rng(99);
  p.proj_star = BlockParams::init(8, rng);
  p.fisher = BlockParams::init(8, rng);
  for (auto& [name, t] : p.fisher->named())
    for (double& v : t->mutable_data()) v = std::abs(v) * 20.0;
  const std::vector<LabeledSequence> batch{{{1, 5, 9, 4, 11}, 0}, {{1, 14, 15, 6}, 1}, {{1, 7, 7, 8, 12, 13}, 1}};
  TrainConfig tc;

  std::vector<std::pair<std::string, Tensor>> params{{"attr_emb", p.attr_emb}, {"disc.w", p.disc_w}, {"disc.b", p.disc_b}};
  for (auto& [name, t] : p.proj.named()) params.emplace_back("proj." + name, *t);

  const std::vector<std::pair<std::string, std::function<Tensor()>>> losses{
      {"lm", [&] { return lm_loss(batch, p); }},
      {"disc", [&] { return disc_loss(batch, p); }},
      {"ewc", [&] { return ewc_loss(p.proj, *p.proj_star, *p.fisher, tc.lambda_ewc); }},
      {"total", [&] { return total_loss(batch, p, tc).total; }}};
  Outcome o{true, ""};
  for (const auto& [name, fn] : losses) {
    const auto r = testing::check_gradients(fn, params, 1e-5);
    o.pass = o.pass && r.max_relative_error < 1e-4;
    o.detail += name + " " + fmt(r.max_relative_error, 2) + ", ";
  }
  const double secs = seconds_since(t0);
  o.pass = o.pass && secs < 30.0;
  o.detail = "max rel err: " + o.detail + "limit 1e-4; " + fmt(secs, 3) + " s (limit 30 s)";
  return o;
}

// ---------------------------------------------------------------------------
// 2. Suppression algebra

std::vector<double> softmax_of(const std::vector<double>& x) {
  const double m = *std::max_element(x.begin(), x.end());
  std::vector<double> e(x.size());
  double z = 0;
  for (std::size_t i = 0; i < x.size(); ++i) z += e[i] = std::exp(x[i] - m);
  for (double& v : e) v /= z;
  return e;
}

int first_argmax(const std::vector<double>& x) {
  return static_cast<int>(std::max_element(x.begin(), x.end()) - x.begin());
}

Outcome suppression_algebra(Context&) {
  const std::vector<double> alphas{0, 1, 2, 4, 8};
  Rng rng(2026);
  std::size_t bound_violations = 0, argmax_checked = 0, argmax_violations = 0;
  std::size_t mono_pairs = 0, mass_violations = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    const std::size_t V = 2 + rng.below(63);
    std::vector<double> o(V), n(V);
    for (std::size_t v = 0; v < V; ++v) {
      o[v] = rng.normal(0.0, 2.0);
      n[v] = rng.bernoulli(0.1) ? o[v] : rng.normal(0.0, 2.0);
    }
    std::vector<std::vector<double>> probs;
    for (double a : alphas) {
      const auto s = suppress(o, n, a);
      for (std::size_t v = 0; v < V && a > 0; ++v) {
        const double delta = o[v] - n[v];
        const bool equal = s[v] == o[v];
        if (!(s[v] <= o[v]) || equal != (delta >= 0.0)) ++bound_violations;
      }
      probs.push_back(softmax_of(s));
      const int top = first_argmax(o);
      if (o[static_cast<std::size_t>(top)] - n[static_cast<std::size_t>(top)] >= 0.0) {
        ++argmax_checked;
        if (argmax(s) != top) ++argmax_violations;
      }
    }
    bool rises = false;
    for (std::size_t k = 1; k < alphas.size(); ++k) {
      double mass_prev = 0, mass = 0;
      for (std::size_t v = 0; v < V; ++v) {
        if (o[v] - n[v] >= 0.0) continue;
        if (probs[k][v] > probs[k - 1][v] * (1 + 1e-12)) rises = true;
        mass_prev += probs[k - 1][v];
        mass += probs[k][v];
      }
      if (mass > mass_prev * (1 + 1e-12)) ++mass_violations;
    }
    if (rises) ++mono_pairs;
  }
  Outcome o;
  o.pass = bound_violations == 0 && argmax_violations == 0 && mono_pairs == 0;
  o.detail = "10000 pairs: bound/equality violations " + std::to_string(bound_violations) + ", argmax violations " +
             std::to_string(argmax_violations) + " of " + std::to_string(argmax_checked) +
             " checks, per-token softmax rises with alpha in " + std::to_string(mono_pairs) +
             " pairs (suppressed total mass rises in " + std::to_string(mass_violations) +
             "); the per-token claim fails whenever a mildly suppressed token gains mass from strongly suppressed ones";
  return o;
}

// ---------------------------------------------------------------------------
// 3. EWC pinning

double distance(const BlockParams& a, const BlockParams& b) {
  double s = 0;
  const auto ta = a.tensors(), tb = b.tensors();
  for (std::size_t k = 0; k < ta.size(); ++k)
    for (std::size_t i = 0; i < ta[k].numel(); ++i) s += (ta[k][i] - tb[k][i]) * (ta[k][i] - tb[k][i]);
  return std::sqrt(s);
}

Outcome ewc_pinning(Context& ctx) {
  const std::vector<double> lambdas{0.0, 0.1, 1e3, 1e6};
  std::vector<double> d;
  for (double l : lambdas) {
    const AdlmParams& p = ctx.phase2_with_lambda(l);
    d.push_back(distance(p.proj, *ctx.a().p1.proj_star));
  }
  bool decreasing = true;
  for (std::size_t i = 1; i < d.size(); ++i) decreasing = decreasing && d[i] < d[i - 1];
  const double ratio = d.back() / d.front();
  // Phase 1 plus the four phase-2 runs.
  const double secs = ctx.a().t_p1 + ctx.a().t_p2 + ctx.lambda_seconds;
  Outcome o;
  o.pass = decreasing && ratio < 1e-3 && secs < 300.0;
  o.detail = "distances for lambda 0, 0.1, 1e3, 1e6: " + fmt(d[0]) + ", " + fmt(d[1]) + ", " + fmt(d[2]) + ", " +
             fmt(d[3]) + "; ratio " + fmt(ratio, 3) + " (limit 1e-3); " + fmt(secs, 3) + " s (limit 300 s)";
  return o;
}

// ---------------------------------------------------------------------------
// 4. Discriminative latent space

Outcome discriminative_space(Context& ctx) {
  PipelineRun& a = ctx.a();
  const double acc = discriminator_accuracy(a.data.test, a.p2);
  const double secs = a.t_base + a.t_p1 + a.t_p2;
  Outcome o;
  o.pass = acc >= 0.90 && secs < 600.0;
  o.detail = "held-out accuracy " + fmt(acc) + " on " + std::to_string(a.data.test.size()) +
             " test sequences (limit 0.90); training " + fmt(secs, 3) + " s (limit 600 s)";
  return o;
}

// ---------------------------------------------------------------------------
// 5. Detoxification effect

Outcome detox_effect(Context& ctx) {
  const auto t0 = Clock::now();
  PipelineRun& a = ctx.a();
  const auto& prompts = a.data.prompts_nontoxic;
  GenerationConfig g = ctx.cfg.generation;
  const EvalReport r4 = run_benchmark(a.p2, a.base, prompts, g, a.data.vocab);
  g.alpha = 0.0;
  const EvalReport r0 = run_benchmark(a.p2, a.base, prompts, g, a.data.vocab);
  const EvalReport rb = run_benchmark(a.base, a.base, prompts, generation_for(a.base, ctx.cfg.generation), a.data.vocab);
  const double secs = seconds_since(t0) + a.t_base + a.t_p1 + a.t_p2;
  Outcome o;
  o.pass = prompts.size() == 100 && g.n_samples == 25 && r4.toxicity_prob <= 0.5 * r0.toxicity_prob &&
           r4.toxicity_prob <= 0.5 * rb.toxicity_prob && r4.exp_max_toxicity < r0.exp_max_toxicity &&
           r4.exp_max_toxicity < rb.exp_max_toxicity && secs < 600.0;
  o.detail = std::to_string(prompts.size()) + " prompts x " + std::to_string(g.n_samples) +
             "; toxicity_prob alpha=4 " + fmt(r4.toxicity_prob) + ", alpha=0 " + fmt(r0.toxicity_prob) + ", base LM " +
             fmt(rb.toxicity_prob) + "; exp max toxicity " + fmt(r4.exp_max_toxicity) + ", " +
             fmt(r0.exp_max_toxicity) + ", " + fmt(rb.exp_max_toxicity) + "; " + fmt(secs, 3) + " s (limit 600 s)";
  return o;
}

// ---------------------------------------------------------------------------
// 6. Trade-off shape

Outcome tradeoff_shape(Context& ctx) {
  PipelineRun& a = ctx.a();
  const std::vector<double> alphas{0, 1, 2, 4, 8};
  const std::vector<double> lambdas{0.0, 0.1, 1e3, 1e6};
  std::vector<std::pair<double, const AdlmParams*>> grid;
  for (double l : lambdas) grid.emplace_back(l, &ctx.phase2_with_lambda(l));
  GenerationConfig g = ctx.cfg.generation;
  const auto& prompts = a.data.prompts_nontoxic;
  g.n_samples = static_cast<int>((500 + prompts.size() - 1) / prompts.size());
  const auto rows = sweep_alpha_lambda(alphas, grid, a.base, prompts, g, a.data.vocab);
  write_text(ctx.workdir / "sweep.csv", sweep_csv(rows));
  std::vector<double> al, tox, ppl;
  for (const auto& r : rows) {
    al.push_back(r.alpha);
    tox.push_back(r.toxicity_prob);
    ppl.push_back(r.perplexity);
  }
  const double rho_tox = spearman(al, tox), rho_ppl = spearman(al, ppl);
  Outcome o;
  o.pass = rho_tox <= 0.0 && rho_ppl >= 0.0;
  o.detail = std::to_string(rows.size()) + " cells x " + std::to_string(prompts.size() * g.n_samples) +
             " generations; rho(alpha, toxicity_prob) " + fmt(rho_tox, 3) + " (want <= 0), rho(alpha, perplexity) " +
             fmt(rho_ppl, 3) + " (want >= 0); table in sweep.csv";
  return o;
}

// ---------------------------------------------------------------------------
// 7. Metric oracles

double brute_perplexity(const std::vector<ScoredText>& texts, const AdlmParams& p) {
  double nll = 0;
  std::size_t n = 0;
  NoGradGuard no_grad;
  for (const auto& t : texts) {
    const Tensor logits = head_all(p, forward_transformer(p, t.ids));
    const std::size_t V = logits.cols();
    for (std::size_t i = t.score_from; i < t.ids.size(); ++i) {
      double m = -INFINITY;
      for (std::size_t v = 0; v < V; ++v) m = std::max(m, logits.at(i - 1, v));
      double z = 0;
      for (std::size_t v = 0; v < V; ++v) z += std::exp(logits.at(i - 1, v) - m);
      nll += m + std::log(z) - logits.at(i - 1, static_cast<std::size_t>(t.ids[i]));
      ++n;
    }
  }
  return std::exp(nll / static_cast<double>(n));
}

Outcome metric_oracles(Context&) {
  std::size_t emt_bad = 0, prob_bad = 0, dist_bad = 0, ppl_bad = 0;
  double worst_ppl = 0;
  for (int trial = 0; trial < 50; ++trial) {
    Rng rng(700 + static_cast<std::uint64_t>(trial));
    std::vector<std::string> words{"<pad>", "<bos>", "<eos>", "<unk>"};
    for (int i = 4; i < 16; ++i) words.push_back("t" + std::to_string(i));
    std::set<int> lexicon;
    const int n_lex = 1 + static_cast<int>(rng.below(4));
    while (static_cast<int>(lexicon.size()) < n_lex) lexicon.insert(4 + static_cast<int>(rng.below(12)));
    const Vocab vocab(words, std::vector<int>(lexicon.begin(), lexicon.end()), {"nontoxic", "toxic"});

    const std::size_t n_prompts = 1 + rng.below(6), k = 1 + rng.below(5);
    std::vector<std::vector<std::vector<int>>> gens(n_prompts);
    for (auto& per : gens)
      for (std::size_t s = 0; s < k; ++s) {
        std::vector<int> c(rng.below(11));
        for (int& id : c) id = 3 + static_cast<int>(rng.below(13));
        per.push_back(std::move(c));
      }

    // Library path.
    std::vector<std::vector<double>> scores;
    std::vector<std::vector<bool>> labels;
    for (const auto& per : gens) {
      scores.emplace_back();
      labels.emplace_back();
      for (const auto& c : per) {
        scores.back().push_back(toxicity_score(c, vocab));
        labels.back().push_back(is_toxic(c, vocab));
      }
    }
    // Brute force.
    double emt = 0, prob = 0;
    for (const auto& per : gens) {
      double best = 0;
      bool any = false;
      for (const auto& c : per) {
        int words_n = 0, tox = 0;
        for (int id : c) {
          if (id < 4) continue;
          ++words_n;
          tox += lexicon.count(id) ? 1 : 0;
        }
        const double sc = words_n ? static_cast<double>(tox) / words_n : 0.0;
        best = std::max(best, sc);
        any = any || tox > 0;
      }
      emt += best;
      prob += any ? 1.0 : 0.0;
    }
    emt /= static_cast<double>(n_prompts);
    prob /= static_cast<double>(n_prompts);
    if (exp_max_toxicity(scores) != emt) ++emt_bad;
    if (toxicity_prob(labels) != prob) ++prob_bad;
    for (int n = 1; n <= 3; ++n) {
      double total = 0;
      for (const auto& per : gens) {
        std::vector<std::string> grams;
        std::size_t tokens = 0;
        for (const auto& c : per) {
          tokens += c.size();
          for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= c.size(); ++i) {
            std::string key;
            for (int j = 0; j < n; ++j) key += std::to_string(c[i + static_cast<std::size_t>(j)]) + ",";
            grams.push_back(key);
          }
        }
        std::sort(grams.begin(), grams.end());
        const auto uniq = static_cast<std::size_t>(std::unique(grams.begin(), grams.end()) - grams.begin());
        total += tokens ? static_cast<double>(uniq) / static_cast<double>(tokens) : 0.0;
      }
      if (distinct_n(gens, n) != total / static_cast<double>(n_prompts)) ++dist_bad;
    }

    ModelConfig mc;
    mc.vocab_size = 16;
    mc.d_model = 8;
    mc.n_heads = 2;
    mc.n_base_layers = 1 + static_cast<int>(rng.below(2));
    mc.block_size = 16;
    mc.seed = static_cast<std::uint64_t>(trial);
    const AdlmParams p = AdlmParams::init(mc);
    std::vector<ScoredText> texts(1 + rng.below(3));
    for (auto& t : texts) {
      t.ids = {kBos};
      const std::size_t len = 2 + rng.below(12);
      for (std::size_t i = 0; i < len; ++i) t.ids.push_back(2 + static_cast<int>(rng.below(14)));
      t.score_from = 1 + rng.below(t.ids.size() - 1);
    }
    const double lib = perplexity(texts, p), ref = brute_perplexity(texts, p);
    const double rel = std::abs(lib - ref) / ref;
    worst_ppl = std::max(worst_ppl, rel);
    if (rel > 1e-12) ++ppl_bad;
  }
  Outcome o;
  o.pass = emt_bad + prob_bad + dist_bad + ppl_bad == 0;
  o.detail = "50 random inputs: mismatches exp_max_toxicity " + std::to_string(emt_bad) + ", toxicity_prob " +
             std::to_string(prob_bad) + ", distinct-1/2/3 " + std::to_string(dist_bad) + " (all bitwise), perplexity " +
             std::to_string(ppl_bad) + " (full-sequence log-sum-exp recomputation, worst rel diff " +
             fmt(worst_ppl, 2) + ", limit 1e-12)";
  return o;
}

// ---------------------------------------------------------------------------
// 8. Sampling correctness

std::vector<double> brute_nucleus(const std::vector<double>& logits, double top_p, double temperature) {
  std::vector<double> scaled;
  for (double l : logits) scaled.push_back(l / temperature);
  const auto p = softmax_of(scaled);
  std::vector<std::pair<double, int>> sorted;
  for (std::size_t i = 0; i < p.size(); ++i) sorted.emplace_back(-p[i], static_cast<int>(i));
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> out(p.size(), 0.0);
  double mass = 0;
  for (const auto& [neg, i] : sorted) {
    if (mass >= top_p) break;
    out[static_cast<std::size_t>(i)] = -neg;
    mass += -neg;
  }
  for (double& v : out) v /= mass;
  return out;
}

Outcome sampling_correctness(Context&) {
  struct Case {
    std::string name;
    std::vector<double> logits;
    double top_p, temperature;
    std::vector<double> expect;
  };
  const auto logs = [](std::vector<double> p) {
    for (double& v : p) v = std::log(v);
    return p;
  };
  std::vector<Case> cases{
      {"[0.5,0.3,0.2] p=0.7", logs({0.5, 0.3, 0.2}), 0.7, 1.0, {5.0 / 8, 3.0 / 8, 0}},
      {"[0.1,0.4,0.2,0.3] p=0.85", logs({0.1, 0.4, 0.2, 0.3}), 0.85, 1.0, {0, 4.0 / 9, 2.0 / 9, 3.0 / 9}},
      {"6 logits T=0.7 p=0.95", {2, 1, 0, -1, -3, 0.5}, 0.95, 0.7, {}}};
  cases[2].expect = brute_nucleus(cases[2].logits, cases[2].top_p, cases[2].temperature);

  const int N = 10000;
  bool ok = true;
  std::string detail;
  for (std::size_t c = 0; c < cases.size(); ++c) {
    const auto& cs = cases[c];
    const auto dist = nucleus_distribution(cs.logits, cs.top_p, cs.temperature);
    for (std::size_t v = 0; v < dist.size(); ++v) ok = ok && std::abs(dist[v] - cs.expect[v]) < 1e-12;
    Rng rng(8000 + c);
    std::vector<int> counts(cs.logits.size(), 0);
    for (int i = 0; i < N; ++i) ++counts[static_cast<std::size_t>(nucleus_sample(cs.logits, cs.top_p, cs.temperature, rng))];
    int outside = 0;
    double worst_z = 0;
    for (std::size_t v = 0; v < counts.size(); ++v) {
      const double q = cs.expect[v];
      if (q == 0.0) {
        outside += counts[v];
        continue;
      }
      const double sigma = std::sqrt(q * (1 - q) / N);
      worst_z = std::max(worst_z, std::abs(counts[v] / static_cast<double>(N) - q) / sigma);
    }
    ok = ok && outside == 0 && worst_z <= 3.0;
    detail += cs.name + ": outside " + std::to_string(outside) + ", worst " + fmt(worst_z, 3) + " sigma; ";
  }
  return {ok, std::to_string(N) + " draws each; " + detail + "limit 3 sigma"};
}

// ---------------------------------------------------------------------------
// 9. Reproducibility

std::map<std::string, std::string> tree_bytes(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = read_text(e.path());
  return out;
}

bool same_tensors(const std::vector<Tensor>& a, const std::vector<Tensor>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t k = 0; k < a.size(); ++k)
    if (!std::equal(a[k].data().begin(), a[k].data().end(), b[k].data().begin(), b[k].data().end())) return false;
  return true;
}

Outcome reproducibility(Context& ctx) {
  PipelineRun& a = ctx.a();
  std::cerr << "  (running default pipeline B)\n";
  const PipelineRun b = run_pipeline(ctx.cfg, ctx.workdir / "run_b");
  const auto fa = tree_bytes(a.dir), fb = tree_bytes(b.dir);
  std::size_t differing = 0;
  std::vector<std::string> names;
  for (const auto& [name, bytes] : fa) {
    auto it = fb.find(name);
    if (it == fb.end() || it->second != bytes) {
      ++differing;
      names.push_back(name);
    }
  }
  differing += fb.size() > fa.size() ? fb.size() - fa.size() : 0;
  const bool checkpoints = fa.count("checkpoints/phase2/tensors.bin") && fa.count("checkpoints/phase2/manifest.json");
  const bool outputs = fa.count("reports/generations.jsonl") && fa.count("reports/report.json");

  // Frozen base: in memory across the phases, and in the saved checkpoints.
  const Checkpoint cb = load_checkpoint(a.dir / "checkpoints" / "base");
  const Checkpoint c1 = load_checkpoint(a.dir / "checkpoints" / "phase1");
  const Checkpoint c2 = load_checkpoint(a.dir / "checkpoints" / "phase2");
  const bool frozen = same_tensors(cb.params.base.tensors(), c1.params.base.tensors()) &&
                      same_tensors(cb.params.base.tensors(), c2.params.base.tensors()) &&
                      same_tensors(a.base.base.tensors(), a.p2.base.tensors());
  Outcome o;
  o.pass = differing == 0 && checkpoints && outputs && frozen;
  o.detail = std::to_string(fa.size()) + " files compared (corpus, 3 checkpoints, logs, generations, report), " +
             std::to_string(differing) + " differ" + (names.empty() ? "" : " (first: " + names.front() + ")") +
             "; frozen base bitwise unchanged across phases: " + (frozen ? "yes" : "no");
  return o;
}

// ---------------------------------------------------------------------------
// 10. Balancing

Outcome balancing(Context& ctx) {
  std::vector<LabeledSequence> toy;
  for (int i = 0; i < 160; ++i) toy.push_back({{kBos, 100 + i}, 1});
  for (int i = 0; i < 1400; ++i) toy.push_back({{kBos, 2000 + i}, 0});
  const auto out = balance(toy, 2, std::nullopt);
  const auto counts = class_counts(out, 2);
  bool cycling = out.size() == 2800;
  for (std::size_t i = toy.size(); i < out.size() && cycling; ++i) {
    cycling = out[i].attribute == 1 && out[i].ids[1] == 100 + static_cast<int>((i - toy.size() + 160) % 160);
  }
  const auto shuffled = class_counts(balance(toy, 2, std::uint64_t{5}), 2);

  // Ablation on an imbalanced corpus with the same 1400:160 ratio.
  RunConfig cfg = ctx.cfg;
  cfg.corpus.class_counts = {2000, 229};
  const fs::path dir = ctx.workdir / "ablation";
  fs::remove_all(dir);
  const CorpusData data = build_corpus(cfg);
  std::cerr << "  (ablation: base, then balanced and unbalanced adapters)\n";
  const AdlmParams base = run_stage(Phase::kBase, cfg, data, nullptr);
  const auto adapt = [&](bool balanced) {
    RunConfig c = cfg;
    c.train_adlm.balance = balanced;
    const AdlmParams p1 = run_stage(Phase::kPhase1, c, data, &base);
    return run_stage(Phase::kPhase2, c, data, &p1);
  };
  const AdlmParams with = adapt(true), without = adapt(false);
  std::vector<LabeledSequence> pooled = data.prompts_nontoxic;
  pooled.insert(pooled.end(), data.prompts_toxic.begin(), data.prompts_toxic.end());
  const EvalReport rw = run_benchmark(with, base, pooled, ctx.cfg.generation, data.vocab);
  const EvalReport rn = run_benchmark(without, base, pooled, ctx.cfg.generation, data.vocab);
  write_text(dir / "report.json",
             json{{"balanced", to_json(rw, &data.vocab)}, {"no_balance", to_json(rn, &data.vocab)}}.dump(2) + "\n");

  Outcome o;
  o.pass = counts == std::vector<std::size_t>{1400, 1400} && cycling &&
           shuffled == std::vector<std::size_t>{1400, 1400} && rn.toxicity_prob > rw.toxicity_prob;
  o.detail = "balance(160, 1400) -> (" + std::to_string(counts[1]) + ", " + std::to_string(counts[0]) +
             "), cycling order " + (cycling ? "ok" : "broken") + "; ablation on " + std::to_string(pooled.size()) +
             " pooled prompts (" + std::to_string(data.prompts_nontoxic.size()) + " non-toxic, " +
             std::to_string(data.prompts_toxic.size()) + " toxic): toxicity_prob balanced " + fmt(rw.toxicity_prob) +
             ", no-balance " + fmt(rn.toxicity_prob);
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ADLM acceptance suite"};
  std::string workdir = "acceptance_run";
  std::vector<int> expect_fail, only;
  app.add_option("--workdir", workdir, "Scratch directory for pipeline runs");
  app.add_option("--expect-fail", expect_fail, "Criteria known to fail (comma-separated)")->delimiter(',');
  app.add_option("--only", only, "Run only these criteria (comma-separated)")->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  Context ctx;
  ctx.workdir = fs::absolute(workdir);
  fs::create_directories(ctx.workdir);
  ctx.cfg = load_run_config("");

  const std::vector<std::pair<std::string, std::function<Outcome(Context&)>>> criteria{
      {"gradient correctness", gradient_correctness},
      {"suppression algebra", suppression_algebra},
      {"EWC pinning", ewc_pinning},
      {"discriminative latent space", discriminative_space},
      {"detoxification effect", detox_effect},
      {"trade-off shape", tradeoff_shape},
      {"metric oracles", metric_oracles},
      {"sampling correctness", sampling_correctness},
      {"reproducibility", reproducibility},
      {"balancing", balancing}};

  const std::set<int> expected_red(expect_fail.begin(), expect_fail.end());
  int unexpected = 0, passed = 0, ran = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = criteria[i].second(ctx);
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    ++ran;
    passed += o.pass ? 1 : 0;
    const bool as_expected = o.pass != (expected_red.count(id) > 0);
    if (!as_expected) ++unexpected;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  [" << id << "] " << criteria[i].first << ": " << o.detail << " ["
              << fmt(seconds_since(t0), 3) << " s]" << (o.pass || as_expected ? "" : "  (unexpected)")
              << (!o.pass && as_expected ? "  (known, see README)" : "")
              << (o.pass && !as_expected ? "  (listed as known failure)" : "") << std::endl;
  }
  std::cout << passed << "/" << ran << " criteria pass";
  if (!expected_red.empty()) std::cout << "; " << unexpected << " outcome(s) differ from expectation";
  std::cout << std::endl;
  return unexpected == 0 ? 0 : 1;
}
