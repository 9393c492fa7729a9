// Copyright 2026 The ADLM Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "adlm/checkpoint.hpp"
#include "adlm/config.hpp"
#include "adlm/corpus.hpp"
#include "adlm/decoding.hpp"
#include "adlm/eval.hpp"
#include "adlm/training.hpp"

namespace adlm {

/// Contents of a corpus directory as written by write_corpus_dir.
struct CorpusData {
  Vocab vocab;
  std::vector<LabeledSequence> train, val, test;
  std::vector<LabeledSequence> prompts_toxic, prompts_nontoxic;
};

inline CorpusData build_corpus(const RunConfig& cfg) {
  auto [vocab, all] = make_corpus(cfg.corpus);
  CorpusSplits s = split_corpus(std::move(all), cfg.split.val_fraction, cfg.split.test_fraction, cfg.seed);
  PromptSets prompts = make_prompts(s.test, vocab, cfg.prompts.min_words, cfg.prompts.max_words,
                                    static_cast<std::size_t>(cfg.prompts.max_per_set), cfg.seed);
  return {std::move(vocab), std::move(s.train), std::move(s.val), std::move(s.test), std::move(prompts.toxic),
          std::move(prompts.nontoxic)};
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline Vocab load_vocab(const std::filesystem::path& path) {
  try {
    return Vocab::from_json(nlohmann::json::parse(read_text(path)));
  } catch (const nlohmann::json::exception& e) {
    throw Error("vocab: " + path.string() + ": " + e.what());
  }
}

inline void write_corpus_dir(const CorpusData& c, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_text(dir / "vocab.json", c.vocab.to_json().dump(2) + "\n");
  save_jsonl((dir / "train.jsonl").string(), c.train, c.vocab);
  save_jsonl((dir / "val.jsonl").string(), c.val, c.vocab);
  save_jsonl((dir / "test.jsonl").string(), c.test, c.vocab);
  save_jsonl((dir / "prompts_toxic.jsonl").string(), c.prompts_toxic, c.vocab);
  save_jsonl((dir / "prompts_nontoxic.jsonl").string(), c.prompts_nontoxic, c.vocab);
}

inline CorpusData read_corpus_dir(const std::filesystem::path& dir) {
  CorpusData c;
  c.vocab = load_vocab(dir / "vocab.json");
  c.train = load_jsonl((dir / "train.jsonl").string(), c.vocab);
  c.val = load_jsonl((dir / "val.jsonl").string(), c.vocab);
  c.test = load_jsonl((dir / "test.jsonl").string(), c.vocab);
  c.prompts_toxic = load_jsonl((dir / "prompts_toxic.jsonl").string(), c.vocab);
  c.prompts_nontoxic = load_jsonl((dir / "prompts_nontoxic.jsonl").string(), c.vocab);
  return c;
}

/// Emits progress records and, at each epoch end, the held-out LM loss.
using LogSink = std::function<void(const nlohmann::json&)>;

/// Runs one training stage. `init` must hold the base model for phase1 and a
/// phase-1 model for phase2.
inline AdlmParams run_stage(Phase stage, const RunConfig& cfg, const CorpusData& data, const AdlmParams* init,
                            const LogSink& log = {}) {
  TrainHooks hooks;
  if (log) hooks.on_progress = [&](const Progress& p) { log(nlohmann::json(p)); };
  const auto epoch_hook = [&](const std::string& phase, bool adlm) {
    return [&, phase, adlm](int epoch, const AdlmParams& p) {
      if (!log || data.val.empty()) return;
      nlohmann::json j = {{"phase", phase}, {"epoch", epoch}};
      if (adlm) {
        j["val_lm_loss"] = evaluate_lm_loss(data.val, p);
      } else {
        NoGradGuard no_grad;
        const auto ex = make_examples(data.val, static_cast<std::size_t>(p.config.block_size), true);
        j["val_lm_loss"] = base_lm_loss(ex, p).item();
      }
      if (phase == "phase2") j["val_disc_accuracy"] = discriminator_accuracy(data.val, p);
      log(j);
    };
  };

  switch (stage) {
    case Phase::kBase:
      hooks.on_epoch_end = epoch_hook("base", false);
      return train_base(data.train, cfg.model, cfg.train_base, hooks);
    case Phase::kPhase1:
    case Phase::kPhase2: {
      const bool p2 = stage == Phase::kPhase2;
      if (!init) throw Error(std::string(p2 ? "phase2" : "phase1") + " needs an --init checkpoint");
      if (!p2 && init->phase != Phase::kBase) throw Error("phase1 must start from a base checkpoint");
      if (p2 && (init->phase != Phase::kPhase1 || !init->proj_star || !init->fisher)) {
        throw Error("phase2 requires a phase1 checkpoint (anchor block and Fisher diagonal); run --stage phase1 first");
      }
      if (init->config != cfg.model) throw Error("init checkpoint model config differs from the run config");
      const auto n_attr = static_cast<std::size_t>(cfg.model.n_attributes);
      const auto train = cfg.train_adlm.balance ? balance(data.train, n_attr, cfg.seed) : data.train;
      hooks.on_epoch_end = epoch_hook(p2 ? "phase2" : "phase1", true);
      return p2 ? train_phase2(train, *init, cfg.train_adlm, hooks) : train_phase1(train, *init, cfg.train_adlm, hooks);
    }
  }
  throw Error("unknown stage");
}

inline CheckpointMeta checkpoint_meta(const RunConfig& cfg, const Vocab& vocab) {
  CheckpointMeta m;
  m.vocab = vocab;
  m.seed = cfg.seed;
  m.lambda_ewc = cfg.train_adlm.lambda_ewc;
  m.run_config = to_json(cfg);
  return m;
}

/// Decoding setup for a checkpoint: base checkpoints decode unconditionally.
inline GenerationConfig generation_for(const AdlmParams& p, GenerationConfig g) {
  if (p.phase == Phase::kBase) g.mode = DecodeMode::kBase;
  return g;
}

/// One JSON line per generated sample.
inline std::vector<nlohmann::json> generation_records(const AdlmParams& p, const std::vector<LabeledSequence>& prompts,
                                                      const GenerationConfig& g, const Vocab& vocab) {
  std::vector<nlohmann::json> out;
  const std::string attr = g.mode == DecodeMode::kBase
                               ? std::string("none")
                               : vocab.attribute_names().at(static_cast<std::size_t>(g.desired_attribute));
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    for (int s = 0; s < g.n_samples; ++s) {
      const auto cont = generate(prompts[i].ids, p, g, i, static_cast<std::size_t>(s));
      out.push_back({{"prompt", detokenize(prompts[i].ids, vocab)},
                     {"continuation", detokenize(cont, vocab)},
                     {"attribute", attr},
                     {"alpha", g.mode == DecodeMode::kBase ? 0.0 : g.alpha},
                     {"seed", g.seed},
                     {"toxicity", toxicity_score(cont, vocab)}});
    }
  }
  return out;
}

inline std::string to_jsonl(const std::vector<nlohmann::json>& records) {
  std::string out;
  for (const auto& r : records) out += r.dump() + "\n";
  return out;
}

/// Benchmark on both prompt sets; perplexity is taken under the checkpoint's
/// own frozen base.
inline nlohmann::json evaluate_checkpoint(const AdlmParams& p, const CorpusData& data, const GenerationConfig& g) {
  const GenerationConfig gg = generation_for(p, g);
  nlohmann::json report = {{"phase", to_string(p.phase)}, {"generation", gg}};
  if (!data.prompts_nontoxic.empty()) {
    report["nontoxic"] = to_json(run_benchmark(p, p, data.prompts_nontoxic, gg, data.vocab), &data.vocab);
  }
  if (!data.prompts_toxic.empty()) {
    report["toxic"] = to_json(run_benchmark(p, p, data.prompts_toxic, gg, data.vocab), &data.vocab);
  }
  return report;
}

}  // namespace adlm
