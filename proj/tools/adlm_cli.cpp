// Copyright 2026 The ADLM Authors
// SPDX-License-Identifier: Apache-2.0

// Command-line driver: corpus creation, staged training, generation,
// benchmarking, the alpha/lambda sweep and an interactive session.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "adlm/adlm.hpp"

namespace {

using adlm::Error;
using nlohmann::json;
namespace fs = std::filesystem;

struct GenFlags {
  std::optional<double> alpha, top_p, temperature;
  std::optional<int> max_new_tokens, n;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> attr;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--alpha", alpha, "Suppression scale");
    cmd->add_option("--top-p", top_p, "Nucleus mass");
    cmd->add_option("--temperature", temperature, "Softmax temperature");
    cmd->add_option("--max-new-tokens", max_new_tokens, "Continuation length cap");
    cmd->add_option("--n", n, "Samples per prompt");
    cmd->add_option("--seed", seed, "Sampling seed");
    cmd->add_option("--attr", attr, "Desired attribute name");
  }

  void apply(adlm::RunConfig& cfg) const {
    if (seed) cfg.seed = *seed;
    if (alpha) cfg.generation.alpha = *alpha;
    if (top_p) cfg.generation.top_p = *top_p;
    if (temperature) cfg.generation.temperature = *temperature;
    if (max_new_tokens) cfg.generation.max_new_tokens = *max_new_tokens;
    if (n) cfg.generation.n_samples = *n;
    if (attr) {
      if (*attr == cfg.undesired_attribute && cfg.corpus.attribute_names.size() == 2) {
        cfg.undesired_attribute = cfg.desired_attribute;
      }
      cfg.desired_attribute = *attr;
    }
  }
};

void echo_config(const adlm::RunConfig& cfg) { std::cerr << adlm::to_json(cfg).dump(2) << "\n"; }

// Resolves the config and echoes it once all overrides are in place.
adlm::RunConfig finish_config(adlm::RunConfig cfg) {
  cfg.resolve();
  cfg.validate_all();
  echo_config(cfg);
  return cfg;
}

adlm::Checkpoint load_with_vocab(const std::string& path) {
  adlm::Checkpoint ck = adlm::load_checkpoint(path);
  if (!ck.meta.vocab) throw Error("checkpoint " + path + " carries no vocabulary");
  return ck;
}

// Accepts JSONL records with a "text" field or plain text lines.
std::vector<adlm::LabeledSequence> read_prompts(std::istream& in, const adlm::Vocab& vocab) {
  std::vector<adlm::LabeledSequence> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::string text = line;
    if (line.front() == '{') {
      const json j = json::parse(line, nullptr, false);
      if (!j.is_discarded() && j.contains("text") && j.at("text").is_string()) text = j.at("text").get<std::string>();
    }
    out.push_back({adlm::tokenize(text, vocab), 0});
  }
  return out;
}

std::vector<adlm::LabeledSequence> read_prompts(const std::string& path, const adlm::Vocab& vocab) {
  if (path == "-") return read_prompts(std::cin, vocab);
  std::ifstream in(path);
  if (!in) throw Error("cannot open prompts " + path);
  return read_prompts(in, vocab);
}

void write_output(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text << std::flush;
  } else {
    adlm::write_text(path, text);
  }
}

adlm::GenerationConfig generation_for_checkpoint(const adlm::RunConfig& cfg, const adlm::Checkpoint& ck) {
  adlm::GenerationConfig g = cfg.generation;
  const auto& vocab = *ck.meta.vocab;
  g.desired_attribute = vocab.attribute_index(cfg.desired_attribute);
  g.undesired_attribute = vocab.attribute_index(cfg.undesired_attribute);
  g = adlm::generation_for(ck.params, g);
  adlm::validate(g, ck.params.config.n_attributes);
  return g;
}

std::vector<double> parse_list(const std::string& s, const char* what) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw Error(std::string("--") + what + ": '" + item + "' is not a number");
    }
  }
  if (out.empty()) throw Error(std::string("--") + what + ": empty list");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Attribute-discriminative language model toolkit"};
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("--config", config_path, "Run config (JSON)");

  auto* mk = app.add_subcommand("make-corpus", "Generate the synthetic corpus, splits and prompt sets");
  std::string mk_out;
  mk->add_option("--config", config_path, "Run config (JSON)");
  mk->add_option("--out", mk_out, "Output directory");

  auto* tr = app.add_subcommand("train", "Train one stage: base, phase1 or phase2");
  std::string stage, init, tr_out, tr_corpus;
  bool no_balance = false;
  std::optional<double> lambda;
  tr->add_option("--stage", stage, "base|phase1|phase2")->required()->check(CLI::IsMember({"base", "phase1", "phase2"}));
  tr->add_option("--config", config_path, "Run config (JSON)");
  tr->add_option("--init", init, "Checkpoint to start from");
  tr->add_option("--out", tr_out, "Output checkpoint directory")->required();
  tr->add_option("--corpus", tr_corpus, "Corpus directory (default: paths.corpus)");
  tr->add_flag("--no-balance", no_balance, "Skip class balancing");
  tr->add_option("--lambda", lambda, "EWC weight");

  auto* gen = app.add_subcommand("generate", "Sample continuations for prompts");
  std::string gen_ck, gen_prompts, gen_out;
  GenFlags gen_flags;
  gen->add_option("--config", config_path, "Run config (JSON)");
  gen->add_option("--checkpoint", gen_ck, "Checkpoint directory")->required();
  gen->add_option("--prompts", gen_prompts, "Prompt file or - for stdin")->required();
  gen->add_option("--out", gen_out, "Output JSONL (default stdout)");
  gen_flags.add_to(gen);

  auto* ev = app.add_subcommand("eval", "Benchmark a checkpoint on the toxic and non-toxic prompt sets");
  std::string ev_ck, ev_tox, ev_nontox, ev_out;
  GenFlags ev_flags;
  ev->add_option("--config", config_path, "Run config (JSON)");
  ev->add_option("--checkpoint", ev_ck, "Checkpoint directory")->required();
  ev->add_option("--prompts-toxic", ev_tox, "Toxic prompt set (JSONL)");
  ev->add_option("--prompts-nontoxic", ev_nontox, "Non-toxic prompt set (JSONL)");
  ev->add_option("--out", ev_out, "Report path (default stdout)");
  ev_flags.add_to(ev);

  auto* sw = app.add_subcommand("sweep", "Alpha by lambda trade-off table");
  std::string sw_cks, sw_alphas, sw_out, sw_prompts, sw_reference;
  GenFlags sw_flags;
  sw->add_option("--config", config_path, "Run config (JSON)");
  sw->add_option("--checkpoints", sw_cks, "Comma-separated phase2 checkpoints, one per lambda")->required();
  sw->add_option("--alphas", sw_alphas, "Comma-separated alpha values")->required();
  sw->add_option("--out", sw_out, "CSV path (default stdout)");
  sw->add_option("--prompts", sw_prompts, "Prompt set (default: non-toxic prompts of paths.corpus)");
  sw->add_option("--reference", sw_reference, "Perplexity reference checkpoint (default: base of the first)");
  sw_flags.add_to(sw);

  auto* rp = app.add_subcommand("repl", "Interactive generation");
  std::string rp_ck;
  GenFlags rp_flags;
  rp->add_option("--config", config_path, "Run config (JSON)");
  rp->add_option("--checkpoint", rp_ck, "Checkpoint directory")->required();
  rp_flags.add_to(rp);

  CLI11_PARSE(app, argc, argv);

  try {
    adlm::RunConfig cfg = adlm::load_run_config(config_path);

    if (mk->parsed()) {
      cfg = finish_config(cfg);
      const std::string dir = mk_out.empty() ? cfg.paths.corpus : mk_out;
      const adlm::CorpusData data = adlm::build_corpus(cfg);
      adlm::write_corpus_dir(data, dir);
      std::cout << json{{"corpus", dir},
                        {"train", data.train.size()},
                        {"val", data.val.size()},
                        {"test", data.test.size()},
                        {"prompts_toxic", data.prompts_toxic.size()},
                        {"prompts_nontoxic", data.prompts_nontoxic.size()}}
                       .dump()
                << "\n";
    } else if (tr->parsed()) {
      if (no_balance) cfg.train_adlm.balance = false;
      if (lambda) cfg.train_adlm.lambda_ewc = *lambda;
      cfg = finish_config(cfg);
      const adlm::Phase phase = adlm::parse_phase(stage);
      std::optional<adlm::Checkpoint> start;
      if (phase != adlm::Phase::kBase) {
        if (init.empty()) {
          throw Error("--stage " + stage + " requires --init with a " +
                      std::string(phase == adlm::Phase::kPhase1 ? "base" : "phase1") + " checkpoint");
        }
        start = adlm::load_checkpoint(init);
      }
      const adlm::CorpusData data = adlm::read_corpus_dir(tr_corpus.empty() ? cfg.paths.corpus : tr_corpus);
      const adlm::LogSink log = [](const json& j) { std::cout << j.dump() << "\n" << std::flush; };
      const adlm::AdlmParams p = adlm::run_stage(phase, cfg, data, start ? &start->params : nullptr, log);
      adlm::save_checkpoint(p, tr_out, adlm::checkpoint_meta(cfg, data.vocab));
    } else if (gen->parsed()) {
      gen_flags.apply(cfg);
      cfg = finish_config(cfg);
      const adlm::Checkpoint ck = load_with_vocab(gen_ck);
      const auto g = generation_for_checkpoint(cfg, ck);
      const auto prompts = read_prompts(gen_prompts, *ck.meta.vocab);
      write_output(gen_out, adlm::to_jsonl(adlm::generation_records(ck.params, prompts, g, *ck.meta.vocab)));
    } else if (ev->parsed()) {
      ev_flags.apply(cfg);
      cfg = finish_config(cfg);
      const adlm::Checkpoint ck = load_with_vocab(ev_ck);
      adlm::CorpusData data;
      data.vocab = *ck.meta.vocab;
      const fs::path corpus = cfg.paths.corpus;
      data.prompts_toxic = adlm::load_jsonl(ev_tox.empty() ? (corpus / "prompts_toxic.jsonl").string() : ev_tox, data.vocab);
      data.prompts_nontoxic =
          adlm::load_jsonl(ev_nontox.empty() ? (corpus / "prompts_nontoxic.jsonl").string() : ev_nontox, data.vocab);
      json report = adlm::evaluate_checkpoint(ck.params, data, generation_for_checkpoint(cfg, ck));
      report["checkpoint"] = ev_ck;
      write_output(ev_out, report.dump(2) + "\n");
    } else if (sw->parsed()) {
      sw_flags.apply(cfg);
      cfg = finish_config(cfg);
      const auto alphas = parse_list(sw_alphas, "alphas");
      std::vector<adlm::Checkpoint> cks;
      std::stringstream ss(sw_cks);
      for (std::string item; std::getline(ss, item, ',');) cks.push_back(load_with_vocab(item));
      if (cks.empty()) throw Error("--checkpoints: empty list");
      const adlm::Vocab& vocab = *cks.front().meta.vocab;
      std::vector<std::pair<double, const adlm::AdlmParams*>> grid;
      for (const auto& ck : cks) {
        if (ck.params.phase != adlm::Phase::kPhase2) throw Error("sweep expects phase2 checkpoints");
        grid.emplace_back(ck.meta.lambda_ewc, &ck.params);
      }
      std::optional<adlm::Checkpoint> reference;
      if (!sw_reference.empty()) reference = adlm::load_checkpoint(sw_reference);
      const fs::path prompts_path =
          sw_prompts.empty() ? fs::path(cfg.paths.corpus) / "prompts_nontoxic.jsonl" : fs::path(sw_prompts);
      const auto prompts = adlm::load_jsonl(prompts_path.string(), vocab);
      auto g = generation_for_checkpoint(cfg, cks.front());
      if (!sw_flags.n) g.n_samples = static_cast<int>(std::ceil(500.0 / static_cast<double>(std::max<std::size_t>(1, prompts.size()))));
      const auto rows = adlm::sweep_alpha_lambda(alphas, grid, reference ? reference->params : cks.front().params,
                                                 prompts, g, vocab);
      write_output(sw_out, adlm::sweep_csv(rows));
    } else if (rp->parsed()) {
      rp_flags.apply(cfg);
      cfg = finish_config(cfg);
      const adlm::Checkpoint ck = load_with_vocab(rp_ck);
      adlm::repl(ck.params, generation_for_checkpoint(cfg, ck), *ck.meta.vocab, std::cin, std::cout);
    }
  } catch (const std::exception& e) {
    std::cerr << "adlm: error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
