// Copyright 2026 The ADLM Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "adlm/corpus.hpp"
#include "adlm/decoding.hpp"
#include "adlm/model.hpp"
#include "adlm/training.hpp"

namespace adlm {

struct SplitConfig {
  double val_fraction = 0.1;
  double test_fraction = 0.1;
};

struct PromptConfig {
  int min_words = 3;
  int max_words = 5;
  int max_per_set = 100;
};

struct PathConfig {
  std::string corpus = "corpus";
  std::string checkpoints = "checkpoints";
  std::string reports = "reports";
};

/// Everything one pipeline run needs. The top-level seed drives model init,
/// shuffling, splitting, prompt selection and sampling; the corpus keeps its
/// own seed so the data can stay fixed while the run seed varies. Model
/// vocabulary size and attribute count follow the corpus.
struct RunConfig {
  std::uint64_t seed = 0;
  CorpusSpec corpus;
  SplitConfig split;
  PromptConfig prompts;
  ModelConfig model;
  TrainConfig train_base;
  TrainConfig train_adlm;
  GenerationConfig generation;
  std::string desired_attribute = "nontoxic";
  std::string undesired_attribute = "toxic";
  PathConfig paths;

  RunConfig() {
    train_base.lr0 = 2e-3;
    train_base.epochs = 4;
    train_base.block_size = 32;
    train_adlm.lr0 = 1e-3;
    train_adlm.epochs = 3;
    train_adlm.block_size = 32;
  }

  /// Propagates the seed and the corpus-derived sizes into the sections.
  void resolve() {
    model.vocab_size = corpus.vocab_size;
    model.n_attributes = static_cast<int>(corpus.attribute_names.size());
    model.seed = seed;
    train_base.seed = seed;
    train_adlm.seed = seed;
    generation.seed = seed;
    const auto index = [&](const std::string& name, const char* field) {
      for (std::size_t i = 0; i < corpus.attribute_names.size(); ++i)
        if (corpus.attribute_names[i] == name) return static_cast<int>(i);
      throw Error(std::string("config: field '") + field + "': unknown attribute '" + name + "'");
    };
    generation.desired_attribute = index(desired_attribute, "desired_attribute");
    generation.undesired_attribute = index(undesired_attribute, "undesired_attribute");
  }

  void validate_all() const {
    validate(corpus);
    validate(model);
    validate(train_base);
    validate(train_adlm);
    validate(generation, model.n_attributes);
    if (split.val_fraction < 0 || split.test_fraction < 0 || split.val_fraction + split.test_fraction >= 1.0) {
      throw Error("config: field 'split': fractions must be non-negative and sum below 1");
    }
    if (prompts.min_words < 1 || prompts.max_words < prompts.min_words || prompts.max_per_set < 1) {
      throw Error("config: field 'prompts': need 1 <= min_words <= max_words and max_per_set >= 1");
    }
  }
};

namespace detail {

inline nlohmann::json without(nlohmann::json j, std::initializer_list<const char*> keys) {
  for (const char* k : keys) j.erase(k);
  return j;
}

inline const char* kind_name(const nlohmann::json& j) {
  if (j.is_boolean()) return "a boolean";
  if (j.is_number_integer()) return "an integer";
  if (j.is_number()) return "a number";
  if (j.is_string()) return "a string";
  if (j.is_array()) return "an array";
  if (j.is_object()) return "an object";
  return "null";
}

// Checks `user` against the shape of `reference` (a serialized default):
// every key must be known and every value must have the reference's kind.
inline void check_schema(const nlohmann::json& user, const nlohmann::json& reference, const std::string& path) {
  const auto field = [&](const std::string& key) { return path.empty() ? key : path + "." + key; };
  if (!user.is_object()) throw Error("config: field '" + (path.empty() ? std::string("<root>") : path) + "' must be an object");
  for (const auto& [key, value] : user.items()) {
    if (!reference.contains(key)) throw Error("config: unknown field '" + field(key) + "'");
    const auto& ref = reference.at(key);
    bool ok;
    if (ref.is_object()) {
      check_schema(value, ref, field(key));
      continue;
    } else if (ref.is_boolean()) {
      ok = value.is_boolean();
    } else if (ref.is_number_unsigned()) {
      ok = value.is_number_unsigned() || (value.is_number_integer() && value.get<std::int64_t>() >= 0);
    } else if (ref.is_number_integer()) {
      ok = value.is_number_integer();
    } else if (ref.is_number()) {
      ok = value.is_number();
    } else if (ref.is_string()) {
      ok = value.is_string();
    } else if (ref.is_array()) {
      ok = value.is_array();
      if (ok && !ref.empty()) {
        for (const auto& item : value) ok = ok && (item.is_string() == ref.front().is_string());
      } else if (ok) {
        for (const auto& item : value) ok = ok && item.is_number_integer();
      }
    } else {
      ok = true;
    }
    if (!ok) {
      throw Error("config: field '" + field(key) + "' must be " + kind_name(ref) + ", got " + kind_name(value));
    }
  }
}

}  // namespace detail

inline nlohmann::json to_json(const RunConfig& c) {
  using detail::without;
  return {{"seed", c.seed},
          {"corpus", c.corpus},
          {"split", {{"val_fraction", c.split.val_fraction}, {"test_fraction", c.split.test_fraction}}},
          {"prompts",
           {{"min_words", c.prompts.min_words}, {"max_words", c.prompts.max_words}, {"max_per_set", c.prompts.max_per_set}}},
          {"model", without(c.model, {"seed", "vocab_size", "n_attributes"})},
          {"train_base", without(c.train_base, {"seed"})},
          {"train_adlm", without(c.train_adlm, {"seed"})},
          {"generation", without(c.generation, {"seed", "desired_attribute", "undesired_attribute"})},
          {"desired_attribute", c.desired_attribute},
          {"undesired_attribute", c.undesired_attribute},
          {"paths", {{"corpus", c.paths.corpus}, {"checkpoints", c.paths.checkpoints}, {"reports", c.paths.reports}}}};
}

/// Parses a run config; omitted fields keep their defaults. Unknown fields and
/// wrongly typed values are errors that name the field.
inline RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  detail::check_schema(j, to_json(c), "");
  const auto section = [&](const char* key) { return j.contains(key) ? j.at(key) : nlohmann::json::object(); };
  c.seed = j.value("seed", c.seed);
  {
    nlohmann::json merged = c.corpus;
    merged.update(section("corpus"));
    c.corpus = merged.get<CorpusSpec>();
  }
  const auto split = section("split");
  c.split.val_fraction = split.value("val_fraction", c.split.val_fraction);
  c.split.test_fraction = split.value("test_fraction", c.split.test_fraction);
  const auto prompts = section("prompts");
  c.prompts.min_words = prompts.value("min_words", c.prompts.min_words);
  c.prompts.max_words = prompts.value("max_words", c.prompts.max_words);
  c.prompts.max_per_set = prompts.value("max_per_set", c.prompts.max_per_set);
  const auto merge = [&](auto& dst, const char* key) {
    nlohmann::json merged = dst;
    merged.update(section(key));
    dst = merged.get<std::decay_t<decltype(dst)>>();
  };
  merge(c.model, "model");
  merge(c.train_base, "train_base");
  merge(c.train_adlm, "train_adlm");
  merge(c.generation, "generation");
  c.desired_attribute = j.value("desired_attribute", c.desired_attribute);
  c.undesired_attribute = j.value("undesired_attribute", c.undesired_attribute);
  const auto paths = section("paths");
  c.paths.corpus = paths.value("corpus", c.paths.corpus);
  c.paths.checkpoints = paths.value("checkpoints", c.paths.checkpoints);
  c.paths.reports = paths.value("reports", c.paths.reports);
  c.resolve();
  c.validate_all();
  return c;
}

/// Loads `path` (or the defaults when empty) and applies ADLM_SEED from the
/// environment when set.
inline RunConfig load_run_config(const std::string& path) {
  nlohmann::json j = nlohmann::json::object();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw Error("config: cannot open " + path);
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      throw Error("config: " + path + " is not valid JSON: " + e.what());
    }
  }
  if (const char* env = std::getenv("ADLM_SEED"); env && *env) {
    try {
      std::size_t used = 0;
      const unsigned long long seed = std::stoull(env, &used);
      if (used != std::string(env).size() || env[0] == '-') throw std::invalid_argument(env);
      j["seed"] = seed;
    } catch (const std::exception&) {
      throw Error(std::string("config: ADLM_SEED='") + env + "' is not a non-negative integer");
    }
  }
  return run_config_from_json(j);
}

}  // namespace adlm
