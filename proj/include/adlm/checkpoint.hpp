// Copyright 2026 The ADLM Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "adlm/corpus.hpp"
#include "adlm/model.hpp"

namespace adlm {

inline constexpr const char* kCheckpointFormat = "adlm-checkpoint";
inline constexpr int kCheckpointVersion = 1;
inline constexpr const char* kManifestFile = "manifest.json";
inline constexpr const char* kBlobFile = "tensors.bin";

/// What travels with the tensors: the vocabulary, the seed and whatever run
/// configuration produced the checkpoint.
struct CheckpointMeta {
  std::optional<Vocab> vocab;
  std::uint64_t seed = 0;
  double lambda_ewc = 0.0;
  nlohmann::json run_config = nlohmann::json::object();
};

struct Checkpoint {
  AdlmParams params;
  CheckpointMeta meta;
};

namespace detail {

inline std::uint32_t to_little(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    return ((v & 0xFFu) << 24) | ((v & 0xFF00u) << 8) | ((v >> 8) & 0xFF00u) | (v >> 24);
  }
}

inline void append_f32(std::string& blob, double value) {
  const auto bits = to_little(std::bit_cast<std::uint32_t>(static_cast<float>(value)));
  char bytes[4];
  std::memcpy(bytes, &bits, 4);
  blob.append(bytes, 4);
}

inline double read_f32(const char* p) {
  std::uint32_t bits;
  std::memcpy(&bits, p, 4);
  return static_cast<double>(std::bit_cast<float>(to_little(bits)));
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("checkpoint: cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("checkpoint: cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("checkpoint: write failed for " + path.string());
}

}  // namespace detail

/// Writes `dir/manifest.json` and `dir/tensors.bin`. Tensors are stored as
/// little-endian float32, row-major, concatenated in manifest order.
inline void save_checkpoint(const AdlmParams& params, const std::filesystem::path& dir, const CheckpointMeta& meta = {}) {
  std::filesystem::create_directories(dir);
  AdlmParams p = params;  // shares storage; named() needs a mutable object
  std::string blob;
  nlohmann::json tensors = nlohmann::json::array();
  for (auto& [name, t] : p.named()) {
    const std::size_t offset = blob.size();
    for (double v : t->data()) detail::append_f32(blob, v);
    tensors.push_back({{"name", name}, {"shape", t->shape()}, {"offset", offset}, {"bytes", blob.size() - offset}});
  }
  nlohmann::json manifest = {{"format", kCheckpointFormat},
                             {"version", kCheckpointVersion},
                             {"phase", to_string(p.phase)},
                             {"seed", meta.seed},
                             {"lambda_ewc", meta.lambda_ewc},
                             {"model", p.config},
                             {"blob", kBlobFile},
                             {"blob_bytes", blob.size()},
                             {"tensors", tensors},
                             {"run_config", meta.run_config}};
  if (meta.vocab) manifest["vocab"] = meta.vocab->to_json();
  detail::write_file(dir / kBlobFile, blob);
  detail::write_file(dir / kManifestFile, manifest.dump(2) + "\n");
}

/// Reads a checkpoint written by save_checkpoint. Everything is validated
/// before any value is returned; a bad file yields an Error and nothing else.
inline Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  if (!std::filesystem::exists(dir / kManifestFile)) {
    throw Error("checkpoint: no " + std::string(kManifestFile) + " in " + dir.string());
  }
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(detail::read_file(dir / kManifestFile));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error("checkpoint: malformed manifest in " + dir.string() + ": " + e.what());
  }
  try {
    if (m.value("format", std::string()) != kCheckpointFormat) {
      throw Error("checkpoint: unrecognized format tag in " + dir.string());
    }
    if (m.at("version").get<int>() != kCheckpointVersion) {
      throw Error("checkpoint: unsupported version " + m.at("version").dump() + " (expected " +
                  std::to_string(kCheckpointVersion) + ")");
    }
    const std::string blob = detail::read_file(dir / m.value("blob", std::string(kBlobFile)));
    const auto declared = m.at("blob_bytes").get<std::size_t>();
    if (blob.size() != declared) {
      throw Error("checkpoint: blob holds " + std::to_string(blob.size()) + " bytes, manifest declares " +
                  std::to_string(declared));
    }

    Checkpoint ck;
    ModelConfig cfg = m.at("model").get<ModelConfig>();
    validate(cfg);
    AdlmParams p = AdlmParams::init(cfg);
    p.phase = parse_phase(m.at("phase").get<std::string>());

    std::map<std::string, nlohmann::json> entries;
    for (const auto& e : m.at("tensors")) entries[e.at("name").get<std::string>()] = e;
    const auto d = static_cast<std::size_t>(cfg.d_model);
    if (entries.count("proj_star.ln1.g")) p.proj_star = BlockParams::zeros(d);
    if (entries.count("fisher.ln1.g")) p.fisher = BlockParams::zeros(d);

    auto named = p.named();
    if (named.size() != entries.size()) {
      throw Error("checkpoint: manifest lists " + std::to_string(entries.size()) + " tensors, phase '" +
                  to_string(p.phase) + "' expects " + std::to_string(named.size()));
    }
    for (auto& [name, t] : named) {
      auto it = entries.find(name);
      if (it == entries.end()) throw Error("checkpoint: tensor '" + name + "' missing from manifest");
      const auto shape = it->second.at("shape").get<Shape>();
      const auto offset = it->second.at("offset").get<std::size_t>();
      const auto bytes = it->second.at("bytes").get<std::size_t>();
      if (shape != t->shape()) {
        throw Error("checkpoint: tensor '" + name + "' has shape " + to_string(shape) + ", model expects " +
                    to_string(t->shape()));
      }
      if (bytes != 4 * numel(shape) || offset > blob.size() || bytes > blob.size() - offset) {
        throw Error("checkpoint: tensor '" + name + "' lies outside the " + std::to_string(blob.size()) + "-byte blob");
      }
      std::vector<double> values(numel(shape));
      for (std::size_t i = 0; i < values.size(); ++i) values[i] = detail::read_f32(blob.data() + offset + 4 * i);
      *t = Tensor::from(shape, std::move(values));
    }
    ck.params = std::move(p);
    ck.meta.seed = m.value("seed", std::uint64_t{0});
    ck.meta.lambda_ewc = m.value("lambda_ewc", 0.0);
    ck.meta.run_config = m.value("run_config", nlohmann::json::object());
    if (m.contains("vocab")) ck.meta.vocab = Vocab::from_json(m.at("vocab"));
    return ck;
  } catch (const nlohmann::json::exception& e) {
    throw Error("checkpoint: invalid manifest in " + dir.string() + ": " + e.what());
  }
}

}  // namespace adlm
