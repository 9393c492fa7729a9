// Copyright 2026 The ADLM Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "adlm/ops.hpp"

namespace adlm {

struct ModelConfig {
  int vocab_size = 128;
  int d_model = 64;
  int n_base_layers = 2;
  int n_heads = 4;
  int block_size = 32;
  int n_attributes = 2;
  std::uint64_t seed = 1;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline void validate(const ModelConfig& c) {
  if (c.vocab_size <= 4) throw Error("model: vocab_size must exceed the reserved ids");
  if (c.d_model < 1 || c.n_heads < 1 || c.d_model % c.n_heads != 0) {
    throw Error("model: d_model (" + std::to_string(c.d_model) + ") must be divisible by n_heads (" +
                std::to_string(c.n_heads) + ")");
  }
  if (c.n_base_layers < 1) throw Error("model: n_base_layers must be >= 1");
  if (c.block_size < 2) throw Error("model: block_size must be >= 2");
  if (c.n_attributes < 2) throw Error("model: n_attributes must be >= 2");
}

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"vocab_size", c.vocab_size}, {"d_model", c.d_model},     {"n_base_layers", c.n_base_layers},
       {"n_heads", c.n_heads},       {"block_size", c.block_size}, {"n_attributes", c.n_attributes},
       {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  c.vocab_size = j.value("vocab_size", d.vocab_size);
  c.d_model = j.value("d_model", d.d_model);
  c.n_base_layers = j.value("n_base_layers", d.n_base_layers);
  c.n_heads = j.value("n_heads", d.n_heads);
  c.block_size = j.value("block_size", d.block_size);
  c.n_attributes = j.value("n_attributes", d.n_attributes);
  c.seed = j.value("seed", d.seed);
}

using NamedTensors = std::vector<std::pair<std::string, Tensor*>>;

namespace detail {

inline Tensor normal_tensor(Shape shape, Rng& rng, double stddev) {
  std::vector<double> v(numel(shape));
  for (double& x : v) x = rng.normal(0.0, stddev);
  return Tensor::from(std::move(shape), std::move(v));
}

inline Tensor filled(Shape shape, double value) {
  auto t = Tensor::zeros(std::move(shape));
  for (double& x : t.mutable_data()) x = value;
  return t;
}

constexpr double kInitStd = 0.02;

}  // namespace detail

/// One pre-norm transformer block: causal multi-head attention and a GELU MLP,
/// each wrapped in a residual connection.
struct BlockParams {
  Tensor ln1_g, ln1_b;
  Tensor w_qkv, b_qkv;
  Tensor w_o, b_o;
  Tensor ln2_g, ln2_b;
  Tensor w_fc, b_fc;
  Tensor w_proj, b_proj;

  static BlockParams init(std::size_t d, Rng& rng) {
    using detail::filled;
    using detail::normal_tensor;
    BlockParams b;
    b.ln1_g = filled({d}, 1.0);
    b.ln1_b = filled({d}, 0.0);
    b.w_qkv = normal_tensor({d, 3 * d}, rng, detail::kInitStd);
    b.b_qkv = filled({3 * d}, 0.0);
    b.w_o = normal_tensor({d, d}, rng, detail::kInitStd);
    b.b_o = filled({d}, 0.0);
    b.ln2_g = filled({d}, 1.0);
    b.ln2_b = filled({d}, 0.0);
    b.w_fc = normal_tensor({d, 4 * d}, rng, detail::kInitStd);
    b.b_fc = filled({4 * d}, 0.0);
    b.w_proj = normal_tensor({4 * d, d}, rng, detail::kInitStd);
    b.b_proj = filled({d}, 0.0);
    return b;
  }

  static BlockParams zeros(std::size_t d) {
    BlockParams b;
    b.ln1_g = Tensor::zeros({d});
    b.ln1_b = Tensor::zeros({d});
    b.w_qkv = Tensor::zeros({d, 3 * d});
    b.b_qkv = Tensor::zeros({3 * d});
    b.w_o = Tensor::zeros({d, d});
    b.b_o = Tensor::zeros({d});
    b.ln2_g = Tensor::zeros({d});
    b.ln2_b = Tensor::zeros({d});
    b.w_fc = Tensor::zeros({d, 4 * d});
    b.b_fc = Tensor::zeros({4 * d});
    b.w_proj = Tensor::zeros({4 * d, d});
    b.b_proj = Tensor::zeros({d});
    return b;
  }

  NamedTensors named() {
    return {{"ln1.g", &ln1_g}, {"ln1.b", &ln1_b}, {"attn.w_qkv", &w_qkv}, {"attn.b_qkv", &b_qkv},
            {"attn.w_o", &w_o}, {"attn.b_o", &b_o}, {"ln2.g", &ln2_g},      {"ln2.b", &ln2_b},
            {"mlp.w_fc", &w_fc}, {"mlp.b_fc", &b_fc}, {"mlp.w_proj", &w_proj}, {"mlp.b_proj", &b_proj}};
  }
  std::vector<Tensor> tensors() const {
    return {ln1_g, ln1_b, w_qkv, b_qkv, w_o, b_o, ln2_g, ln2_b, w_fc, b_fc, w_proj, b_proj};
  }

  BlockParams clone() const {
    BlockParams out = *this;
    for (auto& [name, t] : out.named()) *t = t->clone();
    return out;
  }
};

/// Frozen base language model: token and position embeddings, a stack of
/// blocks and a final layer norm (the transformer), plus the vocabulary head.
struct BaseLm {
  Tensor tok_emb, pos_emb;
  std::vector<BlockParams> blocks;
  Tensor lnf_g, lnf_b;
  Tensor head_w, head_b;

  static BaseLm init(const ModelConfig& c, Rng& rng) {
    const auto d = static_cast<std::size_t>(c.d_model);
    BaseLm b;
    b.tok_emb = detail::normal_tensor({static_cast<std::size_t>(c.vocab_size), d}, rng, detail::kInitStd);
    b.pos_emb = detail::normal_tensor({static_cast<std::size_t>(c.block_size), d}, rng, detail::kInitStd);
    for (int l = 0; l < c.n_base_layers; ++l) b.blocks.push_back(BlockParams::init(d, rng));
    b.lnf_g = detail::filled({d}, 1.0);
    b.lnf_b = detail::filled({d}, 0.0);
    b.head_w = detail::normal_tensor({d, static_cast<std::size_t>(c.vocab_size)}, rng, detail::kInitStd);
    b.head_b = detail::filled({static_cast<std::size_t>(c.vocab_size)}, 0.0);
    return b;
  }

  NamedTensors named() {
    NamedTensors out{{"base.tok_emb", &tok_emb}, {"base.pos_emb", &pos_emb}};
    for (std::size_t l = 0; l < blocks.size(); ++l)
      for (auto& [name, t] : blocks[l].named()) out.emplace_back("base.blocks." + std::to_string(l) + "." + name, t);
    out.emplace_back("base.ln_f.g", &lnf_g);
    out.emplace_back("base.ln_f.b", &lnf_b);
    out.emplace_back("head.w", &head_w);
    out.emplace_back("head.b", &head_b);
    return out;
  }
  std::vector<Tensor> transformer_tensors() const {
    std::vector<Tensor> out{tok_emb, pos_emb};
    for (const auto& b : blocks)
      for (const auto& t : b.tensors()) out.push_back(t);
    out.push_back(lnf_g);
    out.push_back(lnf_b);
    return out;
  }
  std::vector<Tensor> head_tensors() const { return {head_w, head_b}; }
  std::vector<Tensor> tensors() const {
    auto out = transformer_tensors();
    out.push_back(head_w);
    out.push_back(head_b);
    return out;
  }
};

enum class Phase { kBase, kPhase1, kPhase2 };

inline std::string to_string(Phase p) {
  switch (p) {
    case Phase::kBase:
      return "base";
    case Phase::kPhase1:
      return "phase1";
    case Phase::kPhase2:
      return "phase2";
  }
  return "?";
}

inline Phase parse_phase(const std::string& s) {
  if (s == "base") return Phase::kBase;
  if (s == "phase1") return Phase::kPhase1;
  if (s == "phase2") return Phase::kPhase2;
  throw Error("unknown training phase '" + s + "'");
}

/// Full parameter store. `phase` records how far training has progressed and
/// therefore which partitions carry trained values: the base always, the
/// attribute embedding and projection block from phase 1, the discriminator
/// from phase 2. The anchor copy and Fisher diagonal exist from phase 1 on.
struct AdlmParams {
  ModelConfig config;
  Phase phase = Phase::kBase;
  BaseLm base;                       // theta_T and theta_H
  Tensor attr_emb;                   // theta_a: [|A|, d]
  BlockParams proj;                  // theta_B
  Tensor disc_w, disc_b;             // theta_D: [d, |A|], [|A|]
  std::optional<BlockParams> proj_star;  // theta_B*
  std::optional<BlockParams> fisher;     // diagonal, congruent with theta_B

  static AdlmParams init(const ModelConfig& c) {
    validate(c);
    AdlmParams p;
    p.config = c;
    Rng rng(c.seed);
    p.base = BaseLm::init(c, rng);
    p.init_adapter(rng);
    return p;
  }

  // Fresh theta_a, theta_B and theta_D drawn from `rng`.
  void init_adapter(Rng& rng) {
    const auto d = static_cast<std::size_t>(config.d_model);
    const auto a = static_cast<std::size_t>(config.n_attributes);
    attr_emb = detail::normal_tensor({a, d}, rng, detail::kInitStd);
    proj = BlockParams::init(d, rng);
    init_discriminator(rng);
  }

  void init_discriminator(Rng& rng) {
    const auto d = static_cast<std::size_t>(config.d_model);
    const auto a = static_cast<std::size_t>(config.n_attributes);
    disc_w = detail::normal_tensor({d, a}, rng, detail::kInitStd);
    disc_b = detail::filled({a}, 0.0);
  }

  /// Tensors that exist at the current phase, with stable names.
  NamedTensors named() {
    NamedTensors out = base.named();
    if (phase == Phase::kBase) return out;
    out.emplace_back("attr_emb", &attr_emb);
    for (auto& [name, t] : proj.named()) out.emplace_back("proj." + name, t);
    if (phase == Phase::kPhase2) {
      out.emplace_back("disc.w", &disc_w);
      out.emplace_back("disc.b", &disc_b);
    }
    if (proj_star)
      for (auto& [name, t] : proj_star->named()) out.emplace_back("proj_star." + name, t);
    if (fisher)
      for (auto& [name, t] : fisher->named()) out.emplace_back("fisher." + name, t);
    return out;
  }

  std::vector<Tensor> adapter_tensors() const {
    std::vector<Tensor> out{attr_emb};
    for (const auto& t : proj.tensors()) out.push_back(t);
    out.push_back(disc_w);
    out.push_back(disc_b);
    return out;
  }

  AdlmParams clone() const {
    AdlmParams out = *this;
    for (auto& [name, t] : out.base.named()) *t = t->clone();
    out.attr_emb = attr_emb.clone();
    out.proj = proj.clone();
    out.disc_w = disc_w.clone();
    out.disc_b = disc_b.clone();
    if (proj_star) out.proj_star = proj_star->clone();
    if (fisher) out.fisher = fisher->clone();
    return out;
  }
};

inline void set_requires_grad(const std::vector<Tensor>& tensors, bool on) {
  for (Tensor t : tensors) {
    t.set_requires_grad(on);
    t.zero_grad();
  }
}

inline std::size_t count_parameters(const std::vector<Tensor>& tensors) {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.numel();
  return n;
}

/// Closed-form parameter count of one block of width d.
inline std::size_t block_parameter_count(std::size_t d) {
  return 2 * d + (d * 3 * d + 3 * d) + (d * d + d) + 2 * d + (d * 4 * d + 4 * d) + (4 * d * d + d);
}

/// Parameters added on top of the base LM: one block, the attribute table and
/// the discriminator's affine map.
inline std::size_t adapter_parameter_count(const ModelConfig& c) {
  const auto d = static_cast<std::size_t>(c.d_model);
  const auto a = static_cast<std::size_t>(c.n_attributes);
  return block_parameter_count(d) + a * d + (d * a + a);
}

/// Number of base transformer forward passes run on this thread; lets tests
/// observe that decoding shares one pass between both attribute branches.
inline std::uint64_t& base_forward_calls() {
  thread_local std::uint64_t calls = 0;
  return calls;
}

inline Tensor block_forward(const BlockParams& b, const Tensor& x, int n_heads) {
  const std::size_t d = x.cols();
  const std::size_t dh = d / static_cast<std::size_t>(n_heads);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  Tensor qkv = add(matmul(layer_norm(x, b.ln1_g, b.ln1_b), b.w_qkv), b.b_qkv);
  std::vector<Tensor> heads;
  heads.reserve(static_cast<std::size_t>(n_heads));
  for (std::size_t h = 0; h < static_cast<std::size_t>(n_heads); ++h) {
    Tensor q = slice_cols(qkv, h * dh, dh);
    Tensor k = slice_cols(qkv, d + h * dh, dh);
    Tensor v = slice_cols(qkv, 2 * d + h * dh, dh);
    Tensor weights = softmax(scale(matmul(q, transpose(k)), inv_sqrt), /*causal=*/true);
    heads.push_back(matmul(weights, v));
  }
  Tensor attn = add(matmul(concat(heads, 1), b.w_o), b.b_o);
  Tensor h1 = add(x, attn);
  Tensor mlp = add(matmul(gelu(add(matmul(layer_norm(h1, b.ln2_g, b.ln2_b), b.w_fc), b.b_fc)), b.w_proj), b.b_proj);
  return add(h1, mlp);
}

/// Contextual states H of the base transformer for ids x_1..x_n: [n, d].
inline Tensor forward_transformer(const AdlmParams& p, std::span<const int> ids) {
  if (ids.empty()) throw Error("forward_transformer: empty input");
  if (ids.size() > static_cast<std::size_t>(p.config.block_size)) {
    throw Error("forward_transformer: input of " + std::to_string(ids.size()) + " tokens exceeds block_size " +
                std::to_string(p.config.block_size));
  }
  ++base_forward_calls();
  std::vector<int> positions(ids.size());
  for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<int>(i);
  Tensor x = add(embedding(p.base.tok_emb, ids), embedding(p.base.pos_emb, positions));
  for (const auto& block : p.base.blocks) x = block_forward(block, x, p.config.n_heads);
  return layer_norm(x, p.base.lnf_g, p.base.lnf_b);
}

/// z_a: row `a` of the attribute table, as [1, d].
inline Tensor attribute_embed(const AdlmParams& p, int a) {
  if (a < 0 || a >= p.config.n_attributes) {
    throw Error("attribute_embed: attribute " + std::to_string(a) + " out of range for " +
                std::to_string(p.config.n_attributes) + " attributes");
  }
  const int idx[1] = {a};
  return embedding(p.attr_emb, idx);
}

/// Adds z_a to every row of H, then applies the projection block.
inline Tensor project(const AdlmParams& p, const Tensor& h, const Tensor& z) {
  if (h.dim() != 2 || z.numel() != h.cols()) detail::shape_mismatch("project", h.shape(), z.shape());
  return block_forward(p.proj, add(h, z), p.config.n_heads);
}

/// Vocabulary logits for every row of `h`: [n, |V|].
inline Tensor head_all(const AdlmParams& p, const Tensor& h) {
  return add(matmul(h, p.base.head_w), p.base.head_b);
}

/// Next-token logits from the last row of `h`: [1, |V|].
inline Tensor head_logits(const AdlmParams& p, const Tensor& h) {
  if (h.dim() != 2 || h.rows() < 1) throw ShapeError("head_logits: expected at least one row, got " + to_string(h.shape()));
  return head_all(p, slice_rows(h, h.rows() - 1, 1));
}

/// Attribute logits: mean over positions, then the affine map: [1, |A|].
inline Tensor discriminate(const AdlmParams& p, const Tensor& h_bar) {
  return add(matmul(mean(h_bar, 0), p.disc_w), p.disc_b);
}

/// Arg-max with ties going to the lowest index.
inline int argmax(std::span<const double> values) {
  int best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
  return best;
}

}  // namespace adlm
