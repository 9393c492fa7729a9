// Copyright 2026 The ADLM Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "adlm/corpus.hpp"
#include "adlm/model.hpp"

namespace adlm {

enum class DecodeMode {
  kAdlm,  // dual logits under the desired/undesired attributes, then suppression
  kBase,  // the unconditional base LM, no projection block
};

struct GenerationConfig {
  double alpha = 4.0;
  double top_p = 0.9;
  double temperature = 1.0;
  int max_new_tokens = 20;
  int n_samples = 25;
  std::uint64_t seed = 0;
  int desired_attribute = 0;
  int undesired_attribute = 1;
  bool greedy = false;
  DecodeMode mode = DecodeMode::kAdlm;
};

inline void validate(const GenerationConfig& g, int n_attributes) {
  if (!(g.alpha >= 0.0)) throw Error("generation: alpha must be >= 0");
  if (!(g.top_p > 0.0 && g.top_p <= 1.0)) throw Error("generation: top_p must lie in (0, 1]");
  if (!(g.temperature > 0.0)) throw Error("generation: temperature must be > 0");
  if (g.max_new_tokens < 0) throw Error("generation: max_new_tokens must be >= 0");
  if (g.n_samples < 1) throw Error("generation: n_samples must be >= 1");
  if (g.mode == DecodeMode::kBase) return;
  const auto in_range = [&](int a) { return a >= 0 && a < n_attributes; };
  if (!in_range(g.desired_attribute) || !in_range(g.undesired_attribute)) {
    throw Error("generation: attribute indices must be below " + std::to_string(n_attributes));
  }
  if (g.desired_attribute == g.undesired_attribute) throw Error("generation: desired and undesired attribute coincide");
}

inline void to_json(nlohmann::json& j, const GenerationConfig& g) {
  j = {{"alpha", g.alpha},
       {"top_p", g.top_p},
       {"temperature", g.temperature},
       {"max_new_tokens", g.max_new_tokens},
       {"n_samples", g.n_samples},
       {"seed", g.seed},
       {"desired_attribute", g.desired_attribute},
       {"undesired_attribute", g.undesired_attribute},
       {"greedy", g.greedy},
       {"mode", g.mode == DecodeMode::kBase ? "base" : "adlm"}};
}

inline void from_json(const nlohmann::json& j, GenerationConfig& g) {
  GenerationConfig d;
  g.alpha = j.value("alpha", d.alpha);
  g.top_p = j.value("top_p", d.top_p);
  g.temperature = j.value("temperature", d.temperature);
  g.max_new_tokens = j.value("max_new_tokens", d.max_new_tokens);
  g.n_samples = j.value("n_samples", d.n_samples);
  g.seed = j.value("seed", d.seed);
  g.desired_attribute = j.value("desired_attribute", d.desired_attribute);
  g.undesired_attribute = j.value("undesired_attribute", d.undesired_attribute);
  g.greedy = j.value("greedy", d.greedy);
  const std::string mode = j.value("mode", std::string("adlm"));
  if (mode != "adlm" && mode != "base") throw Error("generation.mode: expected \"adlm\" or \"base\", got \"" + mode + "\"");
  g.mode = mode == "base" ? DecodeMode::kBase : DecodeMode::kAdlm;
}

/// Next-token logits for the prefix under attributes a and not_a. The base
/// transformer runs once; only the projection block and head run twice.
inline std::pair<std::vector<double>, std::vector<double>> dual_logits(std::span<const int> prefix, const AdlmParams& p,
                                                                       int a, int not_a) {
  NoGradGuard no_grad;
  Tensor z_a = attribute_embed(p, a);
  Tensor z_not = attribute_embed(p, not_a);
  Tensor h = forward_transformer(p, prefix);
  Tensor o = head_logits(p, project(p, h, z_a));
  Tensor o_not = head_logits(p, project(p, h, z_not));
  return {std::vector<double>(o.data().begin(), o.data().end()),
          std::vector<double>(o_not.data().begin(), o_not.data().end())};
}

/// o'_v = o_v + alpha * (o_v - not_o_v) where that difference is negative,
/// o_v otherwise.
inline std::vector<double> suppress(std::span<const double> o, std::span<const double> not_o, double alpha) {
  if (o.size() != not_o.size()) {
    throw ShapeError("suppress: incompatible shapes [" + std::to_string(o.size()) + "] and [" +
                     std::to_string(not_o.size()) + "]");
  }
  std::vector<double> out(o.begin(), o.end());
  for (std::size_t v = 0; v < out.size(); ++v) {
    const double delta = o[v] - not_o[v];
    if (delta < 0.0) out[v] += alpha * delta;
  }
  return out;
}

/// Sampling distribution after temperature and top-p truncation: zero outside
/// the nucleus, renormalized inside it.
inline std::vector<double> nucleus_distribution(std::span<const double> logits, double top_p, double temperature) {
  if (logits.empty()) throw Error("nucleus: empty logits");
  if (!(top_p > 0.0 && top_p <= 1.0)) throw Error("nucleus: top_p must lie in (0, 1]");
  if (!(temperature > 0.0)) throw Error("nucleus: temperature must be > 0");
  std::vector<double> scaled(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (!std::isfinite(logits[i])) throw Error("nucleus: non-finite logit at index " + std::to_string(i));
    scaled[i] = logits[i] / temperature;
  }
  const auto probs = softmax_values(scaled);
  std::vector<std::size_t> order(probs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return probs[x] > probs[y]; });
  std::vector<double> out(probs.size(), 0.0);
  double mass = 0.0;
  for (std::size_t idx : order) {
    out[idx] = probs[idx];
    mass += probs[idx];
    if (mass >= top_p) break;
  }
  for (double& v : out) v /= mass;
  return out;
}

/// Inverse-CDF draw from a distribution, walking tokens in the same
/// descending-probability order used to build the nucleus.
inline int sample_from(std::span<const double> probs, Rng& rng) {
  std::vector<std::size_t> order(probs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return probs[x] > probs[y]; });
  const double u = rng.uniform();
  double cum = 0.0;
  std::size_t last = order.front();
  for (std::size_t idx : order) {
    if (probs[idx] <= 0.0) break;
    last = idx;
    cum += probs[idx];
    if (u < cum) return static_cast<int>(idx);
  }
  return static_cast<int>(last);
}

inline int nucleus_sample(std::span<const double> logits, double top_p, double temperature, Rng& rng) {
  return sample_from(nucleus_distribution(logits, top_p, temperature), rng);
}

namespace detail {

// out = x . W + b for one row, accumulated in the same order as matmul.
inline void row_affine(const double* x, const Tensor& w, const Tensor& b, double* out) {
  const std::size_t k = w.rows(), n = w.cols();
  std::fill(out, out + n, 0.0);
  gemm_acc(x, w.data().data(), out, 1, k, n);
  for (std::size_t j = 0; j < n; ++j) out[j] += b[j];
}

inline void row_layer_norm(const double* x, const Tensor& g, const Tensor& b, double* out, std::size_t n) {
  double mu = 0.0;
  for (std::size_t j = 0; j < n; ++j) mu += x[j];
  mu /= static_cast<double>(n);
  double var = 0.0;
  for (std::size_t j = 0; j < n; ++j) var += (x[j] - mu) * (x[j] - mu);
  var /= static_cast<double>(n);
  const double rstd = 1.0 / std::sqrt(var + 1e-5);
  for (std::size_t j = 0; j < n; ++j) out[j] = (x[j] - mu) * rstd * g[j] + b[j];
}

struct KvCache {
  std::vector<double> k, v;  // [t, d] row-major, one row per cached position
  std::size_t length = 0;
};

// One new position through a block, reusing cached keys and values of the
// earlier positions. Mirrors block_forward row by row.
inline std::vector<double> block_step(const BlockParams& b, std::span<const double> x, KvCache& cache, int n_heads) {
  const std::size_t d = x.size();
  const std::size_t dh = d / static_cast<std::size_t>(n_heads);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<double> ln(d), qkv(3 * d);
  row_layer_norm(x.data(), b.ln1_g, b.ln1_b, ln.data(), d);
  row_affine(ln.data(), b.w_qkv, b.b_qkv, qkv.data());
  cache.k.insert(cache.k.end(), qkv.begin() + static_cast<std::ptrdiff_t>(d), qkv.begin() + static_cast<std::ptrdiff_t>(2 * d));
  cache.v.insert(cache.v.end(), qkv.begin() + static_cast<std::ptrdiff_t>(2 * d), qkv.end());
  const std::size_t t = ++cache.length;

  std::vector<double> heads(d, 0.0), scores(t);
  for (std::size_t h = 0; h < static_cast<std::size_t>(n_heads); ++h) {
    const double* q = qkv.data() + h * dh;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < t; ++j) {
      const double* kj = cache.k.data() + j * d + h * dh;
      double s = 0.0;
      for (std::size_t c = 0; c < dh; ++c) s += q[c] * kj[c];
      scores[j] = s * inv_sqrt;
      mx = std::max(mx, scores[j]);
    }
    double total = 0.0;
    for (std::size_t j = 0; j < t; ++j) {
      scores[j] = std::exp(scores[j] - mx);
      total += scores[j];
    }
    double* out = heads.data() + h * dh;
    for (std::size_t j = 0; j < t; ++j) {
      const double w = scores[j] / total;
      const double* vj = cache.v.data() + j * d + h * dh;
      for (std::size_t c = 0; c < dh; ++c) out[c] += w * vj[c];
    }
  }
  std::vector<double> attn(d), h1(d), ln2(d), fc(4 * d), mlp(d), y(d);
  row_affine(heads.data(), b.w_o, b.b_o, attn.data());
  for (std::size_t j = 0; j < d; ++j) h1[j] = x[j] + attn[j];
  row_layer_norm(h1.data(), b.ln2_g, b.ln2_b, ln2.data(), d);
  row_affine(ln2.data(), b.w_fc, b.b_fc, fc.data());
  for (double& v : fc) v = 0.5 * v * (1.0 + std::tanh(kGeluC * (v + kGeluA * v * v * v)));
  row_affine(fc.data(), b.w_proj, b.b_proj, mlp.data());
  for (std::size_t j = 0; j < d; ++j) y[j] = h1[j] + mlp[j];
  return y;
}

}  // namespace detail

/// Graph-free decoder that feeds one token at a time and keeps per-layer key
/// and value caches, so each step costs one position instead of the whole
/// prefix. In ADLM mode it tracks one projection-block cache per attribute on
/// top of a single shared base cache.
class IncrementalDecoder {
 public:
  /// Empty `attributes` selects the unconditional base LM.
  IncrementalDecoder(const AdlmParams& p, std::vector<int> attributes)
      : p_(p), attributes_(std::move(attributes)), base_(p.base.blocks.size()), proj_(attributes_.size()) {
    for (int a : attributes_) {
      Tensor z = attribute_embed(p_, a);
      z_.emplace_back(z.data().begin(), z.data().end());
    }
  }

  std::size_t length() const { return length_; }

  /// Appends `id` and returns next-token logits, one vector per attribute
  /// (a single vector in base mode).
  const std::vector<std::vector<double>>& push(int id) {
    if (length_ >= static_cast<std::size_t>(p_.config.block_size)) {
      throw Error("decoder: prefix would exceed block_size " + std::to_string(p_.config.block_size));
    }
    if (id < 0 || id >= p_.config.vocab_size) throw Error("decoder: token id " + std::to_string(id) + " out of range");
    ++base_forward_calls();
    const std::size_t d = static_cast<std::size_t>(p_.config.d_model);
    std::vector<double> x(d), hf(d);
    for (std::size_t j = 0; j < d; ++j) {
      x[j] = p_.base.tok_emb[static_cast<std::size_t>(id) * d + j] + p_.base.pos_emb[length_ * d + j];
    }
    for (std::size_t l = 0; l < base_.size(); ++l) x = detail::block_step(p_.base.blocks[l], x, base_[l], p_.config.n_heads);
    detail::row_layer_norm(x.data(), p_.base.lnf_g, p_.base.lnf_b, hf.data(), d);
    ++length_;

    const std::size_t v = static_cast<std::size_t>(p_.config.vocab_size);
    logits_.assign(attributes_.empty() ? 1 : attributes_.size(), std::vector<double>(v));
    if (attributes_.empty()) {
      detail::row_affine(hf.data(), p_.base.head_w, p_.base.head_b, logits_[0].data());
      return logits_;
    }
    for (std::size_t k = 0; k < attributes_.size(); ++k) {
      std::vector<double> tagged(d);
      for (std::size_t j = 0; j < d; ++j) tagged[j] = hf[j] + z_[k][j];
      const auto h_bar = detail::block_step(p_.proj, tagged, proj_[k], p_.config.n_heads);
      detail::row_affine(h_bar.data(), p_.base.head_w, p_.base.head_b, logits_[k].data());
    }
    return logits_;
  }

 private:
  const AdlmParams& p_;
  std::vector<int> attributes_;
  std::vector<std::vector<double>> z_;
  std::vector<detail::KvCache> base_;
  std::vector<detail::KvCache> proj_;
  std::vector<std::vector<double>> logits_;
  std::size_t length_ = 0;
};

/// Per-generation random stream: the prompt index is folded into the seed and
/// the sample index selects the stream, so results do not depend on order.
inline Rng generation_rng(std::uint64_t seed, std::size_t prompt_index, std::size_t sample_index) {
  return Rng(seed ^ static_cast<std::uint64_t>(prompt_index), static_cast<std::uint64_t>(sample_index));
}

/// Samples a continuation of `prompt` (BOS is prepended when missing). Stops
/// at EOS, which is not returned, after max_new_tokens, or at block_size.
inline std::vector<int> generate(std::span<const int> prompt, const AdlmParams& p, const GenerationConfig& g, Rng& rng) {
  validate(g, p.config.n_attributes);
  std::vector<int> ids;
  if (prompt.empty() || prompt.front() != kBos) ids.push_back(kBos);
  ids.insert(ids.end(), prompt.begin(), prompt.end());
  if (ids.size() > static_cast<std::size_t>(p.config.block_size)) {
    throw Error("generate: prompt of " + std::to_string(ids.size()) + " tokens exceeds block_size " +
                std::to_string(p.config.block_size));
  }
  std::vector<int> out;
  if (g.max_new_tokens == 0) return out;

  std::vector<int> attrs;
  if (g.mode == DecodeMode::kAdlm) attrs = {g.desired_attribute, g.undesired_attribute};
  IncrementalDecoder dec(p, attrs);
  const std::vector<std::vector<double>>* logits = nullptr;
  for (int id : ids) logits = &dec.push(id);

  while (true) {
    const std::vector<double> next =
        g.mode == DecodeMode::kAdlm ? suppress((*logits)[0], (*logits)[1], g.alpha) : (*logits)[0];
    const int tok = g.greedy ? argmax(next) : nucleus_sample(next, g.top_p, g.temperature, rng);
    if (tok == kEos) break;
    out.push_back(tok);
    if (static_cast<int>(out.size()) >= g.max_new_tokens) break;
    if (ids.size() + out.size() >= static_cast<std::size_t>(p.config.block_size)) break;
    logits = &dec.push(tok);
  }
  return out;
}

inline std::vector<int> generate(std::span<const int> prompt, const AdlmParams& p, const GenerationConfig& g,
                                 std::size_t prompt_index = 0, std::size_t sample_index = 0) {
  Rng rng = generation_rng(g.seed, prompt_index, sample_index);
  return generate(prompt, p, g, rng);
}

}  // namespace adlm
