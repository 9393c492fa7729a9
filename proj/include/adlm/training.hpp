// Copyright 2026 The ADLM Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "adlm/corpus.hpp"
#include "adlm/model.hpp"
#include "adlm/optim.hpp"

namespace adlm {

struct TrainConfig {
  double lr0 = 5e-5;
  int batch_size = 32;
  int block_size = 128;  // training sequences are truncated to this many tokens
  int epochs = 3;
  double lambda_ewc = 0.1;
  std::uint64_t seed = 0;
  // When false every parameter, base included, is updated (the "finetuning" ablation).
  bool freeze_all_base = true;
  // Duplicate minority classes before ADLM training.
  bool balance = true;
  // Sequences used for the Fisher estimate; 0 means the whole phase-1 set.
  int fisher_samples = 0;
  int log_every = 10;
  double weight_decay = 0.01;
};

inline void validate(const TrainConfig& c) {
  if (!(c.lambda_ewc >= 0.0)) throw Error("train: lambda_ewc must be >= 0");
  if (c.epochs < 1) throw Error("train: epochs must be >= 1");
  if (c.batch_size < 1) throw Error("train: batch_size must be >= 1");
  if (c.block_size < 2) throw Error("train: block_size must be >= 2");
  if (!(c.lr0 >= 0.0)) throw Error("train: lr0 must be >= 0");
  if (c.fisher_samples < 0) throw Error("train: fisher_samples must be >= 0");
}

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"lr0", c.lr0},
       {"batch_size", c.batch_size},
       {"block_size", c.block_size},
       {"epochs", c.epochs},
       {"lambda_ewc", c.lambda_ewc},
       {"seed", c.seed},
       {"freeze_all_base", c.freeze_all_base},
       {"balance", c.balance},
       {"fisher_samples", c.fisher_samples},
       {"log_every", c.log_every},
       {"weight_decay", c.weight_decay}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  c.lr0 = j.value("lr0", d.lr0);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.block_size = j.value("block_size", d.block_size);
  c.epochs = j.value("epochs", d.epochs);
  c.lambda_ewc = j.value("lambda_ewc", d.lambda_ewc);
  c.seed = j.value("seed", d.seed);
  c.freeze_all_base = j.value("freeze_all_base", d.freeze_all_base);
  c.balance = j.value("balance", d.balance);
  c.fisher_samples = j.value("fisher_samples", d.fisher_samples);
  c.log_every = j.value("log_every", d.log_every);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
}

/// A training record: token ids and label, plus the frozen base states when
/// they have been precomputed.
struct Example {
  std::vector<int> ids;
  int attribute = 0;
  Tensor base_states;  // undefined unless cached
};

/// Wraps sequences as examples. With `append_eos`, EOS is added so the model
/// learns where text ends; ids are truncated to `max_len` either way.
inline std::vector<Example> make_examples(const std::vector<LabeledSequence>& data, std::size_t max_len,
                                          bool append_eos) {
  std::vector<Example> out;
  out.reserve(data.size());
  for (const auto& seq : data) {
    Example ex{seq.ids, seq.attribute, {}};
    if (append_eos) ex.ids.push_back(kEos);
    if (ex.ids.size() > max_len) ex.ids.resize(max_len);
    out.push_back(std::move(ex));
  }
  return out;
}

/// Fills in base states for every example. Only valid while the base is frozen.
inline void cache_base_states(std::vector<Example>& examples, const AdlmParams& p) {
  NoGradGuard no_grad;
  for (auto& ex : examples) ex.base_states = forward_transformer(p, ex.ids);
}

namespace detail {

inline Tensor base_states_for(const Example& ex, const AdlmParams& p) {
  return ex.base_states.defined() ? ex.base_states : forward_transformer(p, ex.ids);
}

inline std::vector<Example> as_examples(const std::vector<LabeledSequence>& batch) {
  std::vector<Example> out;
  for (const auto& s : batch) out.push_back({s.ids, s.attribute, {}});
  return out;
}

// Summed next-token NLL of one sequence given its final-layer states.
inline Tensor sequence_nll(const AdlmParams& p, const Tensor& states, const std::vector<int>& ids) {
  const std::size_t t = ids.size();
  std::vector<int> targets(ids.begin() + 1, ids.end());
  return cross_entropy(head_all(p, slice_rows(states, 0, t - 1)), targets, Reduction::kSum);
}

}  // namespace detail

/// Loss terms of one batch. `lm` is the mean NLL per predicted token, `disc`
/// the mean NLL per example; `lm_tokens` recovers the summed form.
struct LossTerms {
  Tensor lm;
  Tensor disc;
  Tensor ewc;
  Tensor total;
  std::size_t lm_tokens = 0;
};

/// EWC penalty: sum_j (lambda / 2) * F_j * (theta_j - anchor_j)^2 over the
/// projection block.
inline Tensor ewc_loss(const BlockParams& theta, const BlockParams& anchor, const BlockParams& fisher, double lambda) {
  const auto t = theta.tensors(), a = anchor.tensors(), f = fisher.tensors();
  Tensor total = Tensor::scalar(0.0);
  for (std::size_t k = 0; k < t.size(); ++k) {
    if (t[k].shape() != a[k].shape() || t[k].shape() != f[k].shape()) {
      throw ShapeError("ewc_loss: parameter " + std::to_string(k) + " has shape " + to_string(t[k].shape()) +
                       ", anchor " + to_string(a[k].shape()) + ", fisher " + to_string(f[k].shape()));
    }
    Tensor diff = sub(t[k], a[k]);
    total = add(total, sum(mul(mul(diff, diff), f[k])));
  }
  return scale(total, 0.5 * lambda);
}

/// Computes the requested terms in one pass over the batch: each sequence's
/// projected states feed both the LM term and the discriminator term.
inline LossTerms adlm_losses(std::span<const Example> batch, const AdlmParams& p, bool with_lm, bool with_disc,
                             double lambda_ewc) {
  LossTerms out;
  Tensor nll = Tensor::scalar(0.0);
  Tensor disc = Tensor::scalar(0.0);
  for (const auto& ex : batch) {
    Tensor h_bar = project(p, detail::base_states_for(ex, p), attribute_embed(p, ex.attribute));
    if (with_lm && ex.ids.size() >= 2) {
      nll = add(nll, detail::sequence_nll(p, h_bar, ex.ids));
      out.lm_tokens += ex.ids.size() - 1;
    }
    if (with_disc) disc = add(disc, cross_entropy(discriminate(p, h_bar), std::vector<int>{ex.attribute}));
  }
  out.lm = out.lm_tokens > 0 ? scale(nll, 1.0 / static_cast<double>(out.lm_tokens)) : nll;
  out.disc = batch.empty() ? disc : scale(disc, 1.0 / static_cast<double>(batch.size()));
  if (lambda_ewc > 0.0 && p.proj_star && p.fisher) {
    out.ewc = ewc_loss(p.proj, *p.proj_star, *p.fisher, lambda_ewc);
  } else {
    out.ewc = Tensor::scalar(0.0);
  }
  out.total = add(add(out.lm, out.disc), out.ewc);
  return out;
}

/// Conditional LM loss: mean over predicted tokens of -log P(x_t | x_<t, a).
/// Length-1 sequences contribute nothing.
inline Tensor lm_loss(const std::vector<LabeledSequence>& batch, const AdlmParams& p) {
  const auto ex = detail::as_examples(batch);
  return adlm_losses(ex, p, true, false, 0.0).lm;
}

/// Discriminator loss: mean over the batch of -log P(a | projected states).
inline Tensor disc_loss(const std::vector<LabeledSequence>& batch, const AdlmParams& p) {
  const auto ex = detail::as_examples(batch);
  return adlm_losses(ex, p, false, true, 0.0).disc;
}

/// lm_loss + disc_loss + ewc_loss (the EWC term needs phase-1 artifacts).
inline LossTerms total_loss(const std::vector<LabeledSequence>& batch, const AdlmParams& p, const TrainConfig& c) {
  const auto ex = detail::as_examples(batch);
  return adlm_losses(ex, p, true, true, c.lambda_ewc);
}

/// Unconditional LM loss of the base model (head on the base states).
inline Tensor base_lm_loss(std::span<const Example> batch, const AdlmParams& p) {
  Tensor nll = Tensor::scalar(0.0);
  std::size_t tokens = 0;
  for (const auto& ex : batch) {
    if (ex.ids.size() < 2) continue;
    nll = add(nll, detail::sequence_nll(p, detail::base_states_for(ex, p), ex.ids));
    tokens += ex.ids.size() - 1;
  }
  return tokens > 0 ? scale(nll, 1.0 / static_cast<double>(tokens)) : nll;
}

/// Diagonal empirical Fisher of the projection block: the mean over the first
/// `n_samples` examples of the squared gradient of each sequence's summed
/// conditional NLL.
inline BlockParams fisher_diag(std::span<const Example> data, const AdlmParams& p, std::size_t n_samples) {
  if (n_samples == 0) throw Error("fisher_diag: n_samples must be positive");
  if (n_samples > data.size()) {
    throw Error("fisher_diag: " + std::to_string(n_samples) + " samples requested from " +
                std::to_string(data.size()) + " examples");
  }
  const auto block = p.proj.tensors();
  const auto d = static_cast<std::size_t>(p.config.d_model);
  BlockParams fisher = BlockParams::zeros(d);
  auto f = fisher.tensors();

  std::vector<bool> previous;
  for (const auto& t : p.adapter_tensors()) previous.push_back(t.requires_grad());
  set_requires_grad(p.adapter_tensors(), false);
  set_requires_grad(block, true);

  for (std::size_t i = 0; i < n_samples; ++i) {
    const Example& ex = data[i];
    if (ex.ids.size() < 2) continue;
    for (Tensor t : block) t.zero_grad();
    Tensor h_bar = project(p, detail::base_states_for(ex, p), attribute_embed(p, ex.attribute));
    detail::sequence_nll(p, h_bar, ex.ids).backward();
    for (std::size_t k = 0; k < block.size(); ++k) {
      if (!block[k].has_grad()) continue;
      auto dst = f[k].mutable_data();
      const auto g = block[k].grad();
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += g[j] * g[j];
    }
  }
  const double inv = 1.0 / static_cast<double>(n_samples);
  for (Tensor t : f)
    for (double& v : t.mutable_data()) v *= inv;

  const auto adapter = p.adapter_tensors();
  for (std::size_t k = 0; k < adapter.size(); ++k) {
    Tensor t = adapter[k];
    t.zero_grad();
    t.set_requires_grad(previous[k]);
  }
  return fisher;
}

struct Progress {
  std::string phase;
  int epoch = 0;
  std::int64_t step = 0;
  double lm_loss = 0.0;
  double disc_loss = 0.0;
  double ewc_loss = 0.0;
  double lr = 0.0;
};

inline void to_json(nlohmann::json& j, const Progress& p) {
  j = {{"phase", p.phase},     {"epoch", p.epoch},         {"step", p.step}, {"lm_loss", p.lm_loss},
       {"disc_loss", p.disc_loss}, {"ewc_loss", p.ewc_loss}, {"lr", p.lr}};
}

struct TrainHooks {
  std::function<void(const Progress&)> on_progress;
  std::function<void(int epoch, const AdlmParams&)> on_epoch_end;
};

namespace detail {

// Shared minibatch loop: shuffles per epoch, steps AdamW on `trainable`
// under the linear schedule, reports progress.
template <typename LossFn>
void run_training(std::vector<Example>& examples, std::vector<Tensor> trainable, AdlmParams& p,
                  const TrainConfig& cfg, const std::string& phase, std::uint64_t stream, LossFn&& loss_fn,
                  const TrainHooks& hooks) {
  if (examples.empty()) throw Error(phase + ": empty training set");
  const std::size_t batch = static_cast<std::size_t>(cfg.batch_size);
  const std::size_t n_batches = (examples.size() + batch - 1) / batch;
  const auto total_steps = static_cast<std::int64_t>(n_batches) * cfg.epochs;
  OptimizerState state;
  state.options.weight_decay = cfg.weight_decay;
  Rng rng(cfg.seed, stream);
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::int64_t step = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t b = 0; b < n_batches; ++b) {
      std::vector<Example> mb;
      for (std::size_t i = b * batch; i < std::min(examples.size(), (b + 1) * batch); ++i)
        mb.push_back(examples[order[i]]);
      for (Tensor t : trainable) t.zero_grad();
      LossTerms terms = loss_fn(mb);
      terms.total.backward();
      const double lr = linear_schedule(step, total_steps, cfg.lr0);
      adamw_step(trainable, state, lr);
      ++step;
      if (hooks.on_progress && (cfg.log_every > 0 && (step % cfg.log_every == 0 || step == total_steps))) {
        hooks.on_progress({phase, epoch, step, terms.lm.item(), terms.disc.item(), terms.ewc.item(), lr});
      }
    }
    if (hooks.on_epoch_end) hooks.on_epoch_end(epoch, p);
  }
  for (Tensor t : trainable) {
    t.zero_grad();
    t.set_requires_grad(false);
  }
}

inline std::size_t max_train_len(const AdlmParams& p, const TrainConfig& c) {
  return static_cast<std::size_t>(std::min(c.block_size, p.config.block_size));
}

}  // namespace detail

/// Trains the unconditional base LM (transformer and head) on all text.
inline AdlmParams train_base(const std::vector<LabeledSequence>& corpus, const ModelConfig& mc, const TrainConfig& cfg,
                             const TrainHooks& hooks = {}) {
  validate(cfg);
  AdlmParams p = AdlmParams::init(mc);
  auto examples = make_examples(corpus, detail::max_train_len(p, cfg), true);
  auto trainable = p.base.tensors();
  set_requires_grad(trainable, true);
  detail::run_training(
      examples, trainable, p, cfg, "base", 1,
      [&](const std::vector<Example>& mb) {
        LossTerms t;
        t.lm = base_lm_loss(mb, p);
        t.disc = Tensor::scalar(0.0);
        t.ewc = Tensor::scalar(0.0);
        t.total = t.lm;
        return t;
      },
      hooks);
  p.phase = Phase::kBase;
  return p;
}

namespace detail {

inline std::vector<Tensor> adlm_trainable(const AdlmParams& p, const TrainConfig& cfg, bool with_disc) {
  std::vector<Tensor> out{p.attr_emb};
  for (const auto& t : p.proj.tensors()) out.push_back(t);
  if (with_disc) {
    out.push_back(p.disc_w);
    out.push_back(p.disc_b);
  }
  if (!cfg.freeze_all_base)
    for (const auto& t : p.base.tensors()) out.push_back(t);
  return out;
}

}  // namespace detail

/// Phase 1: trains theta_a and theta_B with the LM loss only, stores the
/// result as the anchor theta_B*, then estimates the Fisher diagonal there.
inline AdlmParams train_phase1(const std::vector<LabeledSequence>& corpus, const AdlmParams& base,
                               const TrainConfig& cfg, const TrainHooks& hooks = {}) {
  validate(cfg);
  AdlmParams p = base.clone();
  Rng init_rng(cfg.seed, 11);
  p.init_adapter(init_rng);
  p.proj_star.reset();
  p.fisher.reset();
  p.phase = Phase::kPhase1;

  auto examples = make_examples(corpus, detail::max_train_len(p, cfg), true);
  if (cfg.freeze_all_base) cache_base_states(examples, p);
  auto trainable = detail::adlm_trainable(p, cfg, false);
  set_requires_grad(trainable, true);
  detail::run_training(
      examples, trainable, p, cfg, "phase1", 2,
      [&](const std::vector<Example>& mb) { return adlm_losses(mb, p, true, false, 0.0); }, hooks);

  if (!cfg.freeze_all_base) cache_base_states(examples, p);
  const std::size_t n = cfg.fisher_samples > 0 ? std::min<std::size_t>(static_cast<std::size_t>(cfg.fisher_samples), examples.size())
                                               : examples.size();
  p.fisher = fisher_diag(examples, p, n);
  p.proj_star = p.proj.clone();
  return p;
}

/// Phase 2: warm-starts theta_B from theta_B*, draws a fresh discriminator and
/// trains theta_a, theta_B, theta_D on the LM + discriminator + EWC objective.
inline AdlmParams train_phase2(const std::vector<LabeledSequence>& corpus, const AdlmParams& phase1,
                               const TrainConfig& cfg, const TrainHooks& hooks = {}) {
  validate(cfg);
  if (phase1.phase == Phase::kBase || !phase1.proj_star || !phase1.fisher) {
    throw Error("train_phase2: phase-1 artifacts (anchor block and Fisher diagonal) are missing; run phase1 first");
  }
  AdlmParams p = phase1.clone();
  p.proj = p.proj_star->clone();
  Rng init_rng(cfg.seed, 21);
  p.init_discriminator(init_rng);
  p.phase = Phase::kPhase2;

  auto examples = make_examples(corpus, detail::max_train_len(p, cfg), true);
  if (cfg.freeze_all_base) cache_base_states(examples, p);
  auto trainable = detail::adlm_trainable(p, cfg, true);
  set_requires_grad(trainable, true);
  detail::run_training(
      examples, trainable, p, cfg, "phase2", 3,
      [&](const std::vector<Example>& mb) { return adlm_losses(mb, p, true, true, cfg.lambda_ewc); }, hooks);
  return p;
}

/// Mean per-token conditional NLL, no gradient.
inline double evaluate_lm_loss(const std::vector<LabeledSequence>& data, const AdlmParams& p, bool append_eos = true) {
  NoGradGuard no_grad;
  const auto ex = make_examples(data, static_cast<std::size_t>(p.config.block_size), append_eos);
  return adlm_losses(ex, p, true, false, 0.0).lm.item();
}

/// Fraction of sequences whose discriminator arg-max equals the label, with
/// each sequence projected under its own attribute as in training.
inline double discriminator_accuracy(const std::vector<LabeledSequence>& data, const AdlmParams& p,
                                     bool append_eos = true) {
  if (data.empty()) throw Error("discriminator_accuracy: empty data");
  NoGradGuard no_grad;
  const auto examples = make_examples(data, static_cast<std::size_t>(p.config.block_size), append_eos);
  std::size_t correct = 0;
  for (const auto& ex : examples) {
    Tensor h_bar = project(p, forward_transformer(p, ex.ids), attribute_embed(p, ex.attribute));
    if (argmax(discriminate(p, h_bar).data()) == ex.attribute) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(examples.size());
}

}  // namespace adlm
