// trainer.hpp  -- multitask training loop: three task streams per step
// (gender, phoneme, emotion), one backward sweep per stream scaled by its
// loss weight, a single Adam update with decoupled weight decay, a two-stage
// schedule that linearly anneals the auxiliary weights and the learning
// rate, and bit-exact checkpoint resume.
//
// Every random draw derives from (global seed, component name, counter), so
// a resumed run replays the exact batch and augmentation sequence.
//
// Copyright 2026 The speecheq authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef SPEECHEQ_TRAINER_HPP
#define SPEECHEQ_TRAINER_HPP

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "speecheq/augment.hpp"
#include "speecheq/common.hpp"
#include "speecheq/features.hpp"
#include "speecheq/losses.hpp"
#include "speecheq/model.hpp"

namespace speecheq::train {

struct TrainConfig {
  real lr = 1e-4;
  real lr_end = 1e-6;          // reached at the last fine-tune step
  real weight_decay = 1e-5;    // decoupled
  real beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  int batch_size = 32;
  int steps = 1000;
  int fine_tune_start = -1;    // < 0 disables the fine-tune stage
  real gamma = loss::kDefaultGamma;
  loss::LossWeights weights;   // alpha stays fixed; beta and eta anneal to *_end
  real beta_end = 0.01;
  real eta_end = 0.01;
  int checkpoint_every = 0;    // 0: only the final checkpoint
  real grad_clip = 0.0;        // max global grad norm; 0 disables clipping
  uint64_t seed = 1;
  bool augment = false;        // on-the-fly policy on items that carry audio

  void validate() const {
    if (!(lr > 0.0) || !(lr_end > 0.0)) throw ConfigError("train config: learning rates must be positive");
    if (weight_decay < 0.0) throw ConfigError("train config: weight decay must be >= 0");
    if (batch_size < 1) throw ConfigError("train config: batch size must be >= 1");
    if (steps < 1) throw ConfigError("train config: steps must be >= 1");
    if (fine_tune_start >= steps)
      throw ConfigError("train config: fine_tune_start must be < steps");
    if (gamma < 0.0) throw ConfigError("train config: gamma must be >= 0");
    if (checkpoint_every < 0) throw ConfigError("train config: checkpoint_every must be >= 0");
    if (grad_clip < 0.0) throw ConfigError("train config: grad_clip must be >= 0");
    weights.validate();
  }

  nlohmann::json to_json() const {
    return {{"lr", lr},
            {"lr_end", lr_end},
            {"weight_decay", weight_decay},
            {"beta1", beta1},
            {"beta2", beta2},
            {"adam_eps", adam_eps},
            {"batch_size", batch_size},
            {"steps", steps},
            {"fine_tune_start", fine_tune_start},
            {"gamma", gamma},
            {"alpha", weights.alpha},
            {"beta", weights.beta},
            {"eta", weights.eta},
            {"beta_end", beta_end},
            {"eta_end", eta_end},
            {"checkpoint_every", checkpoint_every},
            {"grad_clip", grad_clip},
            {"seed", seed},
            {"augment", augment}};
  }

  static TrainConfig from_json(const nlohmann::json& j) {
    TrainConfig c;
    for (const auto& [key, _] : j.items()) {
      static const std::set<std::string> known = {
          "lr",    "lr_end", "weight_decay", "beta1",    "beta2",    "adam_eps",
          "batch_size", "steps",  "fine_tune_start", "gamma", "alpha", "beta",
          "eta",   "beta_end", "eta_end", "checkpoint_every", "grad_clip", "seed",
          "augment"};
      if (!known.count(key)) throw ConfigError("train config: unknown key '" + key + "'");
    }
    c.lr = j.value("lr", c.lr);
    c.lr_end = j.value("lr_end", c.lr_end);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.adam_eps = j.value("adam_eps", c.adam_eps);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.steps = j.value("steps", c.steps);
    c.fine_tune_start = j.value("fine_tune_start", c.fine_tune_start);
    c.gamma = j.value("gamma", c.gamma);
    c.weights.alpha = j.value("alpha", c.weights.alpha);
    c.weights.beta = j.value("beta", c.weights.beta);
    c.weights.eta = j.value("eta", c.weights.eta);
    c.beta_end = j.value("beta_end", c.beta_end);
    c.eta_end = j.value("eta_end", c.eta_end);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    c.grad_clip = j.value("grad_clip", c.grad_clip);
    c.seed = j.value("seed", c.seed);
    c.augment = j.value("augment", c.augment);
    c.validate();
    return c;
  }
};

// ---------------------------------------------------------------------------
// Step-indexed schedules (pure functions, so resume lands on the same
// values).
// ---------------------------------------------------------------------------

namespace detail {

inline real linear_anneal(real from, real to, int step, int start, int last) {
  if (start < 0 || step < start) return from;
  if (step >= last || last <= start) return to;
  const real p = static_cast<real>(step - start) / static_cast<real>(last - start);
  return from + (to - from) * p;
}

}  // namespace detail

inline real lr_at(const TrainConfig& c, int step) {
  return detail::linear_anneal(c.lr, c.lr_end, step, c.fine_tune_start, c.steps - 1);
}
inline real beta_at(const TrainConfig& c, int step) {
  return detail::linear_anneal(c.weights.beta, c.beta_end, step, c.fine_tune_start, c.steps - 1);
}
inline real eta_at(const TrainConfig& c, int step) {
  return detail::linear_anneal(c.weights.eta, c.eta_end, step, c.fine_tune_start, c.steps - 1);
}

// ---------------------------------------------------------------------------
// Training data. Each item carries features (and optionally audio for
// on-the-fly augmentation); the three streams index into the shared item
// pool.
// ---------------------------------------------------------------------------

struct TrainItem {
  std::string id;
  diff::Tensor features;          // T x n_mels
  int category = 0;               // 0..8
  real eis = seqm::kMaskedSentinel;
  int gender = 0;                 // 0 male, 1 female
  std::vector<int> phonemes;      // empty: not in the phoneme stream
  std::optional<audio::Waveform> audio;  // only needed when augmenting
};

struct TrainSet {
  std::vector<TrainItem> items;
  std::vector<int> gender_idx, phoneme_idx, emotion_idx;
  std::vector<std::string> warnings;
};

/// Route items into streams. Items whose phoneme label cannot fit the frame
/// count are kept out of the phoneme stream with a warning rather than
/// failing mid-run.
inline TrainSet build_train_set(std::vector<TrainItem> items) {
  TrainSet set;
  set.items = std::move(items);
  if (set.items.empty()) throw ConfigError("training set is empty");
  for (size_t i = 0; i < set.items.size(); ++i) {
    const TrainItem& it = set.items[i];
    if (it.category < 0 || it.category >= seqm::kNumCategories)
      throw SchemaError("item '" + it.id + "': category out of range");
    if (it.gender != 0 && it.gender != 1)
      throw SchemaError("item '" + it.id + "': gender must be 0 or 1");
    set.gender_idx.push_back(static_cast<int>(i));
    set.emotion_idx.push_back(static_cast<int>(i));
    if (!it.phonemes.empty()) {
      int repeats = 0;
      for (size_t j = 1; j < it.phonemes.size(); ++j)
        if (it.phonemes[j] == it.phonemes[j - 1]) ++repeats;
      if (it.features.rows >= static_cast<int>(it.phonemes.size()) + repeats)
        set.phoneme_idx.push_back(static_cast<int>(i));
      else
        set.warnings.push_back("item '" + it.id + "' dropped from phoneme stream: " +
                               std::to_string(it.features.rows) + " frames cannot emit its label");
    }
  }
  return set;
}

/// Batch for `stream` at `step`: full batches from a per-wrap seeded
/// permutation. Pure in (seed, stream name, step).
inline std::vector<int> stream_batch(const std::vector<int>& pool, int batch_size, uint64_t seed,
                                     const std::string& stream, int step) {
  if (pool.empty()) return {};
  const int n = static_cast<int>(pool.size());
  const int b = std::min(batch_size, n);
  const int batches_per_wrap = n / b;  // full batches only
  const int wrap = step / batches_per_wrap;
  const int k = step % batches_per_wrap;
  std::vector<int> order(pool.begin(), pool.end());
  Rng rng(derive_seed(seed, "shuffle/" + stream, static_cast<uint64_t>(wrap)));
  std::shuffle(order.begin(), order.end(), rng);
  return {order.begin() + static_cast<long>(k) * b, order.begin() + static_cast<long>(k + 1) * b};
}

// ---------------------------------------------------------------------------
// Adam with decoupled weight decay. Parameters and both moments are snapped
// to f32 after each update so the f32 checkpoint payload is lossless.
// ---------------------------------------------------------------------------

struct AdamState {
  model::ParamStore m, v;
  static AdamState init(const model::ParamStore& params) {
    return {params.zeros_like(), params.zeros_like()};
  }
};

inline void adam_update(model::ParamStore& params, const model::ParamStore& grads, AdamState& adam,
                        const TrainConfig& cfg, int step, real lr) {
  const real bc1 = 1.0 - std::pow(cfg.beta1, static_cast<real>(step) + 1.0);
  const real bc2 = 1.0 - std::pow(cfg.beta2, static_cast<real>(step) + 1.0);
  for (auto& [name, p] : params.tensors) {
    const diff::Tensor& g = grads.at(name);
    diff::Tensor& m = adam.m.at(name);
    diff::Tensor& v = adam.v.at(name);
    for (size_t i = 0; i < p.size(); ++i) {
      m.v[i] = cfg.beta1 * m.v[i] + (1.0 - cfg.beta1) * g.v[i];
      v.v[i] = cfg.beta2 * v.v[i] + (1.0 - cfg.beta2) * g.v[i] * g.v[i];
      const real m_hat = m.v[i] / bc1;
      const real v_hat = v.v[i] / bc2;
      p.v[i] -= lr * m_hat / (std::sqrt(v_hat) + cfg.adam_eps) + lr * cfg.weight_decay * p.v[i];
      if (!std::isfinite(p.v[i])) throw NumericError("adam_update: parameter '" + name + "' diverged");
    }
  }
  params.snap_all_f32();
  adam.m.snap_all_f32();
  adam.v.snap_all_f32();
}

// ---------------------------------------------------------------------------
// One optimization step.
// ---------------------------------------------------------------------------

struct StepStats {
  int step = 0;
  real lr = 0.0, beta = 0.0, eta = 0.0;
  real loss_gender = 0.0, loss_phoneme = 0.0, loss_esc = 0.0, loss_eis = 0.0;
  real loss_combined = 0.0;  // esc + alpha*eis + beta*phoneme + eta*gender
  bool eis_skipped = false;
  int gender_batch = 0, phoneme_batch = 0, emotion_batch = 0;
};

struct TrainState {
  model::ModelConfig mcfg;
  TrainConfig tcfg;
  model::ParamStore params;
  AdamState adam;
  int step = 0;
  std::optional<aug::AugmentPolicy> policy;
  feat::MelConfig mel;
};

inline StepStats train_step(TrainState& st, const TrainSet& data) {
  const int step = st.step;
  StepStats stats;
  stats.step = step;
  stats.lr = lr_at(st.tcfg, step);
  stats.beta = beta_at(st.tcfg, step);
  stats.eta = eta_at(st.tcfg, step);

  model::ParamStore grads = st.params.zeros_like();

  auto check_finite = [&](real loss, const char* stream) {
    if (!std::isfinite(loss))
      throw NumericError("train_step: non-finite " + std::string(stream) + " loss " +
                         format_real(loss) + " at step " + std::to_string(step) +
                         " (lr " + format_real(stats.lr) + ")");
  };

  auto features_for = [&](int item_idx, int slot) -> diff::Tensor {
    const TrainItem& item = data.items[static_cast<size_t>(item_idx)];
    if (st.tcfg.augment && item.audio.has_value()) {
      if (!st.policy.has_value()) throw ConfigError("augmentation enabled but no policy configured");
      const uint64_t aug_seed =
          derive_seed(st.tcfg.seed, "augment",
                      static_cast<uint64_t>(step) * 1000003ull + static_cast<uint64_t>(slot));
      auto outcome = aug::apply_policy(*item.audio, *st.policy, aug_seed);
      auto fm = feat::mel_fbank(outcome.audio, st.mel);
      return diff::Tensor::from(fm.frames, fm.dim, std::move(fm.data));
    }
    return item.features;
  };

  // gender stream
  if (stats.eta > 0.0) {
    auto batch = stream_batch(data.gender_idx, st.tcfg.batch_size, st.tcfg.seed, "gender", step);
    stats.gender_batch = static_cast<int>(batch.size());
    if (batch.empty()) throw ConfigError("train_step: gender stream exhausted while eta > 0");
    diff::Graph g;
    model::BoundParams bound(g, st.params);
    std::vector<diff::Var> rows;
    std::vector<int> labels;
    for (size_t slot = 0; slot < batch.size(); ++slot) {
      const TrainItem& item = data.items[static_cast<size_t>(batch[slot])];
      auto out = model::forward(g, bound, st.mcfg, features_for(batch[slot], static_cast<int>(slot)));
      rows.push_back(out.gender_logits);
      labels.push_back(item.gender);
    }
    diff::Var loss = g.focal_loss(g.stack_rows(rows), labels, st.tcfg.gamma);
    stats.loss_gender = g.value(loss).v[0];
    check_finite(stats.loss_gender, "gender");
    g.backward(loss, stats.eta);
    bound.read_grads(grads);
  }

  // phoneme stream
  if (stats.beta > 0.0) {
    auto batch = stream_batch(data.phoneme_idx, st.tcfg.batch_size, st.tcfg.seed, "phoneme", step);
    stats.phoneme_batch = static_cast<int>(batch.size());
    if (batch.empty()) throw ConfigError("train_step: phoneme stream exhausted while beta > 0");
    diff::Graph g;
    model::BoundParams bound(g, st.params);
    diff::Var total;
    const int blank = loss::ctc_blank(st.mcfg.lexicon_size);
    for (size_t slot = 0; slot < batch.size(); ++slot) {
      const TrainItem& item = data.items[static_cast<size_t>(batch[slot])];
      auto out = model::forward(g, bound, st.mcfg, item.features);
      diff::Var l = g.ctc_loss(out.phoneme_logits, item.phonemes, blank);
      total = total.valid() ? g.add(total, l) : l;
    }
    diff::Var loss = g.scale(total, 1.0 / static_cast<real>(batch.size()));
    stats.loss_phoneme = g.value(loss).v[0];
    check_finite(stats.loss_phoneme, "phoneme");
    g.backward(loss, stats.beta);
    bound.read_grads(grads);
  }

  // emotion stream: focal on the category head plus weighted concordance on
  // the intensity head, one backward at unit scale
  {
    auto batch = stream_batch(data.emotion_idx, st.tcfg.batch_size, st.tcfg.seed, "emotion", step);
    stats.emotion_batch = static_cast<int>(batch.size());
    if (batch.empty()) throw ConfigError("train_step: emotion stream exhausted");
    diff::Graph g;
    model::BoundParams bound(g, st.params);
    std::vector<diff::Var> esc_rows, eis_rows;
    std::vector<int> labels;
    std::vector<real> golds;
    for (size_t slot = 0; slot < batch.size(); ++slot) {
      const TrainItem& item = data.items[static_cast<size_t>(batch[slot])];
      auto out = model::forward(g, bound, st.mcfg, features_for(batch[slot], static_cast<int>(slot)));
      esc_rows.push_back(out.esc_logits);
      eis_rows.push_back(out.eis_pred);
      labels.push_back(item.category);
      golds.push_back(item.eis);
    }
    diff::Var l_esc = g.focal_loss(g.stack_rows(esc_rows), labels, st.tcfg.gamma);
    diff::Var l_eis = loss::eis_loss(g, g.stack_rows(eis_rows), golds, &stats.eis_skipped);
    stats.loss_esc = g.value(l_esc).v[0];
    stats.loss_eis = g.value(l_eis).v[0];
    check_finite(stats.loss_esc, "category");
    check_finite(stats.loss_eis, "intensity");
    diff::Var loss = g.add(l_esc, g.scale(l_eis, st.tcfg.weights.alpha));
    g.backward(loss, 1.0);
    bound.read_grads(grads);
  }

  stats.loss_combined = stats.loss_esc + st.tcfg.weights.alpha * stats.loss_eis +
                        stats.beta * stats.loss_phoneme + stats.eta * stats.loss_gender;

  if (st.tcfg.grad_clip > 0.0) {
    real sq = 0.0;
    for (const auto& [name, g] : grads.tensors)
      for (real v : g.v) sq += v * v;
    const real norm = std::sqrt(sq);
    if (norm > st.tcfg.grad_clip) {
      const real scale = st.tcfg.grad_clip / norm;
      for (auto& [name, g] : grads.tensors)
        for (real& v : g.v) v *= scale;
    }
  }

  adam_update(st.params, grads, st.adam, st.tcfg, step, stats.lr);
  st.step = step + 1;
  return stats;
}

// ---------------------------------------------------------------------------
// Run loop, checkpoints, metrics log.
// ---------------------------------------------------------------------------

inline TrainState fresh_state(const model::ModelConfig& mcfg, const TrainConfig& tcfg) {
  mcfg.validate();
  tcfg.validate();
  TrainState st;
  st.mcfg = mcfg;
  st.tcfg = tcfg;
  st.params = model::init_parameters(mcfg, tcfg.seed);
  st.adam = AdamState::init(st.params);
  st.step = 0;
  return st;
}

inline model::Checkpoint make_checkpoint(const TrainState& st) {
  model::Checkpoint ck;
  ck.seed = st.tcfg.seed;
  ck.step = static_cast<uint64_t>(st.step);
  ck.config_json = st.mcfg.canonical_json();
  ck.params = st.params;
  ck.adam_m = st.adam.m;
  ck.adam_v = st.adam.v;
  ck.has_adam = true;
  return ck;
}

/// Rebuild a training state from a checkpoint. The model config must hash
/// to the same value as the one stored, otherwise resuming is refused.
inline TrainState state_from_checkpoint(const model::Checkpoint& ck, const model::ModelConfig& mcfg,
                                        const TrainConfig& tcfg) {
  if (fnv1a64(ck.config_json) != mcfg.hash())
    throw ConfigError("checkpoint was written with a different model config");
  if (!ck.has_adam) throw ConfigError("checkpoint lacks optimizer state; cannot resume");
  if (ck.seed != tcfg.seed)
    throw ConfigError("checkpoint seed " + std::to_string(ck.seed) +
                      " does not match configured seed " + std::to_string(tcfg.seed));
  mcfg.validate();
  tcfg.validate();
  TrainState st;
  st.mcfg = mcfg;
  st.tcfg = tcfg;
  st.params = ck.params;
  st.adam = {ck.adam_m, ck.adam_v};
  st.step = static_cast<int>(ck.step);
  return st;
}

/// One JSON object per line; reals print with full round-trip precision and
/// no timestamps, so reruns diff clean.
inline std::string stats_json_line(const StepStats& s) {
  std::string out = "{";
  out += "\"step\":" + std::to_string(s.step);
  out += ",\"lr\":" + format_real(s.lr);
  out += ",\"beta\":" + format_real(s.beta);
  out += ",\"eta\":" + format_real(s.eta);
  out += ",\"loss_gender\":" + format_real(s.loss_gender);
  out += ",\"loss_phoneme\":" + format_real(s.loss_phoneme);
  out += ",\"loss_esc\":" + format_real(s.loss_esc);
  out += ",\"loss_eis\":" + format_real(s.loss_eis);
  out += ",\"loss_combined\":" + format_real(s.loss_combined);
  out += std::string(",\"eis_skipped\":") + (s.eis_skipped ? "true" : "false");
  out += ",\"gender_batch\":" + std::to_string(s.gender_batch);
  out += ",\"phoneme_batch\":" + std::to_string(s.phoneme_batch);
  out += ",\"emotion_batch\":" + std::to_string(s.emotion_batch);
  out += "}";
  return out;
}

struct RunResult {
  int final_step = 0;
  std::filesystem::path checkpoint_path;
  std::vector<StepStats> history;
};

inline RunResult run_training(TrainState& st, const TrainSet& data,
                              const std::filesystem::path& out_dir,
                              std::vector<std::string>* warnings = nullptr) {
  std::filesystem::create_directories(out_dir);
  if (warnings)
    for (const auto& w : data.warnings) warnings->push_back(w);

  std::ofstream log(out_dir / "metrics.jsonl", std::ios::app);
  if (!log) throw IoError("cannot open metrics log in " + out_dir.string());

  RunResult result;
  while (st.step < st.tcfg.steps) {
    StepStats stats = train_step(st, data);
    log << stats_json_line(stats) << '\n';
    log.flush();
    result.history.push_back(stats);
    if (st.tcfg.checkpoint_every > 0 && st.step % st.tcfg.checkpoint_every == 0 &&
        st.step < st.tcfg.steps) {
      char name[32];
      std::snprintf(name, sizeof(name), "checkpoint_%06d.seqc", st.step);
      model::save_checkpoint(out_dir / name, make_checkpoint(st));
    }
  }
  result.final_step = st.step;
  result.checkpoint_path = out_dir / "model.seqc";
  model::save_checkpoint(result.checkpoint_path, make_checkpoint(st));
  return result;
}

}  // namespace speecheq::train

#endif  // SPEECHEQ_TRAINER_HPP
