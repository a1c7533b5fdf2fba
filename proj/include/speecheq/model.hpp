// model.hpp  -- the multitask backbone: a dilated conv front end, three
// squeeze-excitation Res2 blocks each wrapped by a residual BiGRU, channel
// concatenation, attentive statistics pooling, and four task heads (frame
// phoneme logits, utterance gender, emotion category, emotion intensity).
//
// All math runs in double; parameters are snapped to f32 after init and
// after every optimizer step so checkpoints (f32 payloads) round-trip bit
// for bit.
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

#ifndef SPEECHEQ_MODEL_HPP
#define SPEECHEQ_MODEL_HPP

#include <json.hpp>

#include <map>
#include <random>
#include <string>
#include <vector>

#include "speecheq/common.hpp"
#include "speecheq/diffcore.hpp"
#include "speecheq/seqm.hpp"

namespace speecheq::model {

struct ModelConfig {
  int n_mels = 80;
  int channels = 256;       // C: block width; BiGRU uses C/2 per direction
  int bottleneck = 128;     // attention bottleneck
  int res2_scale = 8;
  int conv1_kernel = 5;
  int n_categories = seqm::kNumCategories;
  int lexicon_size = 202;   // phoneme logits carry lexicon_size + 1 columns (blank)

  static ModelConfig desk() {
    ModelConfig c;
    c.channels = 64;
    c.bottleneck = 32;
    return c;
  }

  static ModelConfig tiny() {
    ModelConfig c;
    c.channels = 16;
    c.bottleneck = 8;
    c.lexicon_size = 5;
    return c;
  }

  void validate() const {
    if (n_mels <= 0 || channels <= 0 || bottleneck <= 0 || res2_scale <= 0 || lexicon_size <= 0)
      throw ConfigError("model config: dimensions must be positive");
    if (channels % res2_scale != 0)
      throw ConfigError("model config: channels must be divisible by res2_scale");
    if (channels % 2 != 0) throw ConfigError("model config: channels must be even");
    if (conv1_kernel < 1 || conv1_kernel % 2 == 0)
      throw ConfigError("model config: conv1 kernel must be odd");
    if (n_categories != seqm::kNumCategories)
      throw ConfigError("model config: category head is fixed at " +
                        std::to_string(seqm::kNumCategories));
  }

  int se_hidden() const { return std::max(4, channels / 8); }
  int gru_hidden() const { return channels / 2; }
  int phoneme_logit_cols() const { return lexicon_size + 1; }

  nlohmann::json to_json() const {
    return {{"n_mels", n_mels},       {"channels", channels},
            {"bottleneck", bottleneck}, {"res2_scale", res2_scale},
            {"conv1_kernel", conv1_kernel}, {"n_categories", n_categories},
            {"lexicon_size", lexicon_size}};
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    for (const auto& [key, _] : j.items()) {
      if (key != "n_mels" && key != "channels" && key != "bottleneck" && key != "res2_scale" &&
          key != "conv1_kernel" && key != "n_categories" && key != "lexicon_size")
        throw ConfigError("model config: unknown key '" + key + "'");
    }
    c.n_mels = j.value("n_mels", c.n_mels);
    c.channels = j.value("channels", c.channels);
    c.bottleneck = j.value("bottleneck", c.bottleneck);
    c.res2_scale = j.value("res2_scale", c.res2_scale);
    c.conv1_kernel = j.value("conv1_kernel", c.conv1_kernel);
    c.n_categories = j.value("n_categories", c.n_categories);
    c.lexicon_size = j.value("lexicon_size", c.lexicon_size);
    c.validate();
    return c;
  }

  std::string canonical_json() const { return to_json().dump(); }
  uint64_t hash() const { return fnv1a64(canonical_json()); }
};

// ---------------------------------------------------------------------------
// Parameter storage. std::map keeps a stable name order, which fixes the
// flattening layout and the checkpoint blob order.
// ---------------------------------------------------------------------------

struct ParamStore {
  std::map<std::string, diff::Tensor> tensors;

  diff::Tensor& at(const std::string& name) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw ConfigError("no parameter named '" + name + "'");
    return it->second;
  }
  const diff::Tensor& at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw ConfigError("no parameter named '" + name + "'");
    return it->second;
  }

  size_t count() const {
    size_t n = 0;
    for (const auto& [_, t] : tensors) n += t.size();
    return n;
  }

  ParamStore zeros_like() const {
    ParamStore out;
    for (const auto& [name, t] : tensors) out.tensors.emplace(name, diff::Tensor(t.rows, t.cols));
    return out;
  }

  void snap_all_f32() {
    for (auto& [_, t] : tensors) snap_f32(t.v);
  }

  std::vector<real> flatten() const {
    std::vector<real> flat;
    flat.reserve(count());
    for (const auto& [_, t] : tensors) flat.insert(flat.end(), t.v.begin(), t.v.end());
    return flat;
  }

  void unflatten(const std::vector<real>& flat) {
    if (flat.size() != count()) throw ShapeError("unflatten: size mismatch");
    size_t off = 0;
    for (auto& [_, t] : tensors) {
      std::copy(flat.begin() + static_cast<long>(off), flat.begin() + static_cast<long>(off + t.size()),
                t.v.begin());
      off += t.size();
    }
  }
};

// ---------------------------------------------------------------------------
// Initialization: fan-in-uniform weights, zero biases, orthogonal recurrent
// blocks. Each tensor draws from its own name-derived stream, so the layout
// of the store never changes the values.
// ---------------------------------------------------------------------------

namespace detail {

inline void fill_fan_in_uniform(diff::Tensor& t, int fan_in, Rng& rng) {
  const real bound = 1.0 / std::sqrt(static_cast<real>(fan_in));
  std::uniform_real_distribution<real> u(-bound, bound);
  for (real& v : t.v) v = u(rng);
}

/// Rows of gaussian noise, Gram-Schmidt orthonormalized (square blocks).
inline void fill_orthogonal(diff::Tensor& t, Rng& rng) {
  std::normal_distribution<real> gauss(0.0, 1.0);
  const int n = t.cols;
  if (t.rows % n != 0) throw ShapeError("orthogonal init expects stacked square blocks");
  for (int block = 0; block < t.rows / n; ++block) {
    const int base = block * n;
    for (int r = 0; r < n; ++r) {
      for (int c = 0; c < n; ++c) t.at(base + r, c) = gauss(rng);
      for (int prev = 0; prev < r; ++prev) {
        real dot = 0.0;
        for (int c = 0; c < n; ++c) dot += t.at(base + r, c) * t.at(base + prev, c);
        for (int c = 0; c < n; ++c) t.at(base + r, c) -= dot * t.at(base + prev, c);
      }
      real norm = 0.0;
      for (int c = 0; c < n; ++c) norm += t.at(base + r, c) * t.at(base + r, c);
      norm = std::sqrt(norm);
      if (norm < 1e-8) throw NumericError("orthogonal init: degenerate block");
      for (int c = 0; c < n; ++c) t.at(base + r, c) /= norm;
    }
  }
}

struct ShapeSpec {
  std::string name;
  int rows, cols;
  enum Kind { Weight, Bias, Recurrent } kind;
  int fan_in;
};

inline std::vector<ShapeSpec> parameter_shapes(const ModelConfig& cfg) {
  std::vector<ShapeSpec> s;
  const int c = cfg.channels;
  auto weight = [&](const std::string& n, int rows, int cols, int fi) {
    s.push_back({n, rows, cols, ShapeSpec::Weight, fi});
  };
  auto bias = [&](const std::string& n, int cols) {
    s.push_back({n, 1, cols, ShapeSpec::Bias, 0});
  };
  auto linear = [&](const std::string& n, int in, int out) {
    weight(n + "/w", out, in, in);
    bias(n + "/b", out);
  };
  auto conv = [&](const std::string& n, int cin, int cout, int k) {
    weight(n + "/k", cout, cin * k, cin * k);
    bias(n + "/b", cout);
  };
  auto gru = [&](const std::string& n, int in, int hidden) {
    weight(n + "/w_ih", 3 * hidden, in, in);
    bias(n + "/b_ih", 3 * hidden);
    s.push_back({n + "/w_hh", 3 * hidden, hidden, ShapeSpec::Recurrent, hidden});
    bias(n + "/b_hh", 3 * hidden);
  };

  conv("conv1", cfg.n_mels, c, cfg.conv1_kernel);
  for (int b = 1; b <= 3; ++b) {
    const std::string base = "block" + std::to_string(b);
    conv(base + "/in1x1", c, c, 1);
    const int w = c / cfg.res2_scale;
    for (int gix = 1; gix < cfg.res2_scale; ++gix)
      conv(base + "/res2/g" + std::to_string(gix), w, w, 3);
    linear(base + "/se/fc1", c, cfg.se_hidden());
    linear(base + "/se/fc2", cfg.se_hidden(), c);
    gru(base + "/gru_fwd", c, cfg.gru_hidden());
    gru(base + "/gru_bwd", c, cfg.gru_hidden());
  }
  conv("cat1x1", 3 * c, c, 1);
  linear("phoneme_head", c, cfg.phoneme_logit_cols());
  linear("pool/att1", c, cfg.bottleneck);
  linear("pool/att2", cfg.bottleneck, 1);
  linear("gender_head", 2 * c, 2);
  linear("esc_head", 2 * c, cfg.n_categories);
  linear("eis_head", 2 * c, 1);
  return s;
}

}  // namespace detail

inline ParamStore init_parameters(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  ParamStore store;
  for (const auto& spec : detail::parameter_shapes(cfg)) {
    diff::Tensor t(spec.rows, spec.cols);
    Rng rng(derive_seed(seed, "init/" + spec.name));
    switch (spec.kind) {
      case detail::ShapeSpec::Weight: detail::fill_fan_in_uniform(t, spec.fan_in, rng); break;
      case detail::ShapeSpec::Bias: break;  // zeros
      case detail::ShapeSpec::Recurrent: detail::fill_orthogonal(t, rng); break;
    }
    store.tensors.emplace(spec.name, std::move(t));
  }
  store.snap_all_f32();
  return store;
}

// ---------------------------------------------------------------------------
// Forward pass. Parameters are bound into the graph once per graph; the
// returned map lets the trainer read per-parameter gradients afterwards.
// ---------------------------------------------------------------------------

class BoundParams {
 public:
  BoundParams(diff::Graph& g, const ParamStore& store, bool needs_grad = true) : graph_(&g) {
    for (const auto& [name, t] : store.tensors) vars_.emplace(name, g.leaf(t, needs_grad));
  }

  diff::Var operator[](const std::string& name) const {
    auto it = vars_.find(name);
    if (it == vars_.end()) throw ConfigError("no bound parameter named '" + name + "'");
    return it->second;
  }

  /// grads[name] += scale-weighted gradients accumulated by backward().
  void read_grads(ParamStore& grads) const {
    for (const auto& [name, var] : vars_) {
      const diff::Tensor& g = graph_->gradient(var);
      if (g.v.empty()) continue;
      diff::Tensor& dst = grads.at(name);
      for (size_t i = 0; i < dst.size(); ++i) dst.v[i] += g.v[i];
    }
  }

 private:
  diff::Graph* graph_;
  std::map<std::string, diff::Var> vars_;
};

struct ModelOutputs {
  diff::Var frame_rep;       // T x C
  diff::Var phoneme_logits;  // T x (lexicon_size + 1)
  diff::Var pooled;          // 1 x 2C
  diff::Var gender_logits;   // 1 x 2
  diff::Var esc_logits;      // 1 x 9
  diff::Var eis_pred;        // 1 x 1, unactivated
};

namespace detail {

inline diff::Var linear(diff::Graph& g, const BoundParams& p, const std::string& name, diff::Var x) {
  return g.add_bias(g.matmul(x, p[name + "/w"], false, true), p[name + "/b"]);
}

inline diff::Var conv(diff::Graph& g, const BoundParams& p, const std::string& name, diff::Var x,
                      int k, int dilation = 1) {
  return g.conv1d(x, p[name + "/k"], p[name + "/b"], k, dilation);
}

inline diff::Var se_block(diff::Graph& g, const BoundParams& p, const std::string& name, diff::Var x) {
  diff::Var s = g.mean_rows(x);
  s = g.relu_(linear(g, p, name + "/fc1", s));
  s = g.sigmoid_(linear(g, p, name + "/fc2", s));
  return g.mul_row(x, s);
}

inline diff::Var res2_conv(diff::Graph& g, const BoundParams& p, const std::string& name, diff::Var x,
                           int scale, int dilation) {
  const int c = g.value(x).cols;
  const int w = c / scale;
  std::vector<diff::Var> outs;
  diff::Var prev;
  for (int i = 0; i < scale; ++i) {
    diff::Var xi = g.slice_cols(x, i * w, w);
    if (i == 0) {
      outs.push_back(xi);
      continue;
    }
    diff::Var in = i == 1 ? xi : g.add(xi, prev);
    prev = g.relu_(conv(g, p, name + "/g" + std::to_string(i), in, 3, dilation));
    outs.push_back(prev);
  }
  return g.concat_cols(outs);
}

inline diff::Var gru(diff::Graph& g, const BoundParams& p, const std::string& name, diff::Var x,
                     int hidden, bool reverse) {
  if (reverse) x = g.reverse_rows(x);
  const int t_len = g.value(x).rows;
  diff::Var xproj = g.add_bias(g.matmul(x, p[name + "/w_ih"], false, true), p[name + "/b_ih"]);
  diff::Var ones = g.constant(diff::Tensor(1, hidden, 1.0));
  diff::Var h = g.constant(diff::Tensor(1, hidden));
  std::vector<diff::Var> states;
  states.reserve(static_cast<size_t>(t_len));
  for (int t = 0; t < t_len; ++t) {
    diff::Var xp = g.row(xproj, t);
    diff::Var hp = g.add_bias(g.matmul(h, p[name + "/w_hh"], false, true), p[name + "/b_hh"]);
    diff::Var r = g.sigmoid_(g.add(g.slice_cols(xp, 0, hidden), g.slice_cols(hp, 0, hidden)));
    diff::Var z = g.sigmoid_(g.add(g.slice_cols(xp, hidden, hidden), g.slice_cols(hp, hidden, hidden)));
    diff::Var n = g.tanh_(g.add(g.slice_cols(xp, 2 * hidden, hidden),
                                g.mul(r, g.slice_cols(hp, 2 * hidden, hidden))));
    h = g.add(g.mul(z, h), g.mul(g.sub(ones, z), n));
    states.push_back(h);
  }
  diff::Var out = g.stack_rows(states);
  if (reverse) out = g.reverse_rows(out);
  return out;
}

inline diff::Var res_bigru(diff::Graph& g, const BoundParams& p, const std::string& name, diff::Var x,
                           int hidden) {
  diff::Var fwd = gru(g, p, name + "_fwd", x, hidden, false);
  diff::Var bwd = gru(g, p, name + "_bwd", x, hidden, true);
  return g.add(x, g.concat_cols({fwd, bwd}));
}

inline diff::Var se_res2_block(diff::Graph& g, const BoundParams& p, const ModelConfig& cfg,
                               const std::string& name, diff::Var x, int dilation) {
  diff::Var t = g.relu_(conv(g, p, name + "/in1x1", x, 1));
  t = res2_conv(g, p, name + "/res2", t, cfg.res2_scale, dilation);
  t = se_block(g, p, name + "/se", t);
  t = res_bigru(g, p, name + "/gru", t, cfg.gru_hidden());
  return g.add(x, t);
}

inline diff::Var attentive_stat_pool(diff::Graph& g, const BoundParams& p, diff::Var h) {
  diff::Var scores = linear(g, p, "pool/att2", g.tanh_(linear(g, p, "pool/att1", h)));
  diff::Var att = g.softmax_col(scores);                       // T x 1
  diff::Var mean = g.matmul(att, h, true, false);              // 1 x C
  diff::Var m2 = g.matmul(att, g.mul(h, h), true, false);      // 1 x C
  diff::Var var = g.sub(m2, g.mul(mean, mean));
  diff::Var sd = g.sqrt_eps(var, 1e-8);
  return g.concat_cols({mean, sd});                            // 1 x 2C
}

}  // namespace detail

/// One utterance forward: features (T x n_mels) through the backbone and all
/// four heads. At least 5 frames are required so every dilated tap lands on
/// real input.
inline ModelOutputs forward(diff::Graph& g, const BoundParams& p, const ModelConfig& cfg,
                            const diff::Tensor& features) {
  cfg.validate();
  if (features.cols != cfg.n_mels)
    throw ShapeError("forward: features have " + std::to_string(features.cols) +
                     " dims, model expects " + std::to_string(cfg.n_mels));
  if (features.rows < 5)
    throw ShapeError("forward: need at least 5 frames, got " + std::to_string(features.rows));

  diff::Var x = g.constant(features);
  x = g.relu_(detail::conv(g, p, "conv1", x, cfg.conv1_kernel));
  diff::Var b1 = detail::se_res2_block(g, p, cfg, "block1", x, 2);
  diff::Var b2 = detail::se_res2_block(g, p, cfg, "block2", b1, 3);
  diff::Var b3 = detail::se_res2_block(g, p, cfg, "block3", b2, 4);
  diff::Var cat = g.concat_cols({b1, b2, b3});

  ModelOutputs out;
  out.frame_rep = g.relu_(detail::conv(g, p, "cat1x1", cat, 1));
  out.phoneme_logits = detail::linear(g, p, "phoneme_head", out.frame_rep);
  out.pooled = detail::attentive_stat_pool(g, p, out.frame_rep);
  out.gender_logits = detail::linear(g, p, "gender_head", out.pooled);
  out.esc_logits = detail::linear(g, p, "esc_head", out.pooled);
  out.eis_pred = detail::linear(g, p, "eis_head", out.pooled);
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints. Little-endian container: "SEQC" magic, format version, the
// global seed, the step counter, the canonical model config, named f32
// blobs (parameters and optionally Adam moments), and a trailing fnv1a64
// checksum over everything before it.
// ---------------------------------------------------------------------------

inline constexpr uint32_t kCheckpointMagic = 0x43514553;  // "SEQC" little-endian
inline constexpr uint32_t kCheckpointVersion = 1;

enum class BlobKind : uint8_t { Param = 0, AdamM = 1, AdamV = 2 };

struct Checkpoint {
  uint64_t seed = 0;
  uint64_t step = 0;
  std::string config_json;
  ParamStore params;
  ParamStore adam_m, adam_v;
  bool has_adam = false;
};

namespace detail {

inline void write_blobs(ByteWriter& b, const ParamStore& store, BlobKind kind) {
  for (const auto& [name, t] : store.tensors) {
    b.u32(static_cast<uint32_t>(name.size()));
    b.str(name);
    b.u8(static_cast<uint8_t>(kind));
    b.u32(static_cast<uint32_t>(t.rows));
    b.u32(static_cast<uint32_t>(t.cols));
    for (real v : t.v) b.f32(static_cast<float>(v));
  }
}

}  // namespace detail

inline std::string format_checkpoint(const Checkpoint& ck) {
  ByteWriter b;
  b.u32(kCheckpointMagic);
  b.u32(kCheckpointVersion);
  b.u64(ck.seed);
  b.u64(ck.step);
  b.u32(static_cast<uint32_t>(ck.config_json.size()));
  b.str(ck.config_json);
  uint32_t blob_count = static_cast<uint32_t>(ck.params.tensors.size());
  if (ck.has_adam)
    blob_count += static_cast<uint32_t>(ck.adam_m.tensors.size() + ck.adam_v.tensors.size());
  b.u32(blob_count);
  detail::write_blobs(b, ck.params, BlobKind::Param);
  if (ck.has_adam) {
    detail::write_blobs(b, ck.adam_m, BlobKind::AdamM);
    detail::write_blobs(b, ck.adam_v, BlobKind::AdamV);
  }
  const uint64_t checksum = fnv1a64(b.data().data(), b.data().size());
  b.u64(checksum);
  return b.data();
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  atomic_write_file(path, format_checkpoint(ck));
}

inline Checkpoint parse_checkpoint(const std::string& bytes) {
  if (bytes.size() < 8) throw FormatError("checkpoint: truncated");
  const uint64_t stored = ByteReader(std::string(bytes.end() - 8, bytes.end())).u64();
  const uint64_t actual = fnv1a64(bytes.data(), bytes.size() - 8);
  if (stored != actual) throw FormatError("checkpoint: checksum mismatch");

  ByteReader r(bytes);
  if (r.u32() != kCheckpointMagic) throw FormatError("checkpoint: bad magic");
  const uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  Checkpoint ck;
  ck.seed = r.u64();
  ck.step = r.u64();
  const uint32_t cfg_len = r.u32();
  ck.config_json = r.str(cfg_len);
  const uint32_t blob_count = r.u32();
  for (uint32_t i = 0; i < blob_count; ++i) {
    const uint32_t name_len = r.u32();
    const std::string name = r.str(name_len);
    const auto kind = static_cast<BlobKind>(r.u8());
    const int rows = static_cast<int>(r.u32());
    const int cols = static_cast<int>(r.u32());
    if (rows <= 0 || cols <= 0) throw FormatError("checkpoint: bad blob shape for '" + name + "'");
    diff::Tensor t(rows, cols);
    for (real& v : t.v) v = static_cast<real>(r.f32());
    ParamStore* dst = nullptr;
    switch (kind) {
      case BlobKind::Param: dst = &ck.params; break;
      case BlobKind::AdamM: dst = &ck.adam_m; ck.has_adam = true; break;
      case BlobKind::AdamV: dst = &ck.adam_v; ck.has_adam = true; break;
      default: throw FormatError("checkpoint: unknown blob kind");
    }
    if (!dst->tensors.emplace(name, std::move(t)).second)
      throw FormatError("checkpoint: duplicate blob '" + name + "'");
  }
  if (r.remaining() != 8) throw FormatError("checkpoint: trailing bytes");
  return ck;
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  try {
    return parse_checkpoint(read_file(path));
  } catch (const Error& e) {
    rethrow_with_context(e, path.string());
  }
}

}  // namespace speecheq::model

#endif  // SPEECHEQ_MODEL_HPP
