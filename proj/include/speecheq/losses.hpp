// losses.hpp  -- task losses: CTC for phonemes, focal for classification,
// concordance correlation for intensity regression, the masked-intensity
// mechanism, and their weighted combination.
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

#ifndef SPEECHEQ_LOSSES_HPP
#define SPEECHEQ_LOSSES_HPP

#include <vector>

#include "speecheq/diffcore.hpp"
#include "speecheq/seqm.hpp"

namespace speecheq::loss {

inline constexpr real kDefaultGamma = 10.0;

/// Blank id for a phoneme lexicon of the given size: the blank is appended
/// after the lexicon, so logits carry lexicon_size + 1 columns.
inline int ctc_blank(int lexicon_size) {
  if (lexicon_size <= 0) throw ParameterError("ctc_blank: lexicon must be non-empty");
  return lexicon_size;
}

struct LossWeights {
  real alpha = 1.0;  // intensity term
  real beta = 0.1;   // phoneme term
  real eta = 0.1;    // gender term

  void validate() const {
    for (real w : {alpha, beta, eta})
      if (!std::isfinite(w) || w < 0.0) throw ConfigError("loss weights must be finite and >= 0");
  }
};

// ---------------------------------------------------------------------------
// Masked intensity labels. A gold equal to the masked sentinel contributes
// neither error nor gradient: its slot is excluded from the concordance
// statistics (equivalently, the residual against a detached clipped
// prediction is zero).
// ---------------------------------------------------------------------------

struct MaskedEis {
  std::vector<real> golds;  // masked entries replaced by clip(pred)
  std::vector<bool> use;    // true where the gold was real
  int unmasked = 0;
};

inline MaskedEis mask_eis(const std::vector<real>& preds, const std::vector<real>& golds) {
  if (preds.size() != golds.size()) throw ShapeError("mask_eis: preds/golds size mismatch");
  MaskedEis out;
  out.golds.resize(golds.size());
  out.use.resize(golds.size());
  for (size_t i = 0; i < golds.size(); ++i) {
    if (golds[i] == seqm::kMaskedSentinel) {
      out.golds[i] = seqm::clip_eis(preds[i]);
      out.use[i] = false;
    } else {
      if (!(golds[i] >= seqm::kEisMin && golds[i] <= seqm::kEisMax))
        throw SchemaError("mask_eis: unmasked gold " + format_real(golds[i]) + " outside [0,4]");
      out.golds[i] = golds[i];
      out.use[i] = true;
      ++out.unmasked;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Graph builders.
// ---------------------------------------------------------------------------

/// L = L_e + alpha * L_eis + beta * L_p + eta * L_g as a graph scalar.
inline diff::Var combined_loss(diff::Graph& g, diff::Var l_e, diff::Var l_eis, diff::Var l_p,
                               diff::Var l_g, const LossWeights& w = {}) {
  w.validate();
  diff::Var total = g.add(l_e, g.scale(l_eis, w.alpha));
  total = g.add(total, g.scale(l_p, w.beta));
  return g.add(total, g.scale(l_g, w.eta));
}

inline real combined_value(real l_e, real l_eis, real l_p, real l_g, const LossWeights& w = {}) {
  w.validate();
  return l_e + w.alpha * l_eis + w.beta * l_p + w.eta * l_g;
}

/// Intensity loss for a batch: 1 - CCC over the unmasked subset of the
/// B x 1 prediction column. golds use the masked sentinel for absent labels.
inline diff::Var eis_loss(diff::Graph& g, diff::Var pred_col, const std::vector<real>& golds,
                          bool* skipped = nullptr) {
  const diff::Tensor& tp = g.value(pred_col);
  std::vector<real> preds(static_cast<size_t>(tp.rows));
  for (int i = 0; i < tp.rows; ++i) preds[static_cast<size_t>(i)] = tp.at(i, 0);
  const MaskedEis m = mask_eis(preds, golds);
  return g.ccc_loss(pred_col, m.golds, m.use, skipped);
}

// ---------------------------------------------------------------------------
// Standalone value + gradient evaluators (single-op graphs), convenient for
// callers that do not carry a graph.
// ---------------------------------------------------------------------------

struct LossResult {
  real value = 0.0;
  diff::Tensor grad;  // same shape as the logits input
};

inline LossResult ctc_with_grad(const diff::Tensor& logits, const std::vector<int>& labels,
                                int blank) {
  diff::Graph g;
  diff::Var in = g.leaf(logits);
  diff::Var l = g.ctc_loss(in, labels, blank);
  g.backward(l);
  return {g.value(l).v[0], g.gradient(in)};
}

inline LossResult focal_with_grad(const diff::Tensor& logits, const std::vector<int>& labels,
                                  real gamma = kDefaultGamma) {
  diff::Graph g;
  diff::Var in = g.leaf(logits);
  diff::Var l = g.focal_loss(in, labels, gamma);
  g.backward(l);
  return {g.value(l).v[0], g.gradient(in)};
}

struct CccResult {
  real value = 0.0;
  diff::Tensor grad;  // B x 1
  bool skipped = false;
  int unmasked = 0;
};

/// golds may contain the masked sentinel; preds is a B x 1 column.
inline CccResult ccc_with_grad(const diff::Tensor& preds, const std::vector<real>& golds) {
  diff::Graph g;
  diff::Var in = g.leaf(preds);
  CccResult r;
  diff::Var l = eis_loss(g, in, golds, &r.skipped);
  g.backward(l);
  r.value = g.value(l).v[0];
  r.grad = r.skipped ? diff::Tensor(preds.rows, 1) : g.gradient(in);
  std::vector<real> p(static_cast<size_t>(preds.rows));
  for (int i = 0; i < preds.rows; ++i) p[static_cast<size_t>(i)] = preds.at(i, 0);
  r.unmasked = mask_eis(p, golds).unmasked;
  return r;
}

}  // namespace speecheq::loss

#endif  // SPEECHEQ_LOSSES_HPP
