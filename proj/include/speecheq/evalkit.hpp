// evalkit.hpp  -- inference and evaluation: weighted/unweighted accuracy,
// important-category accuracy, masked-aware intensity MSE, stratified
// k-fold splits, and report rendering (text, TSV, SVG histogram).
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

#ifndef SPEECHEQ_EVALKIT_HPP
#define SPEECHEQ_EVALKIT_HPP

#include <algorithm>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "speecheq/common.hpp"
#include "speecheq/model.hpp"
#include "speecheq/seqm.hpp"

namespace speecheq::eval {

/// The categories whose recall enters UAi.
inline const std::set<int>& important_categories() {
  static const std::set<int> s = {0, 2, 4, 6};  // Neutral, Joy, Anger, Sadness
  return s;
}

/// Ties resolve to the lowest index.
inline int argmax_row(const diff::Tensor& t, int row = 0) {
  int best = 0;
  for (int c = 1; c < t.cols; ++c)
    if (t.at(row, c) > t.at(row, best)) best = c;
  return best;
}

// ---------------------------------------------------------------------------
// Inference.
// ---------------------------------------------------------------------------

struct InferResult {
  int category = 0;
  int gender = 0;
  real eis = 0.0;                // clipped to [0, 4]
  real eis_raw = 0.0;            // unclipped head output
  std::vector<real> category_probs;  // softmax, 9 entries
  std::vector<int> phonemes;     // greedy CTC decode: collapse repeats, drop blanks
};

inline InferResult infer(const model::ParamStore& params, const model::ModelConfig& cfg,
                         const diff::Tensor& features) {
  diff::Graph g;
  model::BoundParams bound(g, params, /*needs_grad=*/false);
  auto out = model::forward(g, bound, cfg, features);

  InferResult r;
  r.category = argmax_row(g.value(out.esc_logits));
  r.gender = argmax_row(g.value(out.gender_logits));
  r.eis_raw = g.value(out.eis_pred).v[0];
  r.eis = seqm::clip_eis(r.eis_raw);

  const diff::Tensor& esc = g.value(out.esc_logits);
  real mx = esc.at(0, 0);
  for (int c = 1; c < esc.cols; ++c) mx = std::max(mx, esc.at(0, c));
  real sum = 0.0;
  r.category_probs.resize(static_cast<size_t>(esc.cols));
  for (int c = 0; c < esc.cols; ++c) {
    r.category_probs[static_cast<size_t>(c)] = std::exp(esc.at(0, c) - mx);
    sum += r.category_probs[static_cast<size_t>(c)];
  }
  for (real& p : r.category_probs) p /= sum;

  const diff::Tensor& ph = g.value(out.phoneme_logits);
  const int blank = cfg.lexicon_size;
  int prev = -1;
  for (int t = 0; t < ph.rows; ++t) {
    const int k = argmax_row(ph, t);
    if (k != blank && k != prev) r.phonemes.push_back(k);
    prev = k;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Metrics.
// ---------------------------------------------------------------------------

struct EvalExample {
  std::string id;
  int gold_category = 0;
  int pred_category = 0;
  real gold_eis = seqm::kMaskedSentinel;  // sentinel: masked, excluded from MSE
  real pred_eis = 0.0;
  int gold_gender = -1;  // -1: unknown
  int pred_gender = -1;
};

struct ConfusionMatrix {
  std::vector<std::vector<int64_t>> cells;  // cells[gold][pred]
  int n = seqm::kNumCategories;

  ConfusionMatrix()
      : cells(static_cast<size_t>(seqm::kNumCategories),
              std::vector<int64_t>(static_cast<size_t>(seqm::kNumCategories), 0)) {}

  void add(int gold, int pred) {
    if (gold < 0 || gold >= n || pred < 0 || pred >= n)
      throw SchemaError("confusion: category out of range");
    ++cells[static_cast<size_t>(gold)][static_cast<size_t>(pred)];
  }

  int64_t trace() const {
    int64_t t = 0;
    for (int i = 0; i < n; ++i) t += cells[static_cast<size_t>(i)][static_cast<size_t>(i)];
    return t;
  }
  int64_t total() const {
    int64_t t = 0;
    for (const auto& row : cells)
      for (int64_t c : row) t += c;
    return t;
  }
  int64_t gold_count(int g) const {
    int64_t t = 0;
    for (int64_t c : cells[static_cast<size_t>(g)]) t += c;
    return t;
  }
  real recall(int g) const {
    const int64_t cnt = gold_count(g);
    if (cnt == 0) throw NumericError("recall undefined for absent category");
    return static_cast<real>(cells[static_cast<size_t>(g)][static_cast<size_t>(g)]) /
           static_cast<real>(cnt);
  }
};

struct Metrics {
  real wa = 0.0;   // weighted accuracy: trace / total
  real ua = 0.0;   // mean recall over categories present in gold
  real uai = 0.0;  // mean recall over the important categories present
  real mse = 0.0;  // over unmasked intensity golds
  real gender_acc = 0.0;
  int64_t count = 0;
  int64_t unmasked = 0;
  int64_t gendered = 0;
  ConfusionMatrix confusion;
  std::vector<std::string> warnings;
};

inline Metrics compute_metrics(const std::vector<EvalExample>& examples) {
  if (examples.empty()) throw ConfigError("compute_metrics: no examples");
  Metrics m;
  m.count = static_cast<int64_t>(examples.size());
  real sq = 0.0;
  int64_t gender_hits = 0;
  for (const auto& e : examples) {
    m.confusion.add(e.gold_category, e.pred_category);
    if (e.gold_eis != seqm::kMaskedSentinel) {
      if (!(e.gold_eis >= seqm::kEisMin && e.gold_eis <= seqm::kEisMax))
        throw SchemaError("compute_metrics: unmasked gold outside [0,4]");
      const real d = e.pred_eis - e.gold_eis;
      sq += d * d;
      ++m.unmasked;
    }
    if (e.gold_gender >= 0) {
      ++m.gendered;
      if (e.gold_gender == e.pred_gender) ++gender_hits;
    }
  }
  m.wa = static_cast<real>(m.confusion.trace()) / static_cast<real>(m.confusion.total());

  real recall_sum = 0.0;
  int present = 0;
  real imp_sum = 0.0;
  int imp_present = 0;
  for (int c = 0; c < seqm::kNumCategories; ++c) {
    if (m.confusion.gold_count(c) == 0) {
      m.warnings.push_back("category '" + std::string(seqm::category_name(c)) +
                           "' absent from golds; dropped from UA");
      continue;
    }
    const real r = m.confusion.recall(c);
    recall_sum += r;
    ++present;
    if (important_categories().count(c)) {
      imp_sum += r;
      ++imp_present;
    }
  }
  if (present == 0) throw NumericError("compute_metrics: no categories present");
  m.ua = recall_sum / present;
  if (imp_present == 0) {
    m.warnings.push_back("no important categories present; UAi undefined, reported as 0");
    m.uai = 0.0;
  } else {
    m.uai = imp_sum / imp_present;
  }
  m.mse = m.unmasked > 0 ? sq / static_cast<real>(m.unmasked) : 0.0;
  if (m.unmasked == 0) m.warnings.push_back("all intensity golds masked; MSE reported as 0");
  m.gender_acc = m.gendered > 0 ? static_cast<real>(gender_hits) / static_cast<real>(m.gendered) : 0.0;
  return m;
}

// ---------------------------------------------------------------------------
// Splits. Stratified by category so every fold sees every class that has at
// least k members.
// ---------------------------------------------------------------------------

/// k folds of test indices; fold f's training set is everything else. A
/// class with fewer than k members cannot reach every fold; it is dealt
/// best-effort with a warning.
inline std::vector<std::vector<int>> kfold_split(const std::vector<int>& categories, int k,
                                                 uint64_t seed,
                                                 std::vector<std::string>* warnings = nullptr) {
  const int n = static_cast<int>(categories.size());
  if (k < 2) throw ConfigError("kfold_split: k must be >= 2");
  if (n < k) throw ConfigError("kfold_split: fewer examples than folds");
  std::map<int, std::vector<int>> by_class;
  for (int i = 0; i < n; ++i) by_class[categories[static_cast<size_t>(i)]].push_back(i);

  std::vector<std::vector<int>> folds(static_cast<size_t>(k));
  for (auto& [cls, idx] : by_class) {
    if (static_cast<int>(idx.size()) < k && warnings)
      warnings->push_back("kfold_split: category " + std::to_string(cls) + " has " +
                          std::to_string(idx.size()) + " examples for " + std::to_string(k) +
                          " folds; some folds will miss it");
    Rng rng(derive_seed(seed, "kfold/" + std::to_string(cls)));
    std::shuffle(idx.begin(), idx.end(), rng);
    for (size_t j = 0; j < idx.size(); ++j)
      folds[j % static_cast<size_t>(k)].push_back(idx[j]);
  }
  for (auto& f : folds) std::sort(f.begin(), f.end());
  return folds;
}

/// One stratified train/test split with the given test fraction.
struct RatioSplit {
  std::vector<int> train, test;
};

inline RatioSplit ratio_split(const std::vector<int>& categories, real test_fraction,
                              uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw ConfigError("ratio_split: test fraction must be in (0, 1)");
  std::map<int, std::vector<int>> by_class;
  for (size_t i = 0; i < categories.size(); ++i)
    by_class[categories[i]].push_back(static_cast<int>(i));
  RatioSplit out;
  for (auto& [cls, idx] : by_class) {
    Rng rng(derive_seed(seed, "ratio/" + std::to_string(cls)));
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n_test = static_cast<size_t>(
        std::max<int64_t>(1, std::llround(test_fraction * static_cast<real>(idx.size()))));
    for (size_t j = 0; j < idx.size(); ++j)
      (j < n_test ? out.test : out.train).push_back(idx[j]);
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

// ---------------------------------------------------------------------------
// Report rendering.
// ---------------------------------------------------------------------------

inline std::string render_text_report(const Metrics& m) {
  char buf[256];
  std::string out;
  std::snprintf(buf, sizeof(buf),
                "examples %lld  WA %.4f  UA %.4f  UAi %.4f  MSE %.4f (over %lld unmasked)\n",
                static_cast<long long>(m.count), m.wa, m.ua, m.uai, m.mse,
                static_cast<long long>(m.unmasked));
  out += buf;
  if (m.gendered > 0) {
    std::snprintf(buf, sizeof(buf), "gender accuracy %.4f (over %lld)\n", m.gender_acc,
                  static_cast<long long>(m.gendered));
    out += buf;
  }
  out += "confusion (rows gold, cols pred):\n";
  out += "            ";
  for (int c = 0; c < m.confusion.n; ++c) {
    std::snprintf(buf, sizeof(buf), " %5.5s", seqm::category_name(c));
    out += buf;
  }
  out += '\n';
  for (int g = 0; g < m.confusion.n; ++g) {
    std::snprintf(buf, sizeof(buf), "%-12.12s", seqm::category_name(g));
    out += buf;
    for (int p = 0; p < m.confusion.n; ++p) {
      std::snprintf(buf, sizeof(buf), "%6lld",
                    static_cast<long long>(m.confusion.cells[static_cast<size_t>(g)][static_cast<size_t>(p)]));
      out += buf;
    }
    out += '\n';
  }
  for (const auto& w : m.warnings) out += "warning: " + w + '\n';
  return out;
}

inline std::string render_tsv_report(const Metrics& m) {
  std::string out = "metric\tvalue\n";
  out += "examples\t" + std::to_string(m.count) + '\n';
  out += "wa\t" + format_real(m.wa) + '\n';
  out += "ua\t" + format_real(m.ua) + '\n';
  out += "uai\t" + format_real(m.uai) + '\n';
  out += "mse\t" + format_real(m.mse) + '\n';
  out += "unmasked\t" + std::to_string(m.unmasked) + '\n';
  out += "gender_acc\t" + format_real(m.gender_acc) + '\n';
  return out;
}

/// Per-fold table plus the cross-validation mean. The fold id is the row
/// index into `reports`.
inline std::string render_fold_table(const std::vector<Metrics>& reports) {
  if (reports.empty()) throw ConfigError("render_fold_table: no reports");
  char buf[160];
  std::string out = "fold      WA      UA     UAi     MSE\n";
  real wa = 0.0, ua = 0.0, uai = 0.0, mse = 0.0;
  for (size_t f = 0; f < reports.size(); ++f) {
    const Metrics& m = reports[f];
    std::snprintf(buf, sizeof(buf), "%4zu  %.4f  %.4f  %.4f  %.4f\n", f, m.wa, m.ua, m.uai, m.mse);
    out += buf;
    wa += m.wa;
    ua += m.ua;
    uai += m.uai;
    mse += m.mse;
  }
  const real k = static_cast<real>(reports.size());
  std::snprintf(buf, sizeof(buf), "mean  %.4f  %.4f  %.4f  %.4f\n", wa / k, ua / k, uai / k,
                mse / k);
  out += buf;
  return out;
}

inline std::string render_fold_tsv(const std::vector<Metrics>& reports) {
  if (reports.empty()) throw ConfigError("render_fold_tsv: no reports");
  std::string out = "fold\twa\tua\tuai\tmse\texamples\n";
  real wa = 0.0, ua = 0.0, uai = 0.0, mse = 0.0;
  int64_t count = 0;
  for (size_t f = 0; f < reports.size(); ++f) {
    const Metrics& m = reports[f];
    out += std::to_string(f) + '\t' + format_real(m.wa) + '\t' + format_real(m.ua) + '\t' +
           format_real(m.uai) + '\t' + format_real(m.mse) + '\t' + std::to_string(m.count) + '\n';
    wa += m.wa;
    ua += m.ua;
    uai += m.uai;
    mse += m.mse;
    count += m.count;
  }
  const real k = static_cast<real>(reports.size());
  out += "mean\t" + format_real(wa / k) + '\t' + format_real(ua / k) + '\t' + format_real(uai / k) +
         '\t' + format_real(mse / k) + '\t' + std::to_string(count) + '\n';
  return out;
}

/// Histogram of predicted intensity, one panel per distinct gold intensity
/// (unmasked examples only), as a standalone SVG.
inline std::string render_eis_histogram_svg(const std::vector<EvalExample>& examples,
                                            int bins = 16) {
  std::map<real, std::vector<real>> groups;
  for (const auto& e : examples)
    if (e.gold_eis != seqm::kMaskedSentinel) groups[e.gold_eis].push_back(e.pred_eis);

  const int panel_w = 360, panel_h = 120, margin = 40;
  const int width = panel_w + 2 * margin;
  const int height = std::max<int>(1, static_cast<int>(groups.size())) * (panel_h + margin) + margin;
  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width) +
                    "\" height=\"" + std::to_string(height) + "\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

  int panel = 0;
  char buf[256];
  for (const auto& [gold, preds] : groups) {
    const int top = margin + panel * (panel_h + margin);
    std::vector<int> hist(static_cast<size_t>(bins), 0);
    for (real p : preds) {
      const real clamped = std::clamp(p, seqm::kEisMin, seqm::kEisMax);
      int b = static_cast<int>(clamped / (seqm::kEisMax - seqm::kEisMin) * bins);
      b = std::min(b, bins - 1);
      ++hist[static_cast<size_t>(b)];
    }
    const int peak = std::max(1, *std::max_element(hist.begin(), hist.end()));
    std::snprintf(buf, sizeof(buf),
                  "<text x=\"%d\" y=\"%d\" font-family=\"monospace\" font-size=\"12\">gold "
                  "intensity %.2f (n=%zu)</text>\n",
                  margin, top - 6, gold, preds.size());
    svg += buf;
    const real bar_w = static_cast<real>(panel_w) / bins;
    for (int b = 0; b < bins; ++b) {
      const int h = static_cast<int>(std::lround(
          static_cast<real>(hist[static_cast<size_t>(b)]) / peak * (panel_h - 4)));
      std::snprintf(buf, sizeof(buf),
                    "<rect x=\"%.1f\" y=\"%d\" width=\"%.1f\" height=\"%d\" fill=\"#4477aa\"/>\n",
                    margin + b * bar_w, top + panel_h - h, bar_w - 1.0, h);
      svg += buf;
    }
    std::snprintf(buf, sizeof(buf),
                  "<line x1=\"%d\" y1=\"%d\" x2=\"%d\" y2=\"%d\" stroke=\"black\"/>\n", margin,
                  top + panel_h, margin + panel_w, top + panel_h);
    svg += buf;
    // gold marker
    const real gx = margin + gold / (seqm::kEisMax - seqm::kEisMin) * panel_w;
    std::snprintf(buf, sizeof(buf),
                  "<line x1=\"%.1f\" y1=\"%d\" x2=\"%.1f\" y2=\"%d\" stroke=\"#cc3311\" "
                  "stroke-dasharray=\"4\"/>\n",
                  gx, top, gx, top + panel_h);
    svg += buf;
    ++panel;
  }
  svg += "</svg>\n";
  return svg;
}

}  // namespace speecheq::eval

#endif  // SPEECHEQ_EVALKIT_HPP
