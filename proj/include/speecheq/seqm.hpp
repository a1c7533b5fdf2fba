// seqm.hpp  -- the unified emotion metric: 9-way category space, intensity
// scale construction from heterogeneous label schemes, and the multi-dataset
// merge (MsUD).
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

#ifndef SPEECHEQ_SEQM_HPP
#define SPEECHEQ_SEQM_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "speecheq/common.hpp"

namespace speecheq::seqm {

// ---------------------------------------------------------------------------
// Emotion categories. Neutral is id 0; the eight wheel emotions follow in a
// fixed order. The intensity value (EIS) lives in [0,4]; [0,1) is neutral
// territory, and a masked label carries the -1 sentinel.
// ---------------------------------------------------------------------------

inline constexpr int kNumCategories = 9;
inline constexpr int kNeutralId = 0;
inline constexpr real kEisMin = 0.0;
inline constexpr real kEisMax = 4.0;
inline constexpr real kMaskedSentinel = -1.0;

inline constexpr std::array<const char*, kNumCategories> kCategoryNames = {
    "Neutral", "Trust",   "Joy",      "Anticipation", "Anger",
    "Disgust", "Sadness", "Surprise", "Fear"};

inline const char* category_name(int id) {
  if (id < 0 || id >= kNumCategories) throw MappingError("category id out of range: " + std::to_string(id));
  return kCategoryNames[static_cast<size_t>(id)];
}

inline int category_from_name(const std::string& name) {
  for (int i = 0; i < kNumCategories; ++i)
    if (name == kCategoryNames[static_cast<size_t>(i)]) return i;
  throw MappingError("unknown emotion category '" + name + "'");
}

struct UnifiedLabel {
  int category = kNeutralId;
  real eis = kMaskedSentinel;  // -1 sentinel while masked
  bool masked = true;
};

enum class Gender { Male, Female };

inline const char* gender_name(Gender g) { return g == Gender::Male ? "male" : "female"; }

inline Gender gender_from_name(const std::string& s) {
  if (s == "male") return Gender::Male;
  if (s == "female") return Gender::Female;
  throw SchemaError("gender must be 'male' or 'female', got '" + s + "'");
}

// ---------------------------------------------------------------------------
// Label schemes. A scheme describes how one source dataset encodes its
// labels: a category mapping table plus one of four intensity kinds.
// ---------------------------------------------------------------------------

enum class SchemeKind { ThreeLevel, TwoLevel, Continuous, Unspecified };

inline const char* scheme_kind_name(SchemeKind k) {
  switch (k) {
    case SchemeKind::ThreeLevel: return "three-level";
    case SchemeKind::TwoLevel: return "two-level";
    case SchemeKind::Continuous: return "continuous";
    case SchemeKind::Unspecified: return "unspecified";
  }
  return "?";
}

struct LabelScheme {
  std::string name;  // source dataset name, used to namespace utterance ids
  SchemeKind kind = SchemeKind::Unspecified;
  std::map<std::string, int> label_to_category;  // source label -> category id
  std::set<std::string> excluded;                // source labels dropped at merge time
  real lo = 0.0, hi = 0.0;                       // continuous kind only

  void validate() const {
    if (name.empty()) throw ConfigError("scheme has no dataset name");
    if (label_to_category.empty()) throw ConfigError("scheme '" + name + "' maps no labels");
    if (kind == SchemeKind::Continuous && !(lo < hi))
      throw ConfigError("degenerate continuous scheme '" + name + "': lo must be < hi");
  }
};

inline LabelScheme scheme_from_json(const nlohmann::json& j) {
  LabelScheme s;
  for (const auto& [key, _] : j.items()) {
    if (key != "name" && key != "kind" && key != "labels" && key != "exclude" && key != "range")
      throw ConfigError("unknown scheme key '" + key + "'");
  }
  s.name = j.at("name").get<std::string>();
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "three-level") s.kind = SchemeKind::ThreeLevel;
  else if (kind == "two-level") s.kind = SchemeKind::TwoLevel;
  else if (kind == "continuous") s.kind = SchemeKind::Continuous;
  else if (kind == "unspecified") s.kind = SchemeKind::Unspecified;
  else throw ConfigError("unknown scheme kind '" + kind + "'");
  for (const auto& [src, cat] : j.at("labels").items())
    s.label_to_category[src] = category_from_name(cat.get<std::string>());
  if (j.contains("exclude"))
    for (const auto& e : j.at("exclude")) s.excluded.insert(e.get<std::string>());
  if (s.kind == SchemeKind::Continuous) {
    s.lo = j.at("range").at("lo").get<real>();
    s.hi = j.at("range").at("hi").get<real>();
  } else if (j.contains("range")) {
    throw ConfigError("scheme '" + s.name + "': 'range' is only valid for continuous kind");
  }
  s.validate();
  return s;
}

inline LabelScheme load_scheme(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("bad scheme file " + path.string() + ": " + e.what());
  }
  try {
    return scheme_from_json(j);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("bad scheme file " + path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Core mapping operations.
// ---------------------------------------------------------------------------

/// Clip an intensity value into [0,4]. Non-finite input is a numeric error.
inline real clip_eis(real raw) {
  if (!std::isfinite(raw)) throw NumericError("clip_eis: non-finite input");
  return std::min(std::max(raw, kEisMin), kEisMax);
}

/// Linear map of a raw continuous annotation from [lo,hi] onto [1,4].
/// Raw values slightly outside the declared range are clamped first, with a
/// warning recorded if a sink is provided.
inline real rescale_continuous(real lo, real hi, real raw,
                               std::vector<std::string>* warnings = nullptr) {
  if (!(lo < hi)) throw ConfigError("degenerate continuous range: lo must be < hi");
  if (!std::isfinite(raw)) throw NumericError("rescale_continuous: non-finite input");
  real clamped = std::min(std::max(raw, lo), hi);
  if (clamped != raw && warnings)
    warnings->push_back("continuous value " + format_real(raw) + " clamped to [" +
                        format_real(lo) + "," + format_real(hi) + "]");
  return 1.0 + 3.0 * (clamped - lo) / (hi - lo);
}

/// Map one (source label, level token) pair through a scheme.
///
/// Precedence: an unspecified scheme masks everything (the -1 sentinel);
/// otherwise Neutral is exactly 0.0; otherwise the scheme kind decides.
inline UnifiedLabel unify_level_label(const LabelScheme& scheme, const std::string& source_label,
                                      const std::optional<std::string>& source_level,
                                      std::vector<std::string>* warnings = nullptr) {
  auto it = scheme.label_to_category.find(source_label);
  if (it == scheme.label_to_category.end())
    throw MappingError("scheme '" + scheme.name + "' does not map source label '" + source_label + "'");
  const int category = it->second;

  const bool has_level = source_level.has_value() && !trim(*source_level).empty();
  UnifiedLabel out;
  out.category = category;

  if (scheme.kind == SchemeKind::Unspecified) {
    if (has_level)
      throw SchemaError("scheme '" + scheme.name + "' is unspecified but a level token '" +
                        *source_level + "' is present");
    out.eis = kMaskedSentinel;
    out.masked = true;
    return out;
  }

  out.masked = false;
  if (category == kNeutralId) {
    out.eis = 0.0;
    return out;
  }

  switch (scheme.kind) {
    case SchemeKind::ThreeLevel: {
      if (!has_level) throw SchemaError("three-level scheme '" + scheme.name + "' requires a level token");
      const std::string lv = trim(*source_level);
      if (lv == "low") out.eis = 1.5;
      else if (lv == "medium") out.eis = 2.5;
      else if (lv == "high") out.eis = 3.5;
      else throw SchemaError("three-level scheme '" + scheme.name + "': unknown level '" + lv + "'");
      break;
    }
    case SchemeKind::TwoLevel: {
      if (!has_level) throw SchemaError("two-level scheme '" + scheme.name + "' requires a level token");
      const std::string lv = trim(*source_level);
      if (lv == "low") out.eis = 2.0;
      else if (lv == "high") out.eis = 3.0;
      else throw SchemaError("two-level scheme '" + scheme.name + "': unknown level '" + lv + "'");
      break;
    }
    case SchemeKind::Continuous: {
      if (!has_level) throw SchemaError("continuous scheme '" + scheme.name + "' requires a numeric value");
      real raw;
      try {
        size_t consumed = 0;
        raw = std::stod(trim(*source_level), &consumed);
        if (consumed != trim(*source_level).size()) throw std::invalid_argument("trailing junk");
      } catch (const std::exception&) {
        throw SchemaError("continuous scheme '" + scheme.name + "': value '" + *source_level +
                          "' is not numeric");
      }
      out.eis = rescale_continuous(scheme.lo, scheme.hi, raw, warnings);
      break;
    }
    case SchemeKind::Unspecified:
      break;  // handled above
  }
  return out;
}

// ---------------------------------------------------------------------------
// Manifests.
//
// Raw (per-dataset) manifest, TSV with header:
//   id  audio_path  transcript  label  level  gender  split
// Unified (MsUD) manifest, TSV with header:
//   id  audio_path  transcript  dataset  category  eis  masked  gender  split
// ---------------------------------------------------------------------------

struct UtteranceRecord {
  std::string id;
  std::string audio_path;
  std::string transcript;
  std::string source_label;
  std::optional<std::string> source_level;
  Gender gender = Gender::Male;
  std::string split = "train";
};

struct UnifiedRecord {
  std::string id;  // namespaced "<dataset>/<source id>"
  std::string audio_path;
  std::string transcript;
  std::string dataset;
  UnifiedLabel label;
  Gender gender = Gender::Male;
  std::string split = "train";
};

inline constexpr const char* kRawHeader = "id\taudio_path\ttranscript\tlabel\tlevel\tgender\tsplit";
inline constexpr const char* kUnifiedHeader =
    "id\taudio_path\ttranscript\tdataset\tcategory\teis\tmasked\tgender\tsplit";

namespace detail {
inline void check_no_tab(const std::string& field, const char* what) {
  if (field.find('\t') != std::string::npos || field.find('\n') != std::string::npos)
    throw FormatError(std::string(what) + " may not contain tab or newline");
}

inline std::vector<std::string> manifest_lines(const std::string& text) {
  std::vector<std::string> lines;
  for (auto& line : split(text, '\n')) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!trim(line).empty()) lines.push_back(line);
  }
  return lines;
}
}  // namespace detail

inline std::vector<UtteranceRecord> parse_raw_manifest(const std::string& text) {
  auto lines = detail::manifest_lines(text);
  if (lines.empty() || lines[0] != kRawHeader)
    throw FormatError("raw manifest must start with header '" + std::string(kRawHeader) + "'");
  std::vector<UtteranceRecord> out;
  std::set<std::string> seen;
  for (size_t i = 1; i < lines.size(); ++i) {
    auto cols = split(lines[i], '\t');
    if (cols.size() != 7)
      throw FormatError("raw manifest line " + std::to_string(i + 1) + ": expected 7 columns, got " +
                        std::to_string(cols.size()));
    UtteranceRecord r;
    r.id = cols[0];
    r.audio_path = cols[1];
    r.transcript = cols[2];
    r.source_label = cols[3];
    if (!trim(cols[4]).empty()) r.source_level = cols[4];
    r.gender = gender_from_name(cols[5]);
    r.split = cols[6];
    if (r.id.empty()) throw FormatError("raw manifest line " + std::to_string(i + 1) + ": empty id");
    if (!seen.insert(r.id).second)
      throw FormatError("duplicate utterance id '" + r.id + "' in manifest");
    out.push_back(std::move(r));
  }
  return out;
}

inline std::vector<UtteranceRecord> load_raw_manifest(const std::filesystem::path& path) {
  return parse_raw_manifest(read_file(path));
}

inline std::string format_raw_manifest(const std::vector<UtteranceRecord>& records) {
  std::string out = std::string(kRawHeader) + "\n";
  for (const auto& r : records) {
    for (const auto* f : {&r.id, &r.audio_path, &r.transcript, &r.source_label, &r.split})
      detail::check_no_tab(*f, "manifest field");
    out += r.id + '\t' + r.audio_path + '\t' + r.transcript + '\t' + r.source_label + '\t' +
           (r.source_level ? *r.source_level : "") + '\t' + gender_name(r.gender) + '\t' + r.split +
           '\n';
  }
  return out;
}

inline std::string format_unified_manifest(const std::vector<UnifiedRecord>& records) {
  std::string out = std::string(kUnifiedHeader) + "\n";
  for (const auto& r : records) {
    for (const auto* f : {&r.id, &r.audio_path, &r.transcript, &r.dataset, &r.split})
      detail::check_no_tab(*f, "manifest field");
    out += r.id + '\t' + r.audio_path + '\t' + r.transcript + '\t' + r.dataset + '\t' +
           category_name(r.label.category) + '\t' + format_real(r.label.eis) + '\t' +
           (r.label.masked ? "1" : "0") + '\t' + gender_name(r.gender) + '\t' + r.split + '\n';
  }
  return out;
}

inline std::vector<UnifiedRecord> parse_unified_manifest(const std::string& text) {
  auto lines = detail::manifest_lines(text);
  if (lines.empty() || lines[0] != kUnifiedHeader)
    throw FormatError("unified manifest must start with header '" + std::string(kUnifiedHeader) + "'");
  std::vector<UnifiedRecord> out;
  std::set<std::string> seen;
  for (size_t i = 1; i < lines.size(); ++i) {
    auto cols = split(lines[i], '\t');
    if (cols.size() != 9)
      throw FormatError("unified manifest line " + std::to_string(i + 1) +
                        ": expected 9 columns, got " + std::to_string(cols.size()));
    UnifiedRecord r;
    r.id = cols[0];
    r.audio_path = cols[1];
    r.transcript = cols[2];
    r.dataset = cols[3];
    r.label.category = category_from_name(cols[4]);
    r.label.eis = std::stod(cols[5]);
    if (cols[6] == "0") r.label.masked = false;
    else if (cols[6] == "1") r.label.masked = true;
    else throw FormatError("masked column must be 0 or 1, got '" + cols[6] + "'");
    r.gender = gender_from_name(cols[7]);
    r.split = cols[8];
    if (r.label.masked) {
      if (r.label.eis != kMaskedSentinel)
        throw FormatError("masked record '" + r.id + "' must carry the -1 sentinel");
    } else if (!(r.label.eis >= kEisMin && r.label.eis <= kEisMax)) {
      throw FormatError("record '" + r.id + "': eis " + cols[5] + " outside [0,4]");
    }
    if (!seen.insert(r.id).second)
      throw FormatError("duplicate utterance id '" + r.id + "' in manifest");
    out.push_back(std::move(r));
  }
  return out;
}

inline std::vector<UnifiedRecord> load_unified_manifest(const std::filesystem::path& path) {
  return parse_unified_manifest(read_file(path));
}

inline void save_unified_manifest(const std::filesystem::path& path,
                                  const std::vector<UnifiedRecord>& records) {
  atomic_write_file(path, format_unified_manifest(records));
}

// ---------------------------------------------------------------------------
// MsUD merge.
// ---------------------------------------------------------------------------

struct DatasetInput {
  std::vector<UtteranceRecord> records;
  LabelScheme scheme;
};

struct MsudResult {
  std::vector<UnifiedRecord> records;
  std::map<std::string, size_t> excluded_per_dataset;
  std::vector<std::string> warnings;
};

/// Fuse several per-dataset manifests into one unified manifest. Utterance
/// ids are namespaced by dataset name; records whose source label sits on
/// the scheme's exclusion list are dropped and counted.
inline MsudResult build_msud(const std::vector<DatasetInput>& inputs) {
  if (inputs.empty()) throw ConfigError("build_msud: no input manifests");
  MsudResult result;
  std::set<std::string> seen_datasets;
  std::set<std::string> seen_ids;
  for (const auto& input : inputs) {
    input.scheme.validate();
    if (!seen_datasets.insert(input.scheme.name).second)
      throw ConfigError("dataset '" + input.scheme.name + "' appears twice in merge");
    for (const auto& rec : input.records) {
      if (input.scheme.excluded.count(rec.source_label)) {
        ++result.excluded_per_dataset[input.scheme.name];
        continue;
      }
      UnifiedRecord u;
      u.id = input.scheme.name + "/" + rec.id;
      if (!seen_ids.insert(u.id).second)
        throw FormatError("utterance id collision after namespacing: '" + u.id + "'");
      u.audio_path = rec.audio_path;
      u.transcript = rec.transcript;
      u.dataset = input.scheme.name;
      u.label = unify_level_label(input.scheme, rec.source_label, rec.source_level, &result.warnings);
      u.gender = rec.gender;
      u.split = rec.split;
      result.records.push_back(std::move(u));
    }
  }
  return result;
}

}  // namespace speecheq::seqm

#endif  // SPEECHEQ_SEQM_HPP
