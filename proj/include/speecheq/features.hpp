// features.hpp  -- log-mel filterbank front end, phoneme lexicons, and the
// deterministic grapheme-to-phoneme tokenizers.
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

#ifndef SPEECHEQ_FEATURES_HPP
#define SPEECHEQ_FEATURES_HPP

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <complex>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "speecheq/audio.hpp"
#include "speecheq/common.hpp"
#include "speecheq/dsp.hpp"

namespace speecheq::feat {

// ---------------------------------------------------------------------------
// Mel filterbank.
// ---------------------------------------------------------------------------

struct MelConfig {
  int sample_rate = audio::kCanonicalRate;
  int frame_len = 400;  // 25 ms at 16 kHz
  int hop_len = 160;    // 10 ms
  int n_fft = 512;
  int n_mels = 80;
  real fmin_hz = 0.0;
  real fmax_hz = 8000.0;
  real energy_floor = 1e-10;
  bool mean_var_normalize = false;  // off: per-utterance stats are not part of the contract

  nlohmann::json to_json() const {
    return {{"sample_rate", sample_rate},
            {"frame_len", frame_len},
            {"hop_len", hop_len},
            {"n_fft", n_fft},
            {"n_mels", n_mels},
            {"fmin_hz", fmin_hz},
            {"fmax_hz", fmax_hz},
            {"energy_floor", energy_floor},
            {"mean_var_normalize", mean_var_normalize}};
  }

  static MelConfig from_json(const nlohmann::json& j) {
    MelConfig c;
    for (const auto& [key, _] : j.items()) {
      static const std::set<std::string> known = {
          "sample_rate", "frame_len", "hop_len",      "n_fft",
          "n_mels",      "fmin_hz",   "fmax_hz",      "energy_floor",
          "mean_var_normalize"};
      if (!known.count(key)) throw ConfigError("mel config: unknown key '" + key + "'");
    }
    c.sample_rate = j.value("sample_rate", c.sample_rate);
    c.frame_len = j.value("frame_len", c.frame_len);
    c.hop_len = j.value("hop_len", c.hop_len);
    c.n_fft = j.value("n_fft", c.n_fft);
    c.n_mels = j.value("n_mels", c.n_mels);
    c.fmin_hz = j.value("fmin_hz", c.fmin_hz);
    c.fmax_hz = j.value("fmax_hz", c.fmax_hz);
    c.energy_floor = j.value("energy_floor", c.energy_floor);
    c.mean_var_normalize = j.value("mean_var_normalize", c.mean_var_normalize);
    if (c.sample_rate <= 0 || c.frame_len <= 0 || c.hop_len <= 0 || c.n_fft <= 0 || c.n_mels <= 0)
      throw ConfigError("mel config: dimensions must be positive");
    if (c.n_fft < c.frame_len) throw ConfigError("mel config: n_fft must be >= frame_len");
    return c;
  }
};

struct FeatureMatrix {
  int frames = 0;
  int dim = 0;
  int frame_len = 0;
  int hop_len = 0;
  std::vector<real> data;  // row-major frames x dim

  real& at(int t, int d) { return data[static_cast<size_t>(t) * dim + d]; }
  real at(int t, int d) const { return data[static_cast<size_t>(t) * dim + d]; }
};

inline real hz_to_mel(real hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline real mel_to_hz(real mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

/// Triangular mel filter weights, (n_mels x (n_fft/2+1)), HTK mel scale,
/// no area normalization.
inline std::vector<std::vector<real>> mel_filter_weights(const MelConfig& cfg) {
  const int n_bins = cfg.n_fft / 2 + 1;
  const real mel_lo = hz_to_mel(cfg.fmin_hz);
  const real mel_hi = hz_to_mel(cfg.fmax_hz);
  std::vector<real> centers_hz(static_cast<size_t>(cfg.n_mels) + 2);
  for (int i = 0; i < cfg.n_mels + 2; ++i)
    centers_hz[static_cast<size_t>(i)] =
        mel_to_hz(mel_lo + (mel_hi - mel_lo) * static_cast<real>(i) / static_cast<real>(cfg.n_mels + 1));

  std::vector<std::vector<real>> weights(static_cast<size_t>(cfg.n_mels),
                                         std::vector<real>(static_cast<size_t>(n_bins), 0.0));
  const real bin_hz = static_cast<real>(cfg.sample_rate) / static_cast<real>(cfg.n_fft);
  for (int m = 0; m < cfg.n_mels; ++m) {
    const real lower = centers_hz[static_cast<size_t>(m)];
    const real center = centers_hz[static_cast<size_t>(m) + 1];
    const real upper = centers_hz[static_cast<size_t>(m) + 2];
    for (int k = 0; k < n_bins; ++k) {
      const real f = bin_hz * static_cast<real>(k);
      real w = 0.0;
      if (f >= lower && f <= center && center > lower) w = (f - lower) / (center - lower);
      else if (f > center && f <= upper && upper > center) w = (upper - f) / (upper - center);
      weights[static_cast<size_t>(m)][static_cast<size_t>(k)] = w;
    }
  }
  return weights;
}

/// 80-dimensional log-mel energies: Hamming window, 512-point power
/// spectrum, triangular mel filters over 0..8 kHz, natural log with an
/// epsilon floor.
inline FeatureMatrix mel_fbank(const audio::Waveform& w, const MelConfig& cfg = {}) {
  if (w.sample_rate != cfg.sample_rate)
    throw ParameterError("mel_fbank expects " + std::to_string(cfg.sample_rate) + " Hz input, got " +
                         std::to_string(w.sample_rate));
  const auto n = static_cast<int64_t>(w.samples.size());
  if (n < cfg.frame_len)
    throw ParameterError("input too short: " + std::to_string(n) + " samples < one frame (" +
                         std::to_string(cfg.frame_len) + ")");

  const int frames = static_cast<int>((n - cfg.frame_len) / cfg.hop_len) + 1;
  const auto window = dsp::hamming_window(static_cast<size_t>(cfg.frame_len));
  const auto mel_weights = mel_filter_weights(cfg);
  const int n_bins = cfg.n_fft / 2 + 1;

  FeatureMatrix out;
  out.frames = frames;
  out.dim = cfg.n_mels;
  out.frame_len = cfg.frame_len;
  out.hop_len = cfg.hop_len;
  out.data.resize(static_cast<size_t>(frames) * cfg.n_mels);

  std::vector<std::complex<real>> buf(static_cast<size_t>(cfg.n_fft));
  std::vector<real> power(static_cast<size_t>(n_bins));
  for (int t = 0; t < frames; ++t) {
    const size_t start = static_cast<size_t>(t) * cfg.hop_len;
    for (int i = 0; i < cfg.n_fft; ++i) {
      buf[static_cast<size_t>(i)] =
          i < cfg.frame_len ? w.samples[start + static_cast<size_t>(i)] * window[static_cast<size_t>(i)]
                            : 0.0;
    }
    dsp::fft(buf, false);
    for (int k = 0; k < n_bins; ++k) power[static_cast<size_t>(k)] = std::norm(buf[static_cast<size_t>(k)]);
    for (int m = 0; m < cfg.n_mels; ++m) {
      real e = 0.0;
      const auto& row = mel_weights[static_cast<size_t>(m)];
      for (int k = 0; k < n_bins; ++k) e += row[static_cast<size_t>(k)] * power[static_cast<size_t>(k)];
      const real v = std::log(e + cfg.energy_floor);
      if (!std::isfinite(v)) throw NumericError("non-finite mel energy");
      out.at(t, m) = v;
    }
  }

  if (cfg.mean_var_normalize) {
    for (int m = 0; m < cfg.n_mels; ++m) {
      real mean = 0.0;
      for (int t = 0; t < frames; ++t) mean += out.at(t, m);
      mean /= frames;
      real var = 0.0;
      for (int t = 0; t < frames; ++t) var += (out.at(t, m) - mean) * (out.at(t, m) - mean);
      var /= frames;
      const real inv = 1.0 / std::sqrt(var + 1e-8);
      for (int t = 0; t < frames; ++t) out.at(t, m) = (out.at(t, m) - mean) * inv;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Feature cache: u32 T, u32 dim, then T*dim f32 little-endian row-major.
// ---------------------------------------------------------------------------

inline std::string format_feature_cache(const FeatureMatrix& f) {
  ByteWriter b;
  b.u32(static_cast<uint32_t>(f.frames));
  b.u32(static_cast<uint32_t>(f.dim));
  for (real v : f.data) b.f32(static_cast<float>(v));
  return b.data();
}

inline void save_features(const std::filesystem::path& path, const FeatureMatrix& f) {
  atomic_write_file(path, format_feature_cache(f));
}

inline FeatureMatrix parse_feature_cache(const std::string& bytes) {
  ByteReader r(bytes);
  FeatureMatrix f;
  f.frames = static_cast<int>(r.u32());
  f.dim = static_cast<int>(r.u32());
  if (f.frames < 0 || f.dim <= 0) throw FormatError("feature cache: bad header");
  const size_t count = static_cast<size_t>(f.frames) * static_cast<size_t>(f.dim);
  if (r.remaining() != count * 4) throw FormatError("feature cache: payload size mismatch");
  f.data.resize(count);
  for (size_t i = 0; i < count; ++i) f.data[i] = static_cast<real>(r.f32());
  return f;
}

inline FeatureMatrix load_features(const std::filesystem::path& path) {
  try {
    return parse_feature_cache(read_file(path));
  } catch (const Error& e) {
    rethrow_with_context(e, path.string());
  }
}

// ---------------------------------------------------------------------------
// Phoneme lexicons. Ids are dense in 0..size-1 with "sil" always present;
// the CTC blank is NOT a lexicon entry (it is appended after the lexicon by
// the loss configuration).
// ---------------------------------------------------------------------------

inline constexpr const char* kSilenceToken = "sil";

struct PhonemeLexicon {
  std::vector<std::string> tokens;
  std::map<std::string, int> ids;
  int silence_id = -1;

  int size() const { return static_cast<int>(tokens.size()); }

  int id_of(const std::string& phoneme) const {
    auto it = ids.find(phoneme);
    if (it == ids.end()) throw OovError("phoneme '" + phoneme + "' not in lexicon");
    return it->second;
  }

  const std::string& token_of(int id) const {
    if (id < 0 || id >= size()) throw OovError("phoneme id " + std::to_string(id) + " out of range");
    return tokens[static_cast<size_t>(id)];
  }
};

namespace detail {

inline PhonemeLexicon lexicon_from_tokens(std::vector<std::string> tokens) {
  PhonemeLexicon lex;
  lex.tokens = std::move(tokens);
  for (int i = 0; i < lex.size(); ++i) {
    const auto& t = lex.tokens[static_cast<size_t>(i)];
    if (t.empty()) throw ConfigError("empty phoneme in inventory");
    if (!lex.ids.emplace(t, i).second) throw ConfigError("duplicate phoneme '" + t + "' in inventory");
    if (t == kSilenceToken) lex.silence_id = i;
  }
  if (lex.silence_id < 0) throw ConfigError("lexicon has no '" + std::string(kSilenceToken) + "' token");
  return lex;
}

}  // namespace detail

/// One token per line; blank lines and '#' comments are skipped.
inline std::vector<std::string> load_inventory_file(const std::filesystem::path& path) {
  std::vector<std::string> tokens;
  for (auto& line : split(read_file(path), '\n')) {
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    tokens.push_back(std::move(t));
  }
  if (tokens.empty()) throw ConfigError("inventory file " + path.string() + " is empty");
  return tokens;
}

struct MandarinInventory {
  std::vector<std::string> initials;  // 21
  std::vector<std::string> finals;    // 36, toneless; tones expand to <final><1..5>
};

inline MandarinInventory load_mandarin_inventory(const std::filesystem::path& initials_path,
                                                 const std::filesystem::path& finals_path) {
  return {load_inventory_file(initials_path), load_inventory_file(finals_path)};
}

/// sil + initials + every final in all five tones. With the shipped
/// inventory (21 initials, 36 finals) this yields exactly 202 tokens.
inline PhonemeLexicon build_mandarin_lexicon(const MandarinInventory& inv) {
  std::vector<std::string> tokens = {kSilenceToken};
  tokens.insert(tokens.end(), inv.initials.begin(), inv.initials.end());
  for (const auto& f : inv.finals)
    for (char tone = '1'; tone <= '5'; ++tone) tokens.push_back(f + tone);
  return detail::lexicon_from_tokens(std::move(tokens));
}

/// sil + the phone inventory. With the shipped CMU-style inventory (84
/// symbols) this yields exactly 85 tokens.
inline PhonemeLexicon build_english_lexicon(const std::vector<std::string>& phones) {
  std::vector<std::string> tokens = {kSilenceToken};
  tokens.insert(tokens.end(), phones.begin(), phones.end());
  return detail::lexicon_from_tokens(std::move(tokens));
}

// Lexicon file: one "phoneme<TAB>id" per line, ids dense and ascending.
inline std::string format_lexicon(const PhonemeLexicon& lex) {
  std::string out;
  for (int i = 0; i < lex.size(); ++i)
    out += lex.tokens[static_cast<size_t>(i)] + '\t' + std::to_string(i) + '\n';
  return out;
}

inline void save_lexicon(const std::filesystem::path& path, const PhonemeLexicon& lex) {
  atomic_write_file(path, format_lexicon(lex));
}

inline PhonemeLexicon load_lexicon(const std::filesystem::path& path) {
  std::vector<std::string> tokens;
  int expect = 0;
  for (auto& line : split(read_file(path), '\n')) {
    if (trim(line).empty()) continue;
    auto cols = split(line, '\t');
    if (cols.size() != 2) throw FormatError(path.string() + ": lexicon line needs phoneme<TAB>id");
    if (std::stoi(cols[1]) != expect)
      throw FormatError(path.string() + ": lexicon ids must be dense and ascending");
    tokens.push_back(cols[0]);
    ++expect;
  }
  return detail::lexicon_from_tokens(std::move(tokens));
}

// ---------------------------------------------------------------------------
// Grapheme-to-phoneme.
//
// Mandarin: toned pinyin syllables are split into initial + toned final by
// longest-initial-prefix matching over the shipped inventory, after the
// standard orthographic rewrites (y/w forms, u-after-jqx as v).
// English: plain dictionary lookup in a shipped CMU-format lexicon.
// ---------------------------------------------------------------------------

namespace detail {

inline std::string rewrite_pinyin_base(const std::string& base) {
  auto starts = [&](const char* p) { return base.rfind(p, 0) == 0; };
  if (starts("yu")) return "v" + base.substr(2);
  if (base == "yi") return "i";
  if (base == "yin") return "in";
  if (base == "ying") return "ing";
  if (base == "you") return "iu";
  if (starts("y")) return "i" + base.substr(1);
  if (base == "wu") return "u";
  if (base == "wei") return "ui";
  if (base == "wen") return "un";
  if (starts("w")) return "u" + base.substr(1);
  return base;
}

}  // namespace detail

/// Split one toned pinyin syllable ("hao3") into lexicon phonemes
/// ({"h","ao3"}). A missing tone digit is the neutral tone 5.
inline std::vector<std::string> split_pinyin_syllable(const MandarinInventory& inv,
                                                      const std::string& syllable) {
  if (syllable.empty()) throw OovError("empty pinyin syllable");
  std::string base = syllable;
  char tone = '5';
  if (std::isdigit(static_cast<unsigned char>(base.back()))) {
    tone = base.back();
    base.pop_back();
    if (tone < '1' || tone > '5')
      throw OovError("pinyin syllable '" + syllable + "' has tone outside 1..5");
  }
  if (base.empty()) throw OovError("pinyin syllable '" + syllable + "' has no letters");
  base = detail::rewrite_pinyin_base(base);

  const std::set<std::string> initial_set(inv.initials.begin(), inv.initials.end());
  const std::set<std::string> final_set(inv.finals.begin(), inv.finals.end());

  std::string initial, final_part = base;
  for (size_t len : {size_t{2}, size_t{1}}) {
    if (base.size() > len && initial_set.count(base.substr(0, len))) {
      initial = base.substr(0, len);
      final_part = base.substr(len);
      break;
    }
  }
  if (!initial.empty() && (initial == "j" || initial == "q" || initial == "x") &&
      !final_part.empty() && final_part[0] == 'u')
    final_part = "v" + final_part.substr(1);
  if (!final_set.count(final_part)) {
    // Retry without the initial split: some zero-initial syllables begin
    // with a letter that is also an initial ("er" vs "r").
    if (final_set.count(base)) {
      initial.clear();
      final_part = base;
    } else {
      throw OovError("pinyin syllable '" + syllable + "' does not split over the inventory");
    }
  }
  std::vector<std::string> phones;
  if (!initial.empty()) phones.push_back(initial);
  phones.push_back(final_part + tone);
  return phones;
}

inline std::vector<std::string> mandarin_to_phonemes(const MandarinInventory& inv,
                                                     const std::string& transcript) {
  std::vector<std::string> phones;
  for (const auto& tok : split(transcript, ' ')) {
    const std::string s = trim(tok);
    if (s.empty()) continue;
    auto p = split_pinyin_syllable(inv, s);
    phones.insert(phones.end(), p.begin(), p.end());
  }
  return phones;
}

struct EnglishDict {
  std::map<std::string, std::vector<std::string>> entries;
};

/// CMU .dict format: "WORD PH1 PH2 ...", ';;;' comments, alternates like
/// WORD(2) are kept under their base headword only if no base entry exists.
inline EnglishDict load_english_dict(const std::filesystem::path& path) {
  EnglishDict dict;
  for (auto& line : split(read_file(path), '\n')) {
    std::string s = trim(line);
    if (s.empty() || s.rfind(";;;", 0) == 0) continue;
    std::vector<std::string> cols;
    for (auto& c : split(s, ' '))
      if (!trim(c).empty()) cols.push_back(trim(c));
    if (cols.size() < 2) throw FormatError(path.string() + ": dict line needs a word and phonemes");
    std::string word = cols[0];
    if (auto paren = word.find('('); paren != std::string::npos) word = word.substr(0, paren);
    if (dict.entries.count(word)) continue;
    dict.entries[word] = {cols.begin() + 1, cols.end()};
  }
  if (dict.entries.empty()) throw ConfigError(path.string() + ": empty dictionary");
  return dict;
}

inline std::vector<std::string> english_to_phonemes(const EnglishDict& dict,
                                                    const std::string& transcript) {
  std::vector<std::string> phones;
  for (const auto& tok : split(transcript, ' ')) {
    std::string word = trim(tok);
    if (word.empty()) continue;
    std::transform(word.begin(), word.end(), word.begin(),
                   [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
    auto it = dict.entries.find(word);
    if (it == dict.entries.end()) throw OovError("word '" + word + "' not in dictionary");
    phones.insert(phones.end(), it->second.begin(), it->second.end());
  }
  return phones;
}

inline std::vector<int> encode_phonemes(const PhonemeLexicon& lex,
                                        const std::vector<std::string>& phones) {
  std::vector<int> ids;
  ids.reserve(phones.size());
  for (const auto& p : phones) ids.push_back(lex.id_of(p));
  return ids;
}

inline std::vector<std::string> decode_phonemes(const PhonemeLexicon& lex,
                                                const std::vector<int>& ids) {
  std::vector<std::string> phones;
  phones.reserve(ids.size());
  for (int id : ids) phones.push_back(lex.token_of(id));
  return phones;
}

// ---------------------------------------------------------------------------
// Tokenizer facade: one object per language, produces lexicon id sequences.
// ---------------------------------------------------------------------------

class Tokenizer {
 public:
  static Tokenizer mandarin(PhonemeLexicon lex, MandarinInventory inv) {
    Tokenizer t;
    t.lex_ = std::move(lex);
    t.inv_ = std::move(inv);
    t.is_mandarin_ = true;
    return t;
  }
  static Tokenizer english(PhonemeLexicon lex, EnglishDict dict) {
    Tokenizer t;
    t.lex_ = std::move(lex);
    t.dict_ = std::move(dict);
    t.is_mandarin_ = false;
    return t;
  }

  std::vector<int> tokenize(const std::string& transcript) const {
    auto phones = is_mandarin_ ? mandarin_to_phonemes(inv_, transcript)
                               : english_to_phonemes(dict_, transcript);
    return encode_phonemes(lex_, phones);
  }

  std::vector<std::string> detokenize(const std::vector<int>& ids) const {
    return decode_phonemes(lex_, ids);
  }

  const PhonemeLexicon& lexicon() const { return lex_; }

 private:
  PhonemeLexicon lex_;
  MandarinInventory inv_;
  EnglishDict dict_;
  bool is_mandarin_ = true;
};

}  // namespace speecheq::feat

#endif  // SPEECHEQ_FEATURES_HPP
