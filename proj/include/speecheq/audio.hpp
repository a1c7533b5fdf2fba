// audio.hpp  -- WAV ingestion, canonical-rate resampling, and the synthetic
// desk-scale corpus generator.
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

#ifndef SPEECHEQ_AUDIO_HPP
#define SPEECHEQ_AUDIO_HPP

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <numeric>
#include <string>
#include <vector>

#include "speecheq/common.hpp"
#include "speecheq/seqm.hpp"

namespace speecheq::audio {

inline constexpr int kCanonicalRate = 16000;

struct Waveform {
  std::vector<real> samples;  // mono, in [-1,1]
  int sample_rate = kCanonicalRate;
  int source_bit_depth = 16;

  real duration_s() const {
    return static_cast<real>(samples.size()) / static_cast<real>(sample_rate);
  }
};

// ---------------------------------------------------------------------------
// PCM WAV reader/writer. Reads 8-bit unsigned, 16-bit signed, and 32-bit
// float; multi-channel content is averaged down to mono. Writes canonical
// 16-bit mono.
// ---------------------------------------------------------------------------

inline Waveform parse_wav(const std::string& bytes) {
  ByteReader r(bytes);
  if (bytes.size() < 12 || r.str(4) != "RIFF") throw FormatError("not a RIFF file");
  r.u32();  // riff size, unreliable in the wild; chunk sizes are authoritative
  if (r.str(4) != "WAVE") throw FormatError("not a WAVE file");

  uint16_t format = 0, channels = 0, bits = 0;
  uint32_t rate = 0;
  bool have_fmt = false;
  Waveform w;

  while (r.remaining() >= 8) {
    std::string tag = r.str(4);
    uint32_t size = r.u32();
    if (tag == "fmt ") {
      if (size < 16) throw FormatError("fmt chunk too small");
      format = r.u16();
      channels = r.u16();
      rate = r.u32();
      r.u32();  // byte rate
      r.u16();  // block align
      bits = r.u16();
      if (size > 16) r.str(size - 16);
      have_fmt = true;
    } else if (tag == "data") {
      if (!have_fmt) throw FormatError("data chunk before fmt chunk");
      if (size > r.remaining()) throw IoError("truncated WAV data chunk");
      if (channels == 0) throw FormatError("zero channels");
      const bool is_float = format == 3;
      if (!(format == 1 || format == 3)) throw FormatError("unsupported WAV encoding " + std::to_string(format));
      size_t bytes_per_sample;
      if (is_float && bits == 32) bytes_per_sample = 4;
      else if (!is_float && bits == 16) bytes_per_sample = 2;
      else if (!is_float && bits == 8) bytes_per_sample = 1;
      else throw FormatError("unsupported WAV sample width: " + std::to_string(bits) + "-bit");
      const size_t frame_bytes = bytes_per_sample * channels;
      if (size % frame_bytes != 0) throw IoError("WAV data chunk is not a whole number of frames");
      const size_t frames = size / frame_bytes;
      w.samples.resize(frames);
      for (size_t i = 0; i < frames; ++i) {
        real acc = 0.0;
        for (uint16_t c = 0; c < channels; ++c) {
          if (is_float) acc += static_cast<real>(r.f32());
          else if (bits == 16) acc += static_cast<real>(r.get<int16_t>()) / 32768.0;
          else acc += (static_cast<real>(r.u8()) - 128.0) / 128.0;
        }
        w.samples[i] = acc / static_cast<real>(channels);
        if (!std::isfinite(w.samples[i])) throw FormatError("non-finite sample in WAV data");
      }
      w.sample_rate = static_cast<int>(rate);
      w.source_bit_depth = bits;
      return w;
    } else {
      if (size > r.remaining()) throw IoError("truncated WAV chunk '" + tag + "'");
      r.str(size + (size % 2));  // chunks are word aligned
    }
  }
  throw FormatError(have_fmt ? "WAV file has no data chunk" : "WAV file has no fmt chunk");
}

inline Waveform load_wav(const std::filesystem::path& path) {
  try {
    return parse_wav(read_file(path));
  } catch (const Error& e) {
    rethrow_with_context(e, path.string());
  }
}

inline std::string format_wav16(const Waveform& w) {
  ByteWriter b;
  const uint32_t n = static_cast<uint32_t>(w.samples.size());
  b.str("RIFF");
  b.u32(36 + 2 * n);
  b.str("WAVE");
  b.str("fmt ");
  b.u32(16);
  b.u16(1);  // PCM
  b.u16(1);  // mono
  b.u32(static_cast<uint32_t>(w.sample_rate));
  b.u32(static_cast<uint32_t>(w.sample_rate) * 2);
  b.u16(2);
  b.u16(16);
  b.str("data");
  b.u32(2 * n);
  for (real x : w.samples) {
    long v = std::lround(x * 32768.0);
    v = std::min(32767l, std::max(-32768l, v));
    b.u16(static_cast<uint16_t>(static_cast<int16_t>(v)));
  }
  return b.data();
}

inline void save_wav16(const std::filesystem::path& path, const Waveform& w) {
  atomic_write_file(path, format_wav16(w));
}

// ---------------------------------------------------------------------------
// Resampling: polyphase windowed-sinc (Kaiser, 64 taps per phase).
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<real> kaiser_sinc_prototype(int up, int taps_per_phase, real cutoff) {
  // cutoff is normalized to the upsampled Nyquist (0.5 = passthrough).
  const int n = up * taps_per_phase;
  const real center = static_cast<real>(n - 1) / 2.0;
  const real beta = 8.6;
  const real denom = std::cyl_bessel_i(0.0, beta);
  std::vector<real> h(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const real t = static_cast<real>(i) - center;
    const real x = 2.0 * cutoff * t;
    const real sinc = x == 0.0 ? 1.0 : std::sin(std::numbers::pi * x) / (std::numbers::pi * x);
    const real frac = 2.0 * static_cast<real>(i) / static_cast<real>(n - 1) - 1.0;
    const real window = std::cyl_bessel_i(0.0, beta * std::sqrt(std::max(0.0, 1.0 - frac * frac))) / denom;
    h[static_cast<size_t>(i)] = 2.0 * cutoff * sinc * window;
  }
  return h;
}

}  // namespace detail

/// Band-limited rational-rate resampling. Identity rates return the input
/// bit for bit.
inline Waveform resample(const Waveform& w, int target_rate) {
  if (target_rate <= 0) throw ParameterError("resample: target rate must be positive");
  if (w.sample_rate <= 0) throw ParameterError("resample: source rate must be positive");
  if (target_rate == w.sample_rate) return w;

  const int g = static_cast<int>(std::gcd(target_rate, w.sample_rate));
  const int up = target_rate / g;
  const int down = w.sample_rate / g;
  const int taps_per_phase = 64;
  // Anti-alias at the narrower of the two Nyquists, with a little rolloff
  // margin for the finite filter.
  const real cutoff = 0.5 * 0.945 / static_cast<real>(std::max(up, down));
  const auto h = detail::kaiser_sinc_prototype(up, taps_per_phase, cutoff);
  const int64_t half = static_cast<int64_t>(h.size() - 1) / 2;

  const int64_t n_in = static_cast<int64_t>(w.samples.size());
  const int64_t n_out = static_cast<int64_t>(
      std::llround(static_cast<double>(n_in) * static_cast<double>(up) / static_cast<double>(down)));
  Waveform out;
  out.sample_rate = target_rate;
  out.source_bit_depth = w.source_bit_depth;
  out.samples.resize(static_cast<size_t>(std::max<int64_t>(n_out, 0)), 0.0);

  // y[j] = up * sum_i h[phi + i*up] * x[q - i], phi = (j*down + half) mod up.
  // The +half recenters the prototype so output sample j aligns with input
  // time j*down/up.
  for (int64_t j = 0; j < n_out; ++j) {
    const int64_t m = j * down + half;
    const int64_t phi = m % up;
    const int64_t q = m / up;
    real acc = 0.0;
    for (int64_t i = phi, xi = q; i < static_cast<int64_t>(h.size()); i += up, --xi) {
      if (xi < 0) break;
      if (xi >= n_in) continue;
      acc += h[static_cast<size_t>(i)] * w.samples[static_cast<size_t>(xi)];
    }
    out.samples[static_cast<size_t>(j)] = acc * static_cast<real>(up);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic corpus. Each emotion category gets a distinct carrier frequency
// and each intensity level a distinct amplitude-modulation depth, so the
// classes are separable from mel features and the intensity is regressable.
// ---------------------------------------------------------------------------

struct SynthClassSpec {
  int category = seqm::kNeutralId;
  std::string level;  // "low" | "medium" | "high", empty for Neutral
  int count = 0;
};

struct SynthSpec {
  std::vector<SynthClassSpec> classes;
  real duration_s = 0.5;
  int sample_rate = kCanonicalRate;
  uint64_t seed = 0;
  real test_fraction = 0.2;
};

/// One row per category, a single medium level for the non-neutral ones.
inline SynthSpec make_uniform_spec(int items_per_class, uint64_t seed) {
  SynthSpec s;
  s.seed = seed;
  for (int c = 0; c < seqm::kNumCategories; ++c)
    s.classes.push_back({c, c == seqm::kNeutralId ? "" : "medium", items_per_class});
  return s;
}

/// Three levels for each of the eight wheel emotions plus a neutral block of
/// matching size, so a held-out split stays class-balanced.
inline SynthSpec make_leveled_spec(int items_per_cell, uint64_t seed) {
  SynthSpec s;
  s.seed = seed;
  s.classes.push_back({seqm::kNeutralId, "", 3 * items_per_cell});
  for (int c = 1; c < seqm::kNumCategories; ++c)
    for (const char* level : {"low", "medium", "high"})
      s.classes.push_back({c, level, items_per_cell});
  return s;
}

namespace detail {

inline real synth_am_depth(const std::string& level) {
  if (level.empty()) return 0.0;
  if (level == "low") return 0.20;
  if (level == "medium") return 0.55;
  if (level == "high") return 0.90;
  throw ConfigError("synth level must be low/medium/high, got '" + level + "'");
}

inline const std::vector<std::string>& synth_transcripts() {
  static const std::vector<std::string> phrases = {
      "ni3 hao3",      "da4 jia1 hao3", "xie4 xie4", "zai4 jian4",
      "qing3 wen4",    "mei2 guan1 xi5", "zao3 shang4 hao3", "wan3 an1",
  };
  return phrases;
}

}  // namespace detail

/// Deterministically synthesize one utterance of the given class.
inline Waveform synth_utterance(int category, const std::string& level, seqm::Gender gender,
                                real duration_s, int sample_rate, uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<real> phase(0.0, 2.0 * std::numbers::pi);
  const real carrier_hz = 350.0 + 170.0 * static_cast<real>(category);
  const real am_depth = detail::synth_am_depth(level);
  const real am_hz = gender == seqm::Gender::Male ? 3.0 : 5.5;
  const real carrier_phase = phase(rng);
  const real am_phase = phase(rng);
  std::normal_distribution<real> noise(0.0, 0.004);

  Waveform w;
  w.sample_rate = sample_rate;
  const auto n = static_cast<size_t>(std::llround(duration_s * sample_rate));
  w.samples.resize(n);
  for (size_t i = 0; i < n; ++i) {
    const real t = static_cast<real>(i) / static_cast<real>(sample_rate);
    const real envelope =
        1.0 - am_depth * 0.5 + am_depth * 0.5 * std::sin(2.0 * std::numbers::pi * am_hz * t + am_phase);
    w.samples[i] = 0.35 * envelope * std::sin(2.0 * std::numbers::pi * carrier_hz * t + carrier_phase) +
                   noise(rng);
  }
  return w;
}

struct SynthResult {
  std::vector<seqm::UnifiedRecord> records;
  std::filesystem::path manifest_path;
};

/// Generate the corpus under `outdir`: wav/<id>.wav files plus a unified
/// manifest. Fully determined by the spec (including its seed).
inline SynthResult synth_corpus(const SynthSpec& spec, const std::filesystem::path& outdir) {
  if (spec.classes.empty()) throw ConfigError("synth spec has no classes");
  for (const auto& c : spec.classes) {
    if (c.count <= 0)
      throw ConfigError("synth spec: zero-count class '" + std::string(seqm::category_name(c.category)) + "'");
    if (c.category < 0 || c.category >= seqm::kNumCategories)
      throw ConfigError("synth spec: bad category id " + std::to_string(c.category));
    if (c.category == seqm::kNeutralId && !c.level.empty())
      throw ConfigError("synth spec: Neutral takes no level token");
  }
  if (!(spec.test_fraction >= 0.0 && spec.test_fraction < 1.0))
    throw ConfigError("synth spec: test fraction must be in [0,1)");

  // Labels go through the ordinary three-level mapping so the emitted gold
  // values are exactly the unified ones.
  seqm::LabelScheme scheme;
  scheme.name = "synth";
  scheme.kind = seqm::SchemeKind::ThreeLevel;
  for (int c = 0; c < seqm::kNumCategories; ++c)
    scheme.label_to_category[seqm::kCategoryNames[static_cast<size_t>(c)]] = c;

  namespace fs = std::filesystem;
  fs::create_directories(outdir / "wav");

  SynthResult result;
  const auto& phrases = detail::synth_transcripts();
  size_t global_index = 0;
  const int test_every = spec.test_fraction > 0.0
                             ? std::max(2, static_cast<int>(std::lround(1.0 / spec.test_fraction)))
                             : 0;
  for (const auto& cls : spec.classes) {
    for (int i = 0; i < cls.count; ++i, ++global_index) {
      char idbuf[96];
      std::snprintf(idbuf, sizeof(idbuf), "%s_%s_%04d", seqm::category_name(cls.category),
                    cls.level.empty() ? "none" : cls.level.c_str(), i);
      seqm::UtteranceRecord raw;
      raw.id = idbuf;
      raw.audio_path = std::string("wav/") + idbuf + ".wav";
      raw.transcript = phrases[global_index % phrases.size()];
      raw.source_label = seqm::category_name(cls.category);
      if (!cls.level.empty()) raw.source_level = cls.level;
      raw.gender = (global_index % 2 == 0) ? seqm::Gender::Male : seqm::Gender::Female;
      raw.split = (test_every > 0 && i % test_every == test_every - 1) ? "test" : "train";

      Waveform w = synth_utterance(cls.category, cls.level, raw.gender, spec.duration_s,
                                   spec.sample_rate, derive_seed(spec.seed, "synth", global_index));
      save_wav16(outdir / raw.audio_path, w);

      seqm::UnifiedRecord u;
      u.id = scheme.name + "/" + raw.id;
      u.audio_path = raw.audio_path;
      u.transcript = raw.transcript;
      u.dataset = scheme.name;
      u.label = seqm::unify_level_label(scheme, raw.source_label, raw.source_level);
      u.gender = raw.gender;
      u.split = raw.split;
      result.records.push_back(std::move(u));
    }
  }
  result.manifest_path = outdir / "manifest.tsv";
  seqm::save_unified_manifest(result.manifest_path, result.records);
  return result;
}

/// Audio paths in manifests are relative to the manifest's directory.
inline std::filesystem::path resolve_audio_path(const std::filesystem::path& manifest_path,
                                                const std::string& audio_path) {
  std::filesystem::path p(audio_path);
  if (p.is_absolute()) return p;
  return manifest_path.parent_path() / p;
}

}  // namespace speecheq::audio

#endif  // SPEECHEQ_AUDIO_HPP
