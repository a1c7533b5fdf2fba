// augment.hpp  -- waveform-domain augmentation: phase-vocoder time-scale
// modification, speed and pitch perturbation, SNR-controlled noise mixing,
// and synthetic-RIR reverberation.
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

#ifndef SPEECHEQ_AUGMENT_HPP
#define SPEECHEQ_AUGMENT_HPP

#include <algorithm>
#include <cmath>
#include <complex>
#include <random>
#include <vector>

#include "speecheq/audio.hpp"
#include "speecheq/common.hpp"
#include "speecheq/dsp.hpp"

namespace speecheq::aug {

inline constexpr int kTsmWindow = 1024;
inline constexpr int kTsmHop = 256;  // synthesis hop

namespace detail {

inline real princ_arg(real phase) {
  return phase - 2.0 * std::numbers::pi * std::round(phase / (2.0 * std::numbers::pi));
}

/// Best rational approximation p/q of x with q <= max_den (Stern-Brocot
/// walk).
inline std::pair<int64_t, int64_t> rational_approx(real x, int64_t max_den) {
  int64_t a_num = 0, a_den = 1, b_num = 1, b_den = 0;  // 0/1 .. 1/0 brackets x
  while (true) {
    const int64_t m_num = a_num + b_num, m_den = a_den + b_den;
    if (m_den > max_den) break;
    if (static_cast<real>(m_num) < x * static_cast<real>(m_den)) {
      // mediant below x: tighten the lower bracket, skipping ahead
      int64_t k = static_cast<int64_t>((x * static_cast<real>(a_den) - static_cast<real>(a_num)) /
                                       (static_cast<real>(b_num) - x * static_cast<real>(b_den)));
      k = std::max<int64_t>(1, std::min(k, (max_den - a_den) / std::max<int64_t>(b_den, 1)));
      a_num += k * b_num;
      a_den += k * b_den;
    } else {
      int64_t k = b_den > 0 ? static_cast<int64_t>((static_cast<real>(b_num) - x * static_cast<real>(b_den)) /
                                                   (x * static_cast<real>(a_den) - static_cast<real>(a_num)))
                            : 1;
      k = std::max<int64_t>(1, std::min(k, (max_den - b_den) / std::max<int64_t>(a_den, 1)));
      b_num += k * a_num;
      b_den += k * a_den;
    }
    if (static_cast<real>(a_num) == x * static_cast<real>(a_den)) break;
  }
  // pick the closer bracket endpoint with den <= max_den
  const real ea = std::abs(x - static_cast<real>(a_num) / static_cast<real>(a_den));
  const real eb = b_den == 0 || b_den > max_den
                      ? std::numeric_limits<real>::infinity()
                      : std::abs(x - static_cast<real>(b_num) / static_cast<real>(b_den));
  return ea <= eb ? std::make_pair(a_num, a_den) : std::make_pair(b_num, b_den);
}

/// Rate conversion by the exact rational factor up/down on raw samples.
inline std::vector<real> resample_ratio(const std::vector<real>& x, int up, int down) {
  audio::Waveform tmp;
  tmp.samples = x;
  tmp.sample_rate = down;
  auto out = audio::resample(tmp, up);
  return std::move(out.samples);
}

inline std::vector<real> fit_length(std::vector<real> x, size_t n) {
  x.resize(n, 0.0);
  return x;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Phase-vocoder time-scale modification. Output duration is factor times the
// input duration; pitch is preserved.
// ---------------------------------------------------------------------------

inline audio::Waveform stretch_time(const audio::Waveform& w, real factor) {
  if (!std::isfinite(factor) || factor <= 0.0)
    throw ParameterError("stretch_time: factor must be finite and positive");
  if (factor == 1.0) return w;
  if (w.samples.empty()) throw ParameterError("stretch_time: empty input");

  const int N = kTsmWindow, Hs = kTsmHop;
  const int Ha = std::max<int>(1, static_cast<int>(std::llround(static_cast<real>(Hs) / factor)));
  const int64_t n = static_cast<int64_t>(w.samples.size());
  const int64_t target = std::max<int64_t>(1, std::llround(static_cast<real>(n) * factor));
  const int64_t frames = (target + N) / Hs + 2;

  const auto window = dsp::hann_window(static_cast<size_t>(N));
  auto sample_at = [&](int64_t i) -> real {
    return i >= 0 && i < n ? w.samples[static_cast<size_t>(i)] : 0.0;
  };

  std::vector<real> out(static_cast<size_t>(frames * Hs + N), 0.0);
  std::vector<real> norm(out.size(), 0.0);
  std::vector<std::complex<real>> buf(static_cast<size_t>(N));
  std::vector<real> prev_phase(static_cast<size_t>(N), 0.0);
  std::vector<real> syn_phase(static_cast<size_t>(N), 0.0);

  for (int64_t t = 0; t < frames; ++t) {
    const int64_t a = t * Ha;
    for (int i = 0; i < N; ++i)
      buf[static_cast<size_t>(i)] = sample_at(a + i) * window[static_cast<size_t>(i)];
    dsp::fft(buf, false);

    for (int k = 0; k < N; ++k) {
      const real mag = std::abs(buf[static_cast<size_t>(k)]);
      const real phase = std::arg(buf[static_cast<size_t>(k)]);
      if (t == 0) {
        syn_phase[static_cast<size_t>(k)] = phase;
      } else {
        const real omega = 2.0 * std::numbers::pi * static_cast<real>(k) / static_cast<real>(N);
        const real dev = detail::princ_arg(phase - prev_phase[static_cast<size_t>(k)] -
                                           omega * static_cast<real>(Ha));
        const real true_freq = omega + dev / static_cast<real>(Ha);
        syn_phase[static_cast<size_t>(k)] =
            detail::princ_arg(syn_phase[static_cast<size_t>(k)] + true_freq * static_cast<real>(Hs));
      }
      prev_phase[static_cast<size_t>(k)] = phase;
      buf[static_cast<size_t>(k)] = std::polar(mag, syn_phase[static_cast<size_t>(k)]);
    }

    dsp::fft(buf, true);
    const int64_t s = t * Hs;
    for (int i = 0; i < N; ++i) {
      out[static_cast<size_t>(s + i)] +=
          buf[static_cast<size_t>(i)].real() * window[static_cast<size_t>(i)];
      norm[static_cast<size_t>(s + i)] += window[static_cast<size_t>(i)] * window[static_cast<size_t>(i)];
    }
  }

  audio::Waveform result;
  result.sample_rate = w.sample_rate;
  result.source_bit_depth = w.source_bit_depth;
  result.samples.resize(static_cast<size_t>(target));
  for (int64_t i = 0; i < target; ++i)
    result.samples[static_cast<size_t>(i)] =
        out[static_cast<size_t>(i)] / std::max(norm[static_cast<size_t>(i)], real(1e-8));
  return result;
}

/// Playback-rate change: rate > 1 is faster (shorter), pitch is preserved.
/// rate == 1 returns the input unchanged.
inline audio::Waveform change_speed(const audio::Waveform& w, real rate) {
  if (!std::isfinite(rate) || rate < 0.5 || rate > 2.0)
    throw ParameterError("change_speed: rate must be in [0.5, 2]");
  if (rate == 1.0) return w;
  if (w.samples.empty()) throw ParameterError("change_speed: empty input");
  const auto target =
      static_cast<size_t>(std::max<int64_t>(1, std::llround(static_cast<real>(w.samples.size()) / rate)));
  auto out = stretch_time(w, 1.0 / rate);
  out.samples = detail::fit_length(std::move(out.samples), target);
  return out;
}

/// Pitch shift in semitones at constant duration: time-stretch by
/// 2^(st/12), then resample back to the original length.
/// semitones == 0 returns the input unchanged.
inline audio::Waveform shift_pitch(const audio::Waveform& w, real semitones) {
  if (!std::isfinite(semitones) || std::abs(semitones) > 12.0)
    throw ParameterError("shift_pitch: semitones must be in [-12, 12]");
  if (semitones == 0.0) return w;
  if (w.samples.empty()) throw ParameterError("shift_pitch: empty input");

  const real q = std::exp2(semitones / 12.0);
  auto stretched = stretch_time(w, q);
  // play back q times faster: frequencies scale by q, duration returns to n
  const auto [num, den] = detail::rational_approx(q, 1024);
  auto samples = detail::resample_ratio(stretched.samples, static_cast<int>(den), static_cast<int>(num));
  audio::Waveform out;
  out.sample_rate = w.sample_rate;
  out.source_bit_depth = w.source_bit_depth;
  out.samples = detail::fit_length(std::move(samples), w.samples.size());
  return out;
}

// ---------------------------------------------------------------------------
// Additive noise at a target SNR.
// ---------------------------------------------------------------------------

/// clean + g * noise with g chosen so the pre-clip mix hits snr_db exactly;
/// samples are clipped to [-1, 1] only when the mix overflows (recorded in
/// `warnings` when a sink is given). Noise is tiled or truncated to the
/// clean length.
inline audio::Waveform mix_noise(const audio::Waveform& clean, const audio::Waveform& noise,
                                 real snr_db, std::vector<std::string>* warnings = nullptr) {
  if (!std::isfinite(snr_db)) throw ParameterError("mix_noise: snr must be finite");
  if (clean.samples.empty() || noise.samples.empty())
    throw ParameterError("mix_noise: empty input");
  if (clean.sample_rate != noise.sample_rate)
    throw ParameterError("mix_noise: sample rates differ");

  const real p_clean = dsp::signal_power(clean.samples);
  if (p_clean <= 0.0) throw ParameterError("mix_noise: clean signal is silent");

  const size_t n = clean.samples.size();
  std::vector<real> tiled(n);
  for (size_t i = 0; i < n; ++i) tiled[i] = noise.samples[i % noise.samples.size()];
  const real p_noise = dsp::signal_power(tiled);
  if (p_noise <= 0.0) throw ParameterError("mix_noise: noise signal is silent");

  const real gain = std::sqrt(p_clean / (p_noise * std::pow(10.0, snr_db / 10.0)));
  audio::Waveform out;
  out.sample_rate = clean.sample_rate;
  out.source_bit_depth = clean.source_bit_depth;
  out.samples.resize(n);
  size_t clipped = 0;
  for (size_t i = 0; i < n; ++i) {
    const real mixed = clean.samples[i] + gain * tiled[i];
    if (mixed < -1.0 || mixed > 1.0) ++clipped;
    out.samples[i] = std::clamp(mixed, real(-1.0), real(1.0));
  }
  if (clipped > 0 && warnings)
    warnings->push_back("mix_noise: " + std::to_string(clipped) + " of " + std::to_string(n) +
                        " samples clipped");
  return out;
}

// ---------------------------------------------------------------------------
// Reverberation.
// ---------------------------------------------------------------------------

/// Synthetic room impulse response: unit direct path followed by a
/// noise-modulated exponential tail with the given T60.
inline std::vector<real> make_exp_decay_rir(real t60_s, int sample_rate, uint64_t seed) {
  if (!std::isfinite(t60_s) || t60_s <= 0.0) throw ParameterError("make_exp_decay_rir: t60 must be positive");
  if (sample_rate <= 0) throw ParameterError("make_exp_decay_rir: bad sample rate");
  const auto len = static_cast<size_t>(std::max<int64_t>(2, std::llround(t60_s * sample_rate)));
  Rng rng(seed);
  std::normal_distribution<real> gauss(0.0, 1.0);
  std::vector<real> h(len);
  h[0] = 1.0;
  const real decay = 6.91 / (t60_s * static_cast<real>(sample_rate));
  for (size_t i = 1; i < len; ++i)
    h[i] = 0.3 * gauss(rng) * std::exp(-decay * static_cast<real>(i));
  return h;
}

/// Convolve with an impulse response, truncate to the input length, and
/// rescale so the output peak matches the input peak.
inline audio::Waveform add_reverb(const audio::Waveform& w, const std::vector<real>& rir) {
  if (w.samples.empty()) throw ParameterError("add_reverb: empty input");
  if (rir.empty()) throw ParameterError("add_reverb: empty impulse response");
  auto full = dsp::convolve(w.samples, rir);
  full.resize(w.samples.size());

  real in_peak = 0.0, out_peak = 0.0;
  for (real v : w.samples) in_peak = std::max(in_peak, std::abs(v));
  for (real v : full) out_peak = std::max(out_peak, std::abs(v));
  if (out_peak > 0.0 && in_peak > 0.0) {
    const real scale = in_peak / out_peak;
    for (real& v : full) v *= scale;
  }
  audio::Waveform out;
  out.sample_rate = w.sample_rate;
  out.source_bit_depth = w.source_bit_depth;
  out.samples = std::move(full);
  return out;
}

// ---------------------------------------------------------------------------
// Stochastic policy: speed, then pitch, then optional reverb, then optional
// noise, all drawn from one seeded generator.
// ---------------------------------------------------------------------------

struct AugmentPolicy {
  real speed_lo = 0.8, speed_hi = 1.3;
  real pitch_lo = -3.0, pitch_hi = 3.0;  // semitones
  real snr_lo = 10.0, snr_hi = 25.0;     // dB
  real p_reverb = 0.5;
  real p_noise = 0.5;
  std::vector<std::vector<real>> rirs;
  std::vector<audio::Waveform> noises;

  void validate() const {
    if (!(speed_lo <= speed_hi) || !(pitch_lo <= pitch_hi) || !(snr_lo <= snr_hi))
      throw ConfigError("augment policy: each range needs lo <= hi");
    if (p_reverb < 0.0 || p_reverb > 1.0 || p_noise < 0.0 || p_noise > 1.0)
      throw ConfigError("augment policy: probabilities must be in [0, 1]");
    if (p_reverb > 0.0 && rirs.empty())
      throw ConfigError("augment policy: p_reverb > 0 but no impulse responses");
    if (p_noise > 0.0 && noises.empty())
      throw ConfigError("augment policy: p_noise > 0 but no noise clips");
  }
};

struct AugmentOutcome {
  audio::Waveform audio;
  real speed = 1.0;
  real pitch_semitones = 0.0;
  bool reverb_applied = false;
  bool noise_applied = false;
  int rir_index = -1;
  int noise_index = -1;
  real snr_db = 0.0;
};

inline AugmentOutcome apply_policy(const audio::Waveform& w, const AugmentPolicy& policy,
                                   uint64_t seed) {
  policy.validate();
  Rng rng(seed);
  std::uniform_real_distribution<real> uspeed(policy.speed_lo, policy.speed_hi);
  std::uniform_real_distribution<real> upitch(policy.pitch_lo, policy.pitch_hi);
  std::uniform_real_distribution<real> usnr(policy.snr_lo, policy.snr_hi);
  std::uniform_real_distribution<real> ucoin(0.0, 1.0);

  AugmentOutcome o;
  o.speed = uspeed(rng);
  o.pitch_semitones = upitch(rng);
  o.reverb_applied = ucoin(rng) < policy.p_reverb;
  o.noise_applied = ucoin(rng) < policy.p_noise;

  o.audio = change_speed(w, o.speed);
  o.audio = shift_pitch(o.audio, o.pitch_semitones);
  if (o.reverb_applied) {
    o.rir_index = static_cast<int>(rng() % policy.rirs.size());
    o.audio = add_reverb(o.audio, policy.rirs[static_cast<size_t>(o.rir_index)]);
  }
  if (o.noise_applied) {
    o.noise_index = static_cast<int>(rng() % policy.noises.size());
    o.snr_db = usnr(rng);
    o.audio = mix_noise(o.audio, policy.noises[static_cast<size_t>(o.noise_index)], o.snr_db);
  }
  return o;
}

}  // namespace speecheq::aug

#endif  // SPEECHEQ_AUGMENT_HPP
