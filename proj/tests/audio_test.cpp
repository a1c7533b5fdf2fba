// Unit tests for WAV parsing/writing, polyphase resampling, and the
// deterministic synthetic corpus.
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

#include "speecheq/audio.hpp"

#include <gtest/gtest.h>

#include <cstdint>
#include <random>

#include "speecheq/dsp.hpp"
#include "testutil.hpp"

namespace sq = speecheq;
using sq::real;
using sq::audio::Waveform;

namespace {

// Minimal RIFF container around one fmt chunk and one data chunk, with an
// optional junk chunk in between to exercise chunk skipping.
std::string wav_bytes(uint16_t format, uint16_t channels, uint32_t rate, uint16_t bits,
                      const std::string& payload, const std::string& junk = "") {
  sq::ByteWriter body;
  body.str("WAVE");
  body.str("fmt ");
  body.u32(16);
  body.u16(format);
  body.u16(channels);
  body.u32(rate);
  body.u32(rate * channels * bits / 8);
  body.u16(static_cast<uint16_t>(channels * bits / 8));
  body.u16(bits);
  if (!junk.empty()) {
    body.str("junk");
    body.u32(static_cast<uint32_t>(junk.size()));
    body.str(junk);
    if (junk.size() % 2) body.u8(0);  // chunks are word aligned
  }
  body.str("data");
  body.u32(static_cast<uint32_t>(payload.size()));
  body.str(payload);

  sq::ByteWriter out;
  out.str("RIFF");
  out.u32(static_cast<uint32_t>(body.data().size()));
  out.str(body.data());
  return out.data();
}

std::string pcm16_payload(const std::vector<int16_t>& samples) {
  sq::ByteWriter b;
  for (int16_t s : samples) b.u16(static_cast<uint16_t>(s));
  return b.data();
}

}  // namespace

TEST(Wav, SixteenBitRoundTripIsSampleExact) {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> grid(-32768, 32767);
  Waveform w;
  w.sample_rate = 16000;
  for (int i = 0; i < 480; ++i) w.samples.push_back(grid(rng) / 32768.0);
  auto back = sq::audio::parse_wav(sq::audio::format_wav16(w));
  ASSERT_EQ(back.samples.size(), w.samples.size());
  for (size_t i = 0; i < w.samples.size(); ++i) EXPECT_EQ(back.samples[i], w.samples[i]);
  EXPECT_EQ(back.sample_rate, 16000);
  EXPECT_EQ(back.source_bit_depth, 16);
}

TEST(Wav, PcmExtremesAndClipOnWrite) {
  auto parsed = sq::audio::parse_wav(wav_bytes(1, 1, 16000, 16, pcm16_payload({32767, -32768, 0})));
  ASSERT_EQ(parsed.samples.size(), 3u);
  EXPECT_EQ(parsed.samples[0], 32767.0 / 32768.0);
  EXPECT_EQ(parsed.samples[1], -1.0);
  EXPECT_EQ(parsed.samples[2], 0.0);

  // writing +1.0 saturates at +32767 rather than wrapping
  Waveform w;
  w.samples = {1.0, -1.0};
  auto back = sq::audio::parse_wav(sq::audio::format_wav16(w));
  EXPECT_EQ(back.samples[0], 32767.0 / 32768.0);
  EXPECT_EQ(back.samples[1], -1.0);
}

TEST(Wav, StereoOppositeChannelsCancel) {
  std::vector<int16_t> interleaved;
  for (int16_t v : {1000, -250, 31000, 7}) {
    interleaved.push_back(v);
    interleaved.push_back(static_cast<int16_t>(-v));
  }
  auto parsed = sq::audio::parse_wav(wav_bytes(1, 2, 22050, 16, pcm16_payload(interleaved)));
  ASSERT_EQ(parsed.samples.size(), 4u);
  for (real s : parsed.samples) EXPECT_EQ(s, 0.0);
  EXPECT_EQ(parsed.sample_rate, 22050);
}

TEST(Wav, EightBitIsUnsignedMidTread) {
  std::string payload;
  for (unsigned char v : {0, 128, 255}) payload.push_back(static_cast<char>(v));
  auto parsed = sq::audio::parse_wav(wav_bytes(1, 1, 8000, 8, payload));
  ASSERT_EQ(parsed.samples.size(), 3u);
  EXPECT_EQ(parsed.samples[0], -1.0);
  EXPECT_EQ(parsed.samples[1], 0.0);
  EXPECT_EQ(parsed.samples[2], 127.0 / 128.0);
  EXPECT_EQ(parsed.source_bit_depth, 8);
}

TEST(Wav, Float32PayloadRoundTrips) {
  sq::ByteWriter b;
  for (float v : {0.25f, -0.75f, 1.0f}) b.f32(v);
  auto parsed = sq::audio::parse_wav(wav_bytes(3, 1, 44100, 32, b.data()));
  ASSERT_EQ(parsed.samples.size(), 3u);
  EXPECT_EQ(parsed.samples[0], 0.25);
  EXPECT_EQ(parsed.samples[1], -0.75);
  EXPECT_EQ(parsed.samples[2], 1.0);
}

TEST(Wav, SkipsUnknownChunksIncludingOddSizes) {
  auto parsed =
      sq::audio::parse_wav(wav_bytes(1, 1, 16000, 16, pcm16_payload({123}), "abc"));  // odd junk
  ASSERT_EQ(parsed.samples.size(), 1u);
  EXPECT_EQ(parsed.samples[0], 123.0 / 32768.0);
}

TEST(Wav, MalformedInputsRaiseTypedErrors) {
  EXPECT_THROW(sq::audio::parse_wav("not a wav"), sq::FormatError);
  // data chunk before any fmt chunk
  sq::ByteWriter b;
  b.str("RIFF");
  b.u32(12);
  b.str("WAVE");
  b.str("data");
  b.u32(0);
  EXPECT_THROW(sq::audio::parse_wav(b.data()), sq::FormatError);
  // declared data size larger than the remaining bytes
  auto truncated = wav_bytes(1, 1, 16000, 16, pcm16_payload({1, 2, 3}));
  truncated.resize(truncated.size() - 2);
  EXPECT_THROW(sq::audio::parse_wav(truncated), sq::IoError);
  // unsupported encodings
  EXPECT_THROW(sq::audio::parse_wav(wav_bytes(2, 1, 16000, 16, "")), sq::FormatError);
  EXPECT_THROW(sq::audio::parse_wav(wav_bytes(1, 1, 16000, 24, "")), sq::FormatError);
  // load_wav wraps the path into the message without doubling the kind tag
  try {
    sq::audio::load_wav("/nonexistent/x.wav");
    FAIL() << "expected IoError";
  } catch (const sq::IoError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("/nonexistent/x.wav"), std::string::npos);
    EXPECT_EQ(what.find("io-error"), what.rfind("io-error"));
  }
}

TEST(Resample, IdentityRateIsBitExact) {
  auto tone = testutil::make_tone(440.0, 0.1, 16000);
  auto out = sq::audio::resample(tone, 16000);
  EXPECT_EQ(out.samples, tone.samples);
}

TEST(Resample, PreservesEnergyWithinOnePercent) {
  for (int src : {48000, 8000, 22050}) {
    auto tone = testutil::make_tone(440.0, 0.5, src);
    auto out = sq::audio::resample(tone, 16000);
    const int64_t expect_len = std::llround(static_cast<double>(tone.samples.size()) * 16000.0 / src);
    EXPECT_EQ(static_cast<int64_t>(out.samples.size()), expect_len) << "src " << src;
    const real pin = sq::dsp::signal_power(tone.samples);
    const real pout = sq::dsp::signal_power(out.samples);
    EXPECT_NEAR(pout / pin, 1.0, 0.01) << "src " << src;
  }
}

TEST(Resample, KeepsToneFrequency) {
  auto tone = testutil::make_tone(440.0, 0.5, 48000);
  auto out = sq::audio::resample(tone, 16000);
  EXPECT_NEAR(testutil::dominant_freq_hz(out.samples, 16000), 440.0, 440.0 * 0.02);
}

TEST(Resample, RejectsBadRates) {
  auto tone = testutil::make_tone(440.0, 0.05, 16000);
  EXPECT_THROW(sq::audio::resample(tone, 0), sq::ParameterError);
  tone.sample_rate = -1;
  EXPECT_THROW(sq::audio::resample(tone, 16000), sq::ParameterError);
}

TEST(Synth, UtteranceIsDeterministic) {
  auto a = sq::audio::synth_utterance(4, "high", sq::seqm::Gender::Male, 0.3, 16000, 99);
  auto b = sq::audio::synth_utterance(4, "high", sq::seqm::Gender::Male, 0.3, 16000, 99);
  EXPECT_EQ(a.samples, b.samples);
  auto c = sq::audio::synth_utterance(4, "high", sq::seqm::Gender::Male, 0.3, 16000, 100);
  EXPECT_NE(a.samples, c.samples);
}

TEST(Synth, CorpusIsByteIdenticalAcrossRuns) {
  testutil::TempDir t1, t2;
  auto spec = sq::audio::make_uniform_spec(1, 5);
  spec.duration_s = 0.12;
  auto r1 = sq::audio::synth_corpus(spec, t1.path());
  auto r2 = sq::audio::synth_corpus(spec, t2.path());
  EXPECT_EQ(sq::read_file(r1.manifest_path), sq::read_file(r2.manifest_path));
  for (const auto& rec : r1.records) {
    EXPECT_EQ(sq::read_file(t1 / rec.audio_path), sq::read_file(t2 / rec.audio_path))
        << rec.id;
  }
}

TEST(Synth, LeveledSpecShapesTheCorpus) {
  testutil::TempDir tmp;
  auto spec = sq::audio::make_leveled_spec(2, 7);
  spec.duration_s = 0.12;
  auto r = sq::audio::synth_corpus(spec, tmp.path());
  // neutral block of 3*items plus 8 emotions x 3 levels x items
  EXPECT_EQ(r.records.size(), static_cast<size_t>(3 * 2 + 8 * 3 * 2));
  std::map<int, int> per_category;
  std::set<real> eis_values;
  int test_count = 0;
  for (const auto& rec : r.records) {
    ++per_category[rec.label.category];
    EXPECT_FALSE(rec.label.masked);
    eis_values.insert(rec.label.eis);
    if (rec.split == "test") ++test_count;
  }
  for (int c = 0; c < 9; ++c) EXPECT_EQ(per_category[c], 6) << "category " << c;
  EXPECT_EQ(eis_values, (std::set<real>{0.0, 1.5, 2.5, 3.5}));
  EXPECT_GT(test_count, 0);
  // the manifest on disk parses back to the same records
  auto loaded = sq::seqm::load_unified_manifest(r.manifest_path);
  EXPECT_EQ(loaded.size(), r.records.size());
}

TEST(Synth, BalancedTestSplitAtDefaultFraction) {
  testutil::TempDir tmp;
  auto spec = sq::audio::make_leveled_spec(10, 3);
  spec.duration_s = 0.12;
  auto r = sq::audio::synth_corpus(spec, tmp.path());
  ASSERT_EQ(r.records.size(), 270u);
  std::map<int, int> test_per_category;
  for (const auto& rec : r.records)
    if (rec.split == "test") ++test_per_category[rec.label.category];
  for (int c = 0; c < 9; ++c) EXPECT_EQ(test_per_category[c], 6) << "category " << c;
}

TEST(Synth, SpecValidation) {
  testutil::TempDir tmp;
  sq::audio::SynthSpec s;
  EXPECT_THROW(sq::audio::synth_corpus(s, tmp.path()), sq::ConfigError);  // no classes
  s.classes.push_back({2, "medium", 0});
  EXPECT_THROW(sq::audio::synth_corpus(s, tmp.path()), sq::ConfigError);  // zero count
  s.classes[0] = {0, "high", 1};
  EXPECT_THROW(sq::audio::synth_corpus(s, tmp.path()), sq::ConfigError);  // neutral takes no level
  s.classes[0] = {2, "medium", 1};
  s.test_fraction = 1.0;
  EXPECT_THROW(sq::audio::synth_corpus(s, tmp.path()), sq::ConfigError);
}

TEST(Paths, ResolveRelativeToManifest) {
  EXPECT_EQ(sq::audio::resolve_audio_path("/data/corpus/manifest.tsv", "wav/a.wav"),
            std::filesystem::path("/data/corpus/wav/a.wav"));
  EXPECT_EQ(sq::audio::resolve_audio_path("/data/corpus/manifest.tsv", "/abs/a.wav"),
            std::filesystem::path("/abs/a.wav"));
}
