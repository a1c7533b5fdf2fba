// speecheq.cpp  -- the command-line entry point. One binary, eight
// subcommands:
//
//   unify      merge per-dataset manifests into one unified manifest
//   synth      generate the synthetic desk-scale corpus
//   featurize  precompute log-mel feature caches
//   augment    write an augmented copy of a corpus
//   train      run the multitask training loop
//   eval       score a checkpoint against a manifest
//   infer      per-utterance category + intensity output
//   gradcheck  finite-difference sweep over ops, losses, and the model
//
// Config precedence is defaults < config file < command-line flags. The
// config file is JSON with optional sections "model", "train", "mel", and
// "augment_policy" plus top-level "seed" and "jobs"; its path comes from
// --config or the SPEECHEQ_CONFIG environment variable. Every failure exits
// nonzero with one machine-parseable line on stderr:
// error<TAB>kind<TAB>message.
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

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <mutex>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "speecheq/audio.hpp"
#include "speecheq/augment.hpp"
#include "speecheq/common.hpp"
#include "speecheq/diffcore.hpp"
#include "speecheq/evalkit.hpp"
#include "speecheq/features.hpp"
#include "speecheq/losses.hpp"
#include "speecheq/model.hpp"
#include "speecheq/seqm.hpp"
#include "speecheq/trainer.hpp"

namespace sq = speecheq;
using sq::real;

namespace {

// ---------------------------------------------------------------------------
// Small plumbing.
// ---------------------------------------------------------------------------

std::string one_line(std::string s) {
  for (char& c : s)
    if (c == '\n' || c == '\t' || c == '\r') c = ' ';
  return s;
}

void emit_warnings(const std::vector<std::string>& warnings) {
  for (const auto& w : warnings) std::cerr << "warning: " << one_line(w) << "\n";
}

/// Deterministic work distribution: every item is independent and owns its
/// derived seed, so thread interleaving cannot change any output byte.
template <typename Fn>
void parallel_for(int n, int jobs, Fn&& fn) {
  jobs = std::max(1, std::min(jobs, n));
  if (jobs <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::mutex err_mu;
  std::exception_ptr err;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(jobs));
  for (int t = 0; t < jobs; ++t) {
    pool.emplace_back([&] {
      while (true) {
        const int i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(err_mu);
          if (!err) err = std::current_exception();
          next.store(n);
          return;
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (err) std::rethrow_exception(err);
}

/// A CLI option that knows whether the user actually passed it, so it can
/// overlay a config-file value without clobbering it with its default.
template <typename T>
struct Flag {
  T value{};
  CLI::Option* opt = nullptr;

  void add(CLI::App* app, const std::string& name, const std::string& desc) {
    opt = app->add_option(name, value, desc);
  }
  void add_flag(CLI::App* app, const std::string& name, const std::string& desc) {
    opt = app->add_flag(name, value, desc);
  }
  bool set() const { return opt != nullptr && opt->count() > 0; }
  void apply(nlohmann::json& j, const char* key) const {
    if (set()) j[key] = value;
  }
};

// ---------------------------------------------------------------------------
// Global options and the config file.
// ---------------------------------------------------------------------------

struct GlobalOpts {
  uint64_t seed = 1;
  int jobs = 1;
  bool verbose = false;
  std::string config_path;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* jobs_opt = nullptr;
  nlohmann::json file = nlohmann::json::object();

  void load_file() {
    if (config_path.empty()) return;
    try {
      file = nlohmann::json::parse(sq::read_file(config_path));
    } catch (const nlohmann::json::exception& e) {
      throw sq::ConfigError("bad config file " + config_path + ": " + e.what());
    }
    if (!file.is_object()) throw sq::ConfigError("config file must hold a JSON object");
    for (const auto& [key, _] : file.items()) {
      if (key != "seed" && key != "jobs" && key != "model" && key != "train" && key != "mel" &&
          key != "augment_policy")
        throw sq::ConfigError("config file: unknown key '" + key + "'");
    }
  }

  uint64_t resolved_seed() const {
    if (seed_opt != nullptr && seed_opt->count() > 0) return seed;
    if (file.contains("seed")) return file.at("seed").get<uint64_t>();
    return seed;
  }

  int resolved_jobs() const {
    int j = jobs;
    if (!(jobs_opt != nullptr && jobs_opt->count() > 0) && file.contains("jobs"))
      j = file.at("jobs").get<int>();
    if (j < 1) throw sq::ConfigError("jobs must be >= 1");
    return j;
  }

  /// Section defaults overlaid with the matching config-file object.
  nlohmann::json section(const char* name, nlohmann::json defaults) const {
    if (file.contains(name)) {
      const auto& s = file.at(name);
      if (!s.is_object()) throw sq::ConfigError(std::string("config section '") + name + "' must be an object");
      defaults.update(s);
    }
    return defaults;
  }
};

// ---------------------------------------------------------------------------
// Flag groups mirroring the config structs; flag names equal the JSON keys
// so --help enumerates every config key.
// ---------------------------------------------------------------------------

struct MelFlags {
  Flag<int> sample_rate, frame_len, hop_len, n_fft, n_mels;
  Flag<real> fmin_hz, fmax_hz, energy_floor;
  Flag<bool> mean_var_normalize;

  void wire(CLI::App* a, const std::string& prefix = "--") {
    sample_rate.add(a, prefix + "sample_rate", "waveform rate expected by the filterbank [16000]");
    frame_len.add(a, prefix + "frame_len", "analysis frame length in samples [400]");
    hop_len.add(a, prefix + "hop_len", "frame hop in samples [160]");
    n_fft.add(a, prefix + "n_fft", "FFT size [512]");
    n_mels.add(a, prefix + "n_mels", "mel band count [80]");
    fmin_hz.add(a, prefix + "fmin_hz", "lowest filter edge in Hz [0]");
    fmax_hz.add(a, prefix + "fmax_hz", "highest filter edge in Hz [8000]");
    energy_floor.add(a, prefix + "energy_floor", "epsilon added before the log [1e-10]");
    mean_var_normalize.add_flag(a, prefix + "mean_var_normalize",
                                "per-utterance mean/variance normalization [off]");
  }

  sq::feat::MelConfig resolve(const GlobalOpts& g) const {
    nlohmann::json j = g.section("mel", sq::feat::MelConfig{}.to_json());
    sample_rate.apply(j, "sample_rate");
    frame_len.apply(j, "frame_len");
    hop_len.apply(j, "hop_len");
    n_fft.apply(j, "n_fft");
    n_mels.apply(j, "n_mels");
    fmin_hz.apply(j, "fmin_hz");
    fmax_hz.apply(j, "fmax_hz");
    energy_floor.apply(j, "energy_floor");
    mean_var_normalize.apply(j, "mean_var_normalize");
    return sq::feat::MelConfig::from_json(j);
  }
};

struct ModelFlags {
  Flag<int> n_mels, channels, bottleneck, res2_scale, conv1_kernel, n_categories, lexicon_size;
  Flag<bool> desk;

  void wire(CLI::App* a) {
    desk.add_flag(a, "--desk", "start from the desk preset (channels 64, bottleneck 32)");
    n_mels.add(a, "--n_mels", "input feature dimension [80]");
    channels.add(a, "--channels", "block width C [256]");
    bottleneck.add(a, "--bottleneck", "attention bottleneck [128]");
    res2_scale.add(a, "--res2_scale", "multi-scale group count [8]");
    conv1_kernel.add(a, "--conv1_kernel", "front-end kernel size [5]");
    n_categories.add(a, "--n_categories", "emotion category count, fixed [9]");
    lexicon_size.add(a, "--lexicon_size", "phoneme lexicon size [202]");
  }

  bool any_set() const {
    return desk.set() || n_mels.set() || channels.set() || bottleneck.set() || res2_scale.set() ||
           conv1_kernel.set() || n_categories.set() || lexicon_size.set();
  }

  sq::model::ModelConfig resolve(const GlobalOpts& g) const {
    nlohmann::json defaults =
        (desk.set() && desk.value) ? sq::model::ModelConfig::desk().to_json()
                                   : sq::model::ModelConfig{}.to_json();
    nlohmann::json j = g.section("model", std::move(defaults));
    n_mels.apply(j, "n_mels");
    channels.apply(j, "channels");
    bottleneck.apply(j, "bottleneck");
    res2_scale.apply(j, "res2_scale");
    conv1_kernel.apply(j, "conv1_kernel");
    n_categories.apply(j, "n_categories");
    lexicon_size.apply(j, "lexicon_size");
    return sq::model::ModelConfig::from_json(j);
  }
};

struct TrainFlags {
  Flag<real> lr, lr_end, weight_decay, beta1, beta2, adam_eps, gamma, alpha, beta, eta, beta_end,
      eta_end, grad_clip;
  Flag<int> batch_size, steps, fine_tune_start, checkpoint_every;
  Flag<bool> augment;

  void wire(CLI::App* a) {
    lr.add(a, "--lr", "initial learning rate [1e-4]");
    lr_end.add(a, "--lr_end", "fine-tune learning rate endpoint [1e-6]");
    weight_decay.add(a, "--weight_decay", "decoupled weight decay [1e-5]");
    beta1.add(a, "--beta1", "Adam first-moment decay [0.9]");
    beta2.add(a, "--beta2", "Adam second-moment decay [0.999]");
    adam_eps.add(a, "--adam_eps", "Adam denominator epsilon [1e-8]");
    batch_size.add(a, "--batch_size", "mini-batch size per stream [32]");
    steps.add(a, "--steps", "total optimization steps [1000]");
    fine_tune_start.add(a, "--fine_tune_start",
                        "step where the anneal stage begins; -1 disables [-1]");
    gamma.add(a, "--gamma", "focal loss focusing exponent [10]");
    alpha.add(a, "--alpha", "intensity loss weight [1]");
    beta.add(a, "--beta", "phoneme loss weight [0.1]");
    eta.add(a, "--eta", "gender loss weight [0.1]");
    beta_end.add(a, "--beta_end", "phoneme weight endpoint [0.01]");
    eta_end.add(a, "--eta_end", "gender weight endpoint [0.01]");
    checkpoint_every.add(a, "--checkpoint_every", "periodic checkpoint interval; 0 = final only [0]");
    grad_clip.add(a, "--grad_clip", "max global gradient norm; 0 disables clipping [0]");
    augment.add_flag(a, "--augment", "augment gender/emotion batches on the fly [off]");
  }

  sq::train::TrainConfig resolve(const GlobalOpts& g) const {
    nlohmann::json j = g.section("train", sq::train::TrainConfig{}.to_json());
    lr.apply(j, "lr");
    lr_end.apply(j, "lr_end");
    weight_decay.apply(j, "weight_decay");
    beta1.apply(j, "beta1");
    beta2.apply(j, "beta2");
    adam_eps.apply(j, "adam_eps");
    batch_size.apply(j, "batch_size");
    steps.apply(j, "steps");
    fine_tune_start.apply(j, "fine_tune_start");
    gamma.apply(j, "gamma");
    alpha.apply(j, "alpha");
    beta.apply(j, "beta");
    eta.apply(j, "eta");
    beta_end.apply(j, "beta_end");
    eta_end.apply(j, "eta_end");
    checkpoint_every.apply(j, "checkpoint_every");
    grad_clip.apply(j, "grad_clip");
    j["seed"] = g.resolved_seed();  // one seed governs everything
    sq::train::TrainConfig c = sq::train::TrainConfig::from_json(j);
    if (augment.set()) c.augment = augment.value;
    return c;
  }
};

struct PolicyFlags {
  Flag<real> speed_lo, speed_hi, pitch_lo, pitch_hi, snr_lo, snr_hi, p_reverb, p_noise;
  std::vector<std::string> noise_paths;
  std::vector<real> rir_t60s;
  CLI::Option* noise_opt = nullptr;
  CLI::Option* rir_opt = nullptr;

  void wire(CLI::App* a) {
    speed_lo.add(a, "--speed_lo", "speed ratio lower bound [0.8]");
    speed_hi.add(a, "--speed_hi", "speed ratio upper bound [1.3]");
    pitch_lo.add(a, "--pitch_lo", "pitch shift lower bound in semitones [-3]");
    pitch_hi.add(a, "--pitch_hi", "pitch shift upper bound in semitones [3]");
    snr_lo.add(a, "--snr_lo", "noise mixing SNR lower bound in dB [10]");
    snr_hi.add(a, "--snr_hi", "noise mixing SNR upper bound in dB [25]");
    p_reverb.add(a, "--p_reverb", "probability of reverberation [0]");
    p_noise.add(a, "--p_noise", "probability of noise mixing; needs noise_paths [0]");
    noise_opt = a->add_option("--noise_paths", noise_paths, "noise WAV files (repeatable)");
    rir_opt = a->add_option("--rir_t60s", rir_t60s,
                            "T60 values for synthetic impulse responses (repeatable) [0.3]");
  }

  /// Build the policy: synthetic impulse responses from the T60 list, noise
  /// clips loaded and resampled to the canonical rate.
  sq::aug::AugmentPolicy resolve(const GlobalOpts& g) const {
    nlohmann::json j = {{"speed_lo", 0.8},  {"speed_hi", 1.3}, {"pitch_lo", -3.0},
                        {"pitch_hi", 3.0},  {"snr_lo", 10.0},  {"snr_hi", 25.0},
                        {"p_reverb", 0.0},  {"p_noise", 0.0},
                        {"noise_paths", nlohmann::json::array()},
                        {"rir_t60s", nlohmann::json::array({0.3})}};
    j = g.section("augment_policy", std::move(j));
    for (const auto& [key, _] : j.items()) {
      static const std::set<std::string> known = {"speed_lo", "speed_hi", "pitch_lo", "pitch_hi",
                                                  "snr_lo",   "snr_hi",   "p_reverb", "p_noise",
                                                  "noise_paths", "rir_t60s"};
      if (!known.count(key)) throw sq::ConfigError("augment policy: unknown key '" + key + "'");
    }
    speed_lo.apply(j, "speed_lo");
    speed_hi.apply(j, "speed_hi");
    pitch_lo.apply(j, "pitch_lo");
    pitch_hi.apply(j, "pitch_hi");
    snr_lo.apply(j, "snr_lo");
    snr_hi.apply(j, "snr_hi");
    p_reverb.apply(j, "p_reverb");
    p_noise.apply(j, "p_noise");
    if (noise_opt != nullptr && noise_opt->count() > 0) j["noise_paths"] = noise_paths;
    if (rir_opt != nullptr && rir_opt->count() > 0) j["rir_t60s"] = rir_t60s;

    sq::aug::AugmentPolicy p;
    p.speed_lo = j.at("speed_lo").get<real>();
    p.speed_hi = j.at("speed_hi").get<real>();
    p.pitch_lo = j.at("pitch_lo").get<real>();
    p.pitch_hi = j.at("pitch_hi").get<real>();
    p.snr_lo = j.at("snr_lo").get<real>();
    p.snr_hi = j.at("snr_hi").get<real>();
    p.p_reverb = j.at("p_reverb").get<real>();
    p.p_noise = j.at("p_noise").get<real>();
    uint64_t idx = 0;
    for (const auto& t60 : j.at("rir_t60s"))
      p.rirs.push_back(sq::aug::make_exp_decay_rir(t60.get<real>(), sq::audio::kCanonicalRate,
                                                   sq::derive_seed(g.resolved_seed(), "rir", idx++)));
    for (const auto& np : j.at("noise_paths")) {
      auto w = sq::audio::load_wav(np.get<std::string>());
      if (w.sample_rate != sq::audio::kCanonicalRate)
        w = sq::audio::resample(w, sq::audio::kCanonicalRate);
      p.noises.push_back(std::move(w));
    }
    p.validate();
    return p;
  }
};

// ---------------------------------------------------------------------------
// Shared corpus helpers.
// ---------------------------------------------------------------------------

std::vector<sq::seqm::UnifiedRecord> load_split(const std::filesystem::path& manifest,
                                                const std::string& split) {
  auto records = sq::seqm::load_unified_manifest(manifest);
  if (split != "all") {
    std::vector<sq::seqm::UnifiedRecord> kept;
    for (auto& r : records)
      if (r.split == split) kept.push_back(std::move(r));
    records = std::move(kept);
  }
  if (records.empty())
    throw sq::ConfigError("no records in " + manifest.string() + " for split '" + split + "'");
  return records;
}

sq::audio::Waveform load_canonical_wav(const std::filesystem::path& manifest,
                                       const sq::seqm::UnifiedRecord& rec) {
  auto w = sq::audio::load_wav(sq::audio::resolve_audio_path(manifest, rec.audio_path));
  if (w.sample_rate != sq::audio::kCanonicalRate)
    w = sq::audio::resample(w, sq::audio::kCanonicalRate);
  return w;
}

/// Features from the cache when a directory is given, otherwise computed
/// from the waveform on the spot.
sq::diff::Tensor features_for_record(const std::filesystem::path& manifest,
                                     const sq::seqm::UnifiedRecord& rec,
                                     const std::string& features_dir,
                                     const sq::feat::MelConfig& mel) {
  sq::feat::FeatureMatrix f;
  if (!features_dir.empty()) {
    f = sq::feat::load_features(std::filesystem::path(features_dir) / (rec.id + ".feat"));
  } else {
    auto w = load_canonical_wav(manifest, rec);
    if (w.sample_rate != mel.sample_rate) w = sq::audio::resample(w, mel.sample_rate);
    f = sq::feat::mel_fbank(w, mel);
  }
  return sq::diff::Tensor::from(f.frames, f.dim, std::move(f.data));
}

int gender_id(sq::seqm::Gender g) { return g == sq::seqm::Gender::Female ? 1 : 0; }

// ---------------------------------------------------------------------------
// unify
// ---------------------------------------------------------------------------

struct UnifyOpts {
  std::vector<std::string> manifests;
  std::vector<std::string> schemes;
  std::string out;
};

int cmd_unify(const GlobalOpts&, const UnifyOpts& o) {
  if (o.manifests.size() != o.schemes.size())
    throw sq::ConfigError("unify needs one --scheme per --manifest (got " +
                          std::to_string(o.manifests.size()) + " manifests, " +
                          std::to_string(o.schemes.size()) + " schemes)");
  std::vector<sq::seqm::DatasetInput> inputs;
  for (size_t i = 0; i < o.manifests.size(); ++i)
    inputs.push_back({sq::seqm::load_raw_manifest(o.manifests[i]), sq::seqm::load_scheme(o.schemes[i])});
  auto result = sq::seqm::build_msud(inputs);
  sq::seqm::save_unified_manifest(o.out, result.records);
  emit_warnings(result.warnings);
  size_t excluded = 0;
  for (const auto& [name, n] : result.excluded_per_dataset) {
    std::cerr << "excluded " << n << " records from " << name << "\n";
    excluded += n;
  }
  std::cout << "wrote " << result.records.size() << " records to " << o.out << " (" << excluded
            << " excluded)\n";
  return 0;
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

struct SynthOpts {
  std::string out;
  int items = 10;
  real duration = 0.5;
  real test_fraction = 0.2;
  bool uniform = false;
};

int cmd_synth(const GlobalOpts& g, const SynthOpts& o) {
  sq::audio::SynthSpec spec = o.uniform ? sq::audio::make_uniform_spec(o.items, g.resolved_seed())
                                        : sq::audio::make_leveled_spec(o.items, g.resolved_seed());
  spec.duration_s = o.duration;
  spec.test_fraction = o.test_fraction;
  auto result = sq::audio::synth_corpus(spec, o.out);
  std::cout << "synthesized " << result.records.size() << " utterances into " << o.out
            << " (manifest " << result.manifest_path.string() << ")\n";
  return 0;
}

// ---------------------------------------------------------------------------
// featurize
// ---------------------------------------------------------------------------

struct FeaturizeOpts {
  std::string manifest;
  std::string out;
  std::string split = "all";
};

int cmd_featurize(const GlobalOpts& g, const FeaturizeOpts& o, const MelFlags& mel_flags) {
  const auto mel = mel_flags.resolve(g);
  const auto records = load_split(o.manifest, o.split);
  const std::filesystem::path outdir(o.out);
  parallel_for(static_cast<int>(records.size()), g.resolved_jobs(), [&](int i) {
    const auto& rec = records[static_cast<size_t>(i)];
    auto w = load_canonical_wav(o.manifest, rec);
    if (w.sample_rate != mel.sample_rate) w = sq::audio::resample(w, mel.sample_rate);
    sq::feat::save_features(outdir / (rec.id + ".feat"), sq::feat::mel_fbank(w, mel));
  });
  sq::atomic_write_file(outdir / "mel.json", mel.to_json().dump(2) + "\n");
  std::cout << "featurized " << records.size() << " utterances into " << o.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// augment
// ---------------------------------------------------------------------------

struct AugmentOpts {
  std::string manifest;
  std::string out;
  std::string split = "all";
  int copies = 1;
};

int cmd_augment(const GlobalOpts& g, const AugmentOpts& o, const PolicyFlags& pf) {
  if (o.copies < 1) throw sq::ConfigError("augment: copies must be >= 1");
  const auto policy = pf.resolve(g);
  const auto records = load_split(o.manifest, o.split);
  const std::filesystem::path outdir(o.out);
  const uint64_t seed = g.resolved_seed();

  std::vector<sq::seqm::UnifiedRecord> out_records(records.size() * static_cast<size_t>(o.copies));
  parallel_for(static_cast<int>(records.size()), g.resolved_jobs(), [&](int i) {
    const auto& rec = records[static_cast<size_t>(i)];
    const auto wav = load_canonical_wav(o.manifest, rec);
    for (int c = 0; c < o.copies; ++c) {
      auto outcome = sq::aug::apply_policy(wav, policy, sq::derive_seed(seed, "augment/" + rec.id,
                                                                        static_cast<uint64_t>(c)));
      std::string flat = rec.id;
      for (char& ch : flat)
        if (ch == '/') ch = '_';
      sq::seqm::UnifiedRecord r = rec;
      r.id = rec.id + "#aug" + std::to_string(c);
      r.audio_path = "wav/" + flat + "_aug" + std::to_string(c) + ".wav";
      sq::audio::save_wav16(outdir / r.audio_path, outcome.audio);
      out_records[static_cast<size_t>(i) * static_cast<size_t>(o.copies) + static_cast<size_t>(c)] =
          std::move(r);
    }
  });
  sq::seqm::save_unified_manifest(outdir / "manifest.tsv", out_records);
  std::cout << "augmented " << records.size() << " utterances x" << o.copies << " into " << o.out
            << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TokenizerOpts {
  std::string initials, finals;  // mandarin
  std::string phones, dict;      // english

  std::optional<sq::feat::Tokenizer> build() const {
    const bool mandarin = !initials.empty() || !finals.empty();
    const bool english = !phones.empty() || !dict.empty();
    if (mandarin && english)
      throw sq::ConfigError("choose one tokenizer: --initials/--finals or --phones/--dict");
    if (mandarin) {
      if (initials.empty() || finals.empty())
        throw sq::ConfigError("mandarin tokenizer needs both --initials and --finals");
      auto inv = sq::feat::load_mandarin_inventory(initials, finals);
      return sq::feat::Tokenizer::mandarin(sq::feat::build_mandarin_lexicon(inv), inv);
    }
    if (english) {
      if (phones.empty() || dict.empty())
        throw sq::ConfigError("english tokenizer needs both --phones and --dict");
      return sq::feat::Tokenizer::english(
          sq::feat::build_english_lexicon(sq::feat::load_inventory_file(phones)),
          sq::feat::load_english_dict(dict));
    }
    return std::nullopt;
  }
};

struct TrainOpts {
  std::string manifest;
  std::string features_dir;
  std::string out;
  std::string resume;
  std::string split = "train";
  TokenizerOpts tok;
};

int cmd_train(const GlobalOpts& g, const TrainOpts& o, const ModelFlags& mf, const TrainFlags& tf,
              const MelFlags& mel_flags, const PolicyFlags& pf) {
  sq::train::TrainConfig tcfg = tf.resolve(g);
  auto tokenizer = o.tok.build();

  std::optional<sq::model::Checkpoint> ckpt;
  sq::model::ModelConfig mcfg;
  if (!o.resume.empty()) {
    ckpt = sq::model::load_checkpoint(o.resume);
    nlohmann::json ckpt_cfg;
    try {
      ckpt_cfg = nlohmann::json::parse(ckpt->config_json);
    } catch (const nlohmann::json::exception& e) {
      throw sq::FormatError(std::string("checkpoint config: ") + e.what());
    }
    if (mf.any_set() || g.file.contains("model")) {
      mcfg = mf.resolve(g);  // must hash-match; state_from_checkpoint verifies
    } else {
      mcfg = sq::model::ModelConfig::from_json(ckpt_cfg);
    }
  } else {
    mcfg = mf.resolve(g);
  }
  if (tokenizer.has_value()) {
    const int lex_size = tokenizer->lexicon().size();
    if (mf.lexicon_size.set() && mf.lexicon_size.value != lex_size)
      throw sq::ConfigError("lexicon_size " + std::to_string(mf.lexicon_size.value) +
                            " conflicts with the tokenizer lexicon (" + std::to_string(lex_size) + ")");
    if (o.resume.empty()) mcfg.lexicon_size = lex_size;
    else if (mcfg.lexicon_size != lex_size)
      throw sq::ConfigError("checkpoint lexicon_size does not match the tokenizer lexicon");
  }
  mcfg.validate();

  auto mel = mel_flags.resolve(g);
  mel.n_mels = mcfg.n_mels;  // features must fit the model front end

  const auto records = load_split(o.manifest, o.split);
  std::vector<std::string> warnings;
  std::vector<sq::train::TrainItem> items(records.size());
  std::mutex warn_mu;
  parallel_for(static_cast<int>(records.size()), g.resolved_jobs(), [&](int i) {
    const auto& rec = records[static_cast<size_t>(i)];
    sq::train::TrainItem it;
    it.id = rec.id;
    it.category = rec.label.category;
    it.eis = rec.label.masked ? sq::seqm::kMaskedSentinel : rec.label.eis;
    it.gender = gender_id(rec.gender);
    it.features = features_for_record(o.manifest, rec, o.features_dir, mel);
    if (tokenizer.has_value() && !rec.transcript.empty()) {
      try {
        it.phonemes = tokenizer->tokenize(rec.transcript);
      } catch (const sq::Error& e) {
        std::lock_guard<std::mutex> lock(warn_mu);
        warnings.push_back("item '" + rec.id + "' left out of the phoneme stream: " + e.msg());
      }
    }
    if (tcfg.augment) it.audio = load_canonical_wav(o.manifest, rec);
    items[static_cast<size_t>(i)] = std::move(it);
  });

  auto data = sq::train::build_train_set(std::move(items));
  sq::train::TrainState st = ckpt.has_value() ? sq::train::state_from_checkpoint(*ckpt, mcfg, tcfg)
                                              : sq::train::fresh_state(mcfg, tcfg);
  st.mel = mel;
  if (tcfg.augment) st.policy = pf.resolve(g);

  auto result = sq::train::run_training(st, data, o.out, &warnings);
  emit_warnings(warnings);
  if (g.verbose)
    for (const auto& s : result.history) std::cout << sq::train::stats_json_line(s) << "\n";
  sq::atomic_write_file(std::filesystem::path(o.out) / "config.json",
                        nlohmann::json{{"model", mcfg.to_json()}, {"train", tcfg.to_json()}}.dump(2) +
                            "\n");
  if (!result.history.empty()) {
    const auto& last = result.history.back();
    std::cout << "step " << last.step << " combined loss " << sq::format_real(last.loss_combined)
              << "\n";
  }
  std::cout << "trained to step " << result.final_step << "; checkpoint "
            << result.checkpoint_path.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalOpts {
  std::string manifest;
  std::string checkpoint;
  std::string features_dir;
  std::string out;
  std::string split = "test";
  int kfold = 0;
  real ratio = 0.0;
};

std::vector<sq::eval::EvalExample> run_inference(const GlobalOpts& g, const std::string& manifest,
                                                 const std::vector<sq::seqm::UnifiedRecord>& records,
                                                 const sq::model::ParamStore& params,
                                                 const sq::model::ModelConfig& mcfg,
                                                 const std::string& features_dir,
                                                 const sq::feat::MelConfig& mel,
                                                 std::vector<sq::eval::InferResult>* raw = nullptr) {
  std::vector<sq::eval::EvalExample> examples(records.size());
  if (raw) raw->resize(records.size());
  parallel_for(static_cast<int>(records.size()), g.resolved_jobs(), [&](int i) {
    const auto& rec = records[static_cast<size_t>(i)];
    auto r = sq::eval::infer(params, mcfg, features_for_record(manifest, rec, features_dir, mel));
    sq::eval::EvalExample e;
    e.id = rec.id;
    e.gold_category = rec.label.category;
    e.pred_category = r.category;
    e.gold_eis = rec.label.masked ? sq::seqm::kMaskedSentinel : rec.label.eis;
    e.pred_eis = r.eis;
    e.gold_gender = gender_id(rec.gender);
    e.pred_gender = r.gender;
    examples[static_cast<size_t>(i)] = std::move(e);
    if (raw) (*raw)[static_cast<size_t>(i)] = std::move(r);
  });
  return examples;
}

int cmd_eval(const GlobalOpts& g, const EvalOpts& o, const MelFlags& mel_flags) {
  if (o.kfold != 0 && o.ratio != 0.0)
    throw sq::ConfigError("eval: --kfold and --ratio are mutually exclusive");
  const auto ckpt = sq::model::load_checkpoint(o.checkpoint);
  const auto mcfg = sq::model::ModelConfig::from_json(nlohmann::json::parse(ckpt.config_json));
  auto mel = mel_flags.resolve(g);
  mel.n_mels = mcfg.n_mels;

  auto records = load_split(o.manifest, o.split);
  std::vector<std::string> warnings;
  if (o.ratio != 0.0) {
    std::vector<int> cats;
    for (const auto& r : records) cats.push_back(r.label.category);
    auto split = sq::eval::ratio_split(cats, o.ratio, g.resolved_seed());
    std::vector<sq::seqm::UnifiedRecord> kept;
    for (int idx : split.test) kept.push_back(records[static_cast<size_t>(idx)]);
    records = std::move(kept);
  }

  auto examples = run_inference(g, o.manifest, records, ckpt.params, mcfg, o.features_dir, mel);

  std::string text, tsv;
  if (o.kfold > 0) {
    std::vector<int> cats;
    for (const auto& e : examples) cats.push_back(e.gold_category);
    auto folds = sq::eval::kfold_split(cats, o.kfold, g.resolved_seed(), &warnings);
    std::vector<sq::eval::Metrics> reports;
    for (const auto& fold : folds) {
      std::vector<sq::eval::EvalExample> subset;
      for (int idx : fold) subset.push_back(examples[static_cast<size_t>(idx)]);
      auto m = sq::eval::compute_metrics(subset);
      for (const auto& w : m.warnings) warnings.push_back(w);
      reports.push_back(std::move(m));
    }
    text = sq::eval::render_fold_table(reports);
    tsv = sq::eval::render_fold_tsv(reports);
  } else {
    auto m = sq::eval::compute_metrics(examples);
    // the text report embeds the metric warnings itself
    text = sq::eval::render_text_report(m);
    tsv = sq::eval::render_tsv_report(m);
  }

  const std::filesystem::path outdir(o.out);
  sq::atomic_write_file(outdir / "report.txt", text);
  sq::atomic_write_file(outdir / "report.tsv", tsv);
  sq::atomic_write_file(outdir / "eis_histogram.svg", sq::eval::render_eis_histogram_svg(examples));
  emit_warnings(warnings);
  std::cout << text;
  std::cout << "reports written to " << o.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// infer
// ---------------------------------------------------------------------------

struct InferOpts {
  std::string checkpoint;
  std::vector<std::string> wavs;
  std::string manifest;
  std::string features_dir;
  std::string split = "all";
  std::string out;
};

int cmd_infer(const GlobalOpts& g, const InferOpts& o, const MelFlags& mel_flags) {
  if (o.wavs.empty() == o.manifest.empty())
    throw sq::ConfigError("infer needs exactly one input source: --wav or --manifest");
  const auto ckpt = sq::model::load_checkpoint(o.checkpoint);
  const auto mcfg = sq::model::ModelConfig::from_json(nlohmann::json::parse(ckpt.config_json));
  auto mel = mel_flags.resolve(g);
  mel.n_mels = mcfg.n_mels;

  std::vector<std::string> ids;
  std::vector<sq::diff::Tensor> feats;
  if (!o.wavs.empty()) {
    for (const auto& path : o.wavs) {
      auto w = sq::audio::load_wav(path);
      if (w.sample_rate != mel.sample_rate) w = sq::audio::resample(w, mel.sample_rate);
      auto f = sq::feat::mel_fbank(w, mel);
      ids.push_back(std::filesystem::path(path).stem().string());
      feats.push_back(sq::diff::Tensor::from(f.frames, f.dim, std::move(f.data)));
    }
  } else {
    for (const auto& rec : load_split(o.manifest, o.split)) {
      ids.push_back(rec.id);
      feats.push_back(features_for_record(o.manifest, rec, o.features_dir, mel));
    }
  }

  std::vector<std::string> lines(ids.size());
  parallel_for(static_cast<int>(ids.size()), g.resolved_jobs(), [&](int i) {
    auto r = sq::eval::infer(ckpt.params, mcfg, feats[static_cast<size_t>(i)]);
    lines[static_cast<size_t>(i)] = ids[static_cast<size_t>(i)] + "\t" +
                                    sq::seqm::category_name(r.category) + "\t" +
                                    sq::format_real(r.eis);
  });
  std::string body;
  for (const auto& l : lines) body += l + "\n";
  if (!o.out.empty()) sq::atomic_write_file(o.out, body);
  std::cout << body;
  return 0;
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

struct CheckCase {
  std::string name;
  std::vector<std::pair<int, int>> shapes;  // leaf shapes
  std::function<sq::diff::Var(sq::diff::Graph&, const std::vector<sq::diff::Var>&)> build;
  real tolerance = 1e-3;
  // optional custom fill per leaf (defaults to uniform [-0.9, 0.9])
  std::function<real(sq::Rng&, size_t leaf)> fill;
};

/// One case: pack all leaves into a flat parameter vector, compare the
/// backward sweep against central differences.
sq::diff::GradCheckReport run_case(const CheckCase& c, uint64_t seed) {
  std::vector<real> theta;
  sq::Rng rng(seed);
  std::uniform_real_distribution<real> u(-0.9, 0.9);
  for (size_t li = 0; li < c.shapes.size(); ++li) {
    const auto [r, cc] = c.shapes[li];
    for (int i = 0; i < r * cc; ++i)
      theta.push_back(c.fill ? c.fill(rng, li) : u(rng));
  }
  auto eval = [&](const std::vector<real>& t, std::vector<real>* grad) {
    sq::diff::Graph g;
    std::vector<sq::diff::Var> leaves;
    size_t off = 0;
    for (const auto& [r, cc] : c.shapes) {
      const size_t n = static_cast<size_t>(r) * static_cast<size_t>(cc);
      sq::diff::Tensor tt =
          sq::diff::Tensor::from(r, cc, std::vector<real>(t.begin() + static_cast<long>(off),
                                                          t.begin() + static_cast<long>(off + n)));
      leaves.push_back(g.leaf(std::move(tt)));
      off += n;
    }
    sq::diff::Var loss = c.build(g, leaves);
    const real v = g.value(loss).v[0];
    if (grad) {
      g.backward(loss);
      grad->clear();
      for (auto leaf : leaves) {
        const auto& gt = g.gradient(leaf);
        if (gt.v.empty()) {
          const auto& vt = g.value(leaf);
          grad->insert(grad->end(), vt.size(), 0.0);
        } else {
          grad->insert(grad->end(), gt.v.begin(), gt.v.end());
        }
      }
    }
    return v;
  };
  std::vector<real> analytic;
  eval(theta, &analytic);
  return sq::diff::grad_check([&](const std::vector<real>& t) { return eval(t, nullptr); }, theta,
                              analytic);
}

/// End-to-end check on the small preset: two utterances through the full
/// backbone, all four losses combined, finite differences on a random
/// sample of parameter coordinates.
bool run_model_case(uint64_t seed, int n_coords, real tolerance, real* worst) {
  auto mcfg = sq::model::ModelConfig::tiny();
  auto params = sq::model::init_parameters(mcfg, seed);
  const int t_frames = 12;
  sq::Rng rng(sq::derive_seed(seed, "gradcheck/model"));
  std::uniform_real_distribution<real> u(-1.0, 1.0);
  std::vector<sq::diff::Tensor> feats;
  for (int b = 0; b < 2; ++b) {
    sq::diff::Tensor f(t_frames, mcfg.n_mels);
    for (real& v : f.v) v = u(rng);
    feats.push_back(std::move(f));
  }
  const std::vector<int> esc_golds = {2, 6};
  const std::vector<real> eis_golds = {2.5, sq::seqm::kMaskedSentinel};
  const std::vector<int> gender_golds = {0, 1};
  const std::vector<int> phoneme_label = {1, 3, 2};
  const sq::loss::LossWeights w{};

  auto eval = [&](const sq::model::ParamStore& p, sq::model::ParamStore* grads) {
    sq::diff::Graph g;
    sq::model::BoundParams bound(g, p);
    std::vector<sq::diff::Var> esc_rows, eis_rows, gender_rows;
    sq::diff::Var ctc;
    for (size_t b = 0; b < feats.size(); ++b) {
      auto out = sq::model::forward(g, bound, mcfg, feats[b]);
      esc_rows.push_back(out.esc_logits);
      eis_rows.push_back(out.eis_pred);
      gender_rows.push_back(out.gender_logits);
      if (b == 0) ctc = g.ctc_loss(out.phoneme_logits, phoneme_label, mcfg.lexicon_size);
    }
    sq::diff::Var l_e = g.focal_loss(g.stack_rows(esc_rows), esc_golds, sq::loss::kDefaultGamma);
    sq::diff::Var l_eis = sq::loss::eis_loss(g, g.stack_rows(eis_rows), eis_golds);
    sq::diff::Var l_g = g.focal_loss(g.stack_rows(gender_rows), gender_golds, sq::loss::kDefaultGamma);
    sq::diff::Var total = sq::loss::combined_loss(g, l_e, l_eis, ctc, l_g, w);
    const real v = g.value(total).v[0];
    if (grads) {
      g.backward(total);
      bound.read_grads(*grads);
    }
    return v;
  };

  sq::model::ParamStore analytic = params.zeros_like();
  eval(params, &analytic);
  std::vector<real> flat = params.flatten();
  std::vector<real> aflat = analytic.flatten();

  std::uniform_int_distribution<size_t> pick(0, flat.size() - 1);
  const real h = 1e-4;
  *worst = 0.0;
  sq::model::ParamStore probe = params;
  for (int k = 0; k < n_coords; ++k) {
    const size_t i = pick(rng);
    std::vector<real> t = flat;
    t[i] = flat[i] + h;
    probe.unflatten(t);
    const real fp = eval(probe, nullptr);
    t[i] = flat[i] - h;
    probe.unflatten(t);
    const real fm = eval(probe, nullptr);
    const real numeric = (fp - fm) / (2.0 * h);
    const real rel = std::abs(aflat[i] - numeric) /
                     std::max({std::abs(aflat[i]), std::abs(numeric), real(1e-6)});
    *worst = std::max(*worst, rel);
  }
  return *worst < tolerance;
}

int cmd_gradcheck(const GlobalOpts& g) {
  namespace d = sq::diff;
  using V = d::Var;
  using VV = const std::vector<d::Var>&;
  const uint64_t seed = g.resolved_seed();

  // A constant mixing mask makes reductions sensitive to every entry.
  auto mask = [](d::Graph& gr, int r, int c, uint64_t s) {
    d::Tensor m(r, c);
    sq::Rng rng(s);
    std::uniform_real_distribution<real> u(0.5, 1.5);
    for (real& v : m.v) v = u(rng);
    return gr.constant(std::move(m));
  };

  std::vector<CheckCase> cases = {
      {"op/add", {{3, 4}, {3, 4}}, [](d::Graph& gr, VV l) { return gr.sum_all(gr.add(l[0], l[1])); }, 1e-3, nullptr},
      {"op/sub", {{3, 4}, {3, 4}}, [](d::Graph& gr, VV l) { return gr.sum_all(gr.sub(l[0], l[1])); }, 1e-3, nullptr},
      {"op/mul", {{3, 4}, {3, 4}}, [](d::Graph& gr, VV l) { return gr.sum_all(gr.mul(l[0], l[1])); }, 1e-3, nullptr},
      {"op/scale", {{3, 4}}, [](d::Graph& gr, VV l) { return gr.sum_all(gr.scale(l[0], -1.7)); }, 1e-3, nullptr},
      {"op/tanh", {{3, 4}}, [&](d::Graph& gr, VV l) { return gr.sum_all(gr.mul(gr.tanh_(l[0]), mask(gr, 3, 4, 11))); }, 1e-3, nullptr},
      {"op/sigmoid", {{3, 4}}, [&](d::Graph& gr, VV l) { return gr.sum_all(gr.mul(gr.sigmoid_(l[0]), mask(gr, 3, 4, 12))); }, 1e-3, nullptr},
      {"op/relu", {{3, 4}},
       [&](d::Graph& gr, VV l) { return gr.sum_all(gr.mul(gr.relu_(l[0]), mask(gr, 3, 4, 13))); }, 1e-3,
       [](sq::Rng& rng, size_t) {
         // keep inputs away from the kink so central differences are valid
         std::uniform_real_distribution<real> u(0.05, 0.9);
         return (rng() & 1u) ? u(rng) : -u(rng);
       }},
      {"op/sqrt_eps", {{3, 4}},
       [&](d::Graph& gr, VV l) {
         return gr.sum_all(gr.mul(gr.sqrt_eps(gr.mul(l[0], l[0]), 1e-8), mask(gr, 3, 4, 14)));
       }, 1e-3,
       [](sq::Rng& rng, size_t) {
         std::uniform_real_distribution<real> u(0.2, 0.9);
         return u(rng);
       }},
      {"op/add_bias", {{3, 4}, {1, 4}}, [](d::Graph& gr, VV l) { return gr.sum_all(gr.add_bias(l[0], l[1])); }, 1e-3, nullptr},
      {"op/mul_row", {{3, 4}, {1, 4}}, [](d::Graph& gr, VV l) { return gr.sum_all(gr.mul_row(l[0], l[1])); }, 1e-3, nullptr},
      {"op/matmul", {{3, 4}, {4, 2}}, [](d::Graph& gr, VV l) { return gr.sum_all(gr.matmul(l[0], l[1])); }, 1e-3, nullptr},
      {"op/matmul_tt", {{4, 3}, {2, 4}},
       [](d::Graph& gr, VV l) { return gr.sum_all(gr.matmul(l[0], l[1], true, true)); }, 1e-3, nullptr},
      {"op/conv1d", {{6, 4}, {4, 12}, {1, 4}},
       [&](d::Graph& gr, VV l) {
         return gr.sum_all(gr.mul(gr.conv1d(l[0], l[1], l[2], 3, 2), mask(gr, 6, 4, 15)));
       }, 1e-3, nullptr},
      {"op/slice_concat", {{3, 6}},
       [&](d::Graph& gr, VV l) {
         auto a = gr.slice_cols(l[0], 0, 2);
         auto b = gr.slice_cols(l[0], 2, 4);
         return gr.sum_all(gr.mul(gr.concat_cols({b, a}), mask(gr, 3, 6, 16)));
       }, 1e-3, nullptr},
      {"op/row_stack", {{4, 3}},
       [&](d::Graph& gr, VV l) {
         std::vector<V> rows = {gr.row(l[0], 2), gr.row(l[0], 0), gr.row(l[0], 2)};
         return gr.sum_all(gr.mul(gr.stack_rows(rows), mask(gr, 3, 3, 17)));
       }, 1e-3, nullptr},
      {"op/reverse_rows", {{4, 3}},
       [&](d::Graph& gr, VV l) { return gr.sum_all(gr.mul(gr.reverse_rows(l[0]), mask(gr, 4, 3, 18))); }, 1e-3, nullptr},
      {"op/mean_rows", {{4, 3}},
       [&](d::Graph& gr, VV l) { return gr.sum_all(gr.mul(gr.mean_rows(l[0]), mask(gr, 1, 3, 19))); }, 1e-3, nullptr},
      {"op/mean_all", {{4, 3}}, [](d::Graph& gr, VV l) { return gr.mean_all(l[0]); }, 1e-3, nullptr},
      {"op/log_softmax_rows", {{3, 5}},
       [&](d::Graph& gr, VV l) {
         return gr.sum_all(gr.mul(gr.log_softmax_rows(l[0]), mask(gr, 3, 5, 20)));
       }, 1e-3, nullptr},
      {"op/softmax_col", {{5, 1}},
       [&](d::Graph& gr, VV l) { return gr.sum_all(gr.mul(gr.softmax_col(l[0]), mask(gr, 5, 1, 21))); }, 1e-3, nullptr},
      {"loss/ctc", {{5, 5}},
       [](d::Graph& gr, VV l) { return gr.ctc_loss(l[0], {1, 2, 1}, 4); }, 1e-3, nullptr},
      {"loss/ctc_empty_label", {{4, 4}},
       [](d::Graph& gr, VV l) { return gr.ctc_loss(l[0], {}, 3); }, 1e-3, nullptr},
      {"loss/focal", {{4, 6}},
       [](d::Graph& gr, VV l) { return gr.focal_loss(l[0], {0, 3, 5, 2}, 10.0); }, 1e-3, nullptr},
      {"loss/focal_gamma0", {{4, 6}},
       [](d::Graph& gr, VV l) { return gr.focal_loss(l[0], {0, 3, 5, 2}, 0.0); }, 1e-3, nullptr},
      {"loss/ccc_masked", {{6, 1}},
       [](d::Graph& gr, VV l) {
         return sq::loss::eis_loss(gr, l[0],
                                   {sq::seqm::kMaskedSentinel, 2.0, 3.1, sq::seqm::kMaskedSentinel,
                                    0.5, 1.0});
       }, 1e-3, nullptr},
      {"loss/combined", {{3, 9}, {3, 1}, {6, 6}, {3, 2}},
       [](d::Graph& gr, VV l) {
         auto l_e = gr.focal_loss(l[0], {1, 4, 8}, 10.0);
         auto l_eis = sq::loss::eis_loss(gr, l[1], {1.5, sq::seqm::kMaskedSentinel, 3.5});
         auto l_p = gr.ctc_loss(l[2], {2, 4, 1}, 5);
         auto l_g = gr.focal_loss(l[3], {0, 1, 1}, 10.0);
         return sq::loss::combined_loss(gr, l_e, l_eis, l_p, l_g);
       }, 1e-3, nullptr},
  };

  bool ok = true;
  for (const auto& c : cases) {
    const auto rep = run_case(c, sq::derive_seed(seed, "gradcheck/" + c.name));
    const bool pass = rep.max_rel_err < c.tolerance;
    ok = ok && pass;
    std::printf("%s %-22s rel_err %.3e (%d coords)\n", pass ? "PASS" : "FAIL", c.name.c_str(),
                rep.max_rel_err, rep.checked);
  }

  real worst = 0.0;
  const bool model_ok = run_model_case(seed, 100, 1e-2, &worst);
  ok = ok && model_ok;
  std::printf("%s %-22s rel_err %.3e (100 sampled coords)\n", model_ok ? "PASS" : "FAIL",
              "model/end_to_end", worst);
  std::printf("%s\n", ok ? "gradcheck: all suites pass" : "gradcheck: FAILURES above");
  return ok ? 0 : 1;
}

// ---------------------------------------------------------------------------
// main
// ---------------------------------------------------------------------------

int run_cli(int argc, char** argv) {
  CLI::App app{"speecheq: multitask speech emotion recognition at desk scale"};
  app.require_subcommand(1);
  // global flags (--seed, --jobs, ...) may appear after the subcommand name
  app.fallthrough();

  GlobalOpts g;
  g.seed_opt = app.add_option("--seed", g.seed,
                              "global seed; every random component derives its own stream [1]");
  g.jobs_opt = app.add_option("--jobs", g.jobs, "worker thread bound for data-parallel stages [1]");
  app.add_option("--config", g.config_path,
                 "JSON config file (sections: model, train, mel, augment_policy); "
                 "flags override file values")
      ->envname("SPEECHEQ_CONFIG");
  app.add_flag("--verbose", g.verbose, "echo per-step training stats to stdout");

  auto* unify = app.add_subcommand("unify", "merge per-dataset manifests into one unified manifest");
  UnifyOpts uo;
  unify->add_option("--manifest", uo.manifests, "raw per-dataset manifest TSV (repeatable)")->required();
  unify->add_option("--scheme", uo.schemes, "label scheme JSON, one per manifest (repeatable)")->required();
  unify->add_option("--out", uo.out, "output unified manifest path")->required();

  auto* synth = app.add_subcommand("synth", "generate the synthetic desk-scale corpus");
  SynthOpts so;
  synth->add_option("--out", so.out, "output corpus directory")->required();
  synth->add_option("--items", so.items, "utterances per category/level cell [10]");
  synth->add_option("--duration", so.duration, "utterance length in seconds [0.5]");
  synth->add_option("--test_fraction", so.test_fraction, "held-out fraction per cell [0.2]");
  synth->add_flag("--uniform", so.uniform, "one medium level per category instead of three levels");

  auto* featurize = app.add_subcommand("featurize", "precompute log-mel feature caches");
  FeaturizeOpts fo;
  featurize->add_option("--manifest", fo.manifest, "unified manifest TSV")->required();
  featurize->add_option("--out", fo.out, "feature cache directory")->required();
  featurize->add_option("--split", fo.split, "train | test | all [all]");
  MelFlags fo_mel;
  fo_mel.wire(featurize);

  auto* augment = app.add_subcommand("augment", "write an augmented copy of a corpus");
  AugmentOpts ao;
  augment->add_option("--manifest", ao.manifest, "unified manifest TSV")->required();
  augment->add_option("--out", ao.out, "output corpus directory")->required();
  augment->add_option("--split", ao.split, "train | test | all [all]");
  augment->add_option("--copies", ao.copies, "augmented copies per utterance [1]");
  PolicyFlags ao_policy;
  ao_policy.wire(augment);

  auto* train = app.add_subcommand("train", "run the multitask training loop");
  TrainOpts to;
  train->add_option("--manifest", to.manifest, "unified manifest TSV")->required();
  train->add_option("--features", to.features_dir, "feature cache directory (else computed from WAVs)");
  train->add_option("--out", to.out, "run directory for checkpoints and metrics.jsonl")->required();
  train->add_option("--resume", to.resume, "checkpoint to resume from");
  train->add_option("--split", to.split, "train | test | all [train]");
  train->add_option("--initials", to.tok.initials, "pinyin initials inventory (mandarin tokenizer)");
  train->add_option("--finals", to.tok.finals, "pinyin finals inventory (mandarin tokenizer)");
  train->add_option("--phones", to.tok.phones, "phone inventory (english tokenizer)");
  train->add_option("--dict", to.tok.dict, "pronunciation dictionary (english tokenizer)");
  ModelFlags to_model;
  to_model.wire(train);
  TrainFlags to_train;
  to_train.wire(train);
  MelFlags to_mel;
  to_mel.wire(train, "--mel_");
  PolicyFlags to_policy;
  to_policy.wire(train);

  auto* eval_cmd = app.add_subcommand("eval", "score a checkpoint against a manifest");
  EvalOpts eo;
  eval_cmd->add_option("--manifest", eo.manifest, "unified manifest TSV")->required();
  eval_cmd->add_option("--checkpoint", eo.checkpoint, "trained checkpoint")->required();
  eval_cmd->add_option("--features", eo.features_dir, "feature cache directory");
  eval_cmd->add_option("--out", eo.out, "report output directory")->required();
  eval_cmd->add_option("--split", eo.split, "train | test | all [test]");
  eval_cmd->add_option("--kfold", eo.kfold, "report per-fold metrics over k stratified folds");
  eval_cmd->add_option("--ratio", eo.ratio, "evaluate a stratified random test fraction");
  MelFlags eo_mel;
  eo_mel.wire(eval_cmd);

  auto* infer_cmd = app.add_subcommand("infer", "per-utterance category + intensity output");
  InferOpts io;
  infer_cmd->add_option("--checkpoint", io.checkpoint, "trained checkpoint")->required();
  infer_cmd->add_option("--wav", io.wavs, "input WAV file (repeatable)");
  infer_cmd->add_option("--manifest", io.manifest, "unified manifest TSV");
  infer_cmd->add_option("--features", io.features_dir, "feature cache directory (manifest mode)");
  infer_cmd->add_option("--split", io.split, "train | test | all [all]");
  infer_cmd->add_option("--out", io.out, "also write the output lines to this file");
  MelFlags io_mel;
  io_mel.wire(infer_cmd);

  auto* gradcheck =
      app.add_subcommand("gradcheck", "finite-difference sweep over ops, losses, and the model");
  (void)gradcheck;

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error\tcli\t" << one_line(e.what()) << "\n";
    return 2;
  }

  g.load_file();
  if (*unify) return cmd_unify(g, uo);
  if (*synth) return cmd_synth(g, so);
  if (*featurize) return cmd_featurize(g, fo, fo_mel);
  if (*augment) return cmd_augment(g, ao, ao_policy);
  if (*train) return cmd_train(g, to, to_model, to_train, to_mel, to_policy);
  if (*eval_cmd) return cmd_eval(g, eo, eo_mel);
  if (*infer_cmd) return cmd_infer(g, io, io_mel);
  if (*gradcheck) return cmd_gradcheck(g);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run_cli(argc, argv);
  } catch (const sq::Error& e) {
    std::cerr << "error\t" << e.kind() << "\t" << one_line(e.msg()) << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error\tinternal\t" << one_line(e.what()) << "\n";
    return 1;
  }
}
