#pragma once

// Synthetic tone corpus: each phoneme is a pure tone, a word is the phonemes'
// tones played back to back with short gaps. A few words are each rendered
// several times with different noise and onset, so a small model can memorize
// them and still be scored on recordings it has not seen.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "ipascribe/corpus.hpp"
#include "ipascribe/dsp.hpp"
#include "ipascribe/ipa.hpp"
#include "ipascribe/pipeline.hpp"
#include "ipascribe/rng.hpp"

namespace ipascribe {

struct SynthConfig {
  std::size_t clips = 120;
  std::size_t words = 10;  // clip i renders word i % words
  std::uint64_t seed = 7;
  std::size_t alphabet = 10;  // first N inventory phonemes
  std::size_t min_length = 2;
  std::size_t max_length = 5;
  int sample_rate = 16000;
  double seconds = 2.0;
  double segment_seconds = 0.24;
  double gap_seconds = 0.06;
  double base_hz = 300.0;
  double step_hz = 250.0;
  double amplitude = 0.5;
  double max_onset_jitter_seconds = 0.05;
  // Uniform background noise. Digital silence sits on the log floor and makes
  // c0 dominate the scalar feature normalization.
  double noise_amplitude = 0.01;
};

struct SynthClip {
  std::string word;
  std::size_t variant = 0;
  PhonemeSeq ipa;
  AudioClip audio;
};

inline double synth_tone_hz(const SynthConfig& cfg, Phoneme p) {
  return cfg.base_hz + cfg.step_hz * static_cast<double>(p.id());
}

/// Renders one take of a word over the noise floor. Segments start after a
/// leading gap plus a per-take jitter; each tone has 5 ms raised-cosine ramps
/// so segment edges do not splatter across the spectrum.
inline AudioClip synth_render(const SynthConfig& cfg, const PhonemeSeq& word, std::size_t variant = 0) {
  const auto n = static_cast<std::size_t>(std::llround(cfg.seconds * cfg.sample_rate));
  const auto seg = static_cast<std::size_t>(std::llround(cfg.segment_seconds * cfg.sample_rate));
  const auto gap = static_cast<std::size_t>(std::llround(cfg.gap_seconds * cfg.sample_rate));
  const auto ramp = static_cast<std::size_t>(cfg.sample_rate / 200);
  const auto jitter = static_cast<std::size_t>(std::llround(cfg.max_onset_jitter_seconds * cfg.sample_rate));
  if (gap + jitter + word.size() * (seg + gap) > n) throw ConfigError("synthetic word does not fit in the clip");
  AudioClip clip{cfg.sample_rate, std::vector<double>(n, 0.0)};
  CounterRng rng(cfg.seed, CounterRng::stream_id("synth-take:" + render_ipa(word) + "#" + std::to_string(variant)));
  std::size_t pos = gap + (jitter ? rng.below(jitter + 1) : 0);
  for (auto& v : clip.samples) v = rng.uniform(-cfg.noise_amplitude, cfg.noise_amplitude);
  for (Phoneme p : word) {
    const double w = 2.0 * std::numbers::pi * synth_tone_hz(cfg, p) / cfg.sample_rate;
    for (std::size_t i = 0; i < seg; ++i) {
      double env = 1.0;
      if (i < ramp) env = 0.5 - 0.5 * std::cos(std::numbers::pi * static_cast<double>(i) / ramp);
      if (seg - 1 - i < ramp) env = 0.5 - 0.5 * std::cos(std::numbers::pi * static_cast<double>(seg - 1 - i) / ramp);
      clip.samples[pos + i] += cfg.amplitude * env * std::sin(w * static_cast<double>(i));
    }
    pos += seg + gap;
  }
  return clip;
}

/// Draws `words` distinct words with no two equal neighbouring phonemes (the
/// decoder would merge them) and renders `clips` takes round-robin.
inline std::vector<SynthClip> synth_corpus(const SynthConfig& cfg) {
  if (cfg.alphabet < 2 || cfg.alphabet > kPhonemeCount) throw ConfigError("synthetic alphabet must be in [2, 37]");
  if (cfg.min_length < 1 || cfg.min_length > cfg.max_length) throw ConfigError("bad synthetic word lengths");
  if (cfg.words < 1) throw ConfigError("synthetic corpus needs at least one word");
  CounterRng rng(cfg.seed, CounterRng::stream_id("synth"));
  std::vector<PhonemeSeq> words;
  std::size_t guard = 0;
  while (words.size() < cfg.words) {
    if (++guard > cfg.words * 1000) throw ConfigError("cannot draw enough distinct synthetic words");
    const std::size_t len = cfg.min_length + rng.below(cfg.max_length - cfg.min_length + 1);
    PhonemeSeq word;
    while (word.size() < len) {
      Phoneme p(static_cast<std::uint8_t>(rng.below(cfg.alphabet)));
      if (!word.empty() && word.back() == p) continue;
      word.push_back(p);
    }
    if (std::find(words.begin(), words.end(), word) == words.end()) words.push_back(std::move(word));
  }
  std::vector<SynthClip> out;
  for (std::size_t i = 0; i < cfg.clips; ++i) {
    const std::size_t w = i % cfg.words, take = i / cfg.words;
    out.push_back({"synth" + std::to_string(w), take, words[w], synth_render(cfg, words[w], take)});
  }
  return out;
}

/// Lingua Libre style file name so synthetic samples pass the corpus filters.
inline std::string synth_filename(const SynthClip& c) {
  return "LL-Q0 (syn)-tone-" + c.word + "-" + std::to_string(c.variant) + ".wav";
}

inline SampleRecord synth_sample(const SynthClip& c) {
  return {c.word, synth_filename(c), c.ipa, "tone"};
}

/// Featurized clips keyed by file name, ready for train_run.
inline std::vector<FeatureSample> synth_feature_samples(const std::vector<SynthClip>& clips) {
  std::vector<FeatureSample> out;
  out.reserve(clips.size());
  for (const auto& c : clips) out.push_back({synth_filename(c), featurize(c.audio), c.ipa});
  return out;
}

}  // namespace ipascribe
