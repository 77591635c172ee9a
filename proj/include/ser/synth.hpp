#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ser/corpus.hpp"
#include "ser/signal.hpp"

namespace ser {

inline constexpr std::size_t kMaxSynthClasses = 5;
inline constexpr std::size_t kMaxSynthLanguages = 3;

struct SynthConfig {
  std::size_t classes = 2;               // K ≤ 5
  std::size_t languages = 1;             // L ≤ 3
  std::size_t speakers_per_language = 4; // S
  std::size_t utterances_per_cell = 10;  // U, per (class, language, speaker)
  std::uint64_t seed = 0;
  double min_seconds = 1.0;
  double max_seconds = 3.0;
  std::size_t jobs = 0;
};

// Class c maps to this emotion; class 0 is the low, quiet one and class 3 the
// high, loud, tremolo one.
Emotion synth_class_emotion(std::size_t cls);
std::string synth_language_name(std::size_t lang);

struct SynthUtterance {
  std::size_t cls = 0;
  std::size_t language = 0;
  std::size_t speaker = 0;  // global speaker index
  double f0_hz = 0.0;       // base F0 after speaker and utterance offsets
  double seconds = 0.0;
  Waveform audio;
};

// Deterministic given (cls, language, speaker, utterance seed).
SynthUtterance synthesize_utterance(std::size_t cls, std::size_t language, std::size_t speaker,
                                    std::uint64_t corpus_seed, std::uint64_t utterance_seed,
                                    double min_seconds = 1.0, double max_seconds = 3.0);

// Writes <out_dir>/wav/*.wav and <out_dir>/manifest.csv, returns the records.
std::vector<UtteranceRecord> generate_synthetic_corpus(const SynthConfig& cfg,
                                                       const std::filesystem::path& out_dir);

}  // namespace ser
