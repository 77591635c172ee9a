#include "ser/synth.hpp"

#include <array>
#include <cmath>
#include <complex>
#include <cstdio>
#include <numbers>

#include "ser/error.hpp"
#include "ser/parallel.hpp"
#include "ser/rng.hpp"

namespace ser {

namespace {

struct ClassVoice {
  double f0_hz;
  double amplitude;
  double tremolo_hz, tremolo_depth;
  double vibrato_hz, vibrato_depth;  // depth as a fraction of F0
  double glide;                      // F0 change over the utterance, fraction
  double decay;                      // amplitude decay per second
};

// c0 sad, c1 neutral, c2 happy, c3 anger, c4 fear.
constexpr std::array<ClassVoice, kMaxSynthClasses> kClasses = {{
    {120.0, 0.10, 0.0, 0.0, 0.0, 0.0, -0.05, 0.35},
    {173.0, 0.16, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0},
    {227.0, 0.24, 0.0, 0.0, 0.0, 0.0, 0.10, 0.0},
    {280.0, 0.40, 7.0, 0.6, 0.0, 0.0, 0.0, 0.0},
    {333.0, 0.30, 0.0, 0.0, 9.0, 0.04, 0.0, 0.0},
}};

struct LanguageColour {
  std::array<double, 3> formant_hz;
  std::array<double, 3> bandwidth_hz;
  double tilt_per_khz;  // exponential roll-off of harmonic amplitude
};

constexpr std::array<LanguageColour, kMaxSynthLanguages> kLanguages = {{
    {{500.0, 1500.0, 2500.0}, {120.0, 160.0, 200.0}, 0.45},
    {{850.0, 1200.0, 2900.0}, {140.0, 160.0, 220.0}, 1.10},
    {{300.0, 2300.0, 3100.0}, {100.0, 180.0, 220.0}, 0.15},
}};

constexpr std::array<Emotion, kMaxSynthClasses> kClassEmotions = {
    Emotion::Sad, Emotion::Neutral, Emotion::Happy, Emotion::Anger, Emotion::Fear};

double envelope_gain(const LanguageColour& lang, double hz) {
  double g = 0.15;
  for (std::size_t k = 0; k < 3; ++k) {
    const double z = (hz - lang.formant_hz[k]) / lang.bandwidth_hz[k];
    g += std::exp(-0.5 * z * z);
  }
  return g * std::exp(-lang.tilt_per_khz * hz / 1000.0);
}

}  // namespace

Emotion synth_class_emotion(std::size_t cls) { return kClassEmotions.at(cls); }

std::string synth_language_name(std::size_t lang) {
  static const std::array<std::string, kMaxSynthLanguages> names = {"synthA", "synthB", "synthC"};
  return names.at(lang);
}

SynthUtterance synthesize_utterance(std::size_t cls, std::size_t language, std::size_t speaker,
                                    std::uint64_t corpus_seed, std::uint64_t utterance_seed,
                                    double min_seconds, double max_seconds) {
  if (cls >= kMaxSynthClasses || language >= kMaxSynthLanguages)
    throw Error(Errc::Config, "synthetic class/language out of range");
  const ClassVoice& voice = kClasses[cls];
  const LanguageColour& colour = kLanguages[language];

  Rng speaker_rng(derive_seed(corpus_seed, 0x5000000 + speaker));
  const double speaker_offset = speaker_rng.uniform(-6.0, 6.0);
  const double speaker_gain = speaker_rng.uniform(0.9, 1.1);

  Rng rng(utterance_seed);
  SynthUtterance out;
  out.cls = cls;
  out.language = language;
  out.speaker = speaker;
  out.f0_hz = voice.f0_hz + speaker_offset + rng.uniform(-4.0, 4.0);
  out.seconds = rng.uniform(min_seconds, max_seconds);
  const double amplitude = voice.amplitude * speaker_gain * rng.uniform(0.9, 1.1);
  const double trem_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double vib_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);

  const double rate = kSampleRate;
  const auto n = static_cast<std::size_t>(out.seconds * rate);
  const double max_f0 = out.f0_hz * (1.0 + std::abs(voice.glide) + voice.vibrato_depth);
  const auto harmonics = static_cast<std::size_t>(std::floor(7000.0 / max_f0));

  out.audio.sample_rate_hz = kSampleRate;
  out.audio.samples.resize(n);
  std::vector<double> gains(harmonics + 1, 0.0);
  double phase = 0.0;
  constexpr std::size_t kBlock = 64;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / rate;
    const double progress = static_cast<double>(i) / static_cast<double>(n);
    double f0 = out.f0_hz * (1.0 + voice.glide * progress);
    if (voice.vibrato_depth > 0.0)
      f0 *= 1.0 + voice.vibrato_depth *
                      std::sin(2.0 * std::numbers::pi * voice.vibrato_hz * t + vib_phase);
    if (i % kBlock == 0) {
      double norm = 0.0;
      for (std::size_t h = 1; h <= harmonics; ++h) {
        gains[h] = envelope_gain(colour, f0 * static_cast<double>(h));
        norm += gains[h] * gains[h];
      }
      norm = std::sqrt(norm);
      for (std::size_t h = 1; h <= harmonics; ++h) gains[h] /= norm;
    }
    phase += 2.0 * std::numbers::pi * f0 / rate;
    if (phase > 2.0 * std::numbers::pi) phase -= 2.0 * std::numbers::pi;
    const std::complex<double> step(std::cos(phase), std::sin(phase));
    std::complex<double> z = step;
    double s = 0.0;
    for (std::size_t h = 1; h <= harmonics; ++h) {
      s += gains[h] * z.imag();
      z *= step;
    }
    double env = amplitude * std::exp(-voice.decay * t);
    if (voice.tremolo_depth > 0.0)
      env *= 1.0 - voice.tremolo_depth * 0.5 *
                       (1.0 + std::sin(2.0 * std::numbers::pi * voice.tremolo_hz * t + trem_phase));
    const double ramp = std::min({1.0, t / 0.02, (static_cast<double>(n - i)) / (0.02 * rate)});
    s = env * ramp * (s + 0.03 * rng.normal());
    out.audio.samples[i] = std::clamp(s, -1.0, 1.0);
  }
  return out;
}

std::vector<UtteranceRecord> generate_synthetic_corpus(const SynthConfig& cfg,
                                                       const std::filesystem::path& out_dir) {
  if (cfg.classes == 0 || cfg.classes > kMaxSynthClasses)
    throw Error(Errc::Config, "synthetic classes must be in 1..5");
  if (cfg.languages == 0 || cfg.languages > kMaxSynthLanguages)
    throw Error(Errc::Config, "synthetic languages must be in 1..3");
  if (cfg.speakers_per_language == 0 || cfg.utterances_per_cell == 0)
    throw Error(Errc::Config, "synthetic corpus would be empty");

  struct Job {
    std::size_t cls, lang, spk_local, spk, utt;
  };
  std::vector<Job> jobs;
  for (std::size_t l = 0; l < cfg.languages; ++l)
    for (std::size_t s = 0; s < cfg.speakers_per_language; ++s)
      for (std::size_t c = 0; c < cfg.classes; ++c)
        for (std::size_t u = 0; u < cfg.utterances_per_cell; ++u)
          jobs.push_back({c, l, s, l * cfg.speakers_per_language + s, u});

  const auto wav_dir = out_dir / "wav";
  std::filesystem::create_directories(wav_dir);
  std::vector<UtteranceRecord> records(jobs.size());
  parallel_for(jobs.size(), cfg.jobs ? cfg.jobs : default_jobs(), [&](std::size_t i) {
    const Job& j = jobs[i];
    const std::string lang = synth_language_name(j.lang);
    const std::string emotion = to_string(synth_class_emotion(j.cls));
    char name[128];
    std::snprintf(name, sizeof name, "%s_s%02zu_%s_%03zu", lang.c_str(), j.spk_local,
                  emotion.c_str(), j.utt);
    const auto utt = synthesize_utterance(j.cls, j.lang, j.spk, cfg.seed, derive_seed(cfg.seed, i),
                                          cfg.min_seconds, cfg.max_seconds);
    const auto path = wav_dir / (std::string(name) + ".wav");
    write_wav(path, utt.audio);
    UtteranceRecord& r = records[i];
    r.id = name;
    r.audio_path = path;
    r.speaker_id = lang + "_spk" + std::to_string(j.spk_local);
    r.language = lang;
    r.raw_label = emotion;
    r.corpus = "synthetic";
    r.emotion = synth_class_emotion(j.cls);
  });
  write_manifest_csv(out_dir / "manifest.csv", records);
  return records;
}

}  // namespace ser
