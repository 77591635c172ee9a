#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "ser/signal.hpp"

namespace ser {

// LSTM input geometry: 120 frames of 13 cepstra (C0 included).
inline constexpr std::size_t kMfccFrames = 120;
inline constexpr std::size_t kNumCeps = 13;

inline constexpr std::size_t kNumMelBins = 23;
inline constexpr std::size_t kMfccFftSize = 512;
inline constexpr double kMelLowHz = 20.0;
inline constexpr double kMelHighHz = 7600.0;
inline constexpr double kLogEnergyFloor = 1e-10;

// Utterance-level vector: 16 LLDs and their deltas, 12 functionals each.
inline constexpr std::size_t kNumLlds = 16;
inline constexpr std::size_t kNumFunctionals = 12;
inline constexpr std::size_t kIs09Dim = kNumLlds * 2 * kNumFunctionals;
static_assert(kIs09Dim == 384);

inline constexpr double kMinF0Hz = 50.0;
inline constexpr double kMaxF0Hz = 500.0;
inline constexpr double kF0NormHz = 500.0;
inline constexpr double kVoicingThreshold = 0.3;
inline constexpr double kHnrFloorDb = -20.0;
inline constexpr double kHnrCeilDb = 40.0;
// Pitch and HNR are measured on a 50 ms window centred on each 25 ms frame so
// that a 50 Hz period still overlaps itself over most of the window.
inline constexpr std::size_t kPitchWindow = 800;

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct MfccSequence {
  Matrix matrix = Matrix::Zero(kMfccFrames, kNumCeps);
  std::size_t valid_frames = 0;
};

// HTK-scale triangular filters between low_hz and high_hz, evaluated on the
// bins of an fft_size-point power spectrum.
class MelFilterbank {
 public:
  MelFilterbank(std::size_t num_bins = kNumMelBins,
                std::size_t fft_size = kMfccFftSize,
                double sample_rate = kSampleRate, double low_hz = kMelLowHz,
                double high_hz = kMelHighHz);

  std::size_t num_bins() const { return filters_.size(); }
  double center_hz(std::size_t bin) const { return centers_hz_[bin]; }
  double lower_edge_hz(std::size_t bin) const { return edges_hz_[bin]; }
  double upper_edge_hz(std::size_t bin) const { return edges_hz_[bin + 2]; }
  // Dense weight over the fft_size/2 + 1 spectrum bins.
  std::vector<double> weights(std::size_t bin) const;

  std::vector<double> apply(std::span<const double> power) const;

  static double hz_to_mel(double hz);
  static double mel_to_hz(double mel);

 private:
  struct Filter {
    std::size_t first = 0;
    std::vector<double> w;
  };
  std::size_t spectrum_len_;
  std::vector<Filter> filters_;
  std::vector<double> centers_hz_;
  std::vector<double> edges_hz_;
};

// Orthonormal DCT-II rows 0..num_ceps-1 over num_inputs points.
Matrix dct_matrix(std::size_t num_ceps, std::size_t num_inputs);

// Reusable MFCC front end (framing → FFT → mel → log → DCT).
class MfccExtractor {
 public:
  MfccExtractor();

  // Log mel energies of an already framed/windowed frame.
  std::vector<double> log_mel(std::span<const double> frame) const;
  // One row per frame, 13 columns; throws TooShort below one frame.
  Matrix frames(const Waveform& w) const;
  MfccSequence sequence(const Waveform& w) const;

  const MelFilterbank& filterbank() const { return mel_; }

 private:
  FrameOptions opts_;
  Fft fft_;
  MelFilterbank mel_;
  Matrix dct_;
};

Matrix pad_or_clip(const Matrix& seq, std::size_t target = kMfccFrames);
MfccSequence mfcc_sequence(const Waveform& w);

// ---- low-level descriptors ------------------------------------------------

double zcr(std::span<const double> frame);
double rms_energy(std::span<const double> frame);

struct AutocorrPeak {
  bool voiced = false;
  double lag = 0.0;   // refined by parabolic interpolation
  double r = 0.0;     // normalized autocorrelation at the integer peak lag
};

// Normalized autocorrelation r(τ) = Σ x[n]x[n+τ] / sqrt(Σ x[n]² · Σ x[n+τ]²)
// over the overlapping part, searched for the lag range of 50–500 Hz.
AutocorrPeak autocorr_peak(std::span<const double> frame, double rate);

// F0 / 500 clamped to [0, 1]; 0 for unvoiced frames.
double pitch_f0(std::span<const double> frame, double rate);
double hnr_from_peak(double r);
// HNR in dB, clamped to [−20, 40]; −20 for unvoiced frames.
double hnr(std::span<const double> frame, double rate);

std::vector<double> delta_contour(std::span<const double> contour);

enum class Lld : std::size_t {
  Zcr = 0,
  RmsEnergy,
  F0Norm,
  Hnr,
  Mfcc1,  // Mfcc1 .. Mfcc12 follow contiguously
};

struct LldContours {
  std::array<std::vector<double>, kNumLlds> contours;
  std::size_t length() const { return contours[0].size(); }
  const std::vector<double>& operator[](Lld l) const {
    return contours[static_cast<std::size_t>(l)];
  }
};

const std::string& lld_name(std::size_t index);

LldContours lld_contours(const Waveform& w);

struct FunctionalSet {
  double mean = 0, stddev = 0, kurtosis = 0, skewness = 0, min = 0, max = 0,
         rel_pos_max = 0, rel_pos_min = 0, range = 0, linreg_offset = 0,
         linreg_slope = 0, linreg_mse = 0;

  std::array<double, kNumFunctionals> to_array() const;
};

const std::string& functional_name(std::size_t index);

FunctionalSet functionals(std::span<const double> contour);

struct Is09Vector {
  std::array<double, kIs09Dim> values{};
};

// Index layout: ((delta ? 16 : 0) + lld) * 12 + functional.
std::size_t is09_index(std::size_t lld, bool delta, std::size_t functional);
std::string is09_feature_name(std::size_t index);

Is09Vector is09_from_contours(const LldContours& llds);
Is09Vector is09_vector(const Waveform& w);

}  // namespace ser
