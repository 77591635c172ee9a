#include "ser/features.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "ser/error.hpp"

namespace ser {

// ---- mel filterbank -------------------------------------------------------

double MelFilterbank::hz_to_mel(double hz) { return 1127.0 * std::log1p(hz / 700.0); }
double MelFilterbank::mel_to_hz(double mel) { return 700.0 * std::expm1(mel / 1127.0); }

MelFilterbank::MelFilterbank(std::size_t num_bins, std::size_t fft_size,
                             double sample_rate, double low_hz, double high_hz)
    : spectrum_len_(fft_size / 2 + 1) {
  const double mel_low = hz_to_mel(low_hz);
  const double mel_high = hz_to_mel(high_hz);
  const double step = (mel_high - mel_low) / static_cast<double>(num_bins + 1);
  for (std::size_t i = 0; i < num_bins + 2; ++i)
    edges_hz_.push_back(mel_to_hz(mel_low + step * static_cast<double>(i)));

  filters_.resize(num_bins);
  centers_hz_.resize(num_bins);
  for (std::size_t m = 0; m < num_bins; ++m) {
    const double left = mel_low + step * static_cast<double>(m);
    const double center = left + step;
    const double right = center + step;
    centers_hz_[m] = mel_to_hz(center);
    auto& f = filters_[m];
    bool started = false;
    for (std::size_t k = 0; k < spectrum_len_; ++k) {
      const double mel = hz_to_mel(sample_rate * static_cast<double>(k) /
                                   static_cast<double>(fft_size));
      if (mel <= left || mel >= right) {
        if (started) break;
        continue;
      }
      if (!started) {
        f.first = k;
        started = true;
      }
      f.w.push_back(mel <= center ? (mel - left) / (center - left)
                                  : (right - mel) / (right - center));
    }
  }
}

std::vector<double> MelFilterbank::weights(std::size_t bin) const {
  std::vector<double> out(spectrum_len_, 0.0);
  const auto& f = filters_.at(bin);
  for (std::size_t j = 0; j < f.w.size(); ++j) out[f.first + j] = f.w[j];
  return out;
}

std::vector<double> MelFilterbank::apply(std::span<const double> power) const {
  if (power.size() != spectrum_len_)
    throw Error(Errc::ShapeMismatch, "power spectrum length mismatch");
  std::vector<double> out(filters_.size());
  for (std::size_t m = 0; m < filters_.size(); ++m) {
    const auto& f = filters_[m];
    double acc = 0.0;
    for (std::size_t j = 0; j < f.w.size(); ++j) acc += f.w[j] * power[f.first + j];
    out[m] = acc;
  }
  return out;
}

Matrix dct_matrix(std::size_t num_ceps, std::size_t num_inputs) {
  Matrix d(num_ceps, num_inputs);
  const double n = static_cast<double>(num_inputs);
  for (std::size_t k = 0; k < num_ceps; ++k) {
    const double scale = k == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
    for (std::size_t j = 0; j < num_inputs; ++j)
      d(k, j) = scale * std::cos(std::numbers::pi * static_cast<double>(k) *
                                 (static_cast<double>(j) + 0.5) / n);
  }
  return d;
}

// ---- MFCC -------------------------------------------------------------------

MfccExtractor::MfccExtractor()
    : fft_(kMfccFftSize), mel_(), dct_(dct_matrix(kNumCeps, kNumMelBins)) {}

std::vector<double> MfccExtractor::log_mel(std::span<const double> frame) const {
  auto energies = mel_.apply(power_spectrum(frame, fft_));
  for (double& e : energies) e = std::log(std::max(e, kLogEnergyFloor));
  return energies;
}

Matrix MfccExtractor::frames(const Waveform& w) const {
  const FrameSet fs = frame_signal(w, opts_);
  Matrix out(fs.frames.size(), kNumCeps);
  for (std::size_t f = 0; f < fs.frames.size(); ++f) {
    const auto lm = log_mel(fs.frames[f]);
    const Eigen::Map<const Vector> v(lm.data(), static_cast<Eigen::Index>(lm.size()));
    out.row(static_cast<Eigen::Index>(f)) = (dct_ * v).transpose();
  }
  return out;
}

MfccSequence MfccExtractor::sequence(const Waveform& w) const {
  const Matrix all = frames(w);
  MfccSequence seq;
  seq.valid_frames = std::min<std::size_t>(static_cast<std::size_t>(all.rows()), kMfccFrames);
  seq.matrix = pad_or_clip(all, kMfccFrames);
  return seq;
}

Matrix pad_or_clip(const Matrix& seq, std::size_t target) {
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(target), seq.cols());
  const auto keep = std::min<Eigen::Index>(seq.rows(), static_cast<Eigen::Index>(target));
  out.topRows(keep) = seq.topRows(keep);
  return out;
}

MfccSequence mfcc_sequence(const Waveform& w) {
  static const MfccExtractor extractor;
  return extractor.sequence(w);
}

// ---- LLDs ---------------------------------------------------------------------

double zcr(std::span<const double> frame) {
  if (frame.size() < 2) throw Error(Errc::TooShort, "zcr needs at least 2 samples");
  std::size_t changes = 0;
  for (std::size_t i = 1; i < frame.size(); ++i)
    if ((frame[i - 1] >= 0.0) != (frame[i] >= 0.0)) ++changes;
  return static_cast<double>(changes) / static_cast<double>(frame.size() - 1);
}

double rms_energy(std::span<const double> frame) {
  if (frame.empty()) return 0.0;
  double acc = 0.0;
  for (double x : frame) acc += x * x;
  return std::sqrt(acc / static_cast<double>(frame.size()));
}

AutocorrPeak autocorr_peak(std::span<const double> frame, double rate) {
  const std::size_t n = frame.size();
  const auto min_lag = static_cast<std::size_t>(std::floor(rate / kMaxF0Hz));
  const auto max_lag = static_cast<std::size_t>(std::ceil(rate / kMinF0Hz));
  if (n < max_lag || min_lag < 2)
    throw Error(Errc::TooShort, "pitch frame of " + std::to_string(n) +
                                    " samples cannot resolve 50 Hz");

  // prefix[i] = Σ_{j<i} x[j]²
  std::vector<double> prefix(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + frame[i] * frame[i];
  if (prefix[n] <= 0.0) return {};

  const Eigen::Map<const Vector> x(frame.data(), static_cast<Eigen::Index>(n));
  const std::size_t lo = min_lag - 1;
  const std::size_t hi = std::min(max_lag + 1, n - 1);
  std::vector<double> r(hi + 1, 0.0);
  for (std::size_t lag = lo; lag <= hi; ++lag) {
    const auto len = static_cast<Eigen::Index>(n - lag);
    const double e0 = prefix[n - lag];
    const double e1 = prefix[n] - prefix[lag];
    const double denom = std::sqrt(e0 * e1);
    if (denom <= 1e-300) continue;
    r[lag] = x.head(len).dot(x.segment(static_cast<Eigen::Index>(lag), len)) / denom;
  }

  // Local maxima inside the lag range. The shortest-lag peak within 10% of the
  // strongest one wins, which rejects period multiples of clean tones.
  double best = -1.0;
  const std::size_t last = std::min(max_lag, hi - 1);
  for (std::size_t lag = min_lag; lag <= last; ++lag)
    if (r[lag] > r[lag - 1] && r[lag] >= r[lag + 1]) best = std::max(best, r[lag]);
  if (best < kVoicingThreshold) return {};

  std::size_t pick = 0;
  for (std::size_t lag = min_lag; lag <= last; ++lag) {
    if (r[lag] > r[lag - 1] && r[lag] >= r[lag + 1] && r[lag] >= 0.9 * best) {
      pick = lag;
      break;
    }
  }
  AutocorrPeak peak;
  peak.voiced = r[pick] >= kVoicingThreshold;
  peak.r = r[pick];
  const double a = r[pick - 1], b = r[pick], c = r[pick + 1];
  const double curv = a - 2.0 * b + c;
  double shift = 0.0;
  if (curv < 0.0) shift = std::clamp(0.5 * (a - c) / curv, -0.5, 0.5);
  peak.lag = static_cast<double>(pick) + shift;
  return peak;
}

double pitch_f0(std::span<const double> frame, double rate) {
  const auto peak = autocorr_peak(frame, rate);
  if (!peak.voiced) return 0.0;
  return std::clamp(rate / peak.lag / kF0NormHz, 0.0, 1.0);
}

double hnr_from_peak(double r) {
  if (r >= 1.0) return kHnrCeilDb;
  if (r <= 0.0) return kHnrFloorDb;
  return std::clamp(10.0 * std::log10(r / (1.0 - r)), kHnrFloorDb, kHnrCeilDb);
}

double hnr(std::span<const double> frame, double rate) {
  const auto peak = autocorr_peak(frame, rate);
  if (!peak.voiced) return kHnrFloorDb;
  return hnr_from_peak(peak.r);
}

std::vector<double> delta_contour(std::span<const double> c) {
  const auto len = static_cast<std::ptrdiff_t>(c.size());
  std::vector<double> d(c.size(), 0.0);
  auto at = [&](std::ptrdiff_t i) { return c[static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(i, 0, len - 1))]; };
  for (std::ptrdiff_t t = 0; t < len; ++t) {
    double acc = 0.0;
    for (std::ptrdiff_t k = 1; k <= 2; ++k)
      acc += static_cast<double>(k) * (at(t + k) - at(t - k));
    d[static_cast<std::size_t>(t)] = acc / 10.0;
  }
  return d;
}

const std::string& lld_name(std::size_t index) {
  static const std::array<std::string, kNumLlds> names = {
      "zcr",    "rms_energy", "f0_norm", "hnr",    "mfcc1",  "mfcc2",
      "mfcc3",  "mfcc4",      "mfcc5",   "mfcc6",  "mfcc7",  "mfcc8",
      "mfcc9",  "mfcc10",     "mfcc11",  "mfcc12"};
  return names.at(index);
}

LldContours lld_contours(const Waveform& w) {
  static const MfccExtractor mfcc;
  const FrameOptions geometry;
  const std::size_t count =
      num_frames(w.samples.size(), geometry.frame_len, geometry.hop);
  if (count < 2) throw Error(Errc::TooShort, "utterance yields fewer than 2 frames");

  const Matrix ceps = mfcc.frames(w);
  LldContours out;
  for (auto& c : out.contours) c.resize(count);

  const double rate = static_cast<double>(w.sample_rate_hz);
  const auto total = static_cast<std::ptrdiff_t>(w.samples.size());
  std::vector<double> pitch_buf(kPitchWindow);
  for (std::size_t f = 0; f < count; ++f) {
    const std::size_t start = f * geometry.hop;
    const std::span<const double> raw(w.samples.data() + start, geometry.frame_len);
    out.contours[0][f] = zcr(raw);
    out.contours[1][f] = rms_energy(raw);

    const auto centre = static_cast<std::ptrdiff_t>(start + geometry.frame_len / 2);
    const std::ptrdiff_t begin = centre - static_cast<std::ptrdiff_t>(kPitchWindow / 2);
    for (std::size_t i = 0; i < kPitchWindow; ++i) {
      const std::ptrdiff_t src = begin + static_cast<std::ptrdiff_t>(i);
      pitch_buf[i] = (src >= 0 && src < total) ? w.samples[static_cast<std::size_t>(src)] : 0.0;
    }
    const auto peak = autocorr_peak(pitch_buf, rate);
    out.contours[2][f] =
        peak.voiced ? std::clamp(rate / peak.lag / kF0NormHz, 0.0, 1.0) : 0.0;
    out.contours[3][f] = peak.voiced ? hnr_from_peak(peak.r) : kHnrFloorDb;

    for (std::size_t k = 1; k < kNumCeps; ++k)
      out.contours[3 + k][f] = ceps(static_cast<Eigen::Index>(f), static_cast<Eigen::Index>(k));
  }
  return out;
}

// ---- functionals --------------------------------------------------------------

std::array<double, kNumFunctionals> FunctionalSet::to_array() const {
  return {mean,        stddev,      kurtosis, skewness,      min,          max,
          rel_pos_max, rel_pos_min, range,    linreg_offset, linreg_slope, linreg_mse};
}

const std::string& functional_name(std::size_t index) {
  static const std::array<std::string, kNumFunctionals> names = {
      "mean",        "stddev",      "kurtosis", "skewness",      "min",          "max",
      "rel_pos_max", "rel_pos_min", "range",    "linreg_offset", "linreg_slope", "linreg_mse"};
  return names.at(index);
}

FunctionalSet functionals(std::span<const double> c) {
  const std::size_t n = c.size();
  if (n < 2) throw Error(Errc::TooShort, "functionals need at least 2 points");
  const double nd = static_cast<double>(n);

  FunctionalSet fs;
  double sum = 0.0;
  std::size_t imax = 0, imin = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sum += c[i];
    if (c[i] > c[imax]) imax = i;
    if (c[i] < c[imin]) imin = i;
  }
  fs.mean = sum / nd;
  double m2 = 0.0, m3 = 0.0, m4 = 0.0;
  for (double v : c) {
    const double d = v - fs.mean;
    const double d2 = d * d;
    m2 += d2;
    m3 += d2 * d;
    m4 += d2 * d2;
  }
  m2 /= nd;
  m3 /= nd;
  m4 /= nd;
  fs.stddev = std::sqrt(m2);
  if (m2 >= 1e-12) {
    fs.kurtosis = m4 / (m2 * m2) - 3.0;
    fs.skewness = m3 / std::pow(m2, 1.5);
  }
  fs.min = c[imin];
  fs.max = c[imax];
  fs.rel_pos_max = static_cast<double>(imax) / (nd - 1.0);
  fs.rel_pos_min = static_cast<double>(imin) / (nd - 1.0);
  fs.range = fs.max - fs.min;

  const double t_mean = (nd - 1.0) / 2.0;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dt = static_cast<double>(i) - t_mean;
    sxy += dt * (c[i] - fs.mean);
    sxx += dt * dt;
  }
  fs.linreg_slope = sxy / sxx;
  fs.linreg_offset = fs.mean - fs.linreg_slope * t_mean;
  double sse = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double e = c[i] - (fs.linreg_offset + fs.linreg_slope * static_cast<double>(i));
    sse += e * e;
  }
  fs.linreg_mse = sse / nd;
  return fs;
}

// ---- IS09 vector ------------------------------------------------------------

std::size_t is09_index(std::size_t lld, bool delta, std::size_t functional) {
  return ((delta ? kNumLlds : 0) + lld) * kNumFunctionals + functional;
}

std::string is09_feature_name(std::size_t index) {
  const std::size_t functional = index % kNumFunctionals;
  const std::size_t contour = index / kNumFunctionals;
  const bool delta = contour >= kNumLlds;
  return lld_name(contour % kNumLlds) + (delta ? "_de" : "") + "." +
         functional_name(functional);
}

Is09Vector is09_from_contours(const LldContours& llds) {
  Is09Vector v;
  for (std::size_t l = 0; l < kNumLlds; ++l) {
    const auto base = functionals(llds.contours[l]).to_array();
    const auto delta = functionals(delta_contour(llds.contours[l])).to_array();
    for (std::size_t f = 0; f < kNumFunctionals; ++f) {
      v.values[is09_index(l, false, f)] = base[f];
      v.values[is09_index(l, true, f)] = delta[f];
    }
  }
  return v;
}

Is09Vector is09_vector(const Waveform& w) { return is09_from_contours(lld_contours(w)); }

}  // namespace ser
