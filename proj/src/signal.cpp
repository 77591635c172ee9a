#include "ser/signal.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "ser/binary_io.hpp"
#include "ser/error.hpp"

namespace ser {

namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

struct FmtChunk {
  std::uint16_t format = 0;
  std::uint16_t channels = 0;
  std::uint32_t rate = 0;
  std::uint16_t bits = 0;
  std::uint16_t block_align = 0;
};

}  // namespace

Waveform decode_wav(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, Errc::CorruptHeader);
  if (bytes.size() < 12 || r.raw(4) != "RIFF")
    throw Error(Errc::CorruptHeader, "missing RIFF tag");
  r.u32();
  if (r.raw(4) != "WAVE") throw Error(Errc::CorruptHeader, "missing WAVE tag");

  bool have_fmt = false;
  FmtChunk fmt;
  std::span<const std::uint8_t> data;
  bool have_data = false;
  while (r.remaining() >= 8 && !have_data) {
    std::string id = r.raw(4);
    std::uint32_t len = r.u32();
    if (id == "fmt ") {
      if (len < 16) throw Error(Errc::CorruptHeader, "fmt chunk too short");
      auto body = r.bytes(len);
      ByteReader f(body, Errc::CorruptHeader);
      fmt.format = f.u16();
      fmt.channels = f.u16();
      fmt.rate = f.u32();
      f.u32();
      fmt.block_align = f.u16();
      fmt.bits = f.u16();
      if (fmt.format == kFormatExtensible) {
        if (len < 40) throw Error(Errc::CorruptHeader, "extensible fmt too short");
        f.u16();  // cbSize
        f.u16();  // valid bits
        f.u32();  // channel mask
        fmt.format = f.u16();
      }
      have_fmt = true;
    } else if (id == "data") {
      if (len > r.remaining()) throw Error(Errc::CorruptHeader, "data chunk truncated");
      data = r.bytes(len);
      have_data = true;
    } else {
      if (len > r.remaining()) throw Error(Errc::CorruptHeader, "chunk truncated");
      r.bytes(len);
      if ((len & 1u) && r.remaining() > 0) r.u8();
    }
  }
  if (!have_fmt) throw Error(Errc::CorruptHeader, "no fmt chunk");
  if (!have_data) throw Error(Errc::CorruptHeader, "no data chunk");
  if (fmt.channels != 1 && fmt.channels != 2)
    throw Error(Errc::UnsupportedFormat,
                "unsupported channel count " + std::to_string(fmt.channels));
  if (fmt.rate == 0) throw Error(Errc::CorruptHeader, "zero sample rate");

  const bool pcm16 = fmt.format == kFormatPcm && fmt.bits == 16;
  const bool f32 = fmt.format == kFormatFloat && fmt.bits == 32;
  if (!pcm16 && !f32)
    throw Error(Errc::UnsupportedFormat,
                "only PCM16 and float32 are supported (format " +
                    std::to_string(fmt.format) + ", " + std::to_string(fmt.bits) +
                    " bits)");

  const std::size_t sample_bytes = fmt.bits / 8;
  const std::size_t frame_bytes = sample_bytes * fmt.channels;
  const std::size_t n = data.size() / frame_bytes;
  ByteReader d(data, Errc::CorruptHeader);
  Waveform w;
  w.sample_rate_hz = static_cast<int>(fmt.rate);
  w.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (int c = 0; c < fmt.channels; ++c) {
      double v = pcm16 ? static_cast<std::int16_t>(d.u16()) / 32768.0
                       : static_cast<double>(d.f32());
      acc += v;
    }
    w.samples[i] = acc / fmt.channels;
  }
  if (w.sample_rate_hz != kSampleRate) w = resample_linear(w, kSampleRate);
  return w;
}

Waveform read_wav(const std::filesystem::path& path) {
  auto bytes = read_file_bytes(path);
  return decode_wav(bytes);
}

std::vector<std::uint8_t> encode_wav_pcm16(const Waveform& w) {
  const auto n = static_cast<std::uint32_t>(w.samples.size());
  ByteWriter out;
  out.raw("RIFF");
  out.u32(36 + 2 * n);
  out.raw("WAVE");
  out.raw("fmt ");
  out.u32(16);
  out.u16(kFormatPcm);
  out.u16(1);
  out.u32(static_cast<std::uint32_t>(w.sample_rate_hz));
  out.u32(static_cast<std::uint32_t>(w.sample_rate_hz) * 2);
  out.u16(2);
  out.u16(16);
  out.raw("data");
  out.u32(2 * n);
  for (double s : w.samples) {
    double q = std::nearbyint(std::clamp(s, -1.0, 1.0) * 32768.0);
    q = std::clamp(q, -32768.0, 32767.0);
    out.u16(static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
  }
  return std::move(out.buffer());
}

void write_wav(const std::filesystem::path& path, const Waveform& w) {
  write_file_bytes(path, encode_wav_pcm16(w));
}

Waveform resample_linear(const Waveform& w, int target_rate_hz) {
  if (w.sample_rate_hz == target_rate_hz) return w;
  Waveform out;
  out.sample_rate_hz = target_rate_hz;
  const std::size_t n = w.samples.size();
  if (n == 0) return out;
  const auto m = static_cast<std::size_t>(
      static_cast<std::uint64_t>(n) * static_cast<std::uint64_t>(target_rate_hz) /
      static_cast<std::uint64_t>(w.sample_rate_hz));
  out.samples.resize(m);
  const double step = static_cast<double>(w.sample_rate_hz) / target_rate_hz;
  for (std::size_t i = 0; i < m; ++i) {
    const double pos = i * step;
    auto k = static_cast<std::size_t>(pos);
    if (k >= n - 1) {
      out.samples[i] = w.samples[n - 1];
      continue;
    }
    const double frac = pos - static_cast<double>(k);
    out.samples[i] = w.samples[k] + frac * (w.samples[k + 1] - w.samples[k]);
  }
  return out;
}

Waveform pad_to_length(Waveform w, std::size_t min_samples) {
  if (w.samples.size() < min_samples) w.samples.resize(min_samples, 0.0);
  return w;
}

std::size_t num_frames(std::size_t num_samples, std::size_t frame_len,
                       std::size_t hop) {
  if (num_samples < frame_len) return 0;
  return 1 + (num_samples - frame_len) / hop;
}

std::vector<double> make_window(WindowKind kind, std::size_t len) {
  std::vector<double> win(len, 1.0);
  if (kind == WindowKind::None || len < 2) return win;
  const double a = 2.0 * std::numbers::pi / static_cast<double>(len - 1);
  for (std::size_t i = 0; i < len; ++i) {
    if (kind == WindowKind::Hamming)
      win[i] = 0.54 - 0.46 * std::cos(a * i);
    else
      win[i] = std::pow(0.5 - 0.5 * std::cos(a * i), 0.85);
  }
  return win;
}

FrameSet frame_signal(const Waveform& w, const FrameOptions& opts) {
  if (opts.frame_len == 0 || opts.hop == 0 || opts.hop > opts.frame_len)
    throw Error(Errc::ShapeMismatch, "invalid frame geometry");
  if (!(opts.preemph >= 0.0 && opts.preemph < 1.0))
    throw Error(Errc::ShapeMismatch, "pre-emphasis must lie in [0, 1)");
  const std::size_t count = num_frames(w.samples.size(), opts.frame_len, opts.hop);
  if (count == 0)
    throw Error(Errc::TooShort, "signal has " + std::to_string(w.samples.size()) +
                                    " samples, frame needs " +
                                    std::to_string(opts.frame_len));

  FrameSet fs;
  fs.frame_len_samples = opts.frame_len;
  fs.hop_samples = opts.hop;
  fs.preemphasis = opts.preemph;
  fs.window = opts.window;
  const auto win = make_window(opts.window, opts.frame_len);
  fs.frames.resize(count);
  for (std::size_t f = 0; f < count; ++f) {
    const double* x = w.samples.data() + f * opts.hop;
    auto& out = fs.frames[f];
    out.resize(opts.frame_len);
    out[0] = x[0] * (1.0 - opts.preemph);
    for (std::size_t t = 1; t < opts.frame_len; ++t)
      out[t] = x[t] - opts.preemph * x[t - 1];
    for (std::size_t t = 0; t < opts.frame_len; ++t) out[t] *= win[t];
  }
  return fs;
}

bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

Fft::Fft(std::size_t size) : size_(size) {
  if (!is_power_of_two(size))
    throw Error(Errc::BadFftSize, "FFT size " + std::to_string(size) +
                                      " is not a power of two");
  bitrev_.resize(size);
  int bits = 0;
  while ((std::size_t{1} << bits) < size) ++bits;
  for (std::size_t i = 0; i < size; ++i) {
    std::size_t r = 0;
    for (int b = 0; b < bits; ++b)
      if (i & (std::size_t{1} << b)) r |= std::size_t{1} << (bits - 1 - b);
    bitrev_[i] = r;
  }
  twiddles_.resize(size / 2);
  for (std::size_t k = 0; k < size / 2; ++k) {
    const double ang = -2.0 * std::numbers::pi * static_cast<double>(k) /
                       static_cast<double>(size);
    twiddles_[k] = {std::cos(ang), std::sin(ang)};
  }
}

void Fft::forward(std::vector<std::complex<double>>& a) const {
  if (a.size() != size_) throw Error(Errc::BadFftSize, "FFT input size mismatch");
  for (std::size_t i = 0; i < size_; ++i)
    if (i < bitrev_[i]) std::swap(a[i], a[bitrev_[i]]);
  for (std::size_t len = 2; len <= size_; len <<= 1) {
    const std::size_t half = len / 2;
    const std::size_t stride = size_ / len;
    for (std::size_t start = 0; start < size_; start += len) {
      for (std::size_t j = 0; j < half; ++j) {
        const auto t = twiddles_[j * stride] * a[start + j + half];
        a[start + j + half] = a[start + j] - t;
        a[start + j] += t;
      }
    }
  }
}

std::vector<double> power_spectrum(std::span<const double> frame,
                                   const Fft& fft) {
  const std::size_t n = fft.size();
  if (frame.size() > n)
    throw Error(Errc::BadFftSize, "FFT size " + std::to_string(n) +
                                      " smaller than frame length " +
                                      std::to_string(frame.size()));
  std::vector<std::complex<double>> buf(n);
  for (std::size_t i = 0; i < frame.size(); ++i) buf[i] = frame[i];
  fft.forward(buf);
  std::vector<double> bins(n / 2 + 1);
  for (std::size_t k = 0; k < bins.size(); ++k) bins[k] = std::norm(buf[k]);
  return bins;
}

std::vector<double> power_spectrum(std::span<const double> frame,
                                   std::size_t fft_size) {
  if (!is_power_of_two(fft_size) || fft_size < frame.size())
    throw Error(Errc::BadFftSize, "bad FFT size " + std::to_string(fft_size));
  return power_spectrum(frame, Fft(fft_size));
}

}  // namespace ser
