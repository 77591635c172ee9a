#pragma once

#include <complex>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace ser {

inline constexpr int kSampleRate = 16000;

// Mono PCM audio, amplitudes nominally in [-1, 1].
struct Waveform {
  std::vector<double> samples;
  int sample_rate_hz = kSampleRate;
};

// Decodes a RIFF/WAVE byte image (PCM16 or float32, mono or stereo) into a
// mono 16 kHz waveform. Stereo is averaged; other rates are resampled.
Waveform decode_wav(std::span<const std::uint8_t> bytes);
Waveform read_wav(const std::filesystem::path& path);

// Writes mono PCM16 at the waveform's rate. Samples are clipped to [-1, 1).
std::vector<std::uint8_t> encode_wav_pcm16(const Waveform& w);
void write_wav(const std::filesystem::path& path, const Waveform& w);

// Linear-interpolation resampler; output length is floor(n * to / from).
Waveform resample_linear(const Waveform& w, int target_rate_hz);

// Appends zeros so the waveform holds at least min_samples samples.
Waveform pad_to_length(Waveform w, std::size_t min_samples);

enum class WindowKind { Hamming, Povey, None };

struct FrameOptions {
  std::size_t frame_len = 400;  // 25 ms at 16 kHz
  std::size_t hop = 160;        // 10 ms at 16 kHz
  double preemph = 0.97;
  WindowKind window = WindowKind::Hamming;
};

struct FrameSet {
  std::vector<std::vector<double>> frames;
  std::size_t frame_len_samples = 0;
  std::size_t hop_samples = 0;
  double preemphasis = 0.0;
  WindowKind window = WindowKind::None;
};

std::size_t num_frames(std::size_t num_samples, std::size_t frame_len,
                       std::size_t hop);

std::vector<double> make_window(WindowKind kind, std::size_t len);

// Cuts the waveform into overlapping frames, applies per-frame pre-emphasis
// (y[0] = x[0]·(1 − p)) and then the window. Throws TooShort when fewer than
// frame_len samples are available.
FrameSet frame_signal(const Waveform& w, const FrameOptions& opts = {});

// In-place radix-2 complex FFT with precomputed twiddles; size must be a
// power of two.
class Fft {
 public:
  explicit Fft(std::size_t size);

  std::size_t size() const { return size_; }
  void forward(std::vector<std::complex<double>>& data) const;

 private:
  std::size_t size_;
  std::vector<std::size_t> bitrev_;
  std::vector<std::complex<double>> twiddles_;
};

bool is_power_of_two(std::size_t n);

// |DFT_k|² for k = 0..fft_size/2 of the zero-padded frame.
std::vector<double> power_spectrum(std::span<const double> frame,
                                   std::size_t fft_size);
std::vector<double> power_spectrum(std::span<const double> frame,
                                   const Fft& fft);

}  // namespace ser
