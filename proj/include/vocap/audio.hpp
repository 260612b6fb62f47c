#pragma once

#include <complex>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace vocap {

/// Canonical sample rate for the whole toolkit. Files at other rates are
/// rejected at pipeline boundaries, never resampled.
inline constexpr int kCanonicalRate = 16000;

/// Power floor added before taking log10 in PSD estimation.
inline constexpr double kPsdPowerFloor = 1e-12;

inline double psd_floor_db() { return 10.0 * std::log10(kPsdPowerFloor); }

struct AudioBuffer {
  std::vector<double> samples;
  int sample_rate = kCanonicalRate;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  double duration_s() const {
    return static_cast<double>(samples.size()) / sample_rate;
  }
};

enum class Window { hann, rectangular };

struct FrameSpec {
  int frame_length = 2048;  // power of two
  int hop_length = 512;
  Window window = Window::hann;

  void validate() const;
  int bins() const { return frame_length / 2 + 1; }
};

/// Per-frame, per-bin PSD estimates in dB: 10*log10(|X_k|^2 + floor).
struct PsdFrames {
  Eigen::MatrixXd values;  // [frame x bin]
  FrameSpec frame_spec;
  double source_max = 0.0;  // max over values at construction

  int frames() const { return static_cast<int>(values.rows()); }
  int bins() const { return static_cast<int>(values.cols()); }
};

// ---- WAV I/O ------------------------------------------------------------
// RIFF mono WAV only; PCM 16-bit or IEEE float 32-bit accepted on read,
// PCM 16-bit written. Out-of-range samples are clamped at write time only.

struct WavError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct WavFormatError : WavError {
  using WavError::WavError;
};
struct WavChannelError : WavError {
  using WavError::WavError;
};
struct WavTruncatedError : WavError {
  using WavError::WavError;
};

AudioBuffer read_wav(const std::string& path);
void write_wav(const AudioBuffer& buffer, const std::string& path);

// ---- Framing / FFT / PSD -------------------------------------------------

/// 1 + floor((buffer_length - frame_length)/hop); trailing partial frame
/// dropped. Throws std::invalid_argument if buffer_length < frame_length.
int frames_count(std::size_t buffer_length, const FrameSpec& spec);

/// Window coefficients for a frame of the given length.
Eigen::VectorXd window_vector(Window window, int length);

/// Forward complex FFT (any length); plans are cached per thread.
void fft_forward(const std::vector<std::complex<double>>& in,
                 std::vector<std::complex<double>>& out);

/// Inverse complex FFT (any length).
void fft_inverse(const std::vector<std::complex<double>>& in,
                 std::vector<std::complex<double>>& out);

/// Real-input FFT of `frame` zero-padded (or not) to nfft; returns the
/// nfft/2+1 non-redundant bins.
std::vector<std::complex<double>> rfft(const Eigen::VectorXd& frame, int nfft);

/// Adjoint of rfft: maps a gradient over the nfft/2+1 complex bins back to a
/// gradient over the first `length` real inputs. The loss is assumed to
/// depend only on the returned half spectrum.
Eigen::VectorXd rfft_adjoint(const std::vector<std::complex<double>>& grad_bins,
                             int nfft, int length);

PsdFrames psd_estimate(const AudioBuffer& buffer, const FrameSpec& spec);

/// Weighted overlap-add resynthesis after per-frame spectral modification.
/// The input is zero-padded so every output sample has full window coverage;
/// with an identity modifier the output reconstructs the input to near
/// machine precision. Output length equals input length.
AudioBuffer stft_resynthesize(
    const AudioBuffer& input, const FrameSpec& spec,
    const std::function<void(int frame, std::vector<std::complex<double>>&)>&
        modify);

}  // namespace vocap
