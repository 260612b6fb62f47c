#include "vocap/features.hpp"

#include <cmath>
#include <stdexcept>

namespace vocap {

const char* to_string(FeatureKind kind) {
  switch (kind) {
    case FeatureKind::lfcc: return "lfcc";
    case FeatureKind::mfcc: return "mfcc";
    case FeatureKind::spectrogram: return "spectrogram";
    case FeatureKind::raw: return "raw";
  }
  return "?";
}

FeatureKind feature_kind_from_string(const std::string& s) {
  if (s == "lfcc") return FeatureKind::lfcc;
  if (s == "mfcc") return FeatureKind::mfcc;
  if (s == "spectrogram") return FeatureKind::spectrogram;
  if (s == "raw") return FeatureKind::raw;
  throw std::invalid_argument("unknown feature kind: " + s);
}

FeatureSpec FeatureSpec::defaults(FeatureKind kind) {
  FeatureSpec s;
  s.kind = kind;
  if (kind == FeatureKind::mfcc) s.filter_count = 26;
  return s;
}

void FeatureSpec::validate() const {
  switch (kind) {
    case FeatureKind::mfcc:
    case FeatureKind::lfcc:
      if (window_s <= 0 || hop_s <= 0 || hop_s > window_s)
        throw std::invalid_argument("cepstral frontend needs 0 < hop <= window");
      if (fft_size < 16 || fft_size % 2 != 0)
        throw std::invalid_argument("fft_size must be even and >= 16");
      if (cepstral_count < 1 || filter_count < cepstral_count)
        throw std::invalid_argument("need 1 <= cepstral_count <= filter_count");
      break;
    case FeatureKind::spectrogram:
      if (spec_fft < 16 || (spec_fft & (spec_fft - 1)) != 0)
        throw std::invalid_argument("spectrogram fft must be a power of two");
      if (spec_hop <= 0 || spec_hop > spec_fft)
        throw std::invalid_argument("spectrogram hop must satisfy 0 < hop <= fft");
      break;
    case FeatureKind::raw:
      break;
  }
}

namespace {

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) {
  return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
}

// Unit-peak triangular filters on continuous bin positions.
Eigen::MatrixXd triangular_filterbank(int nfilt, int nbins, int nfft, int rate,
                                      bool mel_spaced) {
  std::vector<double> centers(nfilt + 2);
  const double fmax = rate / 2.0;
  for (int i = 0; i < nfilt + 2; ++i) {
    double frac = static_cast<double>(i) / (nfilt + 1);
    double hz = mel_spaced ? mel_to_hz(frac * hz_to_mel(fmax)) : frac * fmax;
    centers[i] = hz * nfft / rate;
  }
  Eigen::MatrixXd fb = Eigen::MatrixXd::Zero(nfilt, nbins);
  for (int j = 0; j < nfilt; ++j) {
    const double lo = centers[j], mid = centers[j + 1], hi = centers[j + 2];
    for (int k = 0; k < nbins; ++k) {
      double up = (k - lo) / (mid - lo);
      double down = (hi - k) / (hi - mid);
      fb(j, k) = std::max(0.0, std::min(up, down));
    }
  }
  return fb;
}

// Orthonormal DCT-II basis, first `ncep` rows.
Eigen::MatrixXd dct_basis(int ncep, int nfilt) {
  Eigen::MatrixXd d(ncep, nfilt);
  const double scale0 = std::sqrt(1.0 / nfilt);
  const double scale = std::sqrt(2.0 / nfilt);
  for (int i = 0; i < ncep; ++i)
    for (int j = 0; j < nfilt; ++j)
      d(i, j) = (i == 0 ? scale0 : scale) *
                std::cos(M_PI * i * (2 * j + 1) / (2.0 * nfilt));
  return d;
}

}  // namespace

FeatureTransform::FeatureTransform(const FeatureSpec& spec, int sample_rate)
    : spec_(spec), rate_(sample_rate) {
  spec_.validate();
  if (sample_rate <= 0) throw std::invalid_argument("sample_rate must be > 0");
  switch (spec_.kind) {
    case FeatureKind::mfcc:
    case FeatureKind::lfcc: {
      win_samples_ = static_cast<int>(std::lround(spec_.window_s * rate_));
      hop_samples_ = static_cast<int>(std::lround(spec_.hop_s * rate_));
      if (spec_.fft_size < win_samples_)
        throw std::invalid_argument("fft_size smaller than analysis window");
      window_ = window_vector(Window::hann, win_samples_);
      filterbank_ =
          triangular_filterbank(spec_.filter_count, spec_.fft_size / 2 + 1,
                                spec_.fft_size, rate_,
                                spec_.kind == FeatureKind::mfcc);
      dct_ = dct_basis(spec_.cepstral_count, spec_.filter_count);
      break;
    }
    case FeatureKind::spectrogram:
      win_samples_ = spec_.spec_fft;
      hop_samples_ = spec_.spec_hop;
      window_ = window_vector(Window::hann, win_samples_);
      break;
    case FeatureKind::raw:
      break;
  }
}

int FeatureTransform::coeff_count() const {
  switch (spec_.kind) {
    case FeatureKind::mfcc:
    case FeatureKind::lfcc: return spec_.cepstral_count;
    case FeatureKind::spectrogram: return spec_.spec_fft / 2 + 1;
    case FeatureKind::raw: return -1;  // input-dependent
  }
  return -1;
}

std::size_t FeatureTransform::min_input_length() const {
  return spec_.kind == FeatureKind::raw ? 1
                                        : static_cast<std::size_t>(win_samples_);
}

int FeatureTransform::frames_for(std::size_t samples) const {
  if (spec_.kind == FeatureKind::raw) return 1;
  if (samples < static_cast<std::size_t>(win_samples_))
    throw std::invalid_argument("buffer shorter than one analysis window");
  return 1 + static_cast<int>((samples - win_samples_) / hop_samples_);
}

FeatureMatrix FeatureTransform::forward(const AudioBuffer& buffer,
                                        FeatureTape* tape) const {
  FeatureMatrix out;
  out.spec = spec_;
  const std::size_t n = buffer.samples.size();
  if (n < min_input_length())
    throw std::invalid_argument("buffer too short for frontend");
  if (tape) {
    *tape = FeatureTape{};
    tape->input_length = static_cast<int>(n);
  }

  if (spec_.kind == FeatureKind::raw) {
    out.values.resize(1, static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i)
      out.values(0, static_cast<Eigen::Index>(i)) = buffer.samples[i];
    return out;
  }

  const int nframes = frames_for(n);
  const int nbins = (spec_.kind == FeatureKind::spectrogram ? spec_.spec_fft
                                                            : spec_.fft_size) /
                        2 +
                    1;
  const int nfft =
      spec_.kind == FeatureKind::spectrogram ? spec_.spec_fft : spec_.fft_size;

  // Pre-emphasis for cepstral kinds only.
  const bool cepstral = spec_.kind != FeatureKind::spectrogram;
  std::vector<double> sig(buffer.samples);
  if (cepstral && spec_.preemphasis != 0.0) {
    for (std::size_t i = n; i-- > 1;)
      sig[i] -= spec_.preemphasis * sig[i - 1];
  }

  if (tape) tape->bins.resize(nframes);
  Eigen::MatrixXd power(nframes, nbins);
  Eigen::VectorXd frame(win_samples_);
  for (int t = 0; t < nframes; ++t) {
    const std::size_t start = static_cast<std::size_t>(t) * hop_samples_;
    for (int i = 0; i < win_samples_; ++i)
      frame[i] = sig[start + i] * window_[i];
    auto bins = rfft(frame, nfft);
    for (int k = 0; k < nbins; ++k) power(t, k) = std::norm(bins[k]);
    if (tape) tape->bins[t] = std::move(bins);
  }

  if (spec_.kind == FeatureKind::spectrogram) {
    out.values = power.array().sqrt();
    if (tape) tape->magnitudes = out.values;
    return out;
  }

  Eigen::MatrixXd energies = power * filterbank_.transpose();  // [frame x filt]
  if (tape) tape->filter_energies = energies;
  Eigen::MatrixXd logged =
      energies.array().max(spec_.log_floor).log().matrix();
  out.values = logged * dct_.transpose();  // [frame x ncep]
  return out;
}

Eigen::VectorXd FeatureTransform::backward(
    const FeatureTape& tape, const Eigen::MatrixXd& grad_values) const {
  const int n = tape.input_length;

  if (spec_.kind == FeatureKind::raw) {
    if (grad_values.rows() != 1 || grad_values.cols() != n)
      throw std::invalid_argument("raw gradient shape mismatch");
    return grad_values.row(0).transpose();
  }

  const int nframes = static_cast<int>(tape.bins.size());
  if (grad_values.rows() != nframes)
    throw std::invalid_argument("gradient frame count mismatch");
  const int nfft =
      spec_.kind == FeatureKind::spectrogram ? spec_.spec_fft : spec_.fft_size;
  const int nbins = nfft / 2 + 1;

  // Gradient w.r.t. per-frame |X|^2.
  Eigen::MatrixXd grad_power;
  if (spec_.kind == FeatureKind::spectrogram) {
    // d|X|/d(power) = 1/(2|X|)
    grad_power =
        (grad_values.array() /
         (2.0 * tape.magnitudes.array()).max(1e-300))
            .matrix();
  } else {
    Eigen::MatrixXd grad_logged = grad_values * dct_;  // [frame x filt]
    Eigen::MatrixXd grad_energy =
        (tape.filter_energies.array() > spec_.log_floor)
            .select(grad_logged.array() / tape.filter_energies.array(), 0.0)
            .matrix();
    grad_power = grad_energy * filterbank_;  // [frame x bin]
  }

  // Through the FFT, window, framing.
  Eigen::VectorXd grad_sig = Eigen::VectorXd::Zero(n);
  std::vector<std::complex<double>> gbins(nbins);
  for (int t = 0; t < nframes; ++t) {
    for (int k = 0; k < nbins; ++k) {
      // d|X|^2 = 2 Re(X) dRe + 2 Im(X) dIm
      gbins[k] = 2.0 * grad_power(t, k) * tape.bins[t][k];
    }
    Eigen::VectorXd gframe = rfft_adjoint(gbins, nfft, win_samples_);
    const std::size_t start = static_cast<std::size_t>(t) * hop_samples_;
    for (int i = 0; i < win_samples_; ++i)
      grad_sig[start + i] += gframe[i] * window_[i];
  }

  // Pre-emphasis adjoint: y[i] = x[i] - a x[i-1].
  const bool cepstral = spec_.kind != FeatureKind::spectrogram;
  if (cepstral && spec_.preemphasis != 0.0) {
    const double a = spec_.preemphasis;
    Eigen::VectorXd gx(n);
    for (int i = 0; i < n; ++i)
      gx[i] = grad_sig[i] - (i + 1 < n ? a * grad_sig[i + 1] : 0.0);
    return gx;
  }
  return grad_sig;
}

FeatureMatrix extract(const AudioBuffer& buffer, const FeatureSpec& spec) {
  return FeatureTransform(spec, buffer.sample_rate).forward(buffer);
}

FeatureMatrix extract_differentiable(const AudioBuffer& buffer,
                                     const FeatureSpec& spec,
                                     FeatureTape& tape) {
  return FeatureTransform(spec, buffer.sample_rate).forward(buffer, &tape);
}

}  // namespace vocap
