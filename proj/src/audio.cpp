#include "vocap/audio.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include <unsupported/Eigen/FFT>

namespace vocap {

void FrameSpec::validate() const {
  if (frame_length <= 0 || (frame_length & (frame_length - 1)) != 0)
    throw std::invalid_argument("frame_length must be a positive power of two");
  if (hop_length <= 0 || hop_length > frame_length)
    throw std::invalid_argument("hop_length must satisfy 0 < hop <= frame_length");
}

// ---- WAV I/O ------------------------------------------------------------

namespace {

uint32_t read_u32(const unsigned char* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}
uint16_t read_u16(const unsigned char* p) {
  return static_cast<uint16_t>(p[0] | (p[1] << 8));
}

void put_u32(std::string& s, uint32_t v) {
  s.push_back(static_cast<char>(v & 0xff));
  s.push_back(static_cast<char>((v >> 8) & 0xff));
  s.push_back(static_cast<char>((v >> 16) & 0xff));
  s.push_back(static_cast<char>((v >> 24) & 0xff));
}
void put_u16(std::string& s, uint16_t v) {
  s.push_back(static_cast<char>(v & 0xff));
  s.push_back(static_cast<char>((v >> 8) & 0xff));
}

}  // namespace

AudioBuffer read_wav(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw WavError("cannot open WAV file: " + path);
  std::vector<unsigned char> data((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  if (data.size() < 12 || std::memcmp(data.data(), "RIFF", 4) != 0 ||
      std::memcmp(data.data() + 8, "WAVE", 4) != 0)
    throw WavFormatError("not a RIFF/WAVE file: " + path);

  uint16_t format = 0, channels = 0, bits = 0;
  uint32_t rate = 0;
  bool have_fmt = false;
  std::size_t data_off = 0, data_len = 0;

  std::size_t pos = 12;
  while (pos + 8 <= data.size()) {
    const unsigned char* hdr = data.data() + pos;
    uint32_t chunk_len = read_u32(hdr + 4);
    std::size_t body = pos + 8;
    if (std::memcmp(hdr, "fmt ", 4) == 0) {
      if (body + 16 > data.size())
        throw WavTruncatedError("truncated fmt chunk: " + path);
      format = read_u16(data.data() + body);
      channels = read_u16(data.data() + body + 2);
      rate = read_u32(data.data() + body + 4);
      bits = read_u16(data.data() + body + 14);
      have_fmt = true;
    } else if (std::memcmp(hdr, "data", 4) == 0) {
      data_off = body;
      data_len = chunk_len;
      if (data_off + data_len > data.size())
        throw WavTruncatedError("data chunk extends past end of file: " + path);
    }
    pos = body + chunk_len + (chunk_len & 1);
  }
  if (!have_fmt || data_off == 0)
    throw WavFormatError("missing fmt or data chunk: " + path);
  if (channels != 1)
    throw WavChannelError("multi-channel WAV not supported (" +
                          std::to_string(channels) + " channels): " + path);

  AudioBuffer out;
  out.sample_rate = static_cast<int>(rate);
  if (format == 1 && bits == 16) {
    std::size_t n = data_len / 2;
    out.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      int16_t s = static_cast<int16_t>(read_u16(data.data() + data_off + 2 * i));
      out.samples[i] = static_cast<double>(s) / 32767.0;
    }
  } else if (format == 3 && bits == 32) {
    std::size_t n = data_len / 4;
    out.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      uint32_t u = read_u32(data.data() + data_off + 4 * i);
      float v;
      std::memcpy(&v, &u, 4);
      out.samples[i] = static_cast<double>(v);
    }
  } else {
    throw WavFormatError("unsupported WAV encoding (format=" +
                         std::to_string(format) + ", bits=" +
                         std::to_string(bits) + "): " + path);
  }
  for (double& s : out.samples) s = std::clamp(s, -1.0, 1.0);
  return out;
}

void write_wav(const AudioBuffer& buffer, const std::string& path) {
  if (buffer.empty()) throw std::invalid_argument("cannot write empty buffer");
  const std::size_t n = buffer.samples.size();
  std::string payload;
  payload.reserve(44 + 2 * n);
  payload += "RIFF";
  put_u32(payload, static_cast<uint32_t>(36 + 2 * n));
  payload += "WAVEfmt ";
  put_u32(payload, 16);
  put_u16(payload, 1);  // PCM
  put_u16(payload, 1);  // mono
  put_u32(payload, static_cast<uint32_t>(buffer.sample_rate));
  put_u32(payload, static_cast<uint32_t>(buffer.sample_rate * 2));
  put_u16(payload, 2);
  put_u16(payload, 16);
  payload += "data";
  put_u32(payload, static_cast<uint32_t>(2 * n));
  for (double s : buffer.samples) {
    double c = std::clamp(s, -1.0, 1.0);
    int16_t q = static_cast<int16_t>(std::lround(c * 32767.0));
    put_u16(payload, static_cast<uint16_t>(q));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw WavError("cannot open for writing: " + path);
  f.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!f) throw WavError("write failed: " + path);
}

// ---- Framing / FFT / PSD -------------------------------------------------

int frames_count(std::size_t buffer_length, const FrameSpec& spec) {
  spec.validate();
  if (buffer_length < static_cast<std::size_t>(spec.frame_length))
    throw std::invalid_argument("buffer shorter than one frame");
  return 1 + static_cast<int>((buffer_length - spec.frame_length) / spec.hop_length);
}

Eigen::VectorXd window_vector(Window window, int length) {
  Eigen::VectorXd w(length);
  switch (window) {
    case Window::rectangular:
      w.setOnes();
      break;
    case Window::hann:
      for (int i = 0; i < length; ++i)
        w[i] = 0.5 - 0.5 * std::cos(2.0 * M_PI * i / length);
      break;
  }
  return w;
}

namespace {
Eigen::FFT<double>& fft_engine() {
  thread_local Eigen::FFT<double> engine;
  return engine;
}
}  // namespace

void fft_forward(const std::vector<std::complex<double>>& in,
                 std::vector<std::complex<double>>& out) {
  fft_engine().fwd(out, in);
}

void fft_inverse(const std::vector<std::complex<double>>& in,
                 std::vector<std::complex<double>>& out) {
  fft_engine().inv(out, in);
}

std::vector<std::complex<double>> rfft(const Eigen::VectorXd& frame, int nfft) {
  std::vector<std::complex<double>> in(static_cast<std::size_t>(nfft)), full;
  const int n = std::min<int>(nfft, static_cast<int>(frame.size()));
  for (int i = 0; i < n; ++i) in[i] = std::complex<double>(frame[i], 0.0);
  fft_forward(in, full);
  full.resize(static_cast<std::size_t>(nfft / 2 + 1));
  return full;
}

Eigen::VectorXd rfft_adjoint(const std::vector<std::complex<double>>& grad_bins,
                             int nfft, int length) {
  // dL/dx_n = Re( sum_k G_k e^{+2 pi i k n / N} ), sum over the retained bins.
  std::vector<std::complex<double>> padded(static_cast<std::size_t>(nfft)), time;
  for (std::size_t k = 0; k < grad_bins.size(); ++k) padded[k] = grad_bins[k];
  fft_inverse(padded, time);  // inv = (1/N) sum e^{+i...}
  Eigen::VectorXd g(length);
  for (int i = 0; i < length; ++i) g[i] = time[i].real() * nfft;
  return g;
}

AudioBuffer stft_resynthesize(
    const AudioBuffer& input, const FrameSpec& spec,
    const std::function<void(int frame, std::vector<std::complex<double>>&)>&
        modify) {
  spec.validate();
  const int L = spec.frame_length, H = spec.hop_length;
  const std::size_t n = input.samples.size();
  const Eigen::VectorXd win = window_vector(spec.window, L);

  // Pad by one frame on each side so interior coverage is complete.
  std::vector<double> padded(n + 2 * L, 0.0);
  std::copy(input.samples.begin(), input.samples.end(), padded.begin() + L);
  const int nframes = 1 + static_cast<int>((padded.size() - L) / H);

  std::vector<double> acc(padded.size(), 0.0), norm(padded.size(), 0.0);
  std::vector<std::complex<double>> spectrum, time;
  std::vector<std::complex<double>> frame(L);
  for (int t = 0; t < nframes; ++t) {
    const std::size_t start = static_cast<std::size_t>(t) * H;
    for (int i = 0; i < L; ++i)
      frame[static_cast<std::size_t>(i)] = padded[start + i] * win[i];
    fft_forward(frame, spectrum);
    spectrum.resize(static_cast<std::size_t>(L / 2 + 1));
    modify(t, spectrum);
    // rebuild the full hermitian spectrum and invert
    spectrum.resize(static_cast<std::size_t>(L));
    for (int k = 1; k < L / 2; ++k)
      spectrum[static_cast<std::size_t>(L - k)] =
          std::conj(spectrum[static_cast<std::size_t>(k)]);
    fft_inverse(spectrum, time);
    for (int i = 0; i < L; ++i) {
      acc[start + i] += time[static_cast<std::size_t>(i)].real() * win[i];
      norm[start + i] += win[i] * win[i];
    }
  }

  AudioBuffer out;
  out.sample_rate = input.sample_rate;
  out.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double d = norm[i + L];
    out.samples[i] = d > 1e-12 ? acc[i + L] / d : input.samples[i];
  }
  return out;
}

PsdFrames psd_estimate(const AudioBuffer& buffer, const FrameSpec& spec) {
  const int nframes = frames_count(buffer.samples.size(), spec);
  const int nbins = spec.bins();
  const Eigen::VectorXd win = window_vector(spec.window, spec.frame_length);

  PsdFrames out;
  out.frame_spec = spec;
  out.values.resize(nframes, nbins);
  Eigen::VectorXd frame(spec.frame_length);
  for (int t = 0; t < nframes; ++t) {
    const std::size_t start = static_cast<std::size_t>(t) * spec.hop_length;
    for (int i = 0; i < spec.frame_length; ++i)
      frame[i] = buffer.samples[start + i] * win[i];
    auto bins = rfft(frame, spec.frame_length);
    for (int k = 0; k < nbins; ++k)
      out.values(t, k) = 10.0 * std::log10(std::norm(bins[k]) + kPsdPowerFloor);
  }
  out.source_max = out.values.maxCoeff();
  return out;
}

}  // namespace vocap
