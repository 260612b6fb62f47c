#pragma once

#include <vector>

#include <Eigen/Dense>

#include "vocap/audio.hpp"

namespace vocap {

enum class FeatureKind { lfcc, mfcc, spectrogram, raw };

const char* to_string(FeatureKind kind);
FeatureKind feature_kind_from_string(const std::string& s);

/// Frontend parameters. Cepstral kinds use the window/hop/fft/cepstral/filter
/// fields; spectrogram uses its own fft/hop pair; raw ignores everything.
struct FeatureSpec {
  FeatureKind kind = FeatureKind::lfcc;

  // cepstral (mfcc / lfcc)
  double window_s = 0.05;
  double hop_s = 0.02;
  int fft_size = 800;
  int cepstral_count = 10;
  int filter_count = 20;  // 26 for mfcc by default
  double preemphasis = 0.97;
  double log_floor = 1e-10;

  // spectrogram
  int spec_fft = 2048;
  int spec_hop = 512;

  static FeatureSpec defaults(FeatureKind kind);
  void validate() const;
  bool is_two_dimensional() const { return kind != FeatureKind::raw; }
};

struct FeatureMatrix {
  Eigen::MatrixXd values;  // [frame x coefficient]
  FeatureSpec spec;
};

/// Intermediates captured during a forward pass, consumed by backward().
struct FeatureTape {
  int input_length = 0;
  std::vector<std::vector<std::complex<double>>> bins;  // per frame
  Eigen::MatrixXd filter_energies;                      // cepstral kinds
  Eigen::MatrixXd magnitudes;                           // spectrogram
};

/// Caches the window, filterbank and DCT basis for one (spec, rate) pair.
/// forward/backward are const and safe to share across threads.
class FeatureTransform {
 public:
  FeatureTransform(const FeatureSpec& spec, int sample_rate);

  const FeatureSpec& spec() const { return spec_; }
  int sample_rate() const { return rate_; }
  int coeff_count() const;
  int frames_for(std::size_t samples) const;
  std::size_t min_input_length() const;

  FeatureMatrix forward(const AudioBuffer& buffer,
                        FeatureTape* tape = nullptr) const;
  /// Maps dL/d(values) back to dL/d(samples). The tape must come from a
  /// forward() call on the same input.
  Eigen::VectorXd backward(const FeatureTape& tape,
                           const Eigen::MatrixXd& grad_values) const;

 private:
  FeatureSpec spec_;
  int rate_;
  int win_samples_ = 0;
  int hop_samples_ = 0;
  Eigen::VectorXd window_;
  Eigen::MatrixXd filterbank_;  // [filter x bin]
  Eigen::MatrixXd dct_;         // [cepstral x filter]
};

FeatureMatrix extract(const AudioBuffer& buffer, const FeatureSpec& spec);

/// Forward pass plus tape, for callers that need input gradients.
FeatureMatrix extract_differentiable(const AudioBuffer& buffer,
                                     const FeatureSpec& spec,
                                     FeatureTape& tape);

}  // namespace vocap
