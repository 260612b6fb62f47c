#pragma once

#include <iosfwd>

#include <Eigen/Dense>

#include "vocap/audio.hpp"

namespace vocap {

/// Every constant of the masking model lives here so an alternate
/// psychoacoustic model can be swapped by editing one block.
namespace psymodel {

inline constexpr double kFullScaleDb = 96.0;  // normalized peak level
inline constexpr double kTonalityMarginDb = 7.0;
inline constexpr int kTonalNeighborDistances[] = {2, 3};
inline constexpr int kTonalAggregateRadius = 1;  // bins summed into a masker
inline constexpr double kMaskerPruneRadiusBark = 0.5;
/// Two-slope spreading function: attenuation per Bark below the masker, and
/// a frequency-corrected slope above it.
inline constexpr double kLowerSlopeDbPerBark = 27.0;
inline constexpr double kUpperSlopeBaseDbPerBark = 24.0;
inline constexpr double kUpperSlopeKhzCorrection = 0.23;
inline constexpr double kSpreadWindowLoBark = -3.0;
inline constexpr double kSpreadWindowHiBark = 8.0;
/// Masking-offset of the individual threshold below the masker level.
inline constexpr double kTonalOffsetDb = 6.025;
inline constexpr double kTonalOffsetPerBark = 0.275;
inline constexpr double kNoiseOffsetDb = 2.025;
inline constexpr double kNoiseOffsetPerBark = 0.175;
/// Absolute threshold of hearing, clamped to this range in normalized dB.
inline constexpr double kAthClampLoDb = -30.0;
inline constexpr double kAthClampHiDb = 96.0;

double bark(double hz);
double absolute_threshold_db(double hz);

}  // namespace psymodel

/// Global masking threshold of one audio buffer, per frame and frequency bin,
/// in the dB scale whose reference maps the buffer's PSD peak to 96 dB.
struct MaskingThreshold {
  Eigen::MatrixXd threshold_db;   // [frame x bin]
  Eigen::MatrixXd threshold_lin;  // 10^(threshold_db/10), cached
  double source_max = 0.0;        // max{p_x} of the original audio, dB
  FrameSpec frame_spec;
  int sample_rate = kCanonicalRate;

  int frames() const { return static_cast<int>(threshold_db.rows()); }
  int bins() const { return static_cast<int>(threshold_db.cols()); }
};

struct PerceptualMargin {
  Eigen::MatrixXd margin_db;  // normalized perturbation PSD minus threshold
  double violation_fraction = 0.0;
};

MaskingThreshold global_masking_threshold(const AudioBuffer& original,
                                          const FrameSpec& spec);

/// Eq-style normalization: 96 - original_max + p_delta, elementwise in dB.
PsdFrames normalized_perturbation_psd(const AudioBuffer& perturbation,
                                      double original_max,
                                      const FrameSpec& spec);

/// Hinge on linear power: mean over (frame, bin) of
/// max(0, normalized perturbation power - threshold power). Zero iff every
/// bin is masked.
double perceptual_loss(const AudioBuffer& perturbation,
                       const MaskingThreshold& threshold);

/// Gradient of perceptual_loss w.r.t. the perturbation samples. The
/// violation fraction falls out of the same hinge pass.
Eigen::VectorXd perceptual_loss_gradient(const AudioBuffer& perturbation,
                                         const MaskingThreshold& threshold,
                                         double* loss_out = nullptr,
                                         double* violation_fraction_out = nullptr);

PerceptualMargin perceptual_margin(const AudioBuffer& perturbation,
                                   const MaskingThreshold& threshold);

/// Debug dump: frame, bin, threshold_db[, margin_db] rows.
void dump_threshold_csv(std::ostream& os, const MaskingThreshold& threshold,
                        const PerceptualMargin* margin = nullptr);

}  // namespace vocap
