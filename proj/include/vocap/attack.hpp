#pragma once

#include <optional>
#include <vector>

#include "vocap/audio.hpp"
#include "vocap/models.hpp"
#include "vocap/psycho.hpp"

namespace vocap {

enum class AlphaAdapt { fixed, increase_on_success };

struct AttackConfig {
  double epsilon = 0.01;   // max-norm bound on the perturbation
  double lr_stage1 = 1e-3;
  double lr_stage2 = 1e-4;
  double alpha = 0.05;     // balance weight on the perceptual loss
  int stage1_iters = 200;
  int stage2_iters = 1000;
  AlphaAdapt alpha_adapt = AlphaAdapt::increase_on_success;
  double alpha_growth = 1.2;
  int alpha_patience = 50;  // consecutive on-target iterates per growth step
  int target_label = 1;     // Real
  /// Early-stop confidence for stage 1; doubles as the high-confidence
  /// stratification cut in the transfer harness.
  double confidence_threshold = 0.9;

  void validate() const;
};

struct LossTracePoint {
  double l_net = 0.0;
  double l_theta = 0.0;  // zero in stage 1, which never evaluates it
};

struct AttackResult {
  AudioBuffer adversarial;   // input + perturbation
  AudioBuffer perturbation;
  bool stage1_success = false;
  Prediction final_prediction;      // surrogate prediction at the returned iterate
  double surrogate_confidence = 0;  // target-class probability at that iterate
  std::optional<PerceptualMargin> perceptual;  // stage 2 only
  std::vector<LossTracePoint> loss_trace;      // one point per iterate
  int best_iteration = 0;  // index into loss_trace of the returned iterate
};

/// Stage 1: targeted sign-gradient descent with a hard max-norm clip each
/// iteration, from a zero perturbation. Stops early once the surrogate
/// reports the target label at or above the confidence threshold.
AttackResult stage1_evade(const Classifier& surrogate, const AudioBuffer& input,
                          const AttackConfig& config);

/// Stage 2: joint descent on the evasion loss plus alpha times the masking
/// loss, seeded by a successful stage-1 result. No norm clip; the masking
/// loss takes over as the perceptibility control. Returns the best iterate:
/// among on-target iterates (the seed included), the one with the smallest
/// violation fraction, ties broken by smaller masking loss.
AttackResult stage2_imperceptible(const Classifier& surrogate,
                                  const AudioBuffer& input,
                                  const AttackResult& stage1_result,
                                  const MaskingThreshold& threshold,
                                  const AttackConfig& config);

/// Untargeted projected sign-gradient ascent on the given label's loss;
/// iterates stay inside the epsilon ball around the input and in [-1, 1].
AudioBuffer pgd_attack(const Classifier& model, const AudioBuffer& input,
                       int label, double epsilon, double step, int iters,
                       LossKind loss_kind = LossKind::cross_entropy);

}  // namespace vocap
