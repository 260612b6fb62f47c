#include "vocap/attack.hpp"

#include <algorithm>
#include <cmath>

namespace vocap {

void AttackConfig::validate() const {
  if (epsilon <= 0.0) throw std::invalid_argument("epsilon must be > 0");
  if (stage1_iters < 0 || stage2_iters < 0)
    throw std::invalid_argument("iteration counts must be >= 0");
  if (alpha < 0.0) throw std::invalid_argument("alpha must be >= 0");
  if (lr_stage1 <= 0.0 || lr_stage2 <= 0.0)
    throw std::invalid_argument("learning rates must be > 0");
  if (confidence_threshold <= 0.0 || confidence_threshold > 1.0)
    throw std::invalid_argument("confidence_threshold must be in (0, 1]");
}

namespace {

AudioBuffer add(const AudioBuffer& x, const Eigen::VectorXd& delta) {
  AudioBuffer out = x;
  for (std::size_t i = 0; i < out.samples.size(); ++i)
    out.samples[i] += delta[static_cast<Eigen::Index>(i)];
  return out;
}

}  // namespace

AttackResult stage1_evade(const Classifier& surrogate, const AudioBuffer& input,
                          const AttackConfig& config) {
  config.validate();
  const Eigen::Index n = static_cast<Eigen::Index>(input.samples.size());
  Eigen::VectorXd delta = Eigen::VectorXd::Zero(n);

  AttackResult result;
  for (int iter = 0; iter <= config.stage1_iters; ++iter) {
    AudioBuffer candidate = add(input, delta);
    double l_net = 0.0;
    Prediction pred;
    Eigen::VectorXd grad = surrogate.input_gradient(
        candidate, config.target_label, LossKind::cross_entropy, &l_net, &pred);
    result.loss_trace.push_back({l_net, 0.0});

    const bool on_target = pred.label == config.target_label;
    const double target_conf =
        pred.probabilities[config.target_label];
    if (iter == config.stage1_iters ||
        (on_target && target_conf >= config.confidence_threshold)) {
      result.perturbation.sample_rate = input.sample_rate;
      result.perturbation.samples.assign(delta.data(), delta.data() + n);
      result.adversarial = candidate;
      result.final_prediction = pred;
      result.surrogate_confidence = target_conf;
      result.stage1_success = on_target;
      result.best_iteration = iter;
      return result;
    }
    delta -= config.lr_stage1 * grad.array().sign().matrix();
    delta = delta.cwiseMax(-config.epsilon).cwiseMin(config.epsilon);
  }
  throw std::logic_error("unreachable");  // loop always returns
}

AttackResult stage2_imperceptible(const Classifier& surrogate,
                                  const AudioBuffer& input,
                                  const AttackResult& stage1_result,
                                  const MaskingThreshold& threshold,
                                  const AttackConfig& config) {
  config.validate();
  if (!stage1_result.stage1_success)
    throw std::invalid_argument(
        "stage 2 requires a successful stage-1 evasion seed");
  if (stage1_result.perturbation.samples.size() != input.samples.size())
    throw std::invalid_argument("stage-1 result does not match this input");

  const Eigen::Index n = static_cast<Eigen::Index>(input.samples.size());
  Eigen::VectorXd delta(n);
  for (Eigen::Index i = 0; i < n; ++i)
    delta[i] = stage1_result.perturbation.samples[static_cast<std::size_t>(i)];

  double alpha = config.alpha;
  int on_target_streak = 0;

  AttackResult result;
  Eigen::VectorXd best_delta = delta;
  double best_vf = std::numeric_limits<double>::infinity();
  double best_ltheta = std::numeric_limits<double>::infinity();
  Prediction best_pred;
  bool have_best = false;
  int best_iter = 0;

  AudioBuffer work = input;  // reused buffer for delta evaluations
  for (int iter = 0; iter <= config.stage2_iters; ++iter) {
    AudioBuffer candidate = add(input, delta);
    double l_net = 0.0;
    Prediction pred;
    Eigen::VectorXd grad_net = surrogate.input_gradient(
        candidate, config.target_label, LossKind::cross_entropy, &l_net, &pred);

    for (Eigen::Index i = 0; i < n; ++i)
      work.samples[static_cast<std::size_t>(i)] = delta[i];
    double l_theta = 0.0, vf = 0.0;
    Eigen::VectorXd grad_theta =
        perceptual_loss_gradient(work, threshold, &l_theta, &vf);
    result.loss_trace.push_back({l_net, l_theta});

    if (pred.label == config.target_label) {
      ++on_target_streak;
      if (!have_best || vf < best_vf ||
          (vf == best_vf && l_theta < best_ltheta)) {
        have_best = true;
        best_delta = delta;
        best_vf = vf;
        best_ltheta = l_theta;
        best_pred = pred;
        best_iter = iter;
      }
      if (config.alpha_adapt == AlphaAdapt::increase_on_success &&
          on_target_streak >= config.alpha_patience) {
        alpha *= config.alpha_growth;
        on_target_streak = 0;
      }
    } else {
      on_target_streak = 0;
    }

    if (iter < config.stage2_iters)
      delta -= config.lr_stage2 * (grad_net + alpha * grad_theta);
  }

  result.perturbation.sample_rate = input.sample_rate;
  result.perturbation.samples.assign(best_delta.data(), best_delta.data() + n);
  result.adversarial = add(input, best_delta);
  result.final_prediction = best_pred;
  result.surrogate_confidence = best_pred.probabilities[config.target_label];
  result.stage1_success = true;
  result.best_iteration = best_iter;
  result.perceptual = perceptual_margin(result.perturbation, threshold);
  return result;
}

AudioBuffer pgd_attack(const Classifier& model, const AudioBuffer& input,
                       int label, double epsilon, double step, int iters,
                       LossKind loss_kind) {
  AudioBuffer adv = input;
  const std::size_t n = input.samples.size();
  for (int iter = 0; iter < iters; ++iter) {
    Eigen::VectorXd grad = model.input_gradient(adv, label, loss_kind);
    for (std::size_t i = 0; i < n; ++i) {
      double moved =
          adv.samples[i] +
          step * (grad[static_cast<Eigen::Index>(i)] > 0.0
                      ? 1.0
                      : (grad[static_cast<Eigen::Index>(i)] < 0.0 ? -1.0 : 0.0));
      moved = std::clamp(moved, input.samples[i] - epsilon,
                         input.samples[i] + epsilon);
      adv.samples[i] = std::clamp(moved, -1.0, 1.0);
    }
  }
  return adv;
}

}  // namespace vocap
