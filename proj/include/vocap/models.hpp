#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "vocap/audio.hpp"
#include "vocap/features.hpp"
#include "vocap/metrics.hpp"

namespace vocap {

enum class Architecture { compact_conv, raw_conv, mlp, gmm };
enum class LossKind { cross_entropy, binary_focal };

const char* to_string(Architecture a);
Architecture architecture_from_string(const std::string& s);
const char* to_string(LossKind k);
LossKind loss_kind_from_string(const std::string& s);

inline constexpr double kFocalGamma = 2.0;

struct ModelConfig {
  Architecture architecture = Architecture::compact_conv;
  FeatureSpec frontend = FeatureSpec::defaults(FeatureKind::lfcc);
  std::vector<int> layer_widths = {8, 16};  // conv channels / mlp hidden sizes
  int class_count = 2;
  std::uint64_t seed = 1;
  int sample_rate = kCanonicalRate;

  void validate() const;
};

struct Prediction {
  Eigen::VectorXd probabilities;
  int label = 0;
  double confidence = 0.0;
};

Prediction softmax_prediction(const Eigen::VectorXd& logits);

/// Scalar loss on a softmax prediction plus its gradient w.r.t. the logits.
double classification_loss(const Eigen::VectorXd& probabilities, int label,
                           LossKind kind, Eigen::VectorXd* grad_logits);

/// Common surface of the gradient-trained networks and the GMM classifier:
/// forward prediction, scalar loss, and the loss gradient w.r.t. the input
/// waveform (used by every attack).
class Classifier {
 public:
  virtual ~Classifier() = default;
  virtual const ModelConfig& config() const = 0;
  virtual Prediction forward(const AudioBuffer& buffer) const = 0;
  virtual double loss(const AudioBuffer& buffer, int label,
                      LossKind kind) const = 0;
  virtual Eigen::VectorXd input_gradient(const AudioBuffer& buffer, int label,
                                         LossKind kind,
                                         double* loss_out = nullptr,
                                         Prediction* pred_out = nullptr)
      const = 0;
};

// ---- Gradient-trained networks --------------------------------------------

class DifferentiableModel : public Classifier {
 public:
  explicit DifferentiableModel(const ModelConfig& config);

  const ModelConfig& config() const override { return config_; }
  Prediction forward(const AudioBuffer& buffer) const override;
  double loss(const AudioBuffer& buffer, int label,
              LossKind kind) const override;
  Eigen::VectorXd input_gradient(const AudioBuffer& buffer, int label,
                                 LossKind kind, double* loss_out = nullptr,
                                 Prediction* pred_out = nullptr) const override;

  /// Accumulates dLoss/dparams into grad (same length as parameters) and
  /// returns the loss. Used by the training loop.
  double loss_and_param_gradient(const AudioBuffer& buffer, int label,
                                 LossKind kind, Eigen::VectorXd& grad,
                                 int* predicted = nullptr) const;

  std::size_t parameter_count() const { return params_.size(); }
  const Eigen::VectorXd& parameters() const { return params_; }
  Eigen::VectorXd& parameters() { return params_; }

 private:
  struct Activations;
  Eigen::VectorXd logits(const AudioBuffer& buffer, Activations* acts,
                         FeatureTape* tape) const;
  void backward(const Activations& acts, const Eigen::VectorXd& grad_logits,
                Eigen::VectorXd* param_grad,
                Eigen::MatrixXd* feature_grad) const;

  ModelConfig config_;
  FeatureTransform frontend_;
  Eigen::VectorXd params_;

  // parameter slices (offsets into params_)
  struct ConvShape {
    int in_ch, out_ch, kf, kc, sf, sc;
    std::ptrdiff_t w_off, b_off;
  };
  struct LinearShape {
    int in, out;
    std::ptrdiff_t w_off, b_off;
  };
  std::vector<ConvShape> convs_;
  LinearShape head_{};
  std::vector<LinearShape> mlp_layers_;
};

// ---- Training --------------------------------------------------------------

struct LabeledSample {
  AudioBuffer audio;
  int label = 0;
};
using Dataset = std::vector<LabeledSample>;

struct TrainConfig {
  int epochs = 5;
  int batch_size = 128;
  double learning_rate = 1e-3;
  LossKind loss = LossKind::binary_focal;
  std::uint64_t seed = 1;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
};

struct EpochMetrics {
  double train_loss = 0.0;
  double train_f1 = 0.0;
  double val_f1 = 0.0;
};

struct TrainHistory {
  std::vector<EpochMetrics> epochs;
  int best_epoch = -1;
  double best_val_f1 = 0.0;
};

/// Adam training with per-epoch train/validation F1; the parameters of the
/// best validation epoch are restored before returning.
TrainHistory train(DifferentiableModel& model, const Dataset& train_set,
                   const Dataset& val_set, const TrainConfig& config);

/// Predicted-vs-actual confusion over a dataset (positive class 1).
ConfusionCounts evaluate(const Classifier& model, const Dataset& set);

/// Seeded undersampling of the majority class to the minority count.
Dataset undersample_balanced(const Dataset& set, std::uint64_t seed);

// ---- Gaussian mixture classifier -------------------------------------------

struct GmmConfig {
  int components = 8;
  int em_iters = 30;
  int kmeans_iters = 5;
  double covariance_floor = 1e-6;
  std::uint64_t seed = 1;
};

class GmmModel : public Classifier {
 public:
  GmmModel(const ModelConfig& config, const GmmConfig& gmm);

  const ModelConfig& config() const override { return config_; }
  const GmmConfig& gmm_config() const { return gmm_; }

  /// EM fit, one mixture per class; features_per_class[c] is [frame x dim].
  /// Returns the per-iteration total log-likelihood of each class mixture
  /// (entry 0 is the likelihood of the k-means initialization).
  std::vector<std::vector<double>> fit(
      const std::vector<Eigen::MatrixXd>& features_per_class);

  Prediction predict_features(const Eigen::MatrixXd& features) const;
  Prediction forward(const AudioBuffer& buffer) const override;
  double loss(const AudioBuffer& buffer, int label,
              LossKind kind) const override;
  Eigen::VectorXd input_gradient(const AudioBuffer& buffer, int label,
                                 LossKind kind, double* loss_out = nullptr,
                                 Prediction* pred_out = nullptr) const override;

  bool fitted() const { return fitted_; }

  struct Mixture {
    Eigen::VectorXd weights;  // K
    Eigen::MatrixXd means;    // K x D
    Eigen::MatrixXd vars;     // K x D, diagonal covariances
  };
  const std::vector<Mixture>& mixtures() const { return mixtures_; }
  std::vector<Mixture>& mixtures() { return mixtures_; }
  void mark_fitted() { fitted_ = true; }

 private:
  Eigen::VectorXd class_log_likelihoods(const Eigen::MatrixXd& features) const;

  ModelConfig config_;
  GmmConfig gmm_;
  FeatureTransform frontend_;
  std::vector<Mixture> mixtures_;
  bool fitted_ = false;
};

// ---- Checkpoints ------------------------------------------------------------

/// Versioned binary checkpoint ("VCKP"): JSON config header + flat payload.
/// A JSON manifest with the given extra fields is written next to it.
void save_checkpoint(const Classifier& model, const std::string& path,
                     const std::string& manifest_json);
std::unique_ptr<Classifier> load_checkpoint(const std::string& path);

std::string model_config_to_json(const ModelConfig& config,
                                 const GmmConfig* gmm = nullptr);

}  // namespace vocap
