#include <doctest.h>

#include <cmath>
#include <memory>
#include <random>

#include "oracles.hpp"
#include "vocap/attack.hpp"

using namespace vocap;

namespace {

// fake = low-pitch tone (label 0), real = high-pitch tone (label 1)
AudioBuffer tone(double freq, int n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * M_PI);
  std::uniform_real_distribution<double> amp(0.4, 0.7);
  std::uniform_real_distribution<double> jr(-0.02, 0.02);
  AudioBuffer b;
  b.samples.resize(n);
  double p = phase(rng), a = amp(rng);
  for (int i = 0; i < n; ++i)
    b.samples[i] =
        a * std::sin(2.0 * M_PI * freq * i / kCanonicalRate + p) + jr(rng);
  return b;
}

constexpr int kLen = 4800;

std::unique_ptr<DifferentiableModel> trained_surrogate() {
  ModelConfig mc;
  mc.architecture = Architecture::mlp;
  mc.frontend = FeatureSpec::defaults(FeatureKind::lfcc);
  mc.layer_widths = {16};
  mc.seed = 11;
  auto model = std::make_unique<DifferentiableModel>(mc);
  Dataset train_set;
  for (int i = 0; i < 30; ++i) {
    train_set.push_back({tone(440.0, kLen, 100 + i), 0});
    train_set.push_back({tone(2600.0, kLen, 200 + i), 1});
  }
  TrainConfig tc;
  tc.epochs = 6;
  tc.batch_size = 10;
  tc.learning_rate = 0.02;
  tc.loss = LossKind::cross_entropy;
  train(*model, train_set, {}, tc);
  return model;
}

}  // namespace

TEST_SUITE("attack") {

TEST_CASE("zero iterations returns the input untouched") {
  auto surrogate = trained_surrogate();
  auto x = tone(440.0, kLen, 1);
  AttackConfig cfg;
  cfg.stage1_iters = 0;
  AttackResult r = stage1_evade(*surrogate, x, cfg);
  CHECK(r.adversarial.samples == x.samples);
  CHECK(r.perturbation.samples ==
        std::vector<double>(static_cast<std::size_t>(kLen), 0.0));
  CHECK(r.loss_trace.size() == 1);
}

TEST_CASE("norm safety: perturbation stays inside the epsilon ball") {
  auto surrogate = trained_surrogate();
  auto x = tone(440.0, kLen, 2);
  AttackConfig cfg;
  cfg.epsilon = 0.004;
  cfg.stage1_iters = 60;
  cfg.confidence_threshold = 1.0;  // never stop early
  AttackResult r = stage1_evade(*surrogate, x, cfg);
  double mx = 0;
  for (double d : r.perturbation.samples) mx = std::max(mx, std::abs(d));
  CHECK(mx <= cfg.epsilon);
  CHECK(mx > 0.0);
  for (std::size_t i = 0; i < x.samples.size(); ++i)
    CHECK(r.adversarial.samples[i] ==
          x.samples[i] + r.perturbation.samples[i]);
}

TEST_CASE("stage 1 evades the surrogate on a fake sample") {
  auto surrogate = trained_surrogate();
  auto x = tone(440.0, kLen, 3);
  REQUIRE(surrogate->forward(x).label == 0);
  AttackConfig cfg;
  AttackResult r = stage1_evade(*surrogate, x, cfg);
  CHECK(r.stage1_success);
  CHECK(r.final_prediction.label == 1);
  CHECK_FALSE(r.perceptual.has_value());
}

TEST_CASE("stage 1 stops early once the confidence threshold is reached") {
  auto surrogate = trained_surrogate();
  auto x = tone(440.0, kLen, 3);
  AttackConfig cfg;
  cfg.epsilon = 0.08;  // box large enough to reach high confidence
  cfg.lr_stage1 = 0.004;
  AttackResult r = stage1_evade(*surrogate, x, cfg);
  CHECK(r.stage1_success);
  CHECK(r.surrogate_confidence >= cfg.confidence_threshold);
  CHECK(r.best_iteration < cfg.stage1_iters);
  CHECK(r.loss_trace.size() == static_cast<std::size_t>(r.best_iteration + 1));
}

TEST_CASE("stage 2 demands a successful seed") {
  auto surrogate = trained_surrogate();
  auto x = tone(440.0, kLen, 4);
  AttackConfig cfg;
  cfg.stage1_iters = 0;  // seed cannot be on-target
  AttackResult seed = stage1_evade(*surrogate, x, cfg);
  REQUIRE_FALSE(seed.stage1_success);
  MaskingThreshold th = global_masking_threshold(x, FrameSpec{});
  CHECK_THROWS_AS(stage2_imperceptible(*surrogate, x, seed, th, cfg),
                  std::invalid_argument);
}

TEST_CASE("stage 2 never worsens the violation fraction and is consistent") {
  auto surrogate = trained_surrogate();
  auto x = tone(440.0, kLen, 5);
  AttackConfig cfg;
  cfg.stage2_iters = 150;
  AttackResult seed = stage1_evade(*surrogate, x, cfg);
  REQUIRE(seed.stage1_success);
  MaskingThreshold th = global_masking_threshold(x, FrameSpec{});
  double seed_vf = perceptual_margin(seed.perturbation, th).violation_fraction;

  AttackResult r = stage2_imperceptible(*surrogate, x, seed, th, cfg);
  CHECK(r.loss_trace.size() == static_cast<std::size_t>(cfg.stage2_iters + 1));
  REQUIRE(r.perceptual.has_value());
  CHECK(r.perceptual->violation_fraction <= seed_vf);
  CHECK(r.final_prediction.label == 1);

  // objective consistency at the returned iterate
  double l_net = surrogate->loss(r.adversarial, cfg.target_label,
                                 LossKind::cross_entropy);
  double l_theta = perceptual_loss(r.perturbation, th);
  CHECK(std::abs(l_net - r.loss_trace[r.best_iteration].l_net) < 1e-6);
  CHECK(std::abs(l_theta - r.loss_trace[r.best_iteration].l_theta) < 1e-6);
}

TEST_CASE("alpha = 0 degenerates to plain evasion descent") {
  auto surrogate = trained_surrogate();
  auto x = tone(440.0, kLen, 6);
  AttackConfig cfg;
  cfg.alpha = 0.0;
  cfg.alpha_adapt = AlphaAdapt::fixed;
  cfg.stage2_iters = 40;
  AttackResult seed = stage1_evade(*surrogate, x, cfg);
  REQUIRE(seed.stage1_success);
  MaskingThreshold th = global_masking_threshold(x, FrameSpec{});
  AttackResult r = stage2_imperceptible(*surrogate, x, seed, th, cfg);
  CHECK(r.final_prediction.label == 1);
}

TEST_CASE("attacks are deterministic") {
  auto surrogate = trained_surrogate();
  auto x = tone(440.0, kLen, 7);
  AttackConfig cfg;
  cfg.stage2_iters = 50;
  MaskingThreshold th = global_masking_threshold(x, FrameSpec{});
  AttackResult s1 = stage1_evade(*surrogate, x, cfg);
  AttackResult s2 = stage1_evade(*surrogate, x, cfg);
  CHECK(s1.perturbation.samples == s2.perturbation.samples);
  AttackResult t1 = stage2_imperceptible(*surrogate, x, s1, th, cfg);
  AttackResult t2 = stage2_imperceptible(*surrogate, x, s2, th, cfg);
  CHECK(t1.perturbation.samples == t2.perturbation.samples);
  CHECK(t1.best_iteration == t2.best_iteration);
}

TEST_CASE("pgd: zero iterations is the identity, projections hold") {
  auto surrogate = trained_surrogate();
  auto x = tone(2600.0, kLen, 8);
  AudioBuffer same = pgd_attack(*surrogate, x, 1, 0.01, 0.0025, 0);
  CHECK(same.samples == x.samples);

  AudioBuffer adv = pgd_attack(*surrogate, x, 1, 0.01, 0.0025, 20);
  for (std::size_t i = 0; i < x.samples.size(); ++i) {
    CHECK(std::abs(adv.samples[i] - x.samples[i]) <= 0.01 + 1e-15);
    CHECK(adv.samples[i] <= 1.0);
    CHECK(adv.samples[i] >= -1.0);
  }
}

TEST_CASE("pgd flips a correctly classified sample on an undefended model") {
  auto surrogate = trained_surrogate();
  // a real-labeled sample near the decision boundary
  auto hi = tone(2600.0, kLen, 9);
  auto lo = tone(440.0, kLen, 10);
  AudioBuffer x = hi;
  for (std::size_t i = 0; i < x.samples.size(); ++i)
    x.samples[i] = 0.62 * hi.samples[i] + 0.38 * lo.samples[i];
  REQUIRE(surrogate->forward(x).label == 1);
  AudioBuffer adv = pgd_attack(*surrogate, x, 1, 0.02, 0.005, 30);
  CHECK(surrogate->forward(adv).label == 0);
}

TEST_CASE("config validation") {
  AttackConfig bad;
  bad.epsilon = 0.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = AttackConfig{};
  bad.alpha = -1.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

}  // TEST_SUITE
