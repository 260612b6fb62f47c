#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "oracles.hpp"
#include "vocap/psycho.hpp"

using namespace vocap;

namespace {

AudioBuffer sine(double freq, double amp, int n) {
  AudioBuffer b;
  b.samples.resize(n);
  for (int i = 0; i < n; ++i)
    b.samples[i] = amp * std::sin(2.0 * M_PI * freq * i / kCanonicalRate);
  return b;
}

AudioBuffer scaled(const AudioBuffer& b, double c) {
  AudioBuffer out = b;
  for (double& s : out.samples) s *= c;
  return out;
}

double power_add_db(double a_db, double b_db) {
  return 10.0 * std::log10(std::pow(10.0, a_db / 10.0) +
                           std::pow(10.0, b_db / 10.0));
}

}  // namespace

TEST_SUITE("psycho") {

TEST_CASE("digital silence: threshold equals the hearing threshold curve") {
  AudioBuffer b;
  b.samples.assign(4096, 0.0);
  FrameSpec spec;
  MaskingThreshold th = global_masking_threshold(b, spec);
  for (int t = 0; t < th.frames(); ++t)
    for (int k = 0; k < th.bins(); ++k) {
      double f = static_cast<double>(k) * kCanonicalRate / spec.frame_length;
      CHECK(th.threshold_db(t, k) ==
            doctest::Approx(psymodel::absolute_threshold_db(f)).epsilon(1e-9));
    }
}

TEST_CASE("full-scale 1 kHz sine: strong elevation near the masker") {
  auto b = sine(1000.0, 1.0, 16000);
  FrameSpec spec;
  MaskingThreshold th = global_masking_threshold(b, spec);
  PsdFrames psd = psd_estimate(b, spec);

  const double bark_1k = psymodel::bark(1000.0);
  for (int t = 0; t < th.frames(); ++t) {
    for (int k = 0; k < th.bins(); ++k) {
      double f = static_cast<double>(k) * kCanonicalRate / spec.frame_length;
      if (std::abs(psymodel::bark(f) - bark_1k) <= 0.5) {
        CHECK(th.threshold_db(t, k) >
              psymodel::absolute_threshold_db(f) + 20.0);
      }
    }
  }

  // Independent single-masker oracle at the peak bin: aggregate the peak's
  // three normalized PSD bins, subtract the tonal offset, and power-add the
  // hearing threshold. With one dominant masker the production path must
  // reproduce this value at the masker position.
  const int peak_bin = 128;
  double shift = psymodel::kFullScaleDb - psd.source_max;
  for (int t = 0; t < th.frames(); ++t) {
    double p = 0.0;
    for (int d = -1; d <= 1; ++d)
      p += std::pow(10.0, (psd.values(t, peak_bin + d) + shift) / 10.0);
    double level = 10.0 * std::log10(p);
    double f = 1000.0;
    double expected = power_add_db(
        psymodel::absolute_threshold_db(f),
        level - (psymodel::kTonalOffsetDb +
                 psymodel::kTonalOffsetPerBark * psymodel::bark(f)));
    CHECK(th.threshold_db(t, peak_bin) ==
          doctest::Approx(expected).epsilon(1e-3));
  }
}

TEST_CASE("amplitude invariance of the threshold") {
  auto b = oracles::voiced_like(8192, 3);
  FrameSpec spec;
  MaskingThreshold base = global_masking_threshold(b, spec);
  for (double c : {0.1, 10.0, 0.37}) {
    MaskingThreshold s = global_masking_threshold(scaled(b, c), spec);
    double dev = (s.threshold_db - base.threshold_db).array().abs().maxCoeff();
    CHECK(dev < 1e-6);
  }
}

TEST_CASE("threshold never drops below the hearing threshold") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> d(-0.7, 0.7);
  AudioBuffer b;
  b.samples.resize(6144);
  for (auto& s : b.samples) s = d(rng);
  FrameSpec spec;
  MaskingThreshold th = global_masking_threshold(b, spec);
  for (int t = 0; t < th.frames(); ++t)
    for (int k = 0; k < th.bins(); ++k) {
      double f = static_cast<double>(k) * kCanonicalRate / spec.frame_length;
      CHECK(th.threshold_db(t, k) >=
            psymodel::absolute_threshold_db(f) - 1e-6);
    }
}

TEST_CASE("locality: elevation decays monotonically beyond the adjacent band") {
  auto b = sine(1000.0, 0.9, 4096);
  FrameSpec spec;
  MaskingThreshold th = global_masking_threshold(b, spec);
  const double bark_1k = psymodel::bark(1000.0);
  // Walk upward in frequency from one Bark above the masker.
  double prev = 1e9;
  for (int k = 0; k < th.bins(); ++k) {
    double f = static_cast<double>(k) * kCanonicalRate / spec.frame_length;
    double dz = psymodel::bark(f) - bark_1k;
    if (dz < 1.0) continue;
    double elevation = th.threshold_db(0, k) - psymodel::absolute_threshold_db(f);
    CHECK(elevation <= prev + 1e-9);
    prev = elevation;
  }
}

TEST_CASE("normalized perturbation psd: identity, zero and scaling cases") {
  auto b = oracles::voiced_like(4096, 7);
  FrameSpec spec;
  PsdFrames px = psd_estimate(b, spec);

  // perturbation identical to the original: max of normalized psd is 96 dB
  PsdFrames pbar = normalized_perturbation_psd(b, px.source_max, spec);
  CHECK(std::abs(pbar.values.maxCoeff() - 96.0) < 1e-9);

  // zero perturbation: every entry is 96 - max + floor_db
  AudioBuffer zero;
  zero.samples.assign(b.samples.size(), 0.0);
  PsdFrames pz = normalized_perturbation_psd(zero, px.source_max, spec);
  const double expect = 96.0 - px.source_max + psd_floor_db();
  CHECK((pz.values.array() - expect).abs().maxCoeff() < 1e-9);

  // x10 perturbation: +20 dB elementwise
  PsdFrames p10 = normalized_perturbation_psd(scaled(b, 10.0), px.source_max, spec);
  double dev = ((p10.values - pbar.values).array() - 20.0).abs().maxCoeff();
  CHECK(dev < 1e-6);
}

TEST_CASE("perceptual loss: zero perturbation is silent, original is audible") {
  auto b = oracles::voiced_like(8192, 9);
  FrameSpec spec;
  MaskingThreshold th = global_masking_threshold(b, spec);

  AudioBuffer zero;
  zero.samples.assign(b.samples.size(), 0.0);
  CHECK(perceptual_loss(zero, th) == 0.0);
  CHECK(perceptual_margin(zero, th).violation_fraction == 0.0);

  // the original signal as its own perturbation peaks at 96 dB, above any
  // masking threshold
  CHECK(perceptual_loss(b, th) > 0.0);
  CHECK(perceptual_margin(b, th).violation_fraction > 0.0);
}

TEST_CASE("doubling an audible perturbation strictly increases the loss") {
  auto b = oracles::voiced_like(8192, 10);
  FrameSpec spec;
  MaskingThreshold th = global_masking_threshold(b, spec);
  auto pert = scaled(oracles::voiced_like(8192, 11, 90.0), 0.3);
  double l1 = perceptual_loss(pert, th);
  REQUIRE(l1 > 0.0);
  double l2 = perceptual_loss(scaled(pert, 2.0), th);
  CHECK(l2 > l1);
}

TEST_CASE("halving a perturbation never raises the violation fraction") {
  auto b = oracles::voiced_like(8192, 12);
  FrameSpec spec;
  MaskingThreshold th = global_masking_threshold(b, spec);
  auto pert = scaled(oracles::voiced_like(8192, 13, 70.0), 0.2);
  double v1 = perceptual_margin(pert, th).violation_fraction;
  double v2 = perceptual_margin(scaled(pert, 0.5), th).violation_fraction;
  CHECK(v2 <= v1);
}

TEST_CASE("loss is zero iff no bin violates the threshold") {
  std::mt19937_64 rng(14);
  std::uniform_real_distribution<double> amp(0.001, 0.3);
  auto b = oracles::voiced_like(8192, 15);
  FrameSpec spec;
  MaskingThreshold th = global_masking_threshold(b, spec);
  for (int rep = 0; rep < 8; ++rep) {
    auto pert = scaled(oracles::voiced_like(8192, 20 + rep, 150.0), amp(rng));
    double loss = perceptual_loss(pert, th);
    double vf = perceptual_margin(pert, th).violation_fraction;
    CHECK((loss == 0.0) == (vf == 0.0));
  }
}

TEST_CASE("perceptual loss gradient matches finite differences") {
  auto b = oracles::voiced_like(6144, 16);
  FrameSpec spec;
  MaskingThreshold th = global_masking_threshold(b, spec);
  auto pert = scaled(oracles::voiced_like(6144, 17, 95.0), 0.4);
  double loss0 = 0.0;
  Eigen::VectorXd g = perceptual_loss_gradient(pert, th, &loss0);
  REQUIRE(loss0 > 0.0);
  CHECK(loss0 == doctest::Approx(perceptual_loss(pert, th)));
  auto f = [&](const AudioBuffer& x) { return perceptual_loss(x, th); };
  auto r = oracles::check_input_gradient(f, pert, g, 100, 18);
  INFO("rel err ", r.max_rel_err);
  CHECK(r.max_rel_err < 1e-4);
  CHECK(r.checked > 0);
}

TEST_CASE("shape mismatch rejected") {
  auto b = oracles::voiced_like(8192, 19);
  FrameSpec spec;
  MaskingThreshold th = global_masking_threshold(b, spec);
  AudioBuffer shorter;
  shorter.samples.assign(4096, 0.01);
  CHECK_THROWS_AS(perceptual_loss(shorter, th), std::invalid_argument);
  CHECK_THROWS_AS(perceptual_margin(shorter, th), std::invalid_argument);
}

TEST_CASE("csv dump shape") {
  auto b = oracles::voiced_like(2048, 21);
  FrameSpec spec;
  MaskingThreshold th = global_masking_threshold(b, spec);
  std::ostringstream os;
  dump_threshold_csv(os, th);
  std::string s = os.str();
  std::size_t lines = std::count(s.begin(), s.end(), '\n');
  CHECK(lines == static_cast<std::size_t>(th.frames() * th.bins() + 1));
  CHECK(s.rfind("frame,bin,threshold_db\n", 0) == 0);
}

}  // TEST_SUITE
