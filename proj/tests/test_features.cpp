#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "vocap/features.hpp"

using namespace vocap;

namespace {

AudioBuffer noise(int n, unsigned seed, double amp = 0.5) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(-amp, amp);
  AudioBuffer b;
  b.samples.resize(n);
  for (int i = 0; i < n; ++i) b.samples[i] = d(rng);
  return b;
}

AudioBuffer sine(double freq, int n) {
  AudioBuffer b;
  b.samples.resize(n);
  for (int i = 0; i < n; ++i)
    b.samples[i] = 0.8 * std::sin(2.0 * M_PI * freq * i / kCanonicalRate);
  return b;
}

}  // namespace

TEST_SUITE("features") {

TEST_CASE("mfcc of 1 s at 16 kHz: 48 frames x 10 coefficients") {
  // Oracle: 1 + floor((16000 - 800)/320) = 48 with the 0.05 s / 0.02 s framing.
  auto b = noise(16000, 1);
  FeatureMatrix m = extract(b, FeatureSpec::defaults(FeatureKind::mfcc));
  CHECK(m.values.rows() == 48);
  CHECK(m.values.cols() == 10);
  CHECK(m.values.allFinite());
}

TEST_CASE("raw kind is the identity") {
  auto b = noise(1000, 2);
  FeatureMatrix m = extract(b, FeatureSpec::defaults(FeatureKind::raw));
  REQUIRE(m.values.rows() == 1);
  REQUIRE(m.values.cols() == 1000);
  for (int i = 0; i < 1000; ++i)
    CHECK(m.values(0, i) == b.samples[static_cast<std::size_t>(i)]);
}

TEST_CASE("spectrogram of a 1 kHz sine peaks at bin 128") {
  auto b = sine(1000.0, 16000);
  FeatureMatrix m = extract(b, FeatureSpec::defaults(FeatureKind::spectrogram));
  REQUIRE(m.values.cols() == 1025);
  for (int t = 0; t < m.values.rows(); ++t) {
    int arg = 0;
    m.values.row(t).maxCoeff(&arg);
    CHECK(arg == 128);
  }
}

TEST_CASE("too-short buffers rejected") {
  auto b = noise(700, 3);  // < one 800-sample window
  CHECK_THROWS_AS(extract(b, FeatureSpec::defaults(FeatureKind::mfcc)),
                  std::invalid_argument);
}

TEST_CASE("extract and extract_differentiable agree bitwise") {
  auto b = noise(8000, 4);
  for (auto kind : {FeatureKind::lfcc, FeatureKind::mfcc,
                    FeatureKind::spectrogram, FeatureKind::raw}) {
    auto spec = FeatureSpec::defaults(kind);
    FeatureMatrix plain = extract(b, spec);
    FeatureTape tape;
    FeatureMatrix diff = extract_differentiable(b, spec, tape);
    CHECK(plain.values == diff.values);
  }
}

TEST_CASE("raw backward of ones is ones (identity Jacobian)") {
  auto b = noise(500, 5);
  FeatureTransform tr(FeatureSpec::defaults(FeatureKind::raw), kCanonicalRate);
  FeatureTape tape;
  tr.forward(b, &tape);
  Eigen::MatrixXd g = Eigen::MatrixXd::Ones(1, 500);
  Eigen::VectorXd gx = tr.backward(tape, g);
  CHECK(gx.size() == 500);
  CHECK((gx.array() == 1.0).all());
}

TEST_CASE("raw round trip: backward(g) == g") {
  auto b = noise(321, 6);
  FeatureTransform tr(FeatureSpec::defaults(FeatureKind::raw), kCanonicalRate);
  FeatureTape tape;
  tr.forward(b, &tape);
  auto g = noise(321, 7);
  Eigen::MatrixXd gm(1, 321);
  for (int i = 0; i < 321; ++i) gm(0, i) = g.samples[i];
  Eigen::VectorXd gx = tr.backward(tape, gm);
  for (int i = 0; i < 321; ++i) CHECK(gx[i] == g.samples[i]);
}

// Finite-difference oracle for the frontend backward pass: the scalar probe
// is a fixed random linear functional of the feature matrix.
static void frontend_grad_check(FeatureKind kind, double tol, int coords) {
  auto spec = FeatureSpec::defaults(kind);
  auto b = oracles::voiced_like(8192, 11);
  FeatureTransform tr(spec, kCanonicalRate);

  FeatureTape tape;
  FeatureMatrix f0 = tr.forward(b, &tape);
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  Eigen::MatrixXd probe(f0.values.rows(), f0.values.cols());
  for (Eigen::Index i = 0; i < probe.size(); ++i) probe.data()[i] = d(rng);

  auto scalar = [&](const AudioBuffer& x) {
    return (tr.forward(x).values.array() * probe.array()).sum();
  };
  Eigen::VectorXd analytic = tr.backward(tape, probe);
  auto r = oracles::check_input_gradient(scalar, b, analytic, coords, 123);
  INFO("kind=", std::string(to_string(kind)), " max_rel_err=", r.max_rel_err);
  CHECK(r.max_rel_err < tol);
  CHECK(r.checked > 0);
}

TEST_CASE("spectrogram backward matches finite differences (1e-4)") {
  frontend_grad_check(FeatureKind::spectrogram, 1e-4, 50);
}

TEST_CASE("mfcc backward matches finite differences (1e-3)") {
  frontend_grad_check(FeatureKind::mfcc, 1e-3, 50);
}

TEST_CASE("lfcc backward matches finite differences (1e-3)") {
  frontend_grad_check(FeatureKind::lfcc, 1e-3, 50);
}

TEST_CASE("frontend determinism across repeated runs") {
  auto b = noise(4800, 12);
  auto spec = FeatureSpec::defaults(FeatureKind::lfcc);
  FeatureMatrix a = extract(b, spec);
  FeatureMatrix c = extract(b, spec);
  CHECK(a.values == c.values);
}

}  // TEST_SUITE
