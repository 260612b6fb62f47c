#include "vocap/psycho.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <vector>

namespace vocap {

namespace psymodel {

double bark(double hz) {
  return 13.0 * std::atan(0.00076 * hz) +
         3.5 * std::atan((hz / 7500.0) * (hz / 7500.0));
}

double absolute_threshold_db(double hz) {
  if (hz <= 0.0) return kAthClampHiDb;
  const double f = hz / 1000.0;
  const double ath = 3.64 * std::pow(f, -0.8) -
                     6.5 * std::exp(-0.6 * (f - 3.3) * (f - 3.3)) +
                     1e-3 * f * f * f * f;
  return std::clamp(ath, kAthClampLoDb, kAthClampHiDb);
}

}  // namespace psymodel

namespace {

struct Masker {
  double level_db;  // normalized dB
  double bark;
  double freq_hz;
  bool tonal;
};

struct BinTables {
  Eigen::VectorXd freq;
  Eigen::VectorXd bark;
  Eigen::VectorXd ath_db;
  Eigen::VectorXd ath_lin;
  std::vector<std::pair<int, int>> band_bins;  // [lo, hi) per critical band
  std::vector<int> band_center_bin;            // geometric mean bin
};

BinTables make_tables(const FrameSpec& spec, int rate) {
  BinTables t;
  const int nbins = spec.bins();
  t.freq.resize(nbins);
  t.bark.resize(nbins);
  t.ath_db.resize(nbins);
  t.ath_lin.resize(nbins);
  for (int k = 0; k < nbins; ++k) {
    t.freq[k] = static_cast<double>(k) * rate / spec.frame_length;
    t.bark[k] = psymodel::bark(t.freq[k]);
    t.ath_db[k] = psymodel::absolute_threshold_db(t.freq[k]);
    t.ath_lin[k] = std::pow(10.0, t.ath_db[k] / 10.0);
  }
  const int max_band = static_cast<int>(std::floor(t.bark[nbins - 1]));
  for (int band = 0; band <= max_band; ++band) {
    int lo = -1, hi = -1;
    for (int k = 0; k < nbins; ++k) {
      if (static_cast<int>(std::floor(t.bark[k])) == band) {
        if (lo < 0) lo = k;
        hi = k + 1;
      }
    }
    if (lo < 0) continue;
    t.band_bins.emplace_back(lo, hi);
    t.band_center_bin.push_back(static_cast<int>(std::lround(
        std::sqrt(static_cast<double>(std::max(lo, 1)) * (hi - 1)))));
  }
  return t;
}

double spread_db(double dz, double masker_freq_hz) {
  if (dz < 0.0) return psymodel::kLowerSlopeDbPerBark * dz;
  const double fk = std::max(masker_freq_hz / 1000.0, 0.02);
  return -(psymodel::kUpperSlopeBaseDbPerBark +
           psymodel::kUpperSlopeKhzCorrection / fk) *
         dz;
}

double masker_offset_db(const Masker& m) {
  return m.tonal
             ? psymodel::kTonalOffsetDb + psymodel::kTonalOffsetPerBark * m.bark
             : psymodel::kNoiseOffsetDb + psymodel::kNoiseOffsetPerBark * m.bark;
}

}  // namespace

MaskingThreshold global_masking_threshold(const AudioBuffer& original,
                                          const FrameSpec& spec) {
  const int nframes = frames_count(original.samples.size(), spec);
  const int nbins = spec.bins();
  const BinTables tables = make_tables(spec, original.sample_rate);
  const Eigen::VectorXd win = window_vector(spec.window, spec.frame_length);

  // Raw linear power per frame/bin; dB with the floor for peak tracking.
  Eigen::MatrixXd plin(nframes, nbins);
  Eigen::VectorXd frame(spec.frame_length);
  for (int t = 0; t < nframes; ++t) {
    const std::size_t start = static_cast<std::size_t>(t) * spec.hop_length;
    for (int i = 0; i < spec.frame_length; ++i)
      frame[i] = original.samples[start + i] * win[i];
    auto bins = rfft(frame, spec.frame_length);
    for (int k = 0; k < nbins; ++k) plin(t, k) = std::norm(bins[k]);
  }
  const double source_max =
      10.0 * std::log10(plin.maxCoeff() + kPsdPowerFloor);
  const double shift_db = psymodel::kFullScaleDb - source_max;
  const double shift_lin = std::pow(10.0, shift_db / 10.0);

  MaskingThreshold out;
  out.source_max = source_max;
  out.frame_spec = spec;
  out.sample_rate = original.sample_rate;
  out.threshold_db.resize(nframes, nbins);
  out.threshold_lin.resize(nframes, nbins);

  std::vector<double> pdb(nbins);
  std::vector<char> near_tonal(nbins);
  for (int t = 0; t < nframes; ++t) {
    for (int k = 0; k < nbins; ++k)
      pdb[k] = 10.0 * std::log10(plin(t, k) + kPsdPowerFloor) + shift_db;

    // Tonal maskers: strict local maxima that also clear the tonality margin
    // over the extended neighborhood.
    std::vector<Masker> maskers;
    std::fill(near_tonal.begin(), near_tonal.end(), 0);
    for (int k = 1; k + 1 < nbins; ++k) {
      if (!(pdb[k] > pdb[k - 1] && pdb[k] >= pdb[k + 1])) continue;
      bool tonal = true;
      for (int d : psymodel::kTonalNeighborDistances) {
        if (k - d >= 0 && pdb[k] < pdb[k - d] + psymodel::kTonalityMarginDb)
          tonal = false;
        if (k + d < nbins && pdb[k] < pdb[k + d] + psymodel::kTonalityMarginDb)
          tonal = false;
      }
      if (!tonal) continue;
      double power = 0.0;
      for (int d = -psymodel::kTonalAggregateRadius;
           d <= psymodel::kTonalAggregateRadius; ++d)
        if (k + d >= 0 && k + d < nbins) power += plin(t, k + d) * shift_lin;
      if (power <= 0.0) continue;
      maskers.push_back({10.0 * std::log10(power), tables.bark[k],
                         tables.freq[k], true});
      for (int d = -psymodel::kTonalAggregateRadius;
           d <= psymodel::kTonalAggregateRadius; ++d)
        if (k + d >= 0 && k + d < nbins) near_tonal[k + d] = 1;
    }

    // Noise maskers: residual energy per critical band. Bins with exactly
    // zero signal power carry no energy, so digital silence yields none.
    for (std::size_t b = 0; b < tables.band_bins.size(); ++b) {
      double power = 0.0;
      for (int k = tables.band_bins[b].first; k < tables.band_bins[b].second;
           ++k)
        if (!near_tonal[k]) power += plin(t, k) * shift_lin;
      if (power <= 0.0) continue;
      const int kc = tables.band_center_bin[b];
      maskers.push_back({10.0 * std::log10(power), tables.bark[kc],
                         tables.freq[kc], false});
    }

    // Drop maskers below the hearing threshold; within 0.5 Bark keep the
    // strongest.
    std::vector<Masker> kept;
    std::sort(maskers.begin(), maskers.end(),
              [](const Masker& a, const Masker& b) { return a.bark < b.bark; });
    for (const Masker& m : maskers) {
      if (m.level_db < psymodel::absolute_threshold_db(m.freq_hz)) continue;
      if (!kept.empty() &&
          m.bark - kept.back().bark < psymodel::kMaskerPruneRadiusBark) {
        if (m.level_db > kept.back().level_db) kept.back() = m;
      } else {
        kept.push_back(m);
      }
    }

    // Combine individual thresholds with the hearing threshold by power
    // addition.
    for (int k = 0; k < nbins; ++k) {
      double total = tables.ath_lin[k];
      for (const Masker& m : kept) {
        const double dz = tables.bark[k] - m.bark;
        if (dz < psymodel::kSpreadWindowLoBark ||
            dz > psymodel::kSpreadWindowHiBark)
          continue;
        const double tdb =
            m.level_db - masker_offset_db(m) + spread_db(dz, m.freq_hz);
        total += std::pow(10.0, tdb / 10.0);
      }
      out.threshold_lin(t, k) = total;
      out.threshold_db(t, k) = 10.0 * std::log10(total);
    }
  }
  return out;
}

PsdFrames normalized_perturbation_psd(const AudioBuffer& perturbation,
                                      double original_max,
                                      const FrameSpec& spec) {
  PsdFrames psd = psd_estimate(perturbation, spec);
  psd.values.array() += psymodel::kFullScaleDb - original_max;
  psd.source_max = psd.values.maxCoeff();
  return psd;
}

namespace {

void check_shapes(const AudioBuffer& perturbation,
                  const MaskingThreshold& threshold) {
  const int nframes =
      frames_count(perturbation.samples.size(), threshold.frame_spec);
  if (nframes != threshold.frames())
    throw std::invalid_argument(
        "perturbation/threshold shape mismatch: " + std::to_string(nframes) +
        " vs " + std::to_string(threshold.frames()) + " frames");
}

}  // namespace

double perceptual_loss(const AudioBuffer& perturbation,
                       const MaskingThreshold& threshold) {
  check_shapes(perturbation, threshold);
  const FrameSpec& spec = threshold.frame_spec;
  const Eigen::VectorXd win = window_vector(spec.window, spec.frame_length);
  const double norm_lin =
      std::pow(10.0, (psymodel::kFullScaleDb - threshold.source_max) / 10.0);
  const int nframes = threshold.frames();
  const int nbins = threshold.bins();
  const double inv_count = 1.0 / (static_cast<double>(nframes) * nbins);

  double loss = 0.0;
  Eigen::VectorXd frame(spec.frame_length);
  for (int t = 0; t < nframes; ++t) {
    const std::size_t start = static_cast<std::size_t>(t) * spec.hop_length;
    for (int i = 0; i < spec.frame_length; ++i)
      frame[i] = perturbation.samples[start + i] * win[i];
    auto bins = rfft(frame, spec.frame_length);
    for (int k = 0; k < nbins; ++k) {
      const double p = (std::norm(bins[k]) + kPsdPowerFloor) * norm_lin;
      const double over = p - threshold.threshold_lin(t, k);
      if (over > 0.0) loss += over * inv_count;
    }
  }
  return loss;
}

Eigen::VectorXd perceptual_loss_gradient(const AudioBuffer& perturbation,
                                         const MaskingThreshold& threshold,
                                         double* loss_out,
                                         double* violation_fraction_out) {
  check_shapes(perturbation, threshold);
  const FrameSpec& spec = threshold.frame_spec;
  const int nframes = threshold.frames();
  const int nbins = threshold.bins();
  const Eigen::VectorXd win = window_vector(spec.window, spec.frame_length);
  const double norm_lin =
      std::pow(10.0, (psymodel::kFullScaleDb - threshold.source_max) / 10.0);
  const double inv_count = 1.0 / (static_cast<double>(nframes) * nbins);

  Eigen::VectorXd grad =
      Eigen::VectorXd::Zero(static_cast<Eigen::Index>(perturbation.size()));
  double loss = 0.0;
  long violations = 0;
  Eigen::VectorXd frame(spec.frame_length);
  std::vector<std::complex<double>> gbins(nbins);
  for (int t = 0; t < nframes; ++t) {
    const std::size_t start = static_cast<std::size_t>(t) * spec.hop_length;
    for (int i = 0; i < spec.frame_length; ++i)
      frame[i] = perturbation.samples[start + i] * win[i];
    auto bins = rfft(frame, spec.frame_length);
    bool any = false;
    for (int k = 0; k < nbins; ++k) {
      const double p = (std::norm(bins[k]) + kPsdPowerFloor) * norm_lin;
      const double over = p - threshold.threshold_lin(t, k);
      if (over > 0.0) {
        loss += over * inv_count;
        gbins[k] = (2.0 * norm_lin * inv_count) * bins[k];
        any = true;
        ++violations;
      } else {
        gbins[k] = {0.0, 0.0};
      }
    }
    if (!any) continue;
    Eigen::VectorXd gframe =
        rfft_adjoint(gbins, spec.frame_length, spec.frame_length);
    for (int i = 0; i < spec.frame_length; ++i)
      grad[start + i] += gframe[i] * win[i];
  }
  if (loss_out) *loss_out = loss;
  if (violation_fraction_out)
    *violation_fraction_out =
        static_cast<double>(violations) / (static_cast<double>(nframes) * nbins);
  return grad;
}

PerceptualMargin perceptual_margin(const AudioBuffer& perturbation,
                                   const MaskingThreshold& threshold) {
  check_shapes(perturbation, threshold);
  PsdFrames pbar = normalized_perturbation_psd(
      perturbation, threshold.source_max, threshold.frame_spec);
  PerceptualMargin out;
  out.margin_db = pbar.values - threshold.threshold_db;
  out.violation_fraction =
      static_cast<double>((out.margin_db.array() > 0.0).count()) /
      static_cast<double>(out.margin_db.size());
  return out;
}

void dump_threshold_csv(std::ostream& os, const MaskingThreshold& threshold,
                        const PerceptualMargin* margin) {
  os << "frame,bin,threshold_db" << (margin ? ",margin_db" : "") << "\n";
  for (int t = 0; t < threshold.frames(); ++t)
    for (int k = 0; k < threshold.bins(); ++k) {
      os << t << "," << k << "," << threshold.threshold_db(t, k);
      if (margin) os << "," << margin->margin_db(t, k);
      os << "\n";
    }
}

}  // namespace vocap
