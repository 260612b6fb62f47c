#include "vocap/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>

#include "vocap/serialize.hpp"

namespace fs = std::filesystem;

namespace vocap {

const char* to_string(TaskKind t) {
  switch (t) {
    case TaskKind::sing: return "sing";
    case TaskKind::hum_tone: return "hum_tone";
    case TaskKind::speak_emotion: return "speak_emotion";
    case TaskKind::laugh: return "laugh";
    case TaskKind::domestic_sound: return "domestic_sound";
  }
  return "?";
}

const char* task_code(TaskKind t) {
  switch (t) {
    case TaskKind::sing: return "S";
    case TaskKind::hum_tone: return "HT";
    case TaskKind::speak_emotion: return "SE";
    case TaskKind::laugh: return "L";
    case TaskKind::domestic_sound: return "DS";
  }
  return "?";
}

TaskKind task_from_string(const std::string& s) {
  for (TaskKind t : kAllTasks)
    if (s == to_string(t)) return t;
  throw std::invalid_argument("unknown task: " + s);
}

const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw std::invalid_argument("unknown split: " + s);
}

const char* to_string(Draw d) {
  return d == Draw::defender ? "defender" : "attacker";
}

Draw draw_from_string(const std::string& s) {
  if (s == "defender") return Draw::defender;
  if (s == "attacker") return Draw::attacker;
  throw std::invalid_argument("unknown draw: " + s);
}

void SyntheticCorpusSpec::validate() const {
  if (samples_per_task < 10 || samples_per_task % 2 != 0)
    throw std::invalid_argument("samples_per_task must be even and >= 10");
  if (duration_s <= 0.25)
    throw std::invalid_argument("duration_s must exceed 0.25");
  if (speaker_profiles < 1)
    throw std::invalid_argument("speaker_profiles must be >= 1");
  if (std::abs(split_train + split_val + split_test - 1.0) > 1e-9)
    throw std::invalid_argument("split fractions must sum to 1");
  if (fake_smoothing_bins < 3 || fake_smoothing_bins % 2 == 0)
    throw std::invalid_argument("fake_smoothing_bins must be odd and >= 3");
}

// ---- speaker profiles -------------------------------------------------------

double profile_gain(int profile, double hz) {
  std::mt19937_64 rng(9000ull + static_cast<std::uint64_t>(profile));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double f1 = 300.0 + 500.0 * u(rng);
  const double f2 = 1000.0 + 1200.0 * u(rng);
  const double f3 = 2400.0 + 1100.0 * u(rng);
  const double b1 = 120.0 + 120.0 * u(rng);
  const double b2 = 180.0 + 180.0 * u(rng);
  const double b3 = 260.0 + 200.0 * u(rng);
  const double tilt_db_per_khz = -3.0 + 5.0 * u(rng);

  auto bump = [&](double f0, double bw) {
    double d = (hz - f0) / bw;
    return std::exp(-0.5 * d * d);
  };
  double gain_db = 12.0 * bump(f1, b1) + 10.0 * bump(f2, b2) +
                   8.0 * bump(f3, b3) + tilt_db_per_khz * hz / 1000.0;
  return std::pow(10.0, gain_db / 20.0);
}

Eigen::VectorXd profile_envelope(int profile, int bins, int nfft, int rate) {
  Eigen::VectorXd env(bins);
  for (int k = 0; k < bins; ++k)
    env[k] = profile_gain(profile, static_cast<double>(k) * rate / nfft);
  return env;
}

// ---- generators -------------------------------------------------------------

namespace {

struct Rng {
  std::mt19937_64 gen;
  explicit Rng(std::uint64_t seed) : gen(seed) {}
  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(gen);
  }
  double normal(double sigma) {
    return std::normal_distribution<double>(0.0, sigma)(gen);
  }
  int integer(int lo, int hi) {
    return std::uniform_int_distribution<int>(lo, hi)(gen);
  }
};

void color_by_profile(AudioBuffer& b, int profile) {
  FrameSpec spec;
  spec.frame_length = 1024;
  spec.hop_length = 256;
  AudioBuffer shaped = stft_resynthesize(
      b, spec, [&](int, std::vector<std::complex<double>>& bins) {
        for (std::size_t k = 0; k < bins.size(); ++k)
          bins[k] *= profile_gain(
              profile, static_cast<double>(k) * b.sample_rate / spec.frame_length);
      });
  b = std::move(shaped);
}

void normalize_peak(AudioBuffer& b, double peak) {
  double mx = 0.0;
  for (double s : b.samples) mx = std::max(mx, std::abs(s));
  if (mx < 1e-12) return;
  for (double& s : b.samples) s *= peak / mx;
}

AudioBuffer gen_sing(Rng& rng, int n, int rate) {
  AudioBuffer b;
  b.sample_rate = rate;
  b.samples.assign(n, 0.0);
  const double f0 = rng.uniform(180.0, 330.0);
  const double vib_rate = rng.uniform(4.5, 6.5);
  const double vib_depth = rng.uniform(0.02, 0.04);
  const double phi = rng.uniform(0.0, 2.0 * M_PI);
  const int harmonics = std::min(24, static_cast<int>(6000.0 / f0));
  std::vector<double> hphase(harmonics + 1);
  for (int h = 1; h <= harmonics; ++h) hphase[h] = rng.uniform(0.0, 2.0 * M_PI);
  double phase = phi;
  for (int i = 0; i < n; ++i) {
    double t = static_cast<double>(i) / rate;
    double f = f0 * (1.0 + vib_depth * std::sin(2.0 * M_PI * vib_rate * t));
    phase += 2.0 * M_PI * f / rate;
    double s = 0.0;
    for (int h = 1; h <= harmonics; ++h)
      s += std::sin(h * phase + hphase[h]) / std::pow(h, 1.1);
    b.samples[i] = s + rng.normal(0.01);
  }
  return b;
}

AudioBuffer gen_hum(Rng& rng, int n, int rate) {
  AudioBuffer b;
  b.sample_rate = rate;
  b.samples.assign(n, 0.0);
  const double f0 = rng.uniform(90.0, 160.0);
  const double drift = rng.uniform(-0.01, 0.01);
  const int harmonics = std::min(16, static_cast<int>(3000.0 / f0));
  std::vector<double> hphase(harmonics + 1);
  for (int h = 1; h <= harmonics; ++h) hphase[h] = rng.uniform(0.0, 2.0 * M_PI);
  double phase = rng.uniform(0.0, 2.0 * M_PI);
  for (int i = 0; i < n; ++i) {
    double t = static_cast<double>(i) / rate;
    phase += 2.0 * M_PI * f0 * (1.0 + drift * t) / rate;
    double s = 0.0;
    for (int h = 1; h <= harmonics; ++h)
      s += std::sin(h * phase + hphase[h]) / std::pow(h, 2.0);
    b.samples[i] = s + rng.normal(0.004);
  }
  return b;
}

AudioBuffer gen_emotion(Rng& rng, int n, int rate) {
  AudioBuffer b;
  b.sample_rate = rate;
  b.samples.assign(n, 0.0);
  const int segments = rng.integer(2, 4);
  std::vector<double> f0s(segments + 1);
  for (double& f : f0s) f = rng.uniform(130.0, 380.0);
  const double am_rate = rng.uniform(3.0, 5.0);
  const double am_phase = rng.uniform(0.0, 2.0 * M_PI);
  const int harmonics = 18;
  std::vector<double> hphase(harmonics + 1);
  for (int h = 1; h <= harmonics; ++h) hphase[h] = rng.uniform(0.0, 2.0 * M_PI);
  double phase = 0.0;
  for (int i = 0; i < n; ++i) {
    double t = static_cast<double>(i) / rate;
    double pos = t / (static_cast<double>(n) / rate) * segments;
    int seg = std::min(segments - 1, static_cast<int>(pos));
    double frac = pos - seg;
    double f = f0s[seg] * (1.0 - frac) + f0s[seg + 1] * frac;
    phase += 2.0 * M_PI * f / rate;
    double s = 0.0;
    for (int h = 1; h <= harmonics; ++h)
      s += std::sin(h * phase + hphase[h]) / h;
    double am = 0.6 + 0.4 * std::sin(2.0 * M_PI * am_rate * t + am_phase);
    b.samples[i] = am * s + rng.normal(0.02);
  }
  return b;
}

AudioBuffer gen_laugh(Rng& rng, int n, int rate) {
  AudioBuffer b;
  b.sample_rate = rate;
  b.samples.assign(n, 0.0);
  const double burst_rate = rng.uniform(4.0, 6.0);
  const double duty = rng.uniform(0.3, 0.5);
  const double f0 = rng.uniform(200.0, 320.0);
  const double burst_phase = rng.uniform(0.0, 1.0);
  double phase = 0.0;
  for (int i = 0; i < n; ++i) {
    double t = static_cast<double>(i) / rate;
    double cycle = std::fmod(t * burst_rate + burst_phase, 1.0);
    double env = cycle < duty
                     ? std::sin(M_PI * cycle / duty)  // smooth burst
                     : 0.0;
    phase += 2.0 * M_PI * f0 / rate;
    double voiced = 0.3 * (std::sin(phase) + 0.5 * std::sin(2 * phase));
    b.samples[i] = env * (rng.normal(0.8) + voiced) + rng.normal(0.01);
  }
  // band-shape the noise toward speech band
  FrameSpec spec;
  spec.frame_length = 1024;
  spec.hop_length = 256;
  b = stft_resynthesize(b, spec,
                        [&](int, std::vector<std::complex<double>>& bins) {
                          for (std::size_t k = 0; k < bins.size(); ++k) {
                            double f = static_cast<double>(k) * rate / 1024;
                            double g =
                                f < 300.0
                                    ? f / 300.0
                                    : (f > 2800.0
                                           ? std::exp(-(f - 2800.0) / 1500.0)
                                           : 1.0);
                            bins[k] *= g;
                          }
                        });
  return b;
}

AudioBuffer gen_domestic(Rng& rng, int n, int rate) {
  AudioBuffer b;
  b.sample_rate = rate;
  b.samples.assign(n, 0.0);
  const int impacts = rng.integer(3, 8);
  for (int e = 0; e < impacts; ++e) {
    int at = rng.integer(0, n - rate / 8);
    double tau = rng.uniform(0.02, 0.08);
    double ring = rng.uniform(300.0, 3000.0);
    double amp = rng.uniform(0.4, 1.0);
    double ring_phase = rng.uniform(0.0, 2.0 * M_PI);
    int dur = std::min(n - at, static_cast<int>(5.0 * tau * rate));
    for (int i = 0; i < dur; ++i) {
      double t = static_cast<double>(i) / rate;
      double body = std::sin(2.0 * M_PI * ring * t + ring_phase) +
                    0.4 * rng.normal(1.0) * std::exp(-t / (0.2 * tau));
      b.samples[static_cast<std::size_t>(at + i)] +=
          amp * std::exp(-t / tau) * body;
    }
  }
  for (int i = 0; i < n; ++i) {
    double t = static_cast<double>(i) / rate;
    b.samples[i] += 0.01 * std::sin(2.0 * M_PI * 50.0 * t) + rng.normal(0.004);
  }
  return b;
}

}  // namespace

AudioBuffer synthesize_task_clip(TaskKind task, int profile, int samples,
                                 int sample_rate, std::uint64_t seed) {
  Rng rng(seed);
  AudioBuffer b;
  switch (task) {
    case TaskKind::sing: b = gen_sing(rng, samples, sample_rate); break;
    case TaskKind::hum_tone: b = gen_hum(rng, samples, sample_rate); break;
    case TaskKind::speak_emotion:
      b = gen_emotion(rng, samples, sample_rate);
      break;
    case TaskKind::laugh: b = gen_laugh(rng, samples, sample_rate); break;
    case TaskKind::domestic_sound:
      b = gen_domestic(rng, samples, sample_rate);
      break;
  }
  color_by_profile(b, profile);
  normalize_peak(b, 0.75);
  return b;
}

AudioBuffer apply_vocoder_artifacts(const AudioBuffer& input,
                                    int smoothing_bins, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * M_PI);
  FrameSpec spec;
  spec.frame_length = 1024;
  spec.hop_length = 256;
  const int half = smoothing_bins / 2;
  AudioBuffer out = stft_resynthesize(
      input, spec, [&](int, std::vector<std::complex<double>>& bins) {
        const int nb = static_cast<int>(bins.size());
        std::vector<double> mag(bins.size());
        for (int k = 0; k < nb; ++k) mag[static_cast<std::size_t>(k)] = std::abs(bins[static_cast<std::size_t>(k)]);
        for (int k = 0; k < nb; ++k) {
          double acc = 0.0;
          int cnt = 0;
          for (int d = -half; d <= half; ++d) {
            int q = k + d;
            if (q < 0 || q >= nb) continue;
            acc += mag[static_cast<std::size_t>(q)];
            ++cnt;
          }
          double p = phase(rng);
          bins[static_cast<std::size_t>(k)] =
              std::polar(acc / cnt, p);
        }
      });
  normalize_peak(out, 0.75);
  return out;
}

// ---- corpus assembly --------------------------------------------------------

namespace {

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t x = a + 0x9e3779b97f4a7c15ull + (b << 6) + (b >> 2);
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ull;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebull;
  x ^= x >> 31;
  return x;
}

std::vector<Split> stratum_splits(int count, const SyntheticCorpusSpec& spec,
                                  std::mt19937_64& rng) {
  const int n_train = static_cast<int>(std::lround(count * spec.split_train));
  const int n_val = static_cast<int>(std::lround(count * spec.split_val));
  std::vector<Split> splits(static_cast<std::size_t>(count), Split::test);
  for (int i = 0; i < count; ++i) {
    if (i < n_train) splits[static_cast<std::size_t>(i)] = Split::train;
    else if (i < n_train + n_val) splits[static_cast<std::size_t>(i)] = Split::val;
  }
  std::shuffle(splits.begin(), splits.end(), rng);
  return splits;
}

}  // namespace

Corpus generate_corpus(const SyntheticCorpusSpec& spec) {
  spec.validate();
  Corpus corpus;
  corpus.spec = spec;
  const int per_real = spec.samples_per_task / 2;
  const int n = spec.clip_samples();

  for (Draw draw : {Draw::defender, Draw::attacker}) {
    const std::uint64_t draw_seed =
        mix_seed(spec.seed, draw == Draw::defender ? 101 : 202);
    for (TaskKind task : kAllTasks) {
      const std::uint64_t task_seed =
          mix_seed(draw_seed, static_cast<std::uint64_t>(task));
      std::mt19937_64 split_rng(mix_seed(task_seed, 7));
      auto real_splits = stratum_splits(per_real, spec, split_rng);
      auto fake_splits = stratum_splits(per_real, spec, split_rng);
      for (int i = 0; i < per_real; ++i) {
        const std::uint64_t item_seed = mix_seed(task_seed, 1000 + i);
        CorpusItem real;
        real.task = task;
        real.fake = false;
        real.draw = draw;
        real.profile = static_cast<int>(item_seed % spec.speaker_profiles);
        real.split = real_splits[static_cast<std::size_t>(i)];
        real.audio = synthesize_task_clip(task, real.profile, n,
                                          spec.sample_rate, item_seed);

        CorpusItem fake = real;
        fake.fake = true;
        fake.split = fake_splits[static_cast<std::size_t>(i)];
        fake.audio = apply_vocoder_artifacts(
            real.audio, spec.fake_smoothing_bins, mix_seed(item_seed, 13));

        corpus.items.push_back(std::move(real));
        corpus.items.push_back(std::move(fake));
      }
    }
  }
  return corpus;
}

Dataset Corpus::detector_dataset(Draw draw, Split split) const {
  Dataset out;
  for (const auto& it : items)
    if (it.draw == draw && it.split == split)
      out.push_back({it.audio, it.fake ? 0 : 1});
  return out;
}

Dataset Corpus::task_dataset(TaskKind task, Draw draw, Split split,
                             std::uint64_t seed) const {
  Dataset all;
  for (const auto& it : items)
    if (it.draw == draw && it.split == split)
      all.push_back({it.audio, it.task == task ? 1 : 0});
  return undersample_balanced(all, seed);
}

std::vector<const CorpusItem*> Corpus::select(Draw draw, Split split,
                                              bool fake) const {
  std::vector<const CorpusItem*> out;
  for (const auto& it : items)
    if (it.draw == draw && it.split == split && it.fake == fake)
      out.push_back(&it);
  return out;
}

// ---- disk -------------------------------------------------------------------

std::string corpus_manifest_path(const std::string& dir) {
  return (fs::path(dir) / "manifest.json").string();
}

std::uint64_t corpus_hash(const Corpus& corpus) {
  std::string blob;
  blob.reserve(corpus.items.size() * 64);
  for (const auto& it : corpus.items) {
    blob += to_string(it.task);
    blob += it.fake ? "f" : "r";
    blob += to_string(it.split);
    blob += to_string(it.draw);
    blob += std::to_string(it.profile);
    // quantized audio hash, stable across the WAV round trip
    std::uint64_t h = 14695981039346656037ull;
    for (double s : it.audio.samples) {
      auto q = static_cast<std::int64_t>(
          std::lround(std::clamp(s, -1.0, 1.0) * 32767.0));
      h ^= static_cast<std::uint64_t>(q + 32768);
      h *= 1099511628211ull;
    }
    blob += hash_hex(h);
  }
  return fnv1a64(blob);
}

void write_corpus(const Corpus& corpus, const std::string& dir) {
  nlohmann::json items = nlohmann::json::array();
  std::map<std::string, int> counters;
  for (const auto& it : corpus.items) {
    fs::path sub = fs::path(dir) / to_string(it.draw) / to_string(it.task) /
                   (it.fake ? "fake" : "real");
    fs::create_directories(sub);
    int idx = counters[sub.string()]++;
    char name[16];
    std::snprintf(name, sizeof(name), "%04d.wav", idx);
    std::string path = (sub / name).string();
    write_wav(it.audio, path);
    items.push_back({{"path", fs::relative(path, dir).string()},
                     {"task", to_string(it.task)},
                     {"label", it.fake ? "fake" : "real"},
                     {"split", to_string(it.split)},
                     {"draw", to_string(it.draw)},
                     {"profile", it.profile}});
  }
  nlohmann::json manifest;
  manifest["spec"] = {{"samples_per_task", corpus.spec.samples_per_task},
                      {"duration_s", corpus.spec.duration_s},
                      {"sample_rate", corpus.spec.sample_rate},
                      {"speaker_profiles", corpus.spec.speaker_profiles},
                      {"fake_smoothing_bins", corpus.spec.fake_smoothing_bins},
                      {"seed", corpus.spec.seed}};
  manifest["corpus_hash"] = hash_hex(corpus_hash(corpus));
  manifest["items"] = items;
  std::ofstream f(corpus_manifest_path(dir), std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write corpus manifest in " + dir);
  f << manifest.dump(1) << "\n";
}

Corpus load_corpus(const std::string& dir) {
  std::ifstream f(corpus_manifest_path(dir));
  if (!f)
    throw std::runtime_error("missing corpus manifest: " +
                             corpus_manifest_path(dir));
  nlohmann::json manifest = nlohmann::json::parse(f);
  Corpus corpus;
  const auto& js = manifest.at("spec");
  corpus.spec.samples_per_task = js.at("samples_per_task");
  corpus.spec.duration_s = js.at("duration_s");
  corpus.spec.sample_rate = js.at("sample_rate");
  corpus.spec.speaker_profiles = js.at("speaker_profiles");
  corpus.spec.fake_smoothing_bins = js.at("fake_smoothing_bins");
  corpus.spec.seed = js.at("seed");
  for (const auto& ji : manifest.at("items")) {
    CorpusItem it;
    it.path = (fs::path(dir) / ji.at("path").get<std::string>()).string();
    it.task = task_from_string(ji.at("task"));
    it.fake = ji.at("label") == "fake";
    it.split = split_from_string(ji.at("split"));
    it.draw = draw_from_string(ji.at("draw"));
    it.profile = ji.at("profile");
    it.audio = read_wav(it.path);
    if (it.audio.sample_rate != corpus.spec.sample_rate)
      throw std::runtime_error("corpus clip at unexpected sample rate: " +
                               it.path);
    corpus.items.push_back(std::move(it));
  }
  return corpus;
}

}  // namespace vocap
