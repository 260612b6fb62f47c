#pragma once

#include <array>
#include <string>
#include <vector>

#include "vocap/audio.hpp"
#include "vocap/models.hpp"

namespace vocap {

enum class TaskKind { sing, hum_tone, speak_emotion, laugh, domestic_sound };

inline constexpr std::array<TaskKind, 5> kAllTasks = {
    TaskKind::sing, TaskKind::hum_tone, TaskKind::speak_emotion,
    TaskKind::laugh, TaskKind::domestic_sound};

const char* to_string(TaskKind t);
const char* task_code(TaskKind t);  // S / HT / SE / L / DS
TaskKind task_from_string(const std::string& s);

enum class Split { train, val, test };
const char* to_string(Split s);
Split split_from_string(const std::string& s);

/// defender: the system owner's training draw. attacker: a disjoint draw the
/// adversary collects and labels by querying the deployed detector.
enum class Draw { defender, attacker };
const char* to_string(Draw d);
Draw draw_from_string(const std::string& s);

struct SyntheticCorpusSpec {
  int samples_per_task = 600;  // per draw; half real, half fake variants
  double duration_s = 2.0;
  int sample_rate = kCanonicalRate;
  int speaker_profiles = 4;
  double split_train = 0.65;
  double split_val = 0.15;
  double split_test = 0.20;
  int fake_smoothing_bins = 9;  // vocoder-artifact magnitude smoothing
  std::uint64_t seed = 1;

  void validate() const;
  int clip_samples() const {
    return static_cast<int>(duration_s * sample_rate);
  }
};

struct CorpusItem {
  AudioBuffer audio;
  TaskKind task = TaskKind::sing;
  bool fake = false;
  Split split = Split::train;
  Draw draw = Draw::defender;
  int profile = 0;
  std::string path;  // set once materialized on disk
};

struct Corpus {
  SyntheticCorpusSpec spec;
  std::vector<CorpusItem> items;

  /// Real-vs-fake dataset; label 1 = real.
  Dataset detector_dataset(Draw draw, Split split) const;
  /// Contains-task dataset for one challenge kind; label 1 = contains task.
  /// Negatives (other tasks) are undersampled to match the positives.
  Dataset task_dataset(TaskKind task, Draw draw, Split split,
                       std::uint64_t seed) const;
  std::vector<const CorpusItem*> select(Draw draw, Split split,
                                        bool fake) const;
};

Corpus generate_corpus(const SyntheticCorpusSpec& spec);

/// Deterministic speaker-proxy spectral envelope (linear gain at a
/// frequency); profiles differ in formant positions and spectral tilt.
double profile_gain(int profile, double hz);
Eigen::VectorXd profile_envelope(int profile, int bins, int nfft, int rate);

/// One clip of a task performed by a speaker profile. Exposed for tests and
/// for scenario assets beyond the generated corpus.
AudioBuffer synthesize_task_clip(TaskKind task, int profile, int samples,
                                 int sample_rate, std::uint64_t seed);

/// Toy-vocoder artifacts: per-frame magnitude smoothing plus phase
/// randomization. The real/fake axis of the corpus.
AudioBuffer apply_vocoder_artifacts(const AudioBuffer& input,
                                    int smoothing_bins, std::uint64_t seed);

// Disk layout: <dir>/<draw>/<task>/<real|fake>/NNNN.wav + manifest.json.
void write_corpus(const Corpus& corpus, const std::string& dir);
Corpus load_corpus(const std::string& dir);
std::string corpus_manifest_path(const std::string& dir);

/// Provenance hash over items' metadata and quantized audio.
std::uint64_t corpus_hash(const Corpus& corpus);

}  // namespace vocap
