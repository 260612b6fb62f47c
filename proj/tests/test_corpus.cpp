#include <doctest.h>

#include <filesystem>
#include <map>

#include "oracles.hpp"
#include "vocap/corpus.hpp"

using namespace vocap;
namespace fs = std::filesystem;

namespace {

SyntheticCorpusSpec small_spec(std::uint64_t seed = 5) {
  SyntheticCorpusSpec s;
  s.samples_per_task = 40;
  s.duration_s = 1.0;
  s.seed = seed;
  return s;
}

}  // namespace

TEST_SUITE("corpus") {

TEST_CASE("generation is deterministic under a fixed seed") {
  Corpus a = generate_corpus(small_spec());
  Corpus b = generate_corpus(small_spec());
  REQUIRE(a.items.size() == b.items.size());
  CHECK(corpus_hash(a) == corpus_hash(b));
  CHECK(a.items[7].audio.samples == b.items[7].audio.samples);

  Corpus c = generate_corpus(small_spec(6));
  CHECK(corpus_hash(a) != corpus_hash(c));
}

TEST_CASE("defender and attacker draws are disjoint audio") {
  Corpus c = generate_corpus(small_spec());
  const CorpusItem* def = nullptr;
  const CorpusItem* att = nullptr;
  for (const auto& it : c.items) {
    if (it.draw == Draw::defender && !it.fake && it.task == TaskKind::sing &&
        !def)
      def = &it;
    if (it.draw == Draw::attacker && !it.fake && it.task == TaskKind::sing &&
        !att)
      att = &it;
  }
  REQUIRE(def);
  REQUIRE(att);
  CHECK(def->audio.samples != att->audio.samples);
}

TEST_CASE("split fractions land within one sample of 65/15/20") {
  Corpus c = generate_corpus(small_spec());
  for (Draw draw : {Draw::defender, Draw::attacker})
    for (TaskKind task : kAllTasks)
      for (bool fake : {false, true}) {
        std::map<Split, int> counts;
        int total = 0;
        for (const auto& it : c.items)
          if (it.draw == draw && it.task == task && it.fake == fake) {
            ++counts[it.split];
            ++total;
          }
        REQUIRE(total == 20);
        CHECK(std::abs(counts[Split::train] - 0.65 * total) <= 1.0);
        CHECK(std::abs(counts[Split::val] - 0.15 * total) <= 1.0);
        CHECK(std::abs(counts[Split::test] - 0.20 * total) <= 1.0);
      }
}

TEST_CASE("clips are peak-normalized and finite") {
  Corpus c = generate_corpus(small_spec());
  for (const auto& it : c.items) {
    double mx = 0;
    for (double s : it.audio.samples) {
      REQUIRE(std::isfinite(s));
      mx = std::max(mx, std::abs(s));
    }
    CHECK(mx <= 0.7501);
    CHECK(mx >= 0.3);
  }
}

TEST_CASE("task datasets are balanced and labeled by content") {
  Corpus c = generate_corpus(small_spec());
  Dataset d = c.task_dataset(TaskKind::laugh, Draw::defender, Split::train, 3);
  long pos = 0;
  for (const auto& s : d) pos += s.label;
  CHECK(pos * 2 == static_cast<long>(d.size()));
  CHECK(d.size() >= 40);  // 26ish positives + matched negatives
}

TEST_CASE("a desk detector learns the real/fake axis (F1 >= 0.9)") {
  SyntheticCorpusSpec spec = small_spec(11);
  spec.samples_per_task = 60;
  Corpus c = generate_corpus(spec);
  Dataset train_set = c.detector_dataset(Draw::defender, Split::train);
  Dataset val_set = c.detector_dataset(Draw::defender, Split::val);
  Dataset test_set = c.detector_dataset(Draw::defender, Split::test);
  REQUIRE(train_set.size() >= 180);

  ModelConfig mc;
  mc.architecture = Architecture::compact_conv;
  mc.frontend = FeatureSpec::defaults(FeatureKind::lfcc);
  mc.seed = 21;
  DifferentiableModel model(mc);
  TrainConfig tc;
  tc.epochs = 5;
  tc.batch_size = 32;
  tc.learning_rate = 2e-3;
  tc.loss = LossKind::binary_focal;
  train(model, train_set, val_set, tc);
  double f1 = f1_score(evaluate(model, test_set)).f1;
  INFO("test F1 ", f1);
  CHECK(f1 >= 0.9);
}

TEST_CASE("same profile yields consistent coloring, profiles differ") {
  Eigen::VectorXd e2a = profile_envelope(2, 513, 1024, 16000);
  Eigen::VectorXd e2b = profile_envelope(2, 513, 1024, 16000);
  Eigen::VectorXd e3 = profile_envelope(3, 513, 1024, 16000);
  CHECK(e2a == e2b);
  CHECK((e2a - e3).cwiseAbs().maxCoeff() > 0.1);
  CHECK(e2a.minCoeff() > 0.0);
}

TEST_CASE("vocoder artifacts change the waveform but keep its length") {
  auto clip = synthesize_task_clip(TaskKind::sing, 1, 16000, 16000, 42);
  auto fake1 = apply_vocoder_artifacts(clip, 9, 7);
  auto fake2 = apply_vocoder_artifacts(clip, 9, 7);
  CHECK(fake1.samples.size() == clip.samples.size());
  CHECK(fake1.samples == fake2.samples);
  double dev = 0;
  for (std::size_t i = 0; i < clip.samples.size(); ++i)
    dev = std::max(dev, std::abs(fake1.samples[i] - clip.samples[i]));
  CHECK(dev > 0.05);
}

TEST_CASE("disk round trip preserves the corpus") {
  auto dir = (fs::temp_directory_path() / "vocap_corpus_test").string();
  fs::remove_all(dir);
  Corpus c = generate_corpus(small_spec(8));
  write_corpus(c, dir);
  Corpus loaded = load_corpus(dir);
  REQUIRE(loaded.items.size() == c.items.size());
  CHECK(corpus_hash(loaded) == corpus_hash(c));
  CHECK(loaded.items[3].task == c.items[3].task);
  CHECK(loaded.items[3].split == c.items[3].split);
  CHECK(loaded.items[3].profile == c.items[3].profile);
  fs::remove_all(dir);
}

TEST_CASE("spec validation") {
  SyntheticCorpusSpec bad = small_spec();
  bad.samples_per_task = 7;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = small_spec();
  bad.split_train = 0.5;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = small_spec();
  bad.fake_smoothing_bins = 4;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

}  // TEST_SUITE
