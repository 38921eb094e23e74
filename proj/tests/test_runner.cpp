#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <filesystem>
#include <set>

#include "doctest.h"
#include "oracles.hpp"
#include "test_util.hpp"
#include "tsfm/errors.hpp"
#include "tsfm/runner.hpp"

namespace fs = std::filesystem;
using namespace tsfm;

namespace {

struct TempCohort {
  fs::path dir;
  Cohort cohort;
  CohortSpec spec;

  explicit TempCohort(const std::string& tag, std::uint64_t seed = 77) {
    spec.subjects = 8;
    spec.trials_min = 2;
    spec.trials_max = 3;
    spec.length_min = 120;
    spec.length_max = 160;
    cohort = generate_cohort(spec, seed);
    dir = fs::temp_directory_path() / ("tsfm_runner_" + tag);
    fs::remove_all(dir);
    write_cohort(dir, cohort, 0.25, 0.25, 1);
  }
  ~TempCohort() { fs::remove_all(dir); }
};

EncoderModel tiny_model() {
  EncoderConfig cfg;
  cfg.input_dim = kCohortChannels;
  cfg.embed_dim = 8;
  cfg.depth = 1;
  cfg.heads = 2;
  cfg.dropout = 0.0;
  cfg.max_positions = 64;
  return EncoderModel(cfg, 3);
}

}  // namespace

TEST_CASE("dataset loading normalizes on training subjects only") {
  TempCohort fixture("norm");
  const Dataset dataset = load_dataset({fixture.dir.string(), ""}, 40, 20);
  REQUIRE(dataset.trials.size() == fixture.cohort.trials.size());
  CHECK(dataset.channels == kCohortChannels);

  // Reproduce the expected stats from the raw files.
  auto raw = load_trials((fixture.dir / "trials").string());
  for (auto& trial : raw) trial = interpolate_missing(trial);
  const NormalizationStats expected = fit_normalizer(raw, dataset.split.train);
  CHECK(testutil::exact_equal(Eigen::MatrixXd(dataset.stats.min),
                              Eigen::MatrixXd(expected.min)));
  CHECK(testutil::exact_equal(Eigen::MatrixXd(dataset.stats.max),
                              Eigen::MatrixXd(expected.max)));

  // Training-subject values must span [0, 1] exactly after min-max scaling.
  double lo = 1e9, hi = -1e9;
  for (const auto& trial : dataset.trials) {
    if (std::find(dataset.split.train.begin(), dataset.split.train.end(), trial.subject_id) ==
        dataset.split.train.end())
      continue;
    lo = std::min(lo, trial.values.minCoeff());
    hi = std::max(hi, trial.values.maxCoeff());
  }
  CHECK(lo == 0.0);
  CHECK(hi == 1.0);
}

TEST_CASE("window membership follows the subject split with no leakage") {
  TempCohort fixture("split");
  const Dataset dataset = load_dataset({fixture.dir.string(), ""}, 40, 20);

  const auto subjects_of = [](const WindowSet& set) {
    return std::set<std::string>(set.subjects.begin(), set.subjects.end());
  };
  const auto train_ids = subjects_of(dataset.train);
  const auto val_ids = subjects_of(dataset.validation);
  const auto test_ids = subjects_of(dataset.test);
  for (const auto& id : train_ids) {
    CHECK(val_ids.count(id) == 0);
    CHECK(test_ids.count(id) == 0);
  }
  for (const auto& id : val_ids) CHECK(test_ids.count(id) == 0);
  CHECK(train_ids.size() == dataset.split.train.size());
  CHECK(val_ids.size() == dataset.split.validation.size());
  CHECK(test_ids.size() == dataset.split.test.size());

  // Window counts agree with the independent start-index enumeration.
  long expected = 0;
  for (const auto& trial : dataset.trials)
    expected += static_cast<long>(
        oracle::window_starts(static_cast<int>(trial.length()), 40, 20).size());
  CHECK(dataset.train.total() + dataset.validation.total() + dataset.test.total() == expected);
}

TEST_CASE("dataset loading reads cohort metadata when present") {
  TempCohort fixture("meta");
  const Dataset dataset = load_dataset({fixture.dir.string(), ""}, 40, 20);
  REQUIRE(dataset.metadata.size() == fixture.cohort.subjects.size());
  for (const auto& subject : fixture.cohort.subjects) {
    REQUIRE(dataset.metadata.count(subject.id) == 1);
    CHECK(dataset.metadata.at(subject.id).label == subject.label);
  }
}

TEST_CASE("classification probe rows carry metadata labels per window") {
  TempCohort fixture("probecls");
  const Dataset dataset = load_dataset({fixture.dir.string(), ""}, 40, 20);
  const EncoderModel model = tiny_model();
  const ProbeMatrices probe =
      build_probe_data(model, dataset, ProbeTask::Kind::kClassification, 16);

  CHECK(probe.train.embeddings.rows() == dataset.train.total());
  CHECK(probe.validation.embeddings.rows() == dataset.validation.total());
  CHECK(probe.test.embeddings.rows() == dataset.test.total());
  REQUIRE(probe.train.targets.size() == static_cast<std::size_t>(dataset.train.total()));
  for (std::size_t i = 0; i < probe.train.targets.size(); ++i) {
    const auto& subject = probe.train.subjects[i];
    CHECK(probe.train.targets[i] == dataset.metadata.at(subject).label);
  }
}

TEST_CASE("regression probe hides the target channel from the encoder") {
  TempCohort fixture("probereg");
  Dataset dataset = load_dataset({fixture.dir.string(), ""}, 40, 20);
  const EncoderModel model = tiny_model();
  const ProbeMatrices before =
      build_probe_data(model, dataset, ProbeTask::Kind::kRegression, 16);

  // Targets equal the window mean of the regression channel.
  const auto pointers = window_pointers(dataset.train);
  REQUIRE(before.train.targets.size() == pointers.size());
  for (std::size_t i = 0; i < pointers.size(); ++i)
    CHECK(before.train.targets[i] == pointers[i]->values.col(kRegressionChannel).mean());

  // Rewriting that channel changes targets but not embeddings.
  for (auto& group : dataset.train.windows)
    for (auto& window : group) window.values.col(kRegressionChannel).array() += 0.25;
  const ProbeMatrices after =
      build_probe_data(model, dataset, ProbeTask::Kind::kRegression, 16);
  CHECK(testutil::exact_equal(before.train.embeddings, after.train.embeddings));
  for (std::size_t i = 0; i < before.train.targets.size(); ++i)
    CHECK(after.train.targets[i] != before.train.targets[i]);
}

TEST_CASE("classification probing without metadata is a data error") {
  TempCohort fixture("nometa");
  fs::remove(fixture.dir / "metadata.csv");
  const Dataset dataset = load_dataset({fixture.dir.string(), ""}, 40, 20);
  CHECK(dataset.metadata.empty());
  const EncoderModel model = tiny_model();
  CHECK_THROWS_AS(build_probe_data(model, dataset, ProbeTask::Kind::kClassification, 16),
                  DataError);
}

TEST_CASE("missing directories and bad paths surface as errors") {
  CHECK_THROWS_AS(load_dataset({"", ""}, 40, 20), ConfigError);
  CHECK_THROWS_AS(load_dataset({"/nonexistent/cohort", ""}, 40, 20), DataError);
  TempCohort fixture("badsplit");
  CHECK_THROWS_AS(load_dataset({fixture.dir.string(), "/nonexistent/split.json"}, 40, 20),
                  DataError);
}
