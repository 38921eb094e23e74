#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>
#include <numbers>
#include <set>

#include "tsfm/errors.hpp"
#include "tsfm/sampling.hpp"

using namespace tsfm;

TEST_CASE("every batch is exactly S subjects times W windows") {
  std::vector<int> counts(40, 10);  // 400 windows
  SamplerConfig cfg;
  cfg.subjects_per_batch = 32;
  cfg.windows_per_subject = 4;
  const EpochPlan plan = plan_epoch(counts, cfg, 1);
  CHECK(plan.subjects_per_batch == 32);
  CHECK(plan.batches.size() == 4);  // ceil(400 / 128)
  for (const auto& batch : plan.batches) {
    REQUIRE(batch.size() == 128);
    std::set<int> subjects;
    std::map<int, int> per_subject;
    for (const auto& item : batch) {
      subjects.insert(item.subject);
      per_subject[item.subject]++;
      CHECK(item.window >= 0);
      CHECK(item.window < counts[static_cast<std::size_t>(item.subject)]);
    }
    CHECK(subjects.size() == 32);
    for (const auto& [subject, n] : per_subject) CHECK(n == 4);
  }
}

TEST_CASE("batch count is the ceiling of total windows over batch size") {
  SamplerConfig cfg;
  cfg.subjects_per_batch = 2;
  cfg.windows_per_subject = 3;  // B = 6
  CHECK(plan_epoch({5, 5, 2}, cfg, 3).batches.size() == 2);   // 12 / 6
  CHECK(plan_epoch({5, 5, 3}, cfg, 3).batches.size() == 3);   // ceil(13 / 6)
  CHECK(plan_epoch({1, 1, 1}, cfg, 3).batches.size() == 1);
}

TEST_CASE("a subject with fewer than W windows repeats but covers all of them") {
  std::vector<int> counts = {2, 10, 10, 10};
  SamplerConfig cfg;
  cfg.subjects_per_batch = 4;
  cfg.windows_per_subject = 4;
  const EpochPlan plan = plan_epoch(counts, cfg, 7);
  bool saw_small_subject = false;
  for (const auto& batch : plan.batches) {
    std::vector<int> small;
    for (const auto& item : batch)
      if (item.subject == 0) small.push_back(item.window);
    if (small.empty()) continue;
    saw_small_subject = true;
    REQUIRE(small.size() == 4);
    const std::set<int> unique(small.begin(), small.end());
    CHECK(unique == std::set<int>{0, 1});  // both windows present, so repeats exist
  }
  CHECK(saw_small_subject);  // S equals the pool size, so subject 0 is in every batch
}

TEST_CASE("plans are seed-deterministic") {
  std::vector<int> counts = {9, 3, 7, 5, 12, 4};
  SamplerConfig cfg;
  cfg.subjects_per_batch = 3;
  cfg.windows_per_subject = 2;
  const EpochPlan a = plan_epoch(counts, cfg, 42);
  const EpochPlan b = plan_epoch(counts, cfg, 42);
  REQUIRE(a.batches.size() == b.batches.size());
  for (std::size_t i = 0; i < a.batches.size(); ++i) {
    REQUIRE(a.batches[i].size() == b.batches[i].size());
    for (std::size_t j = 0; j < a.batches[i].size(); ++j) {
      CHECK(a.batches[i][j].subject == b.batches[i][j].subject);
      CHECK(a.batches[i][j].window == b.batches[i][j].window);
    }
  }
  const EpochPlan c = plan_epoch(counts, cfg, 43);
  bool differs = false;
  for (std::size_t i = 0; i < std::min(a.batches.size(), c.batches.size()) && !differs; ++i)
    for (std::size_t j = 0; j < a.batches[i].size() && !differs; ++j)
      differs = a.batches[i][j].subject != c.batches[i][j].subject ||
                a.batches[i][j].window != c.batches[i][j].window;
  CHECK(differs);
}

TEST_CASE("lenient mode shrinks S to the pool, strict mode refuses") {
  std::vector<int> counts = {4, 4, 4};
  SamplerConfig cfg;
  cfg.subjects_per_batch = 5;
  cfg.windows_per_subject = 2;
  const EpochPlan plan = plan_epoch(counts, cfg, 1);
  CHECK(plan.subjects_per_batch == 3);
  for (const auto& batch : plan.batches) CHECK(batch.size() == 6);

  cfg.strict = true;
  CHECK_THROWS_AS(plan_epoch(counts, cfg, 1), ConfigError);
}

TEST_CASE("zero-window subjects are skipped and an empty pool is an error") {
  SamplerConfig cfg;
  cfg.subjects_per_batch = 2;
  cfg.windows_per_subject = 2;
  const EpochPlan plan = plan_epoch({0, 3, 0, 3}, cfg, 5);
  for (const auto& batch : plan.batches)
    for (const auto& item : batch) CHECK((item.subject == 1 || item.subject == 3));

  CHECK_THROWS_AS(plan_epoch({}, cfg, 5), DataError);
  CHECK_THROWS_AS(plan_epoch({0, 0}, cfg, 5), DataError);
}

TEST_CASE("invalid sampler configs are refused") {
  CHECK_THROWS_AS(plan_epoch({3, 3}, SamplerConfig{0, 4, false}, 1), ConfigError);
  CHECK_THROWS_AS(plan_epoch({3, 3}, SamplerConfig{2, 0, false}, 1), ConfigError);
}

TEST_CASE("batch membership probability does not depend on a subject's window count") {
  // Subject 0 holds 100 windows, the rest hold 2 each; membership should be
  // uniform at S/N = 1/2 regardless.
  std::vector<int> counts = {100, 2, 2, 2, 2, 2};
  SamplerConfig cfg;
  cfg.subjects_per_batch = 3;
  cfg.windows_per_subject = 2;
  long batches_total = 0;
  std::vector<long> member(counts.size(), 0);
  for (std::uint64_t seed = 0; seed < 300; ++seed) {
    const EpochPlan plan = plan_epoch(counts, cfg, seed);
    batches_total += static_cast<long>(plan.batches.size());
    for (const auto& batch : plan.batches) {
      std::set<int> subjects;
      for (const auto& item : batch) subjects.insert(item.subject);
      for (int s : subjects) member[static_cast<std::size_t>(s)]++;
    }
  }
  const double p = 0.5;
  const double se = std::sqrt(p * (1 - p) / static_cast<double>(batches_total));
  const double p_heavy = static_cast<double>(member[0]) / static_cast<double>(batches_total);
  const double p_light = static_cast<double>(member[1]) / static_cast<double>(batches_total);
  CHECK(std::abs(p_heavy - p) <= 3 * se);
  CHECK(std::abs(p_light - p) <= 3 * se);
  CHECK(std::abs(p_heavy - p_light) <= 3 * se * std::numbers::sqrt2);
}
