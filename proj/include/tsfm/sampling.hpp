#pragma once

#include <cstdint>
#include <vector>

namespace tsfm {

struct SamplerConfig {
  int subjects_per_batch = 32;  // S
  int windows_per_subject = 4;  // W
  // With fewer subjects than S: lenient mode shrinks S to the pool size,
  // strict mode raises ConfigError.
  bool strict = false;
};

struct BatchItem {
  int subject = 0;  // index into the pool
  int window = 0;   // index into that subject's window list
};

struct EpochPlan {
  int subjects_per_batch = 0;  // effective S after lenient adjustment
  std::vector<std::vector<BatchItem>> batches;
};

// Plans one epoch over a pool described by per-subject window counts.
// Each batch draws S distinct subjects uniformly (without replacement within
// the batch, independently across batches) and W windows per chosen subject;
// a subject with fewer than W windows contributes each window at least once
// and repeats for the remainder.  Batch count is ceil(total windows / (S*W)).
// Subjects with zero windows are ignored; an empty pool raises DataError.
EpochPlan plan_epoch(const std::vector<int>& window_counts, const SamplerConfig& config,
                     std::uint64_t seed);

}  // namespace tsfm
