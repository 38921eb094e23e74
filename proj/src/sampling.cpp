#include "tsfm/sampling.hpp"

#include <numeric>
#include <string>

#include "tsfm/errors.hpp"
#include "tsfm/rng.hpp"

namespace tsfm {

EpochPlan plan_epoch(const std::vector<int>& window_counts, const SamplerConfig& config,
                     std::uint64_t seed) {
  if (config.subjects_per_batch < 1) throw ConfigError("subjects_per_batch must be at least 1");
  if (config.windows_per_subject < 1) throw ConfigError("windows_per_subject must be at least 1");
  for (int c : window_counts)
    if (c < 0) throw DataError("negative window count in sampler pool");

  std::vector<int> eligible;
  long total = 0;
  for (std::size_t i = 0; i < window_counts.size(); ++i) {
    if (window_counts[i] > 0) {
      eligible.push_back(static_cast<int>(i));
      total += window_counts[i];
    }
  }
  if (eligible.empty()) throw DataError("sampler pool has no windows");

  const int pool = static_cast<int>(eligible.size());
  if (config.strict && config.subjects_per_batch > pool)
    throw ConfigError("strict sampler needs " + std::to_string(config.subjects_per_batch) +
                      " subjects per batch but the pool has " + std::to_string(pool));

  EpochPlan plan;
  plan.subjects_per_batch = std::min(config.subjects_per_batch, pool);
  const int W = config.windows_per_subject;
  const long batch_size = static_cast<long>(plan.subjects_per_batch) * W;
  const long num_batches = (total + batch_size - 1) / batch_size;

  Rng rng(derive_seed(seed, "epoch-plan"));
  plan.batches.reserve(static_cast<std::size_t>(num_batches));
  for (long b = 0; b < num_batches; ++b) {
    std::vector<BatchItem> batch;
    batch.reserve(static_cast<std::size_t>(batch_size));
    const auto chosen = rng.sample_without_replacement(pool, plan.subjects_per_batch);
    for (int pick : chosen) {
      const int subject = eligible[static_cast<std::size_t>(pick)];
      const int count = window_counts[static_cast<std::size_t>(subject)];
      if (count >= W) {
        for (int w : rng.sample_without_replacement(count, W))
          batch.push_back({subject, w});
      } else {
        // Every window once, then uniform draws with replacement.
        for (int w = 0; w < count; ++w) batch.push_back({subject, w});
        for (int extra = count; extra < W; ++extra)
          batch.push_back({subject, static_cast<int>(rng.uniform_int(0, count - 1))});
      }
    }
    plan.batches.push_back(std::move(batch));
  }
  return plan;
}

}  // namespace tsfm
