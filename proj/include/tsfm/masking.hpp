#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "tsfm/data_pipeline.hpp"
#include "tsfm/rng.hpp"

namespace tsfm {

struct SpanSamplerConfig {
  double ratio = 0.8;  // target fraction of the region to mask
  int seg_min = 4;     // segment length bounds, inclusive
  int seg_max = 16;
};

// Boolean mask over a contiguous region of a window.  `flags` is region-local;
// absolute window positions are region_offset + i.  `segments` logs the drawn
// (start, length) pairs before overlap merging.
struct TimeMask {
  int region_offset = 0;
  int region_length = 0;
  std::vector<std::uint8_t> flags;
  std::vector<std::pair<int, int>> segments;

  int coverage_count() const {
    int n = 0;
    for (auto f : flags) n += f;
    return n;
  }
  double coverage() const {
    return region_length == 0 ? 0.0 : static_cast<double>(coverage_count()) / region_length;
  }
  bool masked_at(int absolute_t) const {
    const int i = absolute_t - region_offset;
    return i >= 0 && i < region_length && flags[static_cast<std::size_t>(i)] != 0;
  }
  std::vector<int> masked_positions() const {
    std::vector<int> out;
    for (int i = 0; i < region_length; ++i)
      if (flags[static_cast<std::size_t>(i)]) out.push_back(region_offset + i);
    return out;
  }
};

// Draws segments of uniform length in [seg_min, seg_max] with uniform starts
// until coverage reaches `ratio`; the final segment may overshoot by at most
// seg_max positions.  ratio >= 1 short-circuits to a full-region mask and
// ratio <= 0 to an empty one.  Segment bounds wider than the region are
// clamped to it.
TimeMask sample_span_mask(int region_length, int region_offset, const SpanSamplerConfig& config,
                          Rng& rng);

// Mask over a whole window of length T.
TimeMask sample_lc_mask(int window_length, const SpanSamplerConfig& config, Rng& rng);

// Mask over the future horizon [t_past, t_past + t_future).  ratio 1 masks
// the whole horizon; partial ratios use segment bounds derived from the
// horizon length, see tc_auto_segment_bounds.
TimeMask sample_tc_mask(int t_past, int t_future, double ratio, Rng& rng);

// {max(1, round(t_future/10)), max(2, round(t_future/2))}.
std::pair<int, int> tc_auto_segment_bounds(int t_future);

struct UicdConfig {
  int queries = 1;               // Q, clamped to [1, R-1]
  double query_mask_ratio = 1.0; // 1.0 = whole query row masked
  int seg_min = 4;               // segment bounds for partial query masks
  int seg_max = 16;
  int max_rows = 16;             // R cap; supports are trimmed, never queries
  enum class SupportSelection { kRandom, kNearby } support_selection = SupportSelection::kRandom;
};

// R same-subject windows forming one in-context table.  `rows` holds indices
// into the batch window list (in batch order); `query_rows` indexes into
// `rows`; `query_masks` is parallel to `query_rows`.
struct SupportQueryTable {
  std::string subject_id;
  std::vector<int> rows;
  std::vector<int> query_rows;
  std::vector<TimeMask> query_masks;

  int row_count() const { return static_cast<int>(rows.size()); }
  bool is_query(int row) const {
    for (int q : query_rows)
      if (q == row) return true;
    return false;
  }
};

// Builds a table from one batch: groups windows by subject, picks a subject
// with at least two entries uniformly at random, picks Q query rows, keeps
// the remaining entries as supports (trimming to max_rows if needed), and
// samples the query masks.  Returns nullopt when no subject is eligible.
std::optional<SupportQueryTable> build_uicd_table(const std::vector<const Window*>& batch,
                                                  const UicdConfig& config, Rng& rng);

// Candidate indices ordered by proximity to the query window: same trial
// first, then smaller |start - query.start|, ties broken by (trial_id, start).
std::vector<int> select_nearby_supports(const Window& query,
                                        const std::vector<const Window*>& candidates);

}  // namespace tsfm
