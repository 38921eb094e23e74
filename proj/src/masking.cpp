#include "tsfm/masking.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "tsfm/errors.hpp"

namespace tsfm {

TimeMask sample_span_mask(int region_length, int region_offset, const SpanSamplerConfig& config,
                          Rng& rng) {
  if (region_length < 1) throw ConfigError("mask region must be non-empty");
  if (config.seg_min < 1 || config.seg_min > config.seg_max)
    throw ConfigError("segment bounds must satisfy 1 <= seg_min <= seg_max");

  TimeMask mask;
  mask.region_offset = region_offset;
  mask.region_length = region_length;
  mask.flags.assign(static_cast<std::size_t>(region_length), 0);
  if (config.ratio <= 0.0) return mask;
  if (config.ratio >= 1.0) {
    std::fill(mask.flags.begin(), mask.flags.end(), 1);
    mask.segments.emplace_back(0, region_length);
    return mask;
  }

  const int seg_min = std::min(config.seg_min, region_length);
  const int seg_max = std::min(config.seg_max, region_length);
  int covered = 0;
  const auto target = static_cast<double>(region_length) * config.ratio;
  while (static_cast<double>(covered) < target) {
    const int len = static_cast<int>(rng.uniform_int(seg_min, seg_max));
    const int start = static_cast<int>(rng.uniform_int(0, region_length - len));
    mask.segments.emplace_back(start, len);
    for (int i = start; i < start + len; ++i) {
      if (!mask.flags[static_cast<std::size_t>(i)]) {
        mask.flags[static_cast<std::size_t>(i)] = 1;
        ++covered;
      }
    }
  }
  return mask;
}

TimeMask sample_lc_mask(int window_length, const SpanSamplerConfig& config, Rng& rng) {
  return sample_span_mask(window_length, 0, config, rng);
}

std::pair<int, int> tc_auto_segment_bounds(int t_future) {
  const int lo = std::max(1, static_cast<int>(std::lround(t_future / 10.0)));
  const int hi = std::max(2, static_cast<int>(std::lround(t_future / 2.0)));
  return {lo, hi};
}

TimeMask sample_tc_mask(int t_past, int t_future, double ratio, Rng& rng) {
  if (t_past < 1 || t_future < 1) throw ConfigError("past and future horizons must be positive");
  SpanSamplerConfig cfg;
  cfg.ratio = ratio;
  std::tie(cfg.seg_min, cfg.seg_max) = tc_auto_segment_bounds(t_future);
  return sample_span_mask(t_future, t_past, cfg, rng);
}

std::vector<int> select_nearby_supports(const Window& query,
                                        const std::vector<const Window*>& candidates) {
  std::vector<int> order(candidates.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    const Window& wa = *candidates[static_cast<std::size_t>(a)];
    const Window& wb = *candidates[static_cast<std::size_t>(b)];
    const auto key = [&](const Window& w) {
      return std::make_tuple(w.trial_id == query.trial_id ? 0 : 1, std::abs(w.start - query.start),
                             w.trial_id, w.start);
    };
    return key(wa) < key(wb);
  });
  return order;
}

std::optional<SupportQueryTable> build_uicd_table(const std::vector<const Window*>& batch,
                                                  const UicdConfig& config, Rng& rng) {
  if (config.queries < 1) throw ConfigError("table must request at least one query row");
  if (config.max_rows < 2) throw ConfigError("table cap must allow a query and a support");

  std::map<std::string, std::vector<int>> by_subject;
  for (std::size_t i = 0; i < batch.size(); ++i)
    by_subject[batch[i]->subject_id].push_back(static_cast<int>(i));

  std::vector<const std::pair<const std::string, std::vector<int>>*> eligible;
  for (const auto& entry : by_subject)
    if (entry.second.size() >= 2) eligible.push_back(&entry);
  if (eligible.empty()) return std::nullopt;

  const auto& [subject, items] =
      *eligible[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(eligible.size()) - 1))];
  const int r0 = static_cast<int>(items.size());
  const int num_queries = std::min({config.queries, r0 - 1, config.max_rows - 1});

  // Query rows drawn uniformly without replacement from the subject's entries.
  auto query_positions = rng.sample_without_replacement(r0, num_queries);
  std::sort(query_positions.begin(), query_positions.end());
  std::vector<std::uint8_t> is_query(static_cast<std::size_t>(r0), 0);
  for (int q : query_positions) is_query[static_cast<std::size_t>(q)] = 1;

  std::vector<int> support_positions;
  for (int i = 0; i < r0; ++i)
    if (!is_query[static_cast<std::size_t>(i)]) support_positions.push_back(i);

  const int keep = std::min(static_cast<int>(support_positions.size()), config.max_rows - num_queries);
  if (keep < static_cast<int>(support_positions.size())) {
    if (config.support_selection == UicdConfig::SupportSelection::kNearby) {
      // Proximity to the first query row decides which supports survive.
      const Window& query_window = *batch[static_cast<std::size_t>(items[static_cast<std::size_t>(query_positions.front())])];
      std::vector<const Window*> cands;
      for (int pos : support_positions)
        cands.push_back(batch[static_cast<std::size_t>(items[static_cast<std::size_t>(pos)])]);
      const auto order = select_nearby_supports(query_window, cands);
      std::vector<int> kept;
      for (int k = 0; k < keep; ++k)
        kept.push_back(support_positions[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])]);
      support_positions = std::move(kept);
    } else {
      rng.shuffle(support_positions);
      support_positions.resize(static_cast<std::size_t>(keep));
    }
    std::sort(support_positions.begin(), support_positions.end());
  }

  SupportQueryTable table;
  table.subject_id = subject;
  std::vector<int> kept_positions = support_positions;
  kept_positions.insert(kept_positions.end(), query_positions.begin(), query_positions.end());
  std::sort(kept_positions.begin(), kept_positions.end());
  for (int pos : kept_positions) {
    if (is_query[static_cast<std::size_t>(pos)])
      table.query_rows.push_back(static_cast<int>(table.rows.size()));
    table.rows.push_back(items[static_cast<std::size_t>(pos)]);
  }

  const int T = static_cast<int>(batch[static_cast<std::size_t>(table.rows.front())]->values.rows());
  SpanSamplerConfig span;
  span.ratio = config.query_mask_ratio;
  span.seg_min = config.seg_min;
  span.seg_max = config.seg_max;
  for (std::size_t q = 0; q < table.query_rows.size(); ++q)
    table.query_masks.push_back(sample_span_mask(T, 0, span, rng));
  return table;
}

}  // namespace tsfm
