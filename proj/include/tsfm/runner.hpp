#pragma once

#include <map>
#include <string>
#include <vector>

#include "tsfm/data_pipeline.hpp"
#include "tsfm/evaluation.hpp"
#include "tsfm/model.hpp"
#include "tsfm/synthdata.hpp"
#include "tsfm/training.hpp"

namespace tsfm {

struct DatasetPaths {
  std::string dir;         // cohort root holding trials/ (or the csv dir itself)
  std::string split_path;  // empty: <dir>/split.json
};

// The full ingest pipeline with leakage-safe normalization: load, interpolate,
// fit min/max on training subjects only, normalize, window, and group by
// split membership.
struct Dataset {
  std::vector<Trial> trials;  // interpolated and normalized
  SubjectSplit split;
  NormalizationStats stats;
  int channels = 0;
  WindowSet train, validation, test;
  std::map<std::string, SubjectRecord> metadata;  // empty when metadata.csv is absent
};

Dataset load_dataset(const DatasetPaths& paths, int window, int stride);

// Flattens a grouped window set in its deterministic (sorted-subject) order.
std::vector<const Window*> window_pointers(const WindowSet& set);

struct ProbeMatrices {
  ProbeData train, validation, test;
};

// Frozen-encoder features and targets for one probe task.  Classification
// targets come from the cohort metadata; regression targets are the window
// mean of the designated target channel, which is blanked to the range
// midpoint before embedding so the encoder never sees it.
ProbeMatrices build_probe_data(const EncoderModel& model, const Dataset& dataset,
                               ProbeTask::Kind kind, int batch_windows);

}  // namespace tsfm
