#include "tsfm/runner.hpp"

#include <algorithm>
#include <filesystem>
#include <set>

#include "tsfm/errors.hpp"

namespace fs = std::filesystem;

namespace tsfm {

Dataset load_dataset(const DatasetPaths& paths, int window, int stride) {
  if (paths.dir.empty()) throw ConfigError("data.dir must be set");
  if (window < 1 || stride < 1) throw ConfigError("window and stride must be positive");

  const fs::path root(paths.dir);
  const fs::path trial_dir = fs::is_directory(root / "trials") ? root / "trials" : root;
  Dataset dataset;
  dataset.trials = load_trials(trial_dir.string());
  if (dataset.trials.empty()) throw DataError("no trials found under " + trial_dir.string());
  dataset.channels = static_cast<int>(dataset.trials.front().channels());

  const fs::path split_path =
      paths.split_path.empty() ? root / "split.json" : fs::path(paths.split_path);
  dataset.split = load_split(split_path.string());
  std::set<std::string> ids;
  for (const auto& trial : dataset.trials) ids.insert(trial.subject_id);
  validate_split(dataset.split, std::vector<std::string>(ids.begin(), ids.end()));

  for (auto& trial : dataset.trials) trial = interpolate_missing(trial);
  dataset.stats = fit_normalizer(dataset.trials, dataset.split.train);
  for (auto& trial : dataset.trials) trial = normalize(trial, dataset.stats);

  const auto membership = [](const std::vector<std::string>& list, const std::string& id) {
    return std::find(list.begin(), list.end(), id) != list.end();
  };
  std::vector<Window> train, validation, test;
  for (const auto& trial : dataset.trials) {
    auto windows = slice_windows(trial, window, stride);
    std::vector<Window>* sink = nullptr;
    if (membership(dataset.split.train, trial.subject_id))
      sink = &train;
    else if (membership(dataset.split.validation, trial.subject_id))
      sink = &validation;
    else if (membership(dataset.split.test, trial.subject_id))
      sink = &test;
    if (!sink) continue;  // subject outside the split is simply unused
    for (auto& w : windows) sink->push_back(std::move(w));
  }
  dataset.train = group_windows(std::move(train));
  dataset.validation = group_windows(std::move(validation));
  dataset.test = group_windows(std::move(test));

  const fs::path metadata_path = root / "metadata.csv";
  if (fs::exists(metadata_path))
    for (auto& [id, record] : load_metadata(metadata_path))
      dataset.metadata.emplace(std::move(id), record);
  return dataset;
}

std::vector<const Window*> window_pointers(const WindowSet& set) {
  std::vector<const Window*> out;
  for (const auto& group : set.windows)
    for (const auto& window : group) out.push_back(&window);
  return out;
}

namespace {

ProbeData probe_part(const EncoderModel& model, const Dataset& dataset, const WindowSet& part,
                     ProbeTask::Kind kind, int batch_windows) {
  const auto pointers = window_pointers(part);
  ProbeData data;
  if (pointers.empty()) return data;

  if (kind == ProbeTask::Kind::kClassification) {
    for (const auto* window : pointers) {
      const auto it = dataset.metadata.find(window->subject_id);
      if (it == dataset.metadata.end())
        throw DataError("no label in the cohort metadata for subject " + window->subject_id);
      data.targets.push_back(static_cast<double>(it->second.label));
      data.subjects.push_back(window->subject_id);
    }
    data.embeddings = embed_windows(model, pointers, batch_windows);
    return data;
  }

  if (dataset.channels <= kRegressionChannel)
    throw DataError("regression probing expects the synthetic cohort channel layout");
  std::vector<Window> blanked;
  blanked.reserve(pointers.size());
  for (const auto* window : pointers) {
    data.targets.push_back(window->values.col(kRegressionChannel).mean());
    data.subjects.push_back(window->subject_id);
    Window copy = *window;
    // Hide the target channel from the frozen encoder.
    copy.values.col(kRegressionChannel).setConstant(0.5);
    blanked.push_back(std::move(copy));
  }
  std::vector<const Window*> blanked_ptrs;
  blanked_ptrs.reserve(blanked.size());
  for (const auto& window : blanked) blanked_ptrs.push_back(&window);
  data.embeddings = embed_windows(model, blanked_ptrs, batch_windows);
  return data;
}

}  // namespace

ProbeMatrices build_probe_data(const EncoderModel& model, const Dataset& dataset,
                               ProbeTask::Kind kind, int batch_windows) {
  ProbeMatrices out;
  out.train = probe_part(model, dataset, dataset.train, kind, batch_windows);
  out.validation = probe_part(model, dataset, dataset.validation, kind, batch_windows);
  out.test = probe_part(model, dataset, dataset.test, kind, batch_windows);
  return out;
}

}  // namespace tsfm
