#include "tsfm/data_pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>

#include "tsfm/errors.hpp"
#include "tsfm/rng.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace tsfm {

namespace {

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  fields.push_back(cur);
  return fields;
}

double parse_double(const std::string& field, const std::string& path, int line_no) {
  double v = 0.0;
  const char* begin = field.data();
  const char* end = begin + field.size();
  const auto [ptr, ec] = std::from_chars(begin, end, v);
  if (ec != std::errc() || ptr != end)
    throw DataError(path + ": line " + std::to_string(line_no) + ": cannot parse value '" + field + "'");
  return v;
}

}  // namespace

Trial load_trial_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open trial file: " + path);

  std::string line;
  if (!std::getline(f, line))
    throw DataError(path + ": empty file");
  while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();

  Trial trial;
  {
    std::istringstream hs(line);
    std::string hash, subject_kv, trial_kv;
    hs >> hash >> subject_kv >> trial_kv;
    if (hash != "#" || subject_kv.rfind("subject=", 0) != 0 || trial_kv.rfind("trial=", 0) != 0)
      throw DataError(path + ": line 1: expected '# subject=<id> trial=<id>'");
    trial.subject_id = subject_kv.substr(8);
    trial.trial_id = trial_kv.substr(6);
    if (trial.subject_id.empty() || trial.trial_id.empty())
      throw DataError(path + ": line 1: empty subject or trial id");
  }

  if (!std::getline(f, line)) throw DataError(path + ": missing feature-name header");
  const auto names = split_fields(line);
  const auto channels = static_cast<Eigen::Index>(names.size());

  std::vector<std::vector<double>> rows;
  std::vector<std::vector<std::uint8_t>> miss;
  int line_no = 2;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto fields = split_fields(line);
    if (static_cast<Eigen::Index>(fields.size()) != channels)
      throw DataError(path + ": line " + std::to_string(line_no) + ": expected " +
                      std::to_string(channels) + " fields, got " + std::to_string(fields.size()));
    std::vector<double> row(fields.size(), 0.0);
    std::vector<std::uint8_t> row_miss(fields.size(), 0);
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (fields[i].empty()) {
        row_miss[i] = 1;
      } else {
        row[i] = parse_double(fields[i], path, line_no);
      }
    }
    rows.push_back(std::move(row));
    miss.push_back(std::move(row_miss));
  }
  if (rows.empty()) throw DataError(path + ": no data rows");

  trial.values.resize(static_cast<Eigen::Index>(rows.size()), channels);
  trial.missing.setZero(static_cast<Eigen::Index>(rows.size()), channels);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (Eigen::Index j = 0; j < channels; ++j) {
      trial.values(static_cast<Eigen::Index>(i), j) = rows[i][static_cast<std::size_t>(j)];
      trial.missing(static_cast<Eigen::Index>(i), j) = miss[i][static_cast<std::size_t>(j)];
    }
  return trial;
}

void write_trial_csv(const std::string& path, const Trial& trial,
                     const std::vector<std::string>& feature_names) {
  if (static_cast<Eigen::Index>(feature_names.size()) != trial.channels())
    throw DataError("feature name count does not match trial channels");
  std::ofstream f(path);
  if (!f) throw DataError("cannot write trial file: " + path);
  f << "# subject=" << trial.subject_id << " trial=" << trial.trial_id << "\n";
  for (std::size_t i = 0; i < feature_names.size(); ++i)
    f << feature_names[i] << (i + 1 < feature_names.size() ? "," : "\n");
  for (Eigen::Index t = 0; t < trial.length(); ++t) {
    for (Eigen::Index d = 0; d < trial.channels(); ++d) {
      if (!trial.missing(t, d)) f << format_double(trial.values(t, d));
      f << (d + 1 < trial.channels() ? "," : "\n");
    }
  }
}

std::vector<Trial> load_trials(const std::string& dir) {
  if (!fs::is_directory(dir)) throw DataError("not a data directory: " + dir);
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".csv") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw DataError("no trial files under " + dir);

  std::vector<Trial> trials;
  std::set<std::pair<std::string, std::string>> seen;
  for (const auto& file : files) {
    Trial t = load_trial_csv(file.string());
    if (!seen.emplace(t.subject_id, t.trial_id).second)
      throw DataError(file.string() + ": duplicate trial key subject=" + t.subject_id +
                      " trial=" + t.trial_id);
    if (!trials.empty() && t.channels() != trials.front().channels())
      throw DataError(file.string() + ": channel count " + std::to_string(t.channels()) +
                      " differs from " + std::to_string(trials.front().channels()));
    trials.push_back(std::move(t));
  }
  return trials;
}

Trial interpolate_missing(const Trial& trial) {
  Trial out = trial;
  const auto L = trial.length();
  for (Eigen::Index d = 0; d < trial.channels(); ++d) {
    Eigen::Index prev = -1;  // last observed index
    for (Eigen::Index t = 0; t <= L; ++t) {
      const bool observed = t < L && !trial.missing(t, d);
      if (!observed && t < L) continue;
      if (t == L && prev == -1)
        throw DataError("column " + std::to_string(d) + " of subject " + trial.subject_id +
                        " trial " + trial.trial_id + " has no observed values");
      if (t == L) {
        for (Eigen::Index g = prev + 1; g < L; ++g) out.values(g, d) = trial.values(prev, d);
        break;
      }
      if (prev == -1) {
        for (Eigen::Index g = 0; g < t; ++g) out.values(g, d) = trial.values(t, d);
      } else {
        const double v0 = trial.values(prev, d), v1 = trial.values(t, d);
        for (Eigen::Index g = prev + 1; g < t; ++g)
          out.values(g, d) =
              v0 + (v1 - v0) * static_cast<double>(g - prev) / static_cast<double>(t - prev);
      }
      prev = t;
    }
  }
  out.missing.setZero(L, trial.channels());
  return out;
}

NormalizationStats fit_normalizer(const std::vector<Trial>& trials,
                                  const std::vector<std::string>& train_subjects) {
  const std::set<std::string> train(train_subjects.begin(), train_subjects.end());
  NormalizationStats stats;
  bool any = false;
  for (const auto& trial : trials) {
    if (!train.count(trial.subject_id)) continue;
    if (!any) {
      const auto D = trial.channels();
      stats.min = Eigen::VectorXd::Constant(D, std::numeric_limits<double>::infinity());
      stats.max = Eigen::VectorXd::Constant(D, -std::numeric_limits<double>::infinity());
      any = true;
    }
    for (Eigen::Index d = 0; d < trial.channels(); ++d)
      for (Eigen::Index t = 0; t < trial.length(); ++t) {
        if (trial.missing(t, d)) continue;
        stats.min(d) = std::min(stats.min(d), trial.values(t, d));
        stats.max(d) = std::max(stats.max(d), trial.values(t, d));
      }
  }
  if (!any) throw DataError("no trials match the training subjects; cannot fit normalizer");
  for (Eigen::Index d = 0; d < stats.min.size(); ++d)
    if (!std::isfinite(stats.min(d)) || !std::isfinite(stats.max(d)))
      throw DataError("column " + std::to_string(d) + " has no observed training values");
  return stats;
}

Trial normalize(const Trial& trial, const NormalizationStats& stats) {
  if (trial.channels() != stats.min.size())
    throw DataError("normalizer has " + std::to_string(stats.min.size()) +
                    " channels but trial has " + std::to_string(trial.channels()));
  Trial out = trial;
  for (Eigen::Index d = 0; d < trial.channels(); ++d) {
    const double range = stats.max(d) - stats.min(d);
    for (Eigen::Index t = 0; t < trial.length(); ++t)
      out.values(t, d) = range == 0.0 ? 0.5 : (trial.values(t, d) - stats.min(d)) / range;
  }
  return out;
}

std::vector<Window> slice_windows(const Trial& trial, int window, int stride) {
  if (window < 1 || stride < 1) throw ConfigError("window and stride must be positive");
  std::vector<Window> out;
  for (int start = 0; start + window <= trial.length(); start += stride) {
    Window w;
    w.subject_id = trial.subject_id;
    w.trial_id = trial.trial_id;
    w.start = start;
    w.values = trial.values.middleRows(start, window);
    out.push_back(std::move(w));
  }
  return out;
}

SubjectSplit load_split(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open split file: " + path);
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw DataError(path + ": invalid JSON: " + e.what());
  }
  for (const char* key : {"train", "validation", "test"})
    if (!j.contains(key) || !j[key].is_array())
      throw DataError(path + ": missing '" + std::string(key) + "' id list");
  SubjectSplit split;
  split.train = j["train"].get<std::vector<std::string>>();
  split.validation = j["validation"].get<std::vector<std::string>>();
  split.test = j["test"].get<std::vector<std::string>>();
  return split;
}

void save_split(const std::string& path, const SubjectSplit& split) {
  json j;
  j["train"] = split.train;
  j["validation"] = split.validation;
  j["test"] = split.test;
  std::ofstream f(path);
  if (!f) throw DataError("cannot write split file: " + path);
  f << j.dump(2) << "\n";
}

SubjectSplit derive_split(std::vector<std::string> subject_ids, double validation_fraction,
                          double test_fraction, std::uint64_t seed) {
  if (validation_fraction < 0 || test_fraction < 0 || validation_fraction + test_fraction >= 1.0)
    throw ConfigError("split fractions must be non-negative and sum below 1");
  std::sort(subject_ids.begin(), subject_ids.end());
  Rng rng(derive_seed(seed, "split"));
  rng.shuffle(subject_ids);
  const auto n = static_cast<long>(subject_ids.size());
  const auto carve = [&](double frac) {
    return frac <= 0 ? 0L : std::max(1L, std::lround(frac * static_cast<double>(n)));
  };
  const long n_test = carve(test_fraction);
  const long n_val = carve(validation_fraction);
  if (n_test + n_val >= n) throw ConfigError("split fractions leave no training subjects");
  SubjectSplit split;
  split.test.assign(subject_ids.begin(), subject_ids.begin() + n_test);
  split.validation.assign(subject_ids.begin() + n_test, subject_ids.begin() + n_test + n_val);
  split.train.assign(subject_ids.begin() + n_test + n_val, subject_ids.end());
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.validation.begin(), split.validation.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

void validate_split(const SubjectSplit& split, const std::vector<std::string>& known_ids) {
  const std::set<std::string> known(known_ids.begin(), known_ids.end());
  std::set<std::string> seen;
  for (const auto* list : {&split.train, &split.validation, &split.test})
    for (const auto& id : *list) {
      if (!known.count(id)) throw DataError("split references unknown subject '" + id + "'");
      if (!seen.insert(id).second)
        throw DataError("subject '" + id + "' appears in more than one split partition");
    }
}

}  // namespace tsfm
