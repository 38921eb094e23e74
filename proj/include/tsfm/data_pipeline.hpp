#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

namespace tsfm {

// One recording: L time steps x D feature channels.  `missing` marks cells
// that were empty in the source file; interpolate_missing clears it.
struct Trial {
  std::string subject_id;
  std::string trial_id;
  Eigen::MatrixXd values;                                        // L x D
  Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic> missing;  // L x D

  Eigen::Index length() const { return values.rows(); }
  Eigen::Index channels() const { return values.cols(); }
};

// Fixed-length slice of a trial, carrying provenance for grouping and for
// support selection in in-context tables.
struct Window {
  std::string subject_id;
  std::string trial_id;
  int start = 0;
  Eigen::MatrixXd values;  // T x D
};

// Per-feature min/max fitted on training subjects only.
struct NormalizationStats {
  Eigen::VectorXd min;
  Eigen::VectorXd max;
};

struct SubjectSplit {
  std::vector<std::string> train;
  std::vector<std::string> validation;
  std::vector<std::string> test;
};

// Trial CSV: "# subject=<id> trial=<id>", a feature-name header row, then one
// row per time step; an empty field is a missing value.
Trial load_trial_csv(const std::string& path);
void write_trial_csv(const std::string& path, const Trial& trial,
                     const std::vector<std::string>& feature_names);

// Loads every *.csv under `dir` (sorted by filename).  Throws DataError on
// malformed files, inconsistent channel counts, or duplicate
// (subject, trial) keys.
std::vector<Trial> load_trials(const std::string& dir);

// Per-feature linear interpolation over interior gaps; leading/trailing gaps
// are filled with the first/last observed value.  Observed cells are
// untouched.  Throws DataError if a feature column has no observed value.
Trial interpolate_missing(const Trial& trial);

// Fits per-feature min/max over the trials whose subject is in
// `train_subjects`.  Throws DataError when no trial matches.
NormalizationStats fit_normalizer(const std::vector<Trial>& trials,
                                  const std::vector<std::string>& train_subjects);

// (x - min) / (max - min); a constant feature (max == min) maps to 0.5.
// Values outside the fitted range are not clipped.
Trial normalize(const Trial& trial, const NormalizationStats& stats);

// Sliding windows of length `window` at the given stride, in raw sample
// indices.  A trial shorter than `window` yields no windows.
std::vector<Window> slice_windows(const Trial& trial, int window, int stride);

// Split file: JSON object with "train"/"validation"/"test" id lists.
SubjectSplit load_split(const std::string& path);
void save_split(const std::string& path, const SubjectSplit& split);

// Shuffles `subject_ids` by seed and carves off validation/test fractions
// (at least one subject each when the fraction is positive).
SubjectSplit derive_split(std::vector<std::string> subject_ids, double validation_fraction,
                          double test_fraction, std::uint64_t seed);

// Checks the three lists are pairwise disjoint and cover only known ids.
void validate_split(const SubjectSplit& split, const std::vector<std::string>& known_ids);

}  // namespace tsfm
