#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tsfm/data_pipeline.hpp"

namespace tsfm {

// Channel layout of a generated cohort: 6 quasi-periodic input channels, one
// class-informative channel, one regression-target channel.
constexpr int kCohortChannels = 8;
constexpr int kMarkerChannel = 6;
constexpr int kRegressionChannel = 7;

struct CohortSpec {
  int subjects = 30;
  int trials_min = 3, trials_max = 6;
  int length_min = 200, length_max = 400;
  int harmonics = 3;
  double period_min = 60.0, period_max = 100.0;
  double noise_min = 0.01, noise_max = 0.05;
  double missing_rate = 0.02;

  void validate() const;  // throws ConfigError on empty ranges etc.
};

// Per-subject generative parameters.  The binary label is a hard threshold
// on `theta`; the marker channel's second-harmonic amplitude is an affine
// function of `theta`, so the label is recoverable from the signal.
struct SubjectLatents {
  double period = 0.0;
  double theta = 0.0;
  double noise_std = 0.0;
  Eigen::MatrixXd amplitudes;  // (kMarkerChannel + 1) x harmonics
  Eigen::MatrixXd phases;      // same shape
};

struct SubjectMeta {
  std::string id;
  int label = 0;
  SubjectLatents latents;
};

struct Cohort {
  std::vector<SubjectMeta> subjects;
  std::vector<Trial> trials;  // grouped by subject, trial order preserved
};

// Noise-free signal for one subject: harmonic stacks on channels 0..6 and
// the regression channel 0.6*c0 + 0.8*c1^2 - 0.2.
Eigen::MatrixXd clean_trial(const SubjectLatents& latents, int length);

// Fully determined by (spec, seed); latent, noise, and missingness draws use
// separate derived streams per subject and trial.
Cohort generate_cohort(const CohortSpec& spec, std::uint64_t seed);

// Distribution-level checks on a generated cohort.
struct SanityReport {
  double peak_fraction = 0.0;     // channels whose dominant frequency sits at
                                  // the subject fundamental (within 10%)
  double spectral_auc = 0.0;      // marker-channel second-harmonic amplitude
                                  // ranking the labels
  double shuffled_auc_error = 0.0;  // |mean shuffled-label auc - 0.5|

  bool peaks_ok() const { return peak_fraction >= 0.9; }
  bool separation_ok() const { return spectral_auc >= 0.9; }
  bool shuffle_ok() const { return shuffled_auc_error <= 0.1; }
  bool pass() const { return peaks_ok() && separation_ok() && shuffle_ok(); }
};

SanityReport cohort_sanity(const Cohort& cohort, std::uint64_t seed);
// Throws DataError naming every failed check.
void require_sane(const SanityReport& report);

// Writes <dir>/trials/<subject>_<trial>.csv, <dir>/metadata.csv
// (subject_id,label,period,theta,noise_std), and <dir>/split.json from
// derive_split on the subject ids.
void write_cohort(const std::filesystem::path& dir, const Cohort& cohort,
                  double validation_fraction, double test_fraction, std::uint64_t seed);

// Reads metadata.csv back: subject id -> (label, theta).
struct SubjectRecord {
  int label = 0;
  double theta = 0.0;
};
std::vector<std::pair<std::string, SubjectRecord>> load_metadata(
    const std::filesystem::path& path);

}  // namespace tsfm
