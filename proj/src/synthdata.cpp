#include "tsfm/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

#include "tsfm/errors.hpp"
#include "tsfm/rng.hpp"

namespace tsfm {

namespace {

std::string subject_name(int index, int total) {
  int width = 2;
  for (int v = total - 1; v >= 100; v /= 10) ++width;
  char buf[32];
  std::snprintf(buf, sizeof buf, "s%0*d", width, index);
  return buf;
}

std::string trial_name(int index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "t%02d", index);
  return buf;
}

// Magnitude of the discrete Fourier transform at an arbitrary frequency
// (cycles per step), after removing the mean.
double spectrum_at(const Eigen::VectorXd& signal, double freq) {
  const auto L = signal.size();
  const double mean = signal.mean();
  double re = 0.0, im = 0.0;
  for (Eigen::Index t = 0; t < L; ++t) {
    const double w = 2.0 * M_PI * freq * static_cast<double>(t);
    re += (signal(t) - mean) * std::cos(w);
    im += (signal(t) - mean) * std::sin(w);
  }
  return std::hypot(re, im);
}

// Coarse scan over the Fourier bins followed by a fine scan around the
// winner; precise enough to place a peak within a fraction of a bin.
double dominant_frequency(const Eigen::VectorXd& signal) {
  const auto L = signal.size();
  double best_freq = 0.0, best_mag = -1.0;
  for (Eigen::Index j = 1; j <= L / 2; ++j) {
    const double freq = static_cast<double>(j) / static_cast<double>(L);
    const double mag = spectrum_at(signal, freq);
    if (mag > best_mag) {
      best_mag = mag;
      best_freq = freq;
    }
  }
  const double bin = 1.0 / static_cast<double>(L);
  const double step = bin / 8.0;
  double refined = best_freq;
  for (double f = std::max(step, best_freq - 1.5 * bin); f <= best_freq + 1.5 * bin; f += step) {
    const double mag = spectrum_at(signal, f);
    if (mag > best_mag) {
      best_mag = mag;
      refined = f;
    }
  }
  return refined;
}

// Pair-counting AUC (ties half a win); empty when one class is missing.
std::optional<double> pair_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  double wins = 0.0;
  long pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      ++pairs;
      if (scores[i] > scores[j])
        wins += 1.0;
      else if (scores[i] == scores[j])
        wins += 0.5;
    }
  }
  if (pairs == 0) return std::nullopt;
  return wins / static_cast<double>(pairs);
}

void append_double(std::string* line, double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  *line += buf;
}

}  // namespace

void CohortSpec::validate() const {
  if (subjects < 2) throw ConfigError("a cohort needs at least two subjects");
  if (trials_min < 1 || trials_max < trials_min)
    throw ConfigError("trial count range is empty");
  if (length_min < 2 || length_max < length_min) throw ConfigError("trial length range is empty");
  if (harmonics < 2)
    throw ConfigError("the marker channel needs at least two harmonics");
  if (!(period_min > 0.0) || period_max < period_min)
    throw ConfigError("period range is empty");
  if (noise_min < 0.0 || noise_max < noise_min) throw ConfigError("noise range is empty");
  if (missing_rate < 0.0 || missing_rate > 0.3)
    throw ConfigError("missing rate must lie in [0, 0.3]");
}

Eigen::MatrixXd clean_trial(const SubjectLatents& latents, int length) {
  const auto K = latents.amplitudes.cols();
  Eigen::MatrixXd out(length, kCohortChannels);
  for (int c = 0; c <= kMarkerChannel; ++c) {
    for (int t = 0; t < length; ++t) {
      double v = 0.0;
      for (Eigen::Index k = 0; k < K; ++k) {
        const double w = 2.0 * M_PI * static_cast<double>(k + 1) * t / latents.period;
        v += latents.amplitudes(c, k) * std::sin(w + latents.phases(c, k));
      }
      out(t, c) = v;
    }
  }
  out.col(kRegressionChannel) =
      0.6 * out.col(0).array() + 0.8 * out.col(1).array().square() - 0.2;
  return out;
}

Cohort generate_cohort(const CohortSpec& spec, std::uint64_t seed) {
  spec.validate();
  Cohort cohort;
  for (int s = 0; s < spec.subjects; ++s) {
    SubjectMeta subject;
    subject.id = subject_name(s, spec.subjects);

    Rng latent(derive_seed(seed, "latent", static_cast<std::uint64_t>(s)));
    auto& lat = subject.latents;
    lat.period = latent.uniform(spec.period_min, spec.period_max);
    lat.theta = latent.uniform();
    lat.noise_std = latent.uniform(spec.noise_min, spec.noise_max);
    lat.amplitudes.resize(kMarkerChannel + 1, spec.harmonics);
    lat.phases.resize(kMarkerChannel + 1, spec.harmonics);
    for (int c = 0; c <= kMarkerChannel; ++c) {
      for (int k = 0; k < spec.harmonics; ++k) {
        lat.amplitudes(c, k) = 0.5 / (k + 1) * (0.75 + 0.5 * latent.uniform());
        lat.phases(c, k) = latent.uniform(0.0, 2.0 * M_PI);
      }
    }
    // The class signal: the marker channel's second-harmonic amplitude grows
    // with theta, and the label thresholds theta.
    lat.amplitudes(kMarkerChannel, 1) = 0.15 + 0.5 * lat.theta;
    subject.label = lat.theta > 0.5 ? 1 : 0;

    Rng layout(derive_seed(seed, "layout", static_cast<std::uint64_t>(s)));
    const auto n_trials = layout.uniform_int(spec.trials_min, spec.trials_max);
    for (int t = 0; t < n_trials; ++t) {
      const auto length =
          static_cast<int>(layout.uniform_int(spec.length_min, spec.length_max));
      Trial trial;
      trial.subject_id = subject.id;
      trial.trial_id = trial_name(t);
      trial.values = clean_trial(lat, length);

      Rng noise(derive_seed(seed, "noise", static_cast<std::uint64_t>(s),
                            static_cast<std::uint64_t>(t)));
      if (lat.noise_std > 0.0)
        for (int row = 0; row < length; ++row)
          for (int d = 0; d < kCohortChannels; ++d)
            trial.values(row, d) += lat.noise_std * noise.normal();

      Rng missing(derive_seed(seed, "missing", static_cast<std::uint64_t>(s),
                              static_cast<std::uint64_t>(t)));
      trial.missing.setZero(length, kCohortChannels);
      if (spec.missing_rate > 0.0)
        for (int row = 0; row < length; ++row)
          for (int d = 0; d < kCohortChannels; ++d)
            if (missing.uniform() < spec.missing_rate) trial.missing(row, d) = 1;

      cohort.trials.push_back(std::move(trial));
    }
    cohort.subjects.push_back(std::move(subject));
  }
  return cohort;
}

SanityReport cohort_sanity(const Cohort& cohort, std::uint64_t seed) {
  if (cohort.subjects.empty() || cohort.trials.empty())
    throw DataError("cannot run sanity checks on an empty cohort");
  std::map<std::string, const Trial*> first_trial;
  for (const auto& trial : cohort.trials) first_trial.try_emplace(trial.subject_id, &trial);

  SanityReport report;
  long peak_ok = 0, peak_total = 0;
  std::vector<double> marker_feature;
  std::vector<int> labels;
  for (const auto& subject : cohort.subjects) {
    const auto it = first_trial.find(subject.id);
    if (it == first_trial.end()) throw DataError("subject " + subject.id + " has no trials");
    const Trial& trial = *it->second;
    const double f0 = 1.0 / subject.latents.period;
    for (int c = 0; c <= kMarkerChannel; ++c) {
      const double dominant = dominant_frequency(trial.values.col(c));
      peak_ok += std::abs(dominant - f0) <= 0.1 * f0 ? 1 : 0;
      ++peak_total;
    }
    marker_feature.push_back(spectrum_at(trial.values.col(kMarkerChannel), 2.0 * f0) /
                             static_cast<double>(trial.length()));
    labels.push_back(subject.label);
  }
  report.peak_fraction = static_cast<double>(peak_ok) / static_cast<double>(peak_total);
  report.spectral_auc = pair_auc(marker_feature, labels).value_or(0.0);

  constexpr int kShuffles = 20;
  double auc_sum = 0.0;
  int defined = 0;
  for (int i = 0; i < kShuffles; ++i) {
    Rng rng(derive_seed(seed, "shuffle", static_cast<std::uint64_t>(i)));
    std::vector<int> shuffled = labels;
    rng.shuffle(shuffled);
    if (const auto auc = pair_auc(marker_feature, shuffled)) {
      auc_sum += *auc;
      ++defined;
    }
  }
  report.shuffled_auc_error = defined == 0 ? 1.0 : std::abs(auc_sum / defined - 0.5);
  return report;
}

void require_sane(const SanityReport& report) {
  std::string failed;
  auto flag = [&failed](bool ok, const char* name) {
    if (ok) return;
    if (!failed.empty()) failed += ", ";
    failed += name;
  };
  flag(report.peaks_ok(), "spectral peak placement");
  flag(report.separation_ok(), "marker-label separation");
  flag(report.shuffle_ok(), "shuffled-label control");
  if (!failed.empty()) throw DataError("cohort sanity failed: " + failed);
}

void write_cohort(const std::filesystem::path& dir, const Cohort& cohort,
                  double validation_fraction, double test_fraction, std::uint64_t seed) {
  std::filesystem::create_directories(dir / "trials");
  const std::vector<std::string> names = {"c0", "c1", "c2",     "c3",
                                          "c4", "c5", "marker", "target"};
  for (const auto& trial : cohort.trials) {
    const auto path = dir / "trials" / (trial.subject_id + "_" + trial.trial_id + ".csv");
    write_trial_csv(path.string(), trial, names);
  }

  std::ofstream meta(dir / "metadata.csv");
  if (!meta) throw DataError("cannot write " + (dir / "metadata.csv").string());
  meta << "subject_id,label,period,theta,noise_std\n";
  for (const auto& subject : cohort.subjects) {
    std::string line = subject.id + "," + std::to_string(subject.label) + ",";
    append_double(&line, subject.latents.period);
    line += ',';
    append_double(&line, subject.latents.theta);
    line += ',';
    append_double(&line, subject.latents.noise_std);
    meta << line << '\n';
  }
  if (!meta) throw DataError("failed writing cohort metadata");
  meta.close();

  std::vector<std::string> ids;
  for (const auto& subject : cohort.subjects) ids.push_back(subject.id);
  const SubjectSplit split = derive_split(ids, validation_fraction, test_fraction, seed);
  save_split((dir / "split.json").string(), split);
}

std::vector<std::pair<std::string, SubjectRecord>> load_metadata(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind("subject_id,label,period,theta", 0) != 0)
    throw DataError("malformed cohort metadata header in " + path.string());
  std::vector<std::pair<std::string, SubjectRecord>> records;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string id, label, period, theta;
    if (!std::getline(ss, id, ',') || !std::getline(ss, label, ',') ||
        !std::getline(ss, period, ',') || !std::getline(ss, theta, ','))
      throw DataError("malformed cohort metadata row: " + line);
    SubjectRecord record;
    try {
      record.label = std::stoi(label);
      record.theta = std::stod(theta);
    } catch (const std::exception&) {
      throw DataError("malformed cohort metadata row: " + line);
    }
    records.emplace_back(id, record);
  }
  return records;
}

}  // namespace tsfm
