#pragma once

// Independent brute-force reference implementations used to cross-check the
// library.  Everything here is written as plain double loops straight from
// the definitions, with no code shared with the implementation under test.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

namespace oracle {

// Linear interpolation of missing cells, one feature at a time; edge gaps
// take the nearest observed value.
inline Eigen::MatrixXd interpolate(const Eigen::MatrixXd& values,
                                   const Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>& missing) {
  Eigen::MatrixXd out = values;
  const auto L = values.rows(), D = values.cols();
  for (Eigen::Index d = 0; d < D; ++d) {
    std::vector<std::pair<Eigen::Index, double>> obs;
    for (Eigen::Index t = 0; t < L; ++t)
      if (!missing(t, d)) obs.emplace_back(t, values(t, d));
    for (Eigen::Index t = 0; t < L; ++t) {
      if (!missing(t, d)) continue;
      if (t < obs.front().first) {
        out(t, d) = obs.front().second;
      } else if (t > obs.back().first) {
        out(t, d) = obs.back().second;
      } else {
        std::size_t k = 0;
        while (obs[k + 1].first < t) ++k;
        const auto [t0, v0] = obs[k];
        const auto [t1, v1] = obs[k + 1];
        out(t, d) = v0 + (v1 - v0) * static_cast<double>(t - t0) / static_cast<double>(t1 - t0);
      }
    }
  }
  return out;
}

inline std::vector<int> window_starts(int length, int window, int stride) {
  std::vector<int> starts;
  for (int s = 0; s + window <= length; s += stride) starts.push_back(s);
  return starts;
}

// Masked reconstruction error: mean squared error over flagged positions,
// averaged over all D channels; absent when nothing is flagged.
inline bool masked_mse(const Eigen::MatrixXd& target, const Eigen::MatrixXd& pred,
                       const std::vector<std::uint8_t>& flags, double* out) {
  long count = 0;
  double sum = 0.0;
  for (Eigen::Index t = 0; t < target.rows(); ++t) {
    if (!flags[static_cast<std::size_t>(t)]) continue;
    ++count;
    for (Eigen::Index d = 0; d < target.cols(); ++d) {
      const double e = target(t, d) - pred(t, d);
      sum += e * e;
    }
  }
  if (count == 0) return false;
  *out = sum / (static_cast<double>(count) * static_cast<double>(target.cols()));
  return true;
}

// Same error restricted to a future horizon: rows [t_past, t_past + t_future)
// with a per-horizon flag vector.
inline bool future_mse(const Eigen::MatrixXd& target, const Eigen::MatrixXd& pred, int t_past,
                       const std::vector<std::uint8_t>& future_flags, double* out) {
  std::vector<std::uint8_t> flags(static_cast<std::size_t>(target.rows()), 0);
  for (std::size_t i = 0; i < future_flags.size(); ++i)
    flags[static_cast<std::size_t>(t_past) + i] = future_flags[i];
  return masked_mse(target, pred, flags, out);
}

// Table variant: rows of the prediction matrix are R stacked windows of T
// steps; only flagged positions of query rows enter, normalized by the total
// flagged count across query rows times D.
inline bool table_query_mse(const std::vector<Eigen::MatrixXd>& row_targets,
                            const Eigen::MatrixXd& table_pred, const std::vector<int>& query_rows,
                            const std::vector<std::vector<std::uint8_t>>& query_flags, double* out) {
  const auto T = row_targets.front().rows();
  const auto D = row_targets.front().cols();
  long count = 0;
  double sum = 0.0;
  for (std::size_t qi = 0; qi < query_rows.size(); ++qi) {
    const int r = query_rows[qi];
    for (Eigen::Index t = 0; t < T; ++t) {
      if (!query_flags[qi][static_cast<std::size_t>(t)]) continue;
      ++count;
      for (Eigen::Index d = 0; d < D; ++d) {
        const double e = row_targets[static_cast<std::size_t>(r)](t, d) - table_pred(r * T + t, d);
        sum += e * e;
      }
    }
  }
  if (count == 0) return false;
  *out = sum / (static_cast<double>(count) * static_cast<double>(D));
  return true;
}

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const auto n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

// Probability that a random positive outranks a random negative; ties count
// one half.  O(n^2) pair counting.
inline double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
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
  return wins / static_cast<double>(pairs);
}

inline double macro_f1(const std::vector<int>& predicted, const std::vector<int>& target,
                       int num_classes) {
  double total = 0.0;
  int present = 0;
  for (int c = 0; c < num_classes; ++c) {
    long tp = 0, fp = 0, fn = 0;
    bool in_targets = false;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
      if (target[i] == c) in_targets = true;
      if (predicted[i] == c && target[i] == c) ++tp;
      if (predicted[i] == c && target[i] != c) ++fp;
      if (predicted[i] != c && target[i] == c) ++fn;
    }
    if (!in_targets) continue;
    ++present;
    total += (2 * tp + fp + fn) == 0 ? 0.0 : 2.0 * tp / static_cast<double>(2 * tp + fp + fn);
  }
  return total / present;
}

}  // namespace oracle
