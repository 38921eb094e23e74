#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tsfm/data_pipeline.hpp"
#include "tsfm/masking.hpp"
#include "tsfm/model.hpp"

namespace tsfm {

// Named metric values; metrics that are undefined on the given data appear
// in `absent` with the reason instead.
struct MetricReport {
  std::map<std::string, double> values;
  std::map<std::string, std::string> absent;
  long masked_positions = 0;  // pretext evaluations only

  std::string to_json_string() const;
};

enum class PretextObjective { kLc, kTc };

struct PretextConfig {
  PretextObjective objective = PretextObjective::kLc;
  SpanSamplerConfig lc_mask;  // ratio 0.8, segments [4, 16]
  int t_past = 50;
  int t_future = 50;
  double tc_ratio = 1.0;
  std::uint64_t seed = 0;
  int batch_windows = 128;
};

// Frozen-model reconstruction quality on held-out windows: masks drawn per
// window from the seed, (truth, prediction) pairs pooled over all masked
// positions and channels.  Reports mse/r2/pearson plus the mean-imputation
// baseline (per window and channel, the mean of that channel's unmasked
// steps).
MetricReport eval_pretext(const EncoderModel& model, const std::vector<Window>& windows,
                          const PretextConfig& config);

// Mean of the encoder's hidden states over the window's time tokens.
Eigen::VectorXd embed_for_probe(const EncoderModel& model, const Window& window);
// Batched variant; one row per window.
Eigen::MatrixXd embed_windows(const EncoderModel& model, const std::vector<const Window*>& windows,
                              int batch_windows = 128);

struct ProbeTask {
  enum class Kind { kClassification, kRegression };
  enum class Head { kLinear, kMlp };

  std::string name;
  Kind kind = Kind::kClassification;
  Head head = Head::kLinear;  // convention: linear for classes, mlp for regression
  int num_classes = 2;        // classification only
};

struct ProbeData {
  Eigen::MatrixXd embeddings;         // N x d
  std::vector<double> targets;        // class index or real value per row
  std::vector<std::string> subjects;  // per row, for subject-level aggregation
};

struct ProbeTrainConfig {
  double lr = 1e-2;
  int max_epochs = 500;
  int patience = 25;
  double min_improvement = 1e-6;
  std::uint64_t seed = 0;
};

// Trained probe head over frozen embeddings.  Embeddings are standardized
// with statistics from the training rows.
struct ProbeHead {
  ProbeTask task;
  Eigen::VectorXd mean, std;          // standardization, length d
  Eigen::MatrixXd w1;                 // mlp hidden layer; empty for linear heads
  Eigen::VectorXd b1;
  Eigen::MatrixXd w2;                 // output layer, d x C (or d x 1)
  Eigen::VectorXd b2;

  // Class probabilities (N x C) for classification, predictions (N x 1) for
  // regression.
  Eigen::MatrixXd predict(const Eigen::MatrixXd& embeddings) const;
};

// Full-batch Adam on cross-entropy (classification) or mean squared error
// (regression); keeps the parameters of the best validation epoch.  Throws
// DataError when classification training labels contain a single class.
ProbeHead train_probe(const ProbeData& train, const ProbeData& val, const ProbeTask& task,
                      const ProbeTrainConfig& config);

// Classification: macro-F1 at argmax plus rank AUC (binary) or one-vs-rest
// macro AUC (multiclass).  Regression: pearson, mse, rmse, r2.  Metrics that
// are undefined (single-class targets, zero variance) come back absent.
MetricReport compute_metrics(const Eigen::MatrixXd& predictions,
                             const std::vector<double>& targets, ProbeTask::Kind kind);

// Means of rows sharing a subject, in sorted subject order; targets must be
// constant within each subject.
void aggregate_by_subject(const Eigen::MatrixXd& predictions, const std::vector<double>& targets,
                          const std::vector<std::string>& subjects, Eigen::MatrixXd* agg_pred,
                          std::vector<double>* agg_targets);

struct Reconstruction {
  Eigen::MatrixXd truth;       // T x D
  Eigen::MatrixXd prediction;  // decoded output at every position
  TimeMask mask;
};

Reconstruction reconstruct_window(const EncoderModel& model, const Window& window,
                                  const TimeMask& mask, DecoderHead head = DecoderHead::kLc);

// Plot-ready long format: time,feature,truth,prediction,masked.
void write_reconstruction_csv(const std::filesystem::path& path, const Reconstruction& rec,
                              const std::vector<std::string>& feature_names);

}  // namespace tsfm
