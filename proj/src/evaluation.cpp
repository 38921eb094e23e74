#include "tsfm/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>

#include "nlohmann/json.hpp"
#include "tsfm/errors.hpp"
#include "tsfm/rng.hpp"

namespace tsfm {

namespace {

constexpr double kStdFloor = 1e-8;

double gelu_scalar(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }

double gelu_prime_scalar(double x) {
  const double phi = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
  return 0.5 * (1.0 + std::erf(x * M_SQRT1_2)) + x * phi;
}

Eigen::MatrixXd softmax_probs(Eigen::MatrixXd logits) {
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    logits.row(i) = (logits.row(i).array() - m).exp();
    logits.row(i) /= logits.row(i).sum();
  }
  return logits;
}

struct PooledStats {
  double mse = 0.0;
  std::optional<double> r2;
  std::optional<double> pearson;
  bool target_variance_zero = false;
  bool pred_variance_zero = false;
};

PooledStats pooled_regression_stats(const std::vector<double>& pred,
                                    const std::vector<double>& truth) {
  const auto n = static_cast<double>(truth.size());
  PooledStats stats;
  double mean_t = 0.0, mean_p = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    mean_t += truth[i];
    mean_p += pred[i];
  }
  mean_t /= n;
  mean_p /= n;
  double sse = 0.0, sst = 0.0, spp = 0.0, stp = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const double e = pred[i] - truth[i];
    sse += e * e;
    sst += (truth[i] - mean_t) * (truth[i] - mean_t);
    spp += (pred[i] - mean_p) * (pred[i] - mean_p);
    stp += (truth[i] - mean_t) * (pred[i] - mean_p);
  }
  stats.mse = sse / n;
  // Constancy checked exactly so that rounding in the accumulators cannot
  // leak a meaningless correlation for flat targets or predictions.
  const auto [t_lo, t_hi] = std::minmax_element(truth.begin(), truth.end());
  const auto [p_lo, p_hi] = std::minmax_element(pred.begin(), pred.end());
  stats.target_variance_zero = *t_lo == *t_hi;
  stats.pred_variance_zero = *p_lo == *p_hi;
  if (!stats.target_variance_zero) stats.r2 = 1.0 - sse / sst;
  if (!stats.target_variance_zero && !stats.pred_variance_zero)
    stats.pearson = stp / std::sqrt(sst * spp);
  return stats;
}

// Mann-Whitney rank AUC with mid-ranks for ties; empty when one class is
// missing.
std::optional<double> rank_auc(const std::vector<double>& scores,
                               const std::vector<bool>& positive) {
  long n_pos = 0, n_neg = 0;
  for (bool p : positive) (p ? n_pos : n_neg) += 1;
  if (n_pos == 0 || n_neg == 0) return std::nullopt;
  std::vector<std::size_t> order(scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double mid_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
    for (std::size_t k = i; k < j; ++k)
      if (positive[order[k]]) rank_sum_pos += mid_rank;
    i = j;
  }
  const double u = rank_sum_pos - 0.5 * static_cast<double>(n_pos) * (n_pos + 1.0);
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

int target_class(double value, int num_classes) {
  const double rounded = std::round(value);
  if (rounded != value || rounded < 0 || rounded >= num_classes)
    throw DataError("classification targets must be class indices");
  return static_cast<int>(rounded);
}

void format_double(std::string* out, double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  *out += buf;
}

struct AdamState {
  Eigen::MatrixXd m, v;
  explicit AdamState(const Eigen::MatrixXd& shape)
      : m(Eigen::MatrixXd::Zero(shape.rows(), shape.cols())),
        v(Eigen::MatrixXd::Zero(shape.rows(), shape.cols())) {}
  void step(Eigen::MatrixXd* param, const Eigen::MatrixXd& grad, double lr, int t) {
    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    m = beta1 * m + (1.0 - beta1) * grad;
    v = beta2 * v.array().matrix() + (1.0 - beta2) * grad.array().square().matrix();
    const double c1 = 1.0 - std::pow(beta1, t);
    const double c2 = 1.0 - std::pow(beta2, t);
    param->array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  }
};

struct ProbeParams {
  Eigen::MatrixXd w1, w2;
  Eigen::VectorXd b1, b2;
};

}  // namespace

std::string MetricReport::to_json_string() const {
  nlohmann::json out;
  out["values"] = nlohmann::json::object();
  for (const auto& [name, value] : values) out["values"][name] = value;
  out["absent"] = nlohmann::json::object();
  for (const auto& [name, reason] : absent) out["absent"][name] = reason;
  out["masked_positions"] = masked_positions;
  return out.dump(2);
}

MetricReport eval_pretext(const EncoderModel& model, const std::vector<Window>& windows,
                          const PretextConfig& config) {
  if (windows.empty()) throw DataError("pretext evaluation needs at least one window");
  if (config.batch_windows < 1) throw ConfigError("batch_windows must be positive");

  // Per-window masks derived from the seed, independent of batching.
  std::vector<TimeMask> masks;
  masks.reserve(windows.size());
  for (std::size_t i = 0; i < windows.size(); ++i) {
    const int T = static_cast<int>(windows[i].values.rows());
    Rng rng(derive_seed(config.seed, "eval-mask", static_cast<std::uint64_t>(i)));
    if (config.objective == PretextObjective::kLc) {
      masks.push_back(sample_lc_mask(T, config.lc_mask, rng));
    } else {
      if (T != config.t_past + config.t_future)
        throw DataError("window length must equal t_past + t_future for the continuity objective");
      masks.push_back(sample_tc_mask(config.t_past, config.t_future, config.tc_ratio, rng));
    }
  }
  const DecoderHead head =
      config.objective == PretextObjective::kLc ? DecoderHead::kLc : DecoderHead::kTc;

  std::vector<double> truth, pred, base;
  long masked_positions = 0;
  const std::size_t chunk = static_cast<std::size_t>(config.batch_windows);
  for (std::size_t begin = 0; begin < windows.size(); begin += chunk) {
    const std::size_t end = std::min(begin + chunk, windows.size());
    std::vector<const Window*> wptr;
    std::vector<const TimeMask*> mptr;
    for (std::size_t i = begin; i < end; ++i) {
      wptr.push_back(&windows[i]);
      mptr.push_back(&masks[i]);
    }
    const TokenBatch batch = make_window_batch(wptr, mptr);
    const Eigen::MatrixXd out = model.forward(batch, head, false, nullptr, nullptr);
    const auto D = windows[begin].values.cols();
    for (std::size_t i = begin; i < end; ++i) {
      const auto& values = windows[i].values;
      const auto T = values.rows();
      const auto offset = static_cast<Eigen::Index>(i - begin) * T;
      // Mean-imputation baseline: per channel, the mean over unmasked steps.
      Eigen::VectorXd channel_mean(D);
      const int unmasked = static_cast<int>(T) - masks[i].coverage_count();
      for (Eigen::Index d = 0; d < D; ++d) {
        if (unmasked == 0) {
          channel_mean(d) = 0.5;  // fully masked: fall back to the range midpoint
          continue;
        }
        double sum = 0.0;
        for (Eigen::Index t = 0; t < T; ++t)
          if (!masks[i].masked_at(static_cast<int>(t))) sum += values(t, d);
        channel_mean(d) = sum / unmasked;
      }
      for (Eigen::Index t = 0; t < T; ++t) {
        if (!masks[i].masked_at(static_cast<int>(t))) continue;
        ++masked_positions;
        for (Eigen::Index d = 0; d < D; ++d) {
          truth.push_back(values(t, d));
          pred.push_back(out(offset + t, d));
          base.push_back(channel_mean(d));
        }
      }
    }
  }
  if (truth.empty()) throw DataError("pretext evaluation produced no masked positions");

  const PooledStats model_stats = pooled_regression_stats(pred, truth);
  const PooledStats base_stats = pooled_regression_stats(base, truth);
  MetricReport report;
  report.masked_positions = masked_positions;
  report.values["mse"] = model_stats.mse;
  report.values["baseline_mse"] = base_stats.mse;
  if (model_stats.target_variance_zero) {
    report.absent["r2"] = "zero-variance targets";
    report.absent["baseline_r2"] = "zero-variance targets";
    report.absent["pearson"] = "zero-variance targets";
  } else {
    report.values["r2"] = *model_stats.r2;
    report.values["baseline_r2"] = *base_stats.r2;
    if (model_stats.pearson)
      report.values["pearson"] = *model_stats.pearson;
    else
      report.absent["pearson"] = "zero-variance predictions";
  }
  return report;
}

Eigen::MatrixXd embed_windows(const EncoderModel& model, const std::vector<const Window*>& windows,
                              int batch_windows) {
  if (windows.empty()) throw DataError("cannot embed zero windows");
  if (batch_windows < 1) throw ConfigError("batch_windows must be positive");
  const auto d = model.config().embed_dim;
  Eigen::MatrixXd out(static_cast<Eigen::Index>(windows.size()), d);
  const std::size_t chunk = static_cast<std::size_t>(batch_windows);
  for (std::size_t begin = 0; begin < windows.size(); begin += chunk) {
    const std::size_t end = std::min(begin + chunk, windows.size());
    const std::vector<const Window*> part(windows.begin() + static_cast<long>(begin),
                                          windows.begin() + static_cast<long>(end));
    const TokenBatch batch = make_window_batch(part, {});
    const Eigen::MatrixXd hidden = model.encode_batch(batch, false, nullptr, nullptr);
    for (std::size_t i = begin; i < end; ++i) {
      const auto s = i - begin;
      out.row(static_cast<Eigen::Index>(i)) =
          hidden.middleRows(batch.seq_offsets[s], batch.seq_lengths[s]).colwise().mean();
    }
  }
  return out;
}

Eigen::VectorXd embed_for_probe(const EncoderModel& model, const Window& window) {
  return embed_windows(model, {&window}, 1).row(0).transpose();
}

Eigen::MatrixXd ProbeHead::predict(const Eigen::MatrixXd& embeddings) const {
  if (embeddings.cols() != mean.size())
    throw DataError("embedding width does not match the trained probe");
  Eigen::MatrixXd z = embeddings;
  z.rowwise() -= mean.transpose();
  z.array().rowwise() /= std.transpose().array();
  Eigen::MatrixXd h;
  if (w1.size() > 0) {
    h = (z * w1).rowwise() + b1.transpose();
    h = h.unaryExpr(&gelu_scalar);
  } else {
    h = std::move(z);
  }
  Eigen::MatrixXd logits = (h * w2).rowwise() + b2.transpose();
  if (task.kind == ProbeTask::Kind::kClassification) return softmax_probs(std::move(logits));
  return logits;
}

ProbeHead train_probe(const ProbeData& train, const ProbeData& val, const ProbeTask& task,
                      const ProbeTrainConfig& config) {
  const auto n = train.embeddings.rows();
  if (n == 0) throw DataError("probe training set is empty");
  if (static_cast<Eigen::Index>(train.targets.size()) != n)
    throw DataError("probe targets must match the embedding rows");
  if (val.embeddings.rows() != static_cast<Eigen::Index>(val.targets.size()))
    throw DataError("probe validation targets must match the embedding rows");
  if (config.lr <= 0) throw ConfigError("probe learning rate must be positive");
  if (config.max_epochs < 1 || config.patience < 1)
    throw ConfigError("probe epochs and patience must be positive");
  const bool classify = task.kind == ProbeTask::Kind::kClassification;
  const int out_dim = classify ? task.num_classes : 1;
  if (classify && task.num_classes < 2) throw ConfigError("classification needs at least 2 classes");

  std::vector<int> train_labels, val_labels;
  if (classify) {
    for (double t : train.targets) train_labels.push_back(target_class(t, task.num_classes));
    for (double t : val.targets) val_labels.push_back(target_class(t, task.num_classes));
    std::vector<int> distinct = train_labels;
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    if (distinct.size() < 2)
      throw DataError("degenerate probe task: training labels contain a single class");
  }

  const auto d = train.embeddings.cols();
  ProbeHead head;
  head.task = task;
  head.mean = train.embeddings.colwise().mean().transpose();
  Eigen::MatrixXd centered = train.embeddings.rowwise() - head.mean.transpose();
  head.std = (centered.array().square().colwise().mean().sqrt() + 0.0).transpose().matrix();
  head.std = head.std.cwiseMax(kStdFloor);

  auto standardize = [&](const Eigen::MatrixXd& emb) {
    Eigen::MatrixXd z = emb.rowwise() - head.mean.transpose();
    z.array().rowwise() /= head.std.transpose().array();
    return z;
  };
  const Eigen::MatrixXd z_train = standardize(train.embeddings);
  const Eigen::MatrixXd z_val = val.embeddings.rows() > 0 ? standardize(val.embeddings)
                                                          : Eigen::MatrixXd(0, d);

  const bool mlp = task.head == ProbeTask::Head::kMlp;
  ProbeParams p;
  Rng rng(derive_seed(config.seed, "probe-init"));
  if (mlp) {
    p.w1.resize(d, d);
    for (Eigen::Index j = 0; j < d; ++j)
      for (Eigen::Index i = 0; i < d; ++i) p.w1(i, j) = rng.normal(0.0, std::sqrt(2.0 / d));
    p.b1 = Eigen::VectorXd::Zero(d);
    p.w2.resize(d, out_dim);
    for (Eigen::Index j = 0; j < out_dim; ++j)
      for (Eigen::Index i = 0; i < d; ++i) p.w2(i, j) = rng.normal(0.0, 0.01);
  } else {
    p.w2 = Eigen::MatrixXd::Zero(d, out_dim);
  }
  p.b2 = Eigen::VectorXd::Zero(out_dim);

  auto forward = [&](const Eigen::MatrixXd& z, Eigen::MatrixXd* hidden_pre,
                     Eigen::MatrixXd* hidden) {
    if (mlp) {
      *hidden_pre = (z * p.w1).rowwise() + p.b1.transpose();
      *hidden = hidden_pre->unaryExpr(&gelu_scalar);
    } else {
      *hidden = z;
    }
    return Eigen::MatrixXd(((*hidden) * p.w2).rowwise() + p.b2.transpose());
  };

  auto loss_of = [&](const Eigen::MatrixXd& z, const std::vector<double>& targets,
                     const std::vector<int>& labels) {
    Eigen::MatrixXd pre, hid;
    const Eigen::MatrixXd logits = forward(z, &pre, &hid);
    const auto rows = z.rows();
    if (classify) {
      const Eigen::MatrixXd probs = softmax_probs(logits);
      double loss = 0.0;
      for (Eigen::Index i = 0; i < rows; ++i)
        loss -= std::log(std::max(probs(i, labels[static_cast<std::size_t>(i)]), 1e-300));
      return loss / static_cast<double>(rows);
    }
    double loss = 0.0;
    for (Eigen::Index i = 0; i < rows; ++i) {
      const double e = logits(i, 0) - targets[static_cast<std::size_t>(i)];
      loss += e * e;
    }
    return loss / static_cast<double>(rows);
  };

  AdamState adam_w1(mlp ? p.w1 : Eigen::MatrixXd(0, 0));
  AdamState adam_b1(mlp ? Eigen::MatrixXd(p.b1) : Eigen::MatrixXd(0, 0));
  AdamState adam_w2(p.w2);
  AdamState adam_b2{Eigen::MatrixXd(p.b2)};

  ProbeParams best = p;
  double best_val = std::numeric_limits<double>::infinity();
  int stale = 0;
  const bool have_val = z_val.rows() > 0;
  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    Eigen::MatrixXd pre, hid;
    const Eigen::MatrixXd logits = forward(z_train, &pre, &hid);
    Eigen::MatrixXd d_logits;
    if (classify) {
      d_logits = softmax_probs(logits);
      for (Eigen::Index i = 0; i < n; ++i)
        d_logits(i, train_labels[static_cast<std::size_t>(i)]) -= 1.0;
      d_logits /= static_cast<double>(n);
    } else {
      d_logits = logits;
      for (Eigen::Index i = 0; i < n; ++i)
        d_logits(i, 0) -= train.targets[static_cast<std::size_t>(i)];
      d_logits *= 2.0 / static_cast<double>(n);
    }
    const Eigen::MatrixXd d_w2 = hid.transpose() * d_logits;
    const Eigen::VectorXd d_b2 = d_logits.colwise().sum().transpose();
    adam_w2.step(&p.w2, d_w2, config.lr, epoch);
    Eigen::MatrixXd b2m(p.b2);
    adam_b2.step(&b2m, Eigen::MatrixXd(d_b2), config.lr, epoch);
    p.b2 = b2m;
    if (mlp) {
      const Eigen::MatrixXd d_hid = d_logits * p.w2.transpose();
      const Eigen::MatrixXd d_pre =
          d_hid.array() * pre.unaryExpr(&gelu_prime_scalar).array();
      const Eigen::MatrixXd d_w1 = z_train.transpose() * d_pre.matrix();
      const Eigen::VectorXd d_b1 = d_pre.matrix().colwise().sum().transpose();
      adam_w1.step(&p.w1, d_w1, config.lr, epoch);
      Eigen::MatrixXd b1m(p.b1);
      adam_b1.step(&b1m, Eigen::MatrixXd(d_b1), config.lr, epoch);
      p.b1 = b1m;
    }

    if (!have_val) {
      best = p;
      continue;
    }
    const double val_loss = loss_of(z_val, val.targets, val_labels);
    if (best_val - val_loss >= config.min_improvement) {
      best_val = val_loss;
      best = p;
      stale = 0;
    } else if (++stale >= config.patience) {
      break;
    }
  }
  head.w1 = best.w1;
  head.b1 = best.b1;
  head.w2 = best.w2;
  head.b2 = best.b2;
  return head;
}

MetricReport compute_metrics(const Eigen::MatrixXd& predictions,
                             const std::vector<double>& targets, ProbeTask::Kind kind) {
  const auto n = predictions.rows();
  if (n == 0) throw DataError("metrics need at least one prediction");
  if (static_cast<Eigen::Index>(targets.size()) != n)
    throw DataError("prediction rows must match the target count");
  MetricReport report;

  if (kind == ProbeTask::Kind::kRegression) {
    if (predictions.cols() != 1) throw DataError("regression predictions must have one column");
    std::vector<double> pred(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) pred[static_cast<std::size_t>(i)] = predictions(i, 0);
    const PooledStats stats = pooled_regression_stats(pred, targets);
    report.values["mse"] = stats.mse;
    report.values["rmse"] = std::sqrt(stats.mse);
    if (stats.target_variance_zero) {
      report.absent["r2"] = "zero-variance targets";
      report.absent["pearson"] = "zero-variance targets";
    } else {
      report.values["r2"] = *stats.r2;
      if (stats.pearson)
        report.values["pearson"] = *stats.pearson;
      else
        report.absent["pearson"] = "zero-variance predictions";
    }
    return report;
  }

  const int C = static_cast<int>(predictions.cols());
  if (C < 2) throw DataError("classification predictions need at least two class columns");
  std::vector<int> labels(static_cast<std::size_t>(n)), argmax(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    labels[static_cast<std::size_t>(i)] = target_class(targets[static_cast<std::size_t>(i)], C);
    Eigen::Index best = 0;
    predictions.row(i).maxCoeff(&best);
    argmax[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }

  // Macro F1 over the classes that occur in the targets.
  double f1_total = 0.0;
  int f1_classes = 0;
  std::vector<bool> class_present(static_cast<std::size_t>(C), false);
  for (int label : labels) class_present[static_cast<std::size_t>(label)] = true;
  for (int c = 0; c < C; ++c) {
    if (!class_present[static_cast<std::size_t>(c)]) continue;
    long tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (argmax[i] == c && labels[i] == c) ++tp;
      if (argmax[i] == c && labels[i] != c) ++fp;
      if (argmax[i] != c && labels[i] == c) ++fn;
    }
    const long denom = 2 * tp + fp + fn;
    f1_total += denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
    ++f1_classes;
  }
  report.values["macro_f1"] = f1_total / f1_classes;

  if (C == 2) {
    std::vector<double> scores(labels.size());
    std::vector<bool> positive(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
      scores[i] = predictions(static_cast<Eigen::Index>(i), 1);
      positive[i] = labels[i] == 1;
    }
    if (const auto auc = rank_auc(scores, positive))
      report.values["auc"] = *auc;
    else
      report.absent["auc"] = "one class absent from the targets";
  } else {
    // One-vs-rest macro average over the classes present in the targets.
    double auc_total = 0.0;
    int auc_classes = 0;
    for (int c = 0; c < C; ++c) {
      if (!class_present[static_cast<std::size_t>(c)]) continue;
      std::vector<double> scores(labels.size());
      std::vector<bool> positive(labels.size());
      for (std::size_t i = 0; i < labels.size(); ++i) {
        scores[i] = predictions(static_cast<Eigen::Index>(i), c);
        positive[i] = labels[i] == c;
      }
      if (const auto auc = rank_auc(scores, positive)) {
        auc_total += *auc;
        ++auc_classes;
      }
    }
    if (auc_classes >= 2)
      report.values["auc"] = auc_total / auc_classes;
    else
      report.absent["auc"] = "fewer than two classes present in the targets";
  }
  return report;
}

void aggregate_by_subject(const Eigen::MatrixXd& predictions, const std::vector<double>& targets,
                          const std::vector<std::string>& subjects, Eigen::MatrixXd* agg_pred,
                          std::vector<double>* agg_targets) {
  const auto n = predictions.rows();
  if (static_cast<Eigen::Index>(targets.size()) != n ||
      static_cast<Eigen::Index>(subjects.size()) != n)
    throw DataError("aggregation inputs must have one row per window");
  if (n == 0) throw DataError("cannot aggregate zero rows");
  struct Bucket {
    Eigen::RowVectorXd sum;
    long count = 0;
    double target = 0.0;
  };
  std::map<std::string, Bucket> buckets;
  for (Eigen::Index i = 0; i < n; ++i) {
    auto [it, inserted] = buckets.try_emplace(subjects[static_cast<std::size_t>(i)]);
    auto& bucket = it->second;
    if (inserted) {
      bucket.sum = Eigen::RowVectorXd::Zero(predictions.cols());
      bucket.target = targets[static_cast<std::size_t>(i)];
    } else if (bucket.target != targets[static_cast<std::size_t>(i)]) {
      throw DataError("conflicting targets within subject " + it->first);
    }
    bucket.sum += predictions.row(i);
    ++bucket.count;
  }
  agg_pred->resize(static_cast<Eigen::Index>(buckets.size()), predictions.cols());
  agg_targets->clear();
  Eigen::Index row = 0;
  for (const auto& [subject, bucket] : buckets) {
    agg_pred->row(row++) = bucket.sum / static_cast<double>(bucket.count);
    agg_targets->push_back(bucket.target);
  }
}

Reconstruction reconstruct_window(const EncoderModel& model, const Window& window,
                                  const TimeMask& mask, DecoderHead head) {
  Reconstruction rec;
  rec.truth = window.values;
  rec.mask = mask;
  const std::vector<const Window*> windows = {&window};
  const std::vector<const TimeMask*> masks = {&mask};
  const TokenBatch batch = make_window_batch(windows, masks);
  rec.prediction = model.forward(batch, head, false, nullptr, nullptr);
  return rec;
}

void write_reconstruction_csv(const std::filesystem::path& path, const Reconstruction& rec,
                              const std::vector<std::string>& feature_names) {
  const auto D = rec.truth.cols();
  if (!feature_names.empty() && static_cast<Eigen::Index>(feature_names.size()) != D)
    throw DataError("feature name count must match the channel count");
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out << "time,feature,truth,prediction,masked\n";
  std::string line;
  for (Eigen::Index t = 0; t < rec.truth.rows(); ++t) {
    for (Eigen::Index d = 0; d < D; ++d) {
      line.clear();
      line += std::to_string(t);
      line += ',';
      line += feature_names.empty() ? "f" + std::to_string(d)
                                    : feature_names[static_cast<std::size_t>(d)];
      line += ',';
      format_double(&line, rec.truth(t, d));
      line += ',';
      format_double(&line, rec.prediction(t, d));
      line += ',';
      line += rec.mask.masked_at(static_cast<int>(t)) ? '1' : '0';
      line += '\n';
      out << line;
    }
  }
  if (!out) throw DataError("failed writing " + path.string());
}

}  // namespace tsfm
