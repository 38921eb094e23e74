#include "tsfm/objectives.hpp"

#include "tsfm/errors.hpp"

namespace tsfm {

namespace {

void check_shapes(const Eigen::MatrixXd& target, const Eigen::MatrixXd& pred) {
  if (target.rows() != pred.rows() || target.cols() != pred.cols())
    throw DataError("prediction shape does not match the target");
}

}  // namespace

MaskedMse lc_loss(const Eigen::MatrixXd& target, const Eigen::MatrixXd& pred,
                  const TimeMask& mask) {
  check_shapes(target, pred);
  MaskedMse out;
  double sum = 0.0;
  for (Eigen::Index t = 0; t < target.rows(); ++t) {
    if (!mask.masked_at(static_cast<int>(t))) continue;
    ++out.positions;
    sum += (target.row(t) - pred.row(t)).squaredNorm();
  }
  if (out.positions > 0)
    out.value = sum / (static_cast<double>(out.positions) * static_cast<double>(target.cols()));
  return out;
}

Eigen::MatrixXd lc_loss_grad(const Eigen::MatrixXd& target, const Eigen::MatrixXd& pred,
                             const TimeMask& mask) {
  check_shapes(target, pred);
  long positions = 0;
  for (Eigen::Index t = 0; t < target.rows(); ++t)
    if (mask.masked_at(static_cast<int>(t))) ++positions;
  Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(pred.rows(), pred.cols());
  if (positions == 0) return grad;
  const double scale = 2.0 / (static_cast<double>(positions) * static_cast<double>(target.cols()));
  for (Eigen::Index t = 0; t < target.rows(); ++t)
    if (mask.masked_at(static_cast<int>(t))) grad.row(t) = scale * (pred.row(t) - target.row(t));
  return grad;
}

namespace {

void check_future_mask(const Eigen::MatrixXd& target, int t_past, const TimeMask& mask) {
  if (mask.region_offset != t_past)
    throw ConfigError("future mask must start at the past/future boundary");
  if (mask.region_offset + mask.region_length > target.rows())
    throw ConfigError("future mask extends past the window");
}

}  // namespace

MaskedMse tc_loss(const Eigen::MatrixXd& target, const Eigen::MatrixXd& pred, int t_past,
                  const TimeMask& future_mask) {
  check_future_mask(target, t_past, future_mask);
  return lc_loss(target, pred, future_mask);
}

Eigen::MatrixXd tc_loss_grad(const Eigen::MatrixXd& target, const Eigen::MatrixXd& pred,
                             int t_past, const TimeMask& future_mask) {
  check_future_mask(target, t_past, future_mask);
  return lc_loss_grad(target, pred, future_mask);
}

MaskedMse uicd_loss(const std::vector<const Window*>& batch, const SupportQueryTable& table,
                    const Eigen::MatrixXd& table_pred) {
  const auto R = static_cast<Eigen::Index>(table.rows.size());
  if (R == 0) throw DataError("empty table");
  const auto T = batch.at(static_cast<std::size_t>(table.rows[0]))->values.rows();
  const auto D = batch.at(static_cast<std::size_t>(table.rows[0]))->values.cols();
  if (table_pred.rows() != R * T || table_pred.cols() != D)
    throw DataError("table prediction shape does not match the table");

  MaskedMse out;
  double sum = 0.0;
  for (std::size_t qi = 0; qi < table.query_rows.size(); ++qi) {
    const auto r = static_cast<Eigen::Index>(table.query_rows[qi]);
    const TimeMask& mask = table.query_masks.at(qi);
    const Eigen::MatrixXd& values =
        batch.at(static_cast<std::size_t>(table.rows[static_cast<std::size_t>(r)]))->values;
    for (Eigen::Index t = 0; t < T; ++t) {
      if (!mask.masked_at(static_cast<int>(t))) continue;
      ++out.positions;
      sum += (values.row(t) - table_pred.row(r * T + t)).squaredNorm();
    }
  }
  if (out.positions > 0)
    out.value = sum / (static_cast<double>(out.positions) * static_cast<double>(D));
  return out;
}

Eigen::MatrixXd uicd_loss_grad(const std::vector<const Window*>& batch,
                               const SupportQueryTable& table,
                               const Eigen::MatrixXd& table_pred) {
  const MaskedMse stats = uicd_loss(batch, table, table_pred);
  Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(table_pred.rows(), table_pred.cols());
  if (!stats.present()) return grad;
  const auto T = batch.at(static_cast<std::size_t>(table.rows[0]))->values.rows();
  const double scale =
      2.0 / (static_cast<double>(stats.positions) * static_cast<double>(table_pred.cols()));
  for (std::size_t qi = 0; qi < table.query_rows.size(); ++qi) {
    const auto r = static_cast<Eigen::Index>(table.query_rows[qi]);
    const TimeMask& mask = table.query_masks.at(qi);
    const Eigen::MatrixXd& values =
        batch.at(static_cast<std::size_t>(table.rows[static_cast<std::size_t>(r)]))->values;
    for (Eigen::Index t = 0; t < T; ++t)
      if (mask.masked_at(static_cast<int>(t)))
        grad.row(r * T + t) = scale * (table_pred.row(r * T + t) - values.row(t));
  }
  return grad;
}

MaskedMse batch_masked_mse(const TokenBatch& batch, const Eigen::MatrixXd& pred) {
  check_shapes(batch.inputs, pred);
  MaskedMse out;
  double sum = 0.0;
  for (Eigen::Index i = 0; i < pred.rows(); ++i) {
    if (!batch.masked[static_cast<std::size_t>(i)]) continue;
    ++out.positions;
    sum += (batch.inputs.row(i) - pred.row(i)).squaredNorm();
  }
  if (out.positions > 0)
    out.value = sum / (static_cast<double>(out.positions) * static_cast<double>(pred.cols()));
  return out;
}

Eigen::MatrixXd batch_masked_mse_grad(const TokenBatch& batch, const Eigen::MatrixXd& pred) {
  check_shapes(batch.inputs, pred);
  long positions = 0;
  for (auto f : batch.masked) positions += f;
  Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(pred.rows(), pred.cols());
  if (positions == 0) return grad;
  const double scale = 2.0 / (static_cast<double>(positions) * static_cast<double>(pred.cols()));
  for (Eigen::Index i = 0; i < pred.rows(); ++i)
    if (batch.masked[static_cast<std::size_t>(i)])
      grad.row(i) = scale * (pred.row(i) - batch.inputs.row(i));
  return grad;
}

double combine_losses(std::optional<double> lc, std::optional<double> tc,
                      std::optional<double> uicd, const LossWeights& weights) {
  double total = 0.0;
  bool any = false;
  if (lc) {
    total += weights.lc * *lc;
    any = true;
  }
  if (tc) {
    total += weights.tc * *tc;
    any = true;
  }
  if (uicd) {
    total += weights.uicd * *uicd;
    any = true;
  }
  if (!any) throw ConfigError("no objective produced a loss; enable at least one");
  return total;
}

}  // namespace tsfm
