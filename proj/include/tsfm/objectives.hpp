#pragma once

#include <Eigen/Dense>
#include <optional>
#include <vector>

#include "tsfm/masking.hpp"
#include "tsfm/model.hpp"

namespace tsfm {

// Masked reconstruction error: the squared error summed over masked time
// steps and all D channels, divided by (masked steps * D).  `present` is
// false when the mask selects nothing; an absent loss contributes neither a
// value nor a gradient.
struct MaskedMse {
  double value = 0.0;
  long positions = 0;  // masked time steps entering the average

  bool present() const { return positions > 0; }
};

// Local completion: error at the masked positions of one window.
MaskedMse lc_loss(const Eigen::MatrixXd& target, const Eigen::MatrixXd& pred,
                  const TimeMask& mask);
Eigen::MatrixXd lc_loss_grad(const Eigen::MatrixXd& target, const Eigen::MatrixXd& pred,
                             const TimeMask& mask);

// Temporal continuity: the same error restricted to a future horizon; the
// mask must cover exactly the region starting at t_past.
MaskedMse tc_loss(const Eigen::MatrixXd& target, const Eigen::MatrixXd& pred, int t_past,
                  const TimeMask& future_mask);
Eigen::MatrixXd tc_loss_grad(const Eigen::MatrixXd& target, const Eigen::MatrixXd& pred,
                             int t_past, const TimeMask& future_mask);

// In-context dynamics: error at masked positions of the query rows of a
// support-query table.  `table_pred` stacks the R rows as R*T prediction
// rows; supports never contribute.
MaskedMse uicd_loss(const std::vector<const Window*>& batch, const SupportQueryTable& table,
                    const Eigen::MatrixXd& table_pred);
Eigen::MatrixXd uicd_loss_grad(const std::vector<const Window*>& batch,
                               const SupportQueryTable& table,
                               const Eigen::MatrixXd& table_pred);

// Pooled batch form used by the trainer: targets are the batch inputs, flags
// the batch mask, every masked token weighted equally across sequences.
MaskedMse batch_masked_mse(const TokenBatch& batch, const Eigen::MatrixXd& pred);
Eigen::MatrixXd batch_masked_mse_grad(const TokenBatch& batch, const Eigen::MatrixXd& pred);

struct LossWeights {
  double lc = 1.0;
  double tc = 1.0;
  double uicd = 1.0;
};

// Weighted sum of the objectives that are present; absent terms contribute
// zero without renormalizing the weights.  Throws ConfigError when every
// term is absent.
double combine_losses(std::optional<double> lc, std::optional<double> tc,
                      std::optional<double> uicd, const LossWeights& weights);

}  // namespace tsfm
