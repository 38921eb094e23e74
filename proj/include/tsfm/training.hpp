#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "tsfm/data_pipeline.hpp"
#include "tsfm/masking.hpp"
#include "tsfm/model.hpp"
#include "tsfm/objectives.hpp"
#include "tsfm/sampling.hpp"

namespace tsfm {

struct OptimConfig {
  double lr = 1e-4;
  double weight_decay = 1e-3;  // decoupled from the gradient path
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 1.0;  // global-norm clip; <= 0 disables
};

struct ScheduleConfig {
  int max_epochs = 200;
  double eta_min = 0.0;
  int patience = 20;            // epochs without improvement before stopping
  double min_improvement = 1e-6;
};

// Cosine decay from the base rate to eta_min across max_epochs epochs.
double cosine_lr(int epoch, double base_lr, const ScheduleConfig& schedule);

// Scales all gradients so their global L2 norm is at most max_norm; returns
// the pre-clip norm.  max_norm <= 0 leaves gradients untouched.
double clip_gradients(ParameterStore& params, double max_norm);

// One decoupled-weight-decay Adam update; `step` is 1-based for bias
// correction.
void adamw_step(ParameterStore& params, const OptimConfig& optim, double lr, long step);

struct ObjectiveToggles {
  bool lc = true;
  bool tc = true;
  bool uicd = true;

  bool any() const { return lc || tc || uicd; }
};

struct TrainConfig {
  int t_past = 50;
  int t_future = 50;
  SamplerConfig sampler;
  SpanSamplerConfig lc_mask;  // ratio 0.8, segments [4, 16]
  double tc_ratio = 1.0;      // fraction of the future horizon to mask
  UicdConfig uicd;
  ObjectiveToggles objectives;
  LossWeights weights;
  OptimConfig optim;
  ScheduleConfig schedule;
  std::uint64_t seed = 0;
};

// Windows grouped per subject, subjects in sorted order.
struct WindowSet {
  std::vector<std::string> subjects;
  std::vector<std::vector<Window>> windows;

  std::vector<int> counts() const;
  long total() const;
};

WindowSet group_windows(std::vector<Window> windows);

// Raw (unweighted) pooled losses for one optimizer step.  Sums and position
// counts allow exact pooling across an epoch.
struct StepResult {
  std::optional<double> lc, tc, uicd;
  double lc_sq = 0.0, tc_sq = 0.0, uicd_sq = 0.0;  // summed squared error
  long lc_positions = 0, tc_positions = 0, uicd_positions = 0;
  double grad_norm = 0.0;  // pre-clip global norm
  bool stepped = false;    // false when no objective produced a loss
};

struct EpochStats {
  int epoch = 0;
  std::optional<double> lc, tc, uicd;  // pooled over the epoch
  std::optional<double> joint;         // weighted sum of the present terms
  double lr = 0.0;
  double grad_norm = 0.0;  // mean pre-clip norm over stepping batches
  std::optional<double> val_joint;
};

struct FitResult {
  std::vector<EpochStats> history;
  int best_epoch = -1;
  double best_val = std::numeric_limits<double>::infinity();
  int epochs_run = 0;
  bool early_stopped = false;
};

struct CheckpointMeta {
  EncoderConfig config;
  int epoch = -1;
  long step = 0;
  std::optional<double> best_val;
  bool has_adam = true;
};

void save_checkpoint(const std::filesystem::path& path, const EncoderModel& model,
                     const CheckpointMeta& meta);
// Rebuilds the model recorded in the file; throws DataError on corruption or
// layout mismatch.
EncoderModel load_checkpoint(const std::filesystem::path& path, CheckpointMeta* meta = nullptr);

class Trainer {
 public:
  Trainer(EncoderModel& model, const TrainConfig& config);

  // One optimizer step: masks derived from (seed, epoch, batch_index),
  // gradients of the enabled objectives accumulated jointly, clipped, then
  // applied at the given learning rate.
  StepResult train_step(const std::vector<const Window*>& batch, int epoch, int batch_index,
                        double lr);

  // Weighted validation loss under masks fixed by the seed (identical every
  // call), pooled over the whole set.  Absent when `val` is empty or no
  // enabled objective applies.
  std::optional<double> validation_loss(const WindowSet& val);

  // Full loop: epoch plans, cosine schedule, early stopping on the
  // validation loss, train_log.csv plus best/last checkpoints in out_dir.
  FitResult fit(const WindowSet& train, const WindowSet& val,
                const std::filesystem::path& out_dir);

  long steps_taken() const { return step_; }

 private:
  EncoderModel& model_;
  TrainConfig cfg_;
  long step_ = 0;
};

}  // namespace tsfm
