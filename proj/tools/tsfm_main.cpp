// tsfm: self-supervised pretraining and probing for multivariate time series.
//
// Subcommands: generate-data, pretrain, eval-pretext, probe, reconstruct.
// Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric error.
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tsfm/config.hpp"
#include "tsfm/errors.hpp"
#include "tsfm/evaluation.hpp"
#include "tsfm/runner.hpp"
#include "tsfm/synthdata.hpp"
#include "tsfm/training.hpp"

namespace fs = std::filesystem;
using namespace tsfm;

namespace {

struct CliState {
  std::string config_path;
  std::vector<std::string> sets;  // key=value overrides
  // Convenience flags mapped onto config keys (empty string = not given).
  std::string data, split, ckpt, out, task, head, objective;
  long seed = -1;
  long window = -1;
};

RunConfig resolve_config(const CliState& cli) {
  RunConfig cfg = RunConfig::defaults();
  if (!cli.config_path.empty()) cfg.apply_file(fs::path(cli.config_path));
  for (const auto& item : cli.sets) {
    const auto eq = item.find('=');
    if (eq == std::string::npos)
      throw ConfigError("--set expects key=value, got '" + item + "'");
    cfg.apply_flag(item.substr(0, eq), item.substr(eq + 1));
  }
  if (!cli.data.empty()) cfg.apply_flag("data.dir", cli.data);
  if (!cli.split.empty()) cfg.apply_flag("data.split", cli.split);
  if (!cli.ckpt.empty()) cfg.apply_flag("ckpt", cli.ckpt);
  if (!cli.out.empty()) cfg.apply_flag("out", cli.out);
  if (!cli.task.empty()) cfg.apply_flag("probe.task", cli.task);
  if (!cli.head.empty()) cfg.apply_flag("probe.head", cli.head);
  if (!cli.objective.empty()) cfg.apply_flag("eval.objective", cli.objective);
  if (cli.seed >= 0) cfg.apply_flag("seed", std::to_string(cli.seed));
  if (cli.window >= 0) cfg.apply_flag("reconstruct.window", std::to_string(cli.window));
  cfg.validate();
  return cfg;
}

fs::path require_out(const RunConfig& cfg) {
  const auto& out = cfg.get_string("out");
  if (out.empty()) throw ConfigError("--out (or the 'out' key) is required");
  fs::create_directories(out);
  return fs::path(out);
}

fs::path require_ckpt(const RunConfig& cfg) {
  const auto& ckpt = cfg.get_string("ckpt");
  if (ckpt.empty()) throw ConfigError("--ckpt (or the 'ckpt' key) is required");
  return fs::path(ckpt);
}

Dataset load_dataset_from(const RunConfig& cfg) {
  return load_dataset({cfg.get_string("data.dir"), cfg.get_string("data.split")},
                      static_cast<int>(cfg.get_int("data.window")),
                      static_cast<int>(cfg.get_int("data.stride")));
}

EncoderConfig encoder_config(const RunConfig& cfg, int input_dim) {
  EncoderConfig model;
  model.input_dim = input_dim;
  model.embed_dim = static_cast<int>(cfg.get_int("model.embed_dim"));
  model.depth = static_cast<int>(cfg.get_int("model.depth"));
  model.heads = static_cast<int>(cfg.get_int("model.heads"));
  model.ff_mult = static_cast<int>(cfg.get_int("model.ff_mult"));
  model.dropout = cfg.get_double("model.dropout");
  model.pre_norm = cfg.get_bool("model.pre_norm");
  model.positional = cfg.get_string("model.positional") == "learned"
                         ? EncoderConfig::Positional::kLearned
                         : EncoderConfig::Positional::kSinusoidal;
  model.per_objective_heads = cfg.get_bool("model.per_objective_heads");
  model.max_positions = static_cast<int>(cfg.get_int("model.max_positions"));
  model.max_table_rows = static_cast<int>(cfg.get_int("model.max_table_rows"));
  return model;
}

TrainConfig train_config(const RunConfig& cfg) {
  TrainConfig train;
  train.t_past = static_cast<int>(cfg.get_int("train.t_past"));
  train.t_future = static_cast<int>(cfg.get_int("train.t_future"));
  train.sampler.subjects_per_batch = static_cast<int>(cfg.get_int("train.batch_subjects"));
  train.sampler.windows_per_subject = static_cast<int>(cfg.get_int("train.windows_per_subject"));
  train.lc_mask.ratio = cfg.get_double("mask.ratio");
  train.lc_mask.seg_min = static_cast<int>(cfg.get_int("mask.seg_min"));
  train.lc_mask.seg_max = static_cast<int>(cfg.get_int("mask.seg_max"));
  train.tc_ratio = cfg.get_double("tc.ratio");
  train.uicd.queries = static_cast<int>(cfg.get_int("uicd.queries"));
  train.uicd.query_mask_ratio = cfg.get_double("uicd.query_mask_ratio");
  train.uicd.seg_min = static_cast<int>(cfg.get_int("uicd.seg_min"));
  train.uicd.seg_max = static_cast<int>(cfg.get_int("uicd.seg_max"));
  train.uicd.max_rows = static_cast<int>(cfg.get_int("uicd.max_rows"));
  train.uicd.support_selection = cfg.get_string("uicd.support") == "nearby"
                                     ? UicdConfig::SupportSelection::kNearby
                                     : UicdConfig::SupportSelection::kRandom;
  train.objectives.lc = cfg.get_bool("objective.lc");
  train.objectives.tc = cfg.get_bool("objective.tc");
  train.objectives.uicd = cfg.get_bool("objective.uicd");
  train.weights.lc = cfg.get_double("loss.lc");
  train.weights.tc = cfg.get_double("loss.tc");
  train.weights.uicd = cfg.get_double("loss.uicd");
  train.optim.lr = cfg.get_double("train.lr");
  train.optim.weight_decay = cfg.get_double("train.weight_decay");
  train.optim.beta1 = cfg.get_double("train.beta1");
  train.optim.beta2 = cfg.get_double("train.beta2");
  train.optim.eps = cfg.get_double("train.eps");
  train.optim.clip_norm = cfg.get_double("train.clip_norm");
  train.schedule.max_epochs = static_cast<int>(cfg.get_int("train.epochs"));
  train.schedule.eta_min = cfg.get_double("train.eta_min");
  train.schedule.patience = static_cast<int>(cfg.get_int("train.patience"));
  train.schedule.min_improvement = cfg.get_double("train.min_improvement");
  train.seed = static_cast<std::uint64_t>(cfg.get_int("seed"));
  return train;
}

void write_report(const fs::path& path, const MetricReport& report) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << report.to_json_string() << '\n';
  if (!out) throw DataError("failed writing " + path.string());
}

int run_generate_data(const RunConfig& cfg) {
  const fs::path out = require_out(cfg);
  CohortSpec spec;
  spec.subjects = static_cast<int>(cfg.get_int("gen.subjects"));
  spec.trials_min = static_cast<int>(cfg.get_int("gen.trials_min"));
  spec.trials_max = static_cast<int>(cfg.get_int("gen.trials_max"));
  spec.length_min = static_cast<int>(cfg.get_int("gen.length_min"));
  spec.length_max = static_cast<int>(cfg.get_int("gen.length_max"));
  spec.harmonics = static_cast<int>(cfg.get_int("gen.harmonics"));
  spec.period_min = cfg.get_double("gen.period_min");
  spec.period_max = cfg.get_double("gen.period_max");
  spec.noise_min = cfg.get_double("gen.noise_min");
  spec.noise_max = cfg.get_double("gen.noise_max");
  spec.missing_rate = cfg.get_double("gen.missing_rate");
  const auto seed = static_cast<std::uint64_t>(cfg.get_int("seed"));

  const Cohort cohort = generate_cohort(spec, seed);
  const SanityReport sanity = cohort_sanity(cohort, derive_seed(seed, "sanity"));
  require_sane(sanity);
  write_cohort(out, cohort, cfg.get_double("gen.validation_fraction"),
               cfg.get_double("gen.test_fraction"), seed);
  write_manifest(out / "manifest.json", cfg, "generate-data");
  std::printf("generated %zu trials for %zu subjects under %s\n", cohort.trials.size(),
              cohort.subjects.size(), out.c_str());
  std::printf("sanity: peak_fraction=%.3f spectral_auc=%.3f shuffled_error=%.3f\n",
              sanity.peak_fraction, sanity.spectral_auc, sanity.shuffled_auc_error);
  return 0;
}

int run_pretrain(const RunConfig& cfg) {
  const fs::path out = require_out(cfg);
  const Dataset dataset = load_dataset_from(cfg);
  if (dataset.train.total() == 0) throw DataError("the training split produced no windows");

  EncoderModel model(encoder_config(cfg, dataset.channels),
                     derive_seed(static_cast<std::uint64_t>(cfg.get_int("seed")), "init"));
  Trainer trainer(model, train_config(cfg));
  write_manifest(out / "manifest.json", cfg, "pretrain");
  const FitResult result = trainer.fit(dataset.train, dataset.validation, out);
  std::printf("pretrained %d epoch(s); best validation %s at epoch %d%s\n", result.epochs_run,
              result.best_epoch >= 0 ? std::to_string(result.best_val).c_str() : "n/a",
              result.best_epoch, result.early_stopped ? " (early stop)" : "");
  std::printf("checkpoints and train_log.csv written under %s\n", out.c_str());
  return 0;
}

int run_eval_pretext(const RunConfig& cfg) {
  const fs::path out = require_out(cfg);
  const Dataset dataset = load_dataset_from(cfg);
  CheckpointMeta meta;
  const EncoderModel model = load_checkpoint(require_ckpt(cfg), &meta);
  if (model.config().input_dim != dataset.channels)
    throw DataError("checkpoint channel count does not match the dataset");

  PretextConfig pretext;
  pretext.objective = cfg.get_string("eval.objective") == "tc" ? PretextObjective::kTc
                                                               : PretextObjective::kLc;
  pretext.lc_mask.ratio = cfg.get_double("mask.ratio");
  pretext.lc_mask.seg_min = static_cast<int>(cfg.get_int("mask.seg_min"));
  pretext.lc_mask.seg_max = static_cast<int>(cfg.get_int("mask.seg_max"));
  pretext.t_past = static_cast<int>(cfg.get_int("train.t_past"));
  pretext.t_future = static_cast<int>(cfg.get_int("train.t_future"));
  pretext.tc_ratio = cfg.get_double("tc.ratio");
  pretext.seed = static_cast<std::uint64_t>(cfg.get_int("seed"));
  pretext.batch_windows = static_cast<int>(cfg.get_int("eval.batch_windows"));

  const auto pointers = window_pointers(dataset.test);
  std::vector<Window> windows;
  windows.reserve(pointers.size());
  for (const auto* w : pointers) windows.push_back(*w);
  if (windows.empty()) throw DataError("the test split produced no windows");

  const MetricReport report = eval_pretext(model, windows, pretext);
  const std::string name = "pretext_" + cfg.get_string("eval.objective") + ".json";
  write_report(out / name, report);
  write_manifest(out / "manifest.json", cfg, "eval-pretext");
  std::printf("pretext [%s] over %ld masked positions: %s\n",
              cfg.get_string("eval.objective").c_str(), report.masked_positions,
              report.to_json_string().c_str());
  return 0;
}

int run_probe(const RunConfig& cfg) {
  const fs::path out = require_out(cfg);
  const Dataset dataset = load_dataset_from(cfg);
  const EncoderModel model = load_checkpoint(require_ckpt(cfg));
  if (model.config().input_dim != dataset.channels)
    throw DataError("checkpoint channel count does not match the dataset");
  const std::uint64_t frozen_hash = model.parameter_hash();

  ProbeTask task;
  task.name = cfg.get_string("probe.task");
  task.kind = task.name == "regression" ? ProbeTask::Kind::kRegression
                                        : ProbeTask::Kind::kClassification;
  const auto& head_choice = cfg.get_string("probe.head");
  task.head = head_choice == "mlp" || (head_choice == "auto" &&
                                       task.kind == ProbeTask::Kind::kRegression)
                  ? ProbeTask::Head::kMlp
                  : ProbeTask::Head::kLinear;
  task.num_classes = 2;

  const ProbeMatrices data = build_probe_data(
      model, dataset, task.kind, static_cast<int>(cfg.get_int("eval.batch_windows")));
  if (data.train.embeddings.rows() == 0) throw DataError("no training windows to probe");
  if (data.test.embeddings.rows() == 0) throw DataError("no test windows to probe");

  ProbeTrainConfig probe_cfg;
  probe_cfg.lr = cfg.get_double("probe.lr");
  probe_cfg.max_epochs = static_cast<int>(cfg.get_int("probe.epochs"));
  probe_cfg.patience = static_cast<int>(cfg.get_int("probe.patience"));
  probe_cfg.seed = static_cast<std::uint64_t>(cfg.get_int("seed"));

  const ProbeHead probe = train_probe(data.train, data.validation, task, probe_cfg);
  const Eigen::MatrixXd scores = probe.predict(data.test.embeddings);
  MetricReport report = compute_metrics(scores, data.test.targets, task.kind);

  if (task.kind == ProbeTask::Kind::kClassification) {
    Eigen::MatrixXd per_subject;
    std::vector<double> subject_targets;
    aggregate_by_subject(scores, data.test.targets, data.test.subjects, &per_subject,
                         &subject_targets);
    const MetricReport subject_report =
        compute_metrics(per_subject, subject_targets, task.kind);
    for (const auto& [key, value] : subject_report.values)
      report.values["subject_" + key] = value;
    for (const auto& [key, reason] : subject_report.absent)
      report.absent["subject_" + key] = reason;
  }

  if (model.parameter_hash() != frozen_hash)
    throw NumericError("encoder parameters changed during probing");

  write_report(out / ("probe_" + task.name + ".json"), report);
  write_manifest(out / "manifest.json", cfg, "probe");
  std::printf("probe [%s, %s head] on %ld test windows: %s\n", task.name.c_str(),
              task.head == ProbeTask::Head::kMlp ? "mlp" : "linear",
              static_cast<long>(data.test.embeddings.rows()), report.to_json_string().c_str());
  return 0;
}

int run_reconstruct(const RunConfig& cfg) {
  const fs::path out = require_out(cfg);
  const Dataset dataset = load_dataset_from(cfg);
  const EncoderModel model = load_checkpoint(require_ckpt(cfg));
  if (model.config().input_dim != dataset.channels)
    throw DataError("checkpoint channel count does not match the dataset");

  const auto pointers = window_pointers(dataset.test);
  if (pointers.empty()) throw DataError("the test split produced no windows");
  const long index = cfg.get_int("reconstruct.window");
  if (index >= static_cast<long>(pointers.size()))
    throw ConfigError("reconstruct.window is out of range: only " +
                      std::to_string(pointers.size()) + " test windows exist");
  const Window& window = *pointers[static_cast<std::size_t>(index)];

  SpanSamplerConfig mask_cfg;
  mask_cfg.ratio = cfg.get_double("mask.ratio");
  mask_cfg.seg_min = static_cast<int>(cfg.get_int("mask.seg_min"));
  mask_cfg.seg_max = static_cast<int>(cfg.get_int("mask.seg_max"));
  Rng rng(derive_seed(static_cast<std::uint64_t>(cfg.get_int("seed")), "reconstruct",
                      static_cast<std::uint64_t>(index)));
  const TimeMask mask =
      sample_lc_mask(static_cast<int>(window.values.rows()), mask_cfg, rng);

  const Reconstruction rec = reconstruct_window(model, window, mask);
  write_reconstruction_csv(out / "reconstruction.csv", rec, {});
  write_manifest(out / "manifest.json", cfg, "reconstruct");
  std::printf("reconstructed window %ld (subject %s, trial %s, start %d) -> %s\n", index,
              window.subject_id.c_str(), window.trial_id.c_str(), window.start,
              (out / "reconstruction.csv").c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deterministic multi-objective pretraining for multivariate time series"};
  app.require_subcommand(1);

  CliState cli;
  auto add_common = [&cli](CLI::App* cmd) {
    cmd->add_option("--config", cli.config_path, "JSON config file (or a run manifest)");
    cmd->add_option("--set", cli.sets, "dotted-key override, e.g. --set model.depth=4");
    cmd->add_option("--seed", cli.seed, "random seed");
    cmd->add_option("--out", cli.out, "output directory");
  };

  CLI::App* generate = app.add_subcommand("generate-data", "synthesize a labelled cohort");
  add_common(generate);

  CLI::App* pretrain = app.add_subcommand("pretrain", "run self-supervised pretraining");
  add_common(pretrain);
  pretrain->add_option("--data", cli.data, "cohort directory");
  pretrain->add_option("--split", cli.split, "subject split file");

  CLI::App* eval_cmd = app.add_subcommand("eval-pretext", "score masked reconstruction");
  add_common(eval_cmd);
  eval_cmd->add_option("--data", cli.data, "cohort directory");
  eval_cmd->add_option("--split", cli.split, "subject split file");
  eval_cmd->add_option("--ckpt", cli.ckpt, "checkpoint file");
  eval_cmd->add_option("--objective", cli.objective, "lc or tc");

  CLI::App* probe = app.add_subcommand("probe", "train a frozen-encoder probe");
  add_common(probe);
  probe->add_option("--data", cli.data, "cohort directory");
  probe->add_option("--split", cli.split, "subject split file");
  probe->add_option("--ckpt", cli.ckpt, "checkpoint file");
  probe->add_option("--task", cli.task, "classification or regression");
  probe->add_option("--head", cli.head, "auto, linear, or mlp");

  CLI::App* reconstruct = app.add_subcommand("reconstruct", "dump one masked reconstruction");
  add_common(reconstruct);
  reconstruct->add_option("--data", cli.data, "cohort directory");
  reconstruct->add_option("--split", cli.split, "subject split file");
  reconstruct->add_option("--ckpt", cli.ckpt, "checkpoint file");
  reconstruct->add_option("--window", cli.window, "test-window index to reconstruct");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    const RunConfig cfg = resolve_config(cli);
    if (generate->parsed()) return run_generate_data(cfg);
    if (pretrain->parsed()) return run_pretrain(cfg);
    if (eval_cmd->parsed()) return run_eval_pretext(cfg);
    if (probe->parsed()) return run_probe(cfg);
    if (reconstruct->parsed()) return run_reconstruct(cfg);
    throw ConfigError("no subcommand selected");
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "configuration error: %s\n", e.what());
    return 2;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 3;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "unexpected error: %s\n", e.what());
    return 1;
  }
}
