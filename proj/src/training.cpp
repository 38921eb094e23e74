#include "tsfm/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>
#include <tuple>

#include "tsfm/errors.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace tsfm {

double cosine_lr(int epoch, double base_lr, const ScheduleConfig& schedule) {
  if (epoch < 0 || epoch >= schedule.max_epochs) throw ConfigError("epoch outside the schedule");
  if (schedule.max_epochs <= 1) return base_lr;
  const double phase = M_PI * static_cast<double>(epoch) /
                       static_cast<double>(schedule.max_epochs - 1);
  return schedule.eta_min + 0.5 * (base_lr - schedule.eta_min) * (1.0 + std::cos(phase));
}

double clip_gradients(ParameterStore& params, double max_norm) {
  const double norm = params.grad_norm();
  if (max_norm > 0.0 && norm > max_norm) {
    const double scale = max_norm / norm;
    for (int i = 0; i < params.size(); ++i) params.at(i).grad *= scale;
  }
  return norm;
}

void adamw_step(ParameterStore& params, const OptimConfig& optim, double lr, long step) {
  if (step < 1) throw ConfigError("optimizer steps are 1-based");
  const double bc1 = 1.0 - std::pow(optim.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(optim.beta2, static_cast<double>(step));
  for (int i = 0; i < params.size(); ++i) {
    ParamTensor& p = params.at(i);
    p.adam_m = optim.beta1 * p.adam_m + (1.0 - optim.beta1) * p.grad;
    p.adam_v = (optim.beta2 * p.adam_v.array() +
                (1.0 - optim.beta2) * p.grad.array().square())
                   .matrix();
    const Eigen::ArrayXXd m_hat = p.adam_m.array() / bc1;
    const Eigen::ArrayXXd v_hat = p.adam_v.array() / bc2;
    // decoupled decay: the regularizer never enters the moment estimates
    p.value = (p.value.array() - lr * (m_hat / (v_hat.sqrt() + optim.eps) +
                                       optim.weight_decay * p.value.array()))
                  .matrix();
  }
}

std::vector<int> WindowSet::counts() const {
  std::vector<int> out;
  out.reserve(windows.size());
  for (const auto& w : windows) out.push_back(static_cast<int>(w.size()));
  return out;
}

long WindowSet::total() const {
  long n = 0;
  for (const auto& w : windows) n += static_cast<long>(w.size());
  return n;
}

WindowSet group_windows(std::vector<Window> windows) {
  std::sort(windows.begin(), windows.end(), [](const Window& a, const Window& b) {
    return std::tie(a.subject_id, a.trial_id, a.start) < std::tie(b.subject_id, b.trial_id, b.start);
  });
  WindowSet set;
  for (auto& w : windows) {
    if (set.subjects.empty() || set.subjects.back() != w.subject_id) {
      set.subjects.push_back(w.subject_id);
      set.windows.emplace_back();
    }
    set.windows.back().push_back(std::move(w));
  }
  return set;
}

namespace {

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

json encoder_to_json(const EncoderConfig& c) {
  return json{{"input_dim", c.input_dim},
              {"embed_dim", c.embed_dim},
              {"depth", c.depth},
              {"heads", c.heads},
              {"dropout", c.dropout},
              {"ff_mult", c.ff_mult},
              {"pre_norm", c.pre_norm},
              {"positional",
               c.positional == EncoderConfig::Positional::kLearned ? "learned" : "sinusoidal"},
              {"max_positions", c.max_positions},
              {"max_table_rows", c.max_table_rows},
              {"per_objective_heads", c.per_objective_heads}};
}

EncoderConfig encoder_from_json(const json& j) {
  EncoderConfig c;
  c.input_dim = j.at("input_dim").get<int>();
  c.embed_dim = j.at("embed_dim").get<int>();
  c.depth = j.at("depth").get<int>();
  c.heads = j.at("heads").get<int>();
  c.dropout = j.at("dropout").get<double>();
  c.ff_mult = j.at("ff_mult").get<int>();
  c.pre_norm = j.at("pre_norm").get<bool>();
  const std::string pos = j.at("positional").get<std::string>();
  if (pos == "learned")
    c.positional = EncoderConfig::Positional::kLearned;
  else if (pos == "sinusoidal")
    c.positional = EncoderConfig::Positional::kSinusoidal;
  else
    throw DataError("unknown positional encoding: " + pos);
  c.max_positions = j.at("max_positions").get<int>();
  c.max_table_rows = j.at("max_table_rows").get<int>();
  c.per_objective_heads = j.at("per_objective_heads").get<bool>();
  return c;
}

constexpr char kMagic[9] = "TSFMCKP1";  // 8 significant bytes

void append_bytes(std::string& buf, const void* p, std::size_t n) {
  buf.append(static_cast<const char*>(p), n);
}

void append_u64(std::string& buf, std::uint64_t v) { append_bytes(buf, &v, sizeof(v)); }

struct ByteReader {
  const std::string& buf;
  std::size_t pos = 0;

  void read(void* out, std::size_t n) {
    if (pos + n > buf.size()) throw DataError("truncated checkpoint");
    std::memcpy(out, buf.data() + pos, n);
    pos += n;
  }
  std::uint64_t read_u64() {
    std::uint64_t v = 0;
    read(&v, sizeof(v));
    return v;
  }
  std::string read_string(std::size_t n) {
    if (pos + n > buf.size()) throw DataError("truncated checkpoint");
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

}  // namespace

void save_checkpoint(const fs::path& path, const EncoderModel& model, const CheckpointMeta& meta) {
  std::string buf;
  append_bytes(buf, kMagic, 8);
  json header = {{"config", encoder_to_json(model.config())},
                 {"epoch", meta.epoch},
                 {"step", meta.step},
                 {"best_val", meta.best_val ? json(*meta.best_val) : json()},
                 {"has_adam", meta.has_adam}};
  const std::string head = header.dump();
  append_u64(buf, head.size());
  buf += head;
  const ParameterStore& ps = model.params();
  append_u64(buf, static_cast<std::uint64_t>(ps.size()));
  for (int i = 0; i < ps.size(); ++i) {
    const ParamTensor& p = ps.at(i);
    append_u64(buf, p.name.size());
    buf += p.name;
    append_u64(buf, static_cast<std::uint64_t>(p.value.rows()));
    append_u64(buf, static_cast<std::uint64_t>(p.value.cols()));
    const auto bytes = sizeof(double) * static_cast<std::size_t>(p.value.size());
    append_bytes(buf, p.value.data(), bytes);
    if (meta.has_adam) {
      append_bytes(buf, p.adam_m.data(), bytes);
      append_bytes(buf, p.adam_v.data(), bytes);
    }
  }
  append_u64(buf, fnv1a64(buf.data(), buf.size()));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint: " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw DataError("failed writing checkpoint: " + path.string());
}

EncoderModel load_checkpoint(const fs::path& path, CheckpointMeta* meta) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string buf = ss.str();
  if (buf.size() < 24) throw DataError("truncated checkpoint");
  if (buf.compare(0, 8, kMagic, 8) != 0) throw DataError("not a checkpoint file");
  std::uint64_t stored_hash = 0;
  std::memcpy(&stored_hash, buf.data() + buf.size() - 8, 8);
  if (stored_hash != fnv1a64(buf.data(), buf.size() - 8))
    throw DataError("checkpoint is corrupted (hash mismatch)");

  ByteReader reader{buf, 8};
  json header;
  try {
    header = json::parse(reader.read_string(reader.read_u64()));
  } catch (const json::exception& e) {
    throw DataError(std::string("bad checkpoint header: ") + e.what());
  }
  CheckpointMeta out_meta;
  out_meta.config = encoder_from_json(header.at("config"));
  out_meta.epoch = header.at("epoch").get<int>();
  out_meta.step = header.at("step").get<long>();
  if (!header.at("best_val").is_null()) out_meta.best_val = header.at("best_val").get<double>();
  out_meta.has_adam = header.at("has_adam").get<bool>();

  EncoderModel model(out_meta.config, 0);
  ParameterStore& ps = model.params();
  if (reader.read_u64() != static_cast<std::uint64_t>(ps.size()))
    throw DataError("checkpoint parameter count does not match the architecture");
  for (int i = 0; i < ps.size(); ++i) {
    ParamTensor& p = ps.at(i);
    const std::string name = reader.read_string(reader.read_u64());
    if (name != p.name) throw DataError("checkpoint layout mismatch at " + name);
    const auto rows = static_cast<Eigen::Index>(reader.read_u64());
    const auto cols = static_cast<Eigen::Index>(reader.read_u64());
    if (rows != p.value.rows() || cols != p.value.cols())
      throw DataError("checkpoint shape mismatch at " + name);
    const auto bytes = sizeof(double) * static_cast<std::size_t>(p.value.size());
    reader.read(p.value.data(), bytes);
    if (out_meta.has_adam) {
      reader.read(p.adam_m.data(), bytes);
      reader.read(p.adam_v.data(), bytes);
    }
  }
  if (meta) *meta = out_meta;
  return model;
}

Trainer::Trainer(EncoderModel& model, const TrainConfig& config) : model_(model), cfg_(config) {
  if (!cfg_.objectives.any())
    throw ConfigError("all objectives are disabled; enable at least one");
  if (cfg_.t_past < 0 || cfg_.t_future < 0 || cfg_.t_past + cfg_.t_future < 1)
    throw ConfigError("window segmentation must be positive");
  if (cfg_.optim.lr < 0.0) throw ConfigError("learning rate must be non-negative");
  if (cfg_.schedule.max_epochs < 1) throw ConfigError("max_epochs must be at least 1");
  if (cfg_.schedule.patience < 1) throw ConfigError("patience must be at least 1");
}

StepResult Trainer::train_step(const std::vector<const Window*>& batch, int epoch,
                               int batch_index, double lr) {
  if (batch.empty()) throw DataError("empty training batch");
  const auto T = batch.front()->values.rows();
  const auto D = static_cast<double>(batch.front()->values.cols());
  StepResult res;
  model_.params().zero_grads();
  Rng dropout_rng(derive_seed(cfg_.seed, "dropout", static_cast<std::uint64_t>(epoch),
                              static_cast<std::uint64_t>(batch_index)));

  if (cfg_.objectives.lc) {
    Rng mask_rng(derive_seed(cfg_.seed, "lc", static_cast<std::uint64_t>(epoch),
                             static_cast<std::uint64_t>(batch_index)));
    std::vector<TimeMask> masks;
    masks.reserve(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i)
      masks.push_back(sample_lc_mask(static_cast<int>(T), cfg_.lc_mask, mask_rng));
    std::vector<const TimeMask*> mask_ptrs;
    for (const auto& m : masks) mask_ptrs.push_back(&m);
    const TokenBatch tb = make_window_batch(batch, mask_ptrs);
    ForwardTrace trace;
    const Eigen::MatrixXd y = model_.forward(tb, DecoderHead::kLc, true, &dropout_rng, &trace);
    const MaskedMse mse = batch_masked_mse(tb, y);
    if (mse.present()) {
      res.lc = mse.value;
      res.lc_sq = mse.value * static_cast<double>(mse.positions) * D;
      res.lc_positions = mse.positions;
      model_.backward(tb, trace, batch_masked_mse_grad(tb, y) * cfg_.weights.lc,
                      DecoderHead::kLc);
    }
  }

  if (cfg_.objectives.tc) {
    if (T != cfg_.t_past + cfg_.t_future)
      throw ConfigError("window length must equal t_past + t_future for the continuity objective");
    Rng mask_rng(derive_seed(cfg_.seed, "tc", static_cast<std::uint64_t>(epoch),
                             static_cast<std::uint64_t>(batch_index)));
    std::vector<TimeMask> masks;
    masks.reserve(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i)
      masks.push_back(sample_tc_mask(cfg_.t_past, cfg_.t_future, cfg_.tc_ratio, mask_rng));
    std::vector<const TimeMask*> mask_ptrs;
    for (const auto& m : masks) mask_ptrs.push_back(&m);
    const TokenBatch tb = make_window_batch(batch, mask_ptrs);
    ForwardTrace trace;
    const Eigen::MatrixXd y = model_.forward(tb, DecoderHead::kTc, true, &dropout_rng, &trace);
    const MaskedMse mse = batch_masked_mse(tb, y);
    if (mse.present()) {
      res.tc = mse.value;
      res.tc_sq = mse.value * static_cast<double>(mse.positions) * D;
      res.tc_positions = mse.positions;
      model_.backward(tb, trace, batch_masked_mse_grad(tb, y) * cfg_.weights.tc,
                      DecoderHead::kTc);
    }
  }

  if (cfg_.objectives.uicd) {
    Rng table_rng(derive_seed(cfg_.seed, "uicd", static_cast<std::uint64_t>(epoch),
                              static_cast<std::uint64_t>(batch_index)));
    const auto table = build_uicd_table(batch, cfg_.uicd, table_rng);
    if (table) {
      const TokenBatch tb = make_table_batch(batch, *table);
      ForwardTrace trace;
      const Eigen::MatrixXd y = model_.forward(tb, DecoderHead::kUicd, true, &dropout_rng, &trace);
      const MaskedMse mse = batch_masked_mse(tb, y);
      if (mse.present()) {
        res.uicd = mse.value;
        res.uicd_sq = mse.value * static_cast<double>(mse.positions) * D;
        res.uicd_positions = mse.positions;
        model_.backward(tb, trace, batch_masked_mse_grad(tb, y) * cfg_.weights.uicd,
                        DecoderHead::kUicd);
      }
    }
  }

  if (res.lc || res.tc || res.uicd) {
    res.grad_norm = clip_gradients(model_.params(), cfg_.optim.clip_norm);
    adamw_step(model_.params(), cfg_.optim, lr, ++step_);
    res.stepped = true;
  }
  return res;
}

std::optional<double> Trainer::validation_loss(const WindowSet& val) {
  if (val.total() == 0) return std::nullopt;
  Rng rng(derive_seed(cfg_.seed, "validation"));
  std::vector<const Window*> all;
  for (const auto& group : val.windows)
    for (const auto& w : group) all.push_back(&w);
  const int chunk_size =
      std::max(1, cfg_.sampler.subjects_per_batch * cfg_.sampler.windows_per_subject);

  double lc_sq = 0.0, tc_sq = 0.0, uicd_sq = 0.0;
  long lc_pos = 0, tc_pos = 0, uicd_pos = 0;
  const auto D = static_cast<double>(all.front()->values.cols());
  for (std::size_t begin = 0; begin < all.size(); begin += static_cast<std::size_t>(chunk_size)) {
    const std::size_t end = std::min(all.size(), begin + static_cast<std::size_t>(chunk_size));
    const std::vector<const Window*> chunk(all.begin() + static_cast<std::ptrdiff_t>(begin),
                                           all.begin() + static_cast<std::ptrdiff_t>(end));
    const auto T = chunk.front()->values.rows();
    if (cfg_.objectives.lc) {
      std::vector<TimeMask> masks;
      for (std::size_t i = 0; i < chunk.size(); ++i)
        masks.push_back(sample_lc_mask(static_cast<int>(T), cfg_.lc_mask, rng));
      std::vector<const TimeMask*> ptrs;
      for (const auto& m : masks) ptrs.push_back(&m);
      const TokenBatch tb = make_window_batch(chunk, ptrs);
      const MaskedMse mse =
          batch_masked_mse(tb, model_.forward(tb, DecoderHead::kLc, false, nullptr, nullptr));
      lc_sq += mse.value * static_cast<double>(mse.positions) * D;
      lc_pos += mse.positions;
    }
    if (cfg_.objectives.tc) {
      if (T != cfg_.t_past + cfg_.t_future)
        throw ConfigError(
            "window length must equal t_past + t_future for the continuity objective");
      std::vector<TimeMask> masks;
      for (std::size_t i = 0; i < chunk.size(); ++i)
        masks.push_back(sample_tc_mask(cfg_.t_past, cfg_.t_future, cfg_.tc_ratio, rng));
      std::vector<const TimeMask*> ptrs;
      for (const auto& m : masks) ptrs.push_back(&m);
      const TokenBatch tb = make_window_batch(chunk, ptrs);
      const MaskedMse mse =
          batch_masked_mse(tb, model_.forward(tb, DecoderHead::kTc, false, nullptr, nullptr));
      tc_sq += mse.value * static_cast<double>(mse.positions) * D;
      tc_pos += mse.positions;
    }
    if (cfg_.objectives.uicd) {
      const auto table = build_uicd_table(chunk, cfg_.uicd, rng);
      if (table) {
        const TokenBatch tb = make_table_batch(chunk, *table);
        const MaskedMse mse =
            batch_masked_mse(tb, model_.forward(tb, DecoderHead::kUicd, false, nullptr, nullptr));
        uicd_sq += mse.value * static_cast<double>(mse.positions) * D;
        uicd_pos += mse.positions;
      }
    }
  }
  std::optional<double> lc, tc, uicd;
  if (lc_pos > 0) lc = lc_sq / (static_cast<double>(lc_pos) * D);
  if (tc_pos > 0) tc = tc_sq / (static_cast<double>(tc_pos) * D);
  if (uicd_pos > 0) uicd = uicd_sq / (static_cast<double>(uicd_pos) * D);
  if (!lc && !tc && !uicd) return std::nullopt;
  return combine_losses(lc, tc, uicd, cfg_.weights);
}

FitResult Trainer::fit(const WindowSet& train, const WindowSet& val, const fs::path& out_dir) {
  if (train.total() == 0) throw DataError("no training windows");
  fs::create_directories(out_dir);
  std::ofstream log(out_dir / "train_log.csv", std::ios::trunc);
  if (!log) throw DataError("cannot write " + (out_dir / "train_log.csv").string());
  log << "epoch,lc,tc,uicd,joint,lr,grad_norm,val_joint\n";

  const auto opt_field = [](const std::optional<double>& v) {
    return v ? format_double(*v) : std::string();
  };

  FitResult result;
  const auto D = static_cast<double>(model_.config().input_dim);
  int since_best = 0;
  for (int epoch = 0; epoch < cfg_.schedule.max_epochs; ++epoch) {
    const double lr = cosine_lr(epoch, cfg_.optim.lr, cfg_.schedule);
    const EpochPlan plan =
        plan_epoch(train.counts(), cfg_.sampler,
                   derive_seed(cfg_.seed, "plan", static_cast<std::uint64_t>(epoch)));
    double lc_sq = 0.0, tc_sq = 0.0, uicd_sq = 0.0, norm_sum = 0.0;
    long lc_pos = 0, tc_pos = 0, uicd_pos = 0, stepped = 0;
    for (std::size_t bi = 0; bi < plan.batches.size(); ++bi) {
      std::vector<const Window*> ptrs;
      ptrs.reserve(plan.batches[bi].size());
      for (const BatchItem& item : plan.batches[bi])
        ptrs.push_back(&train.windows[static_cast<std::size_t>(item.subject)]
                                     [static_cast<std::size_t>(item.window)]);
      const StepResult r = train_step(ptrs, epoch, static_cast<int>(bi), lr);
      lc_sq += r.lc_sq;
      tc_sq += r.tc_sq;
      uicd_sq += r.uicd_sq;
      lc_pos += r.lc_positions;
      tc_pos += r.tc_positions;
      uicd_pos += r.uicd_positions;
      if (r.stepped) {
        norm_sum += r.grad_norm;
        ++stepped;
      }
    }

    EpochStats st;
    st.epoch = epoch;
    st.lr = lr;
    if (lc_pos > 0) st.lc = lc_sq / (static_cast<double>(lc_pos) * D);
    if (tc_pos > 0) st.tc = tc_sq / (static_cast<double>(tc_pos) * D);
    if (uicd_pos > 0) st.uicd = uicd_sq / (static_cast<double>(uicd_pos) * D);
    if (st.lc || st.tc || st.uicd) st.joint = combine_losses(st.lc, st.tc, st.uicd, cfg_.weights);
    st.grad_norm = stepped > 0 ? norm_sum / static_cast<double>(stepped) : 0.0;
    st.val_joint = validation_loss(val);

    log << st.epoch << ',' << opt_field(st.lc) << ',' << opt_field(st.tc) << ','
        << opt_field(st.uicd) << ',' << opt_field(st.joint) << ',' << format_double(st.lr) << ','
        << format_double(st.grad_norm) << ',' << opt_field(st.val_joint) << '\n';
    log.flush();
    result.history.push_back(st);
    result.epochs_run = epoch + 1;

    if (st.val_joint) {
      if (result.best_val - *st.val_joint >= cfg_.schedule.min_improvement) {
        result.best_val = *st.val_joint;
        result.best_epoch = epoch;
        since_best = 0;
        CheckpointMeta meta;
        meta.config = model_.config();
        meta.epoch = epoch;
        meta.step = step_;
        meta.best_val = result.best_val;
        save_checkpoint(out_dir / "best.ckpt", model_, meta);
      } else if (++since_best >= cfg_.schedule.patience) {
        result.early_stopped = true;
        break;
      }
    }
  }

  CheckpointMeta meta;
  meta.config = model_.config();
  meta.epoch = result.epochs_run - 1;
  meta.step = step_;
  if (result.best_epoch >= 0) meta.best_val = result.best_val;
  save_checkpoint(out_dir / "last.ckpt", model_, meta);
  return result;
}

}  // namespace tsfm
