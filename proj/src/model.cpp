#include "tsfm/model.hpp"

#include <cmath>

#include "tsfm/errors.hpp"

namespace tsfm {

namespace {

constexpr double kLayerNormEps = 1e-5;

double gelu_scalar(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }

double gelu_prime_scalar(double x) {
  const double phi = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
  return 0.5 * (1.0 + std::erf(x * M_SQRT1_2)) + x * phi;
}

Eigen::MatrixXd dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, Rng& rng) {
  Eigen::MatrixXd mask(rows, cols);
  const double keep_scale = 1.0 / (1.0 - p);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) mask(i, j) = rng.uniform() < p ? 0.0 : keep_scale;
  return mask;
}

// y = gamma .* (x - mean) / sqrt(var + eps) + beta, statistics per token.
Eigen::MatrixXd layer_norm(const Eigen::MatrixXd& x, const Eigen::MatrixXd& gamma,
                           const Eigen::MatrixXd& beta, LayerNormTrace* trace) {
  const auto d = static_cast<double>(x.cols());
  const Eigen::VectorXd mean = x.rowwise().mean();
  Eigen::MatrixXd centered = x.colwise() - mean;
  const Eigen::VectorXd inv_std =
      ((centered.array().square().rowwise().sum() / d) + kLayerNormEps).sqrt().inverse().matrix();
  Eigen::MatrixXd normalized = (centered.array().colwise() * inv_std.array()).matrix();
  Eigen::MatrixXd out = ((normalized.array().rowwise() * gamma.row(0).array()).rowwise() +
                         beta.row(0).array())
                            .matrix();
  if (trace) {
    trace->normalized = std::move(normalized);
    trace->inv_std = inv_std;
  }
  return out;
}

}  // namespace

namespace detail {

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& scores) {
  Eigen::MatrixXd out(scores.rows(), scores.cols());
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    const double m = scores.row(i).maxCoeff();
    out.row(i) = (scores.row(i).array() - m).exp();
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

Eigen::MatrixXd attention(const Eigen::MatrixXd& q, const Eigen::MatrixXd& k,
                          const Eigen::MatrixXd& v, int heads) {
  const Eigen::Index L = q.rows();
  const Eigen::Index dk = q.cols() / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  Eigen::MatrixXd out(L, q.cols());
  for (int h = 0; h < heads; ++h) {
    const auto qh = q.middleCols(h * dk, dk);
    const auto kh = k.middleCols(h * dk, dk);
    const auto vh = v.middleCols(h * dk, dk);
    const Eigen::MatrixXd probs = softmax_rows(qh * kh.transpose() * scale);
    out.middleCols(h * dk, dk).noalias() = probs * vh;
  }
  return out;
}

}  // namespace detail

void EncoderConfig::validate() const {
  if (input_dim < 1) throw ConfigError("input_dim must be at least 1");
  if (embed_dim < 1) throw ConfigError("embed_dim must be at least 1");
  if (depth < 1) throw ConfigError("depth must be at least 1");
  if (heads < 1) throw ConfigError("heads must be at least 1");
  if (embed_dim % heads != 0) throw ConfigError("embed_dim must be divisible by heads");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must lie in [0, 1)");
  if (ff_mult < 1) throw ConfigError("ff_mult must be at least 1");
  if (max_positions < 1) throw ConfigError("max_positions must be at least 1");
  if (max_table_rows < 2) throw ConfigError("max_table_rows must be at least 2");
}

Eigen::MatrixXd sinusoidal_positions(int length, int dim) {
  Eigen::MatrixXd table(length, dim);
  for (int t = 0; t < length; ++t)
    for (int j = 0; j < dim; ++j) {
      const double freq = std::pow(10000.0, -2.0 * (j / 2) / static_cast<double>(dim));
      const double angle = t * freq;
      table(t, j) = (j % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  return table;
}

int ParameterStore::add(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
  if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
  ParamTensor p;
  p.name = name;
  p.value.setZero(rows, cols);
  p.grad.setZero(rows, cols);
  p.adam_m.setZero(rows, cols);
  p.adam_v.setZero(rows, cols);
  params_.push_back(std::move(p));
  const int idx = static_cast<int>(params_.size()) - 1;
  index_[name] = idx;
  return idx;
}

int ParameterStore::index_of(const std::string& name) const {
  const auto it = index_.find(name);
  return it == index_.end() ? -1 : it->second;
}

long ParameterStore::scalar_count() const {
  long n = 0;
  for (const auto& p : params_) n += static_cast<long>(p.value.size());
  return n;
}

void ParameterStore::zero_grads() {
  for (auto& p : params_) p.grad.setZero();
}

double ParameterStore::grad_norm() const {
  double sq = 0.0;
  for (const auto& p : params_) sq += p.grad.squaredNorm();
  return std::sqrt(sq);
}

bool ParameterStore::values_finite() const {
  for (const auto& p : params_)
    if (!p.value.allFinite()) return false;
  return true;
}

std::uint64_t ParameterStore::value_hash() const {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (const auto& p : params_) {
    h = fnv1a64(p.name, h);
    h = fnv1a64(p.value.data(), sizeof(double) * static_cast<std::size_t>(p.value.size()), h);
  }
  return h;
}

TokenBatch make_window_batch(const std::vector<const Window*>& windows,
                             const std::vector<const TimeMask*>& masks) {
  if (!masks.empty() && masks.size() != windows.size())
    throw ConfigError("mask list must be empty or match the window list");
  if (windows.empty()) throw DataError("cannot build a batch from zero windows");
  const auto T = windows.front()->values.rows();
  const auto D = windows.front()->values.cols();
  TokenBatch batch;
  batch.inputs.resize(static_cast<Eigen::Index>(windows.size()) * T, D);
  batch.masked.assign(static_cast<std::size_t>(windows.size() * static_cast<std::size_t>(T)), 0);
  batch.positions.resize(windows.size() * static_cast<std::size_t>(T));
  batch.rows.assign(windows.size() * static_cast<std::size_t>(T), -1);
  for (std::size_t w = 0; w < windows.size(); ++w) {
    if (windows[w]->values.rows() != T || windows[w]->values.cols() != D)
      throw DataError("all windows in a batch must share the same shape");
    const auto offset = static_cast<Eigen::Index>(w) * T;
    batch.inputs.middleRows(offset, T) = windows[w]->values;
    batch.seq_offsets.push_back(static_cast<int>(offset));
    batch.seq_lengths.push_back(static_cast<int>(T));
    for (Eigen::Index t = 0; t < T; ++t) {
      batch.positions[static_cast<std::size_t>(offset + t)] = static_cast<int>(t);
      if (!masks.empty() && masks[w] && masks[w]->masked_at(static_cast<int>(t)))
        batch.masked[static_cast<std::size_t>(offset + t)] = 1;
    }
  }
  return batch;
}

TokenBatch make_table_batch(const std::vector<const Window*>& windows,
                            const SupportQueryTable& table) {
  if (table.rows.empty()) throw DataError("cannot build a batch from an empty table");
  const auto T = windows.at(static_cast<std::size_t>(table.rows.front()))->values.rows();
  const auto D = windows.at(static_cast<std::size_t>(table.rows.front()))->values.cols();
  const auto R = static_cast<Eigen::Index>(table.rows.size());
  TokenBatch batch;
  batch.inputs.resize(R * T, D);
  batch.masked.assign(static_cast<std::size_t>(R * T), 0);
  batch.positions.resize(static_cast<std::size_t>(R * T));
  batch.rows.resize(static_cast<std::size_t>(R * T));
  batch.seq_offsets.push_back(0);
  batch.seq_lengths.push_back(static_cast<int>(R * T));
  for (Eigen::Index r = 0; r < R; ++r) {
    const Window& w = *windows.at(static_cast<std::size_t>(table.rows[static_cast<std::size_t>(r)]));
    if (w.values.rows() != T || w.values.cols() != D)
      throw DataError("all table rows must share the same shape");
    batch.inputs.middleRows(r * T, T) = w.values;
    for (Eigen::Index t = 0; t < T; ++t) {
      batch.positions[static_cast<std::size_t>(r * T + t)] = static_cast<int>(t);
      batch.rows[static_cast<std::size_t>(r * T + t)] = static_cast<int>(r);
    }
  }
  for (std::size_t qi = 0; qi < table.query_rows.size(); ++qi) {
    const auto r = static_cast<Eigen::Index>(table.query_rows[qi]);
    const TimeMask& mask = table.query_masks.at(qi);
    for (Eigen::Index t = 0; t < T; ++t)
      if (mask.masked_at(static_cast<int>(t))) batch.masked[static_cast<std::size_t>(r * T + t)] = 1;
  }
  return batch;
}

EncoderModel::EncoderModel(const EncoderConfig& config, std::uint64_t init_seed)
    : config_(config) {
  config_.validate();
  const int d = config_.embed_dim;
  const int f = config_.embed_dim * config_.ff_mult;

  input_w_ = params_.add("input_proj.weight", config_.input_dim, d);
  input_b_ = params_.add("input_proj.bias", 1, d);
  mask_token_ = params_.add("mask_token", 1, d);
  pos_embed_ = config_.positional == EncoderConfig::Positional::kLearned
                   ? params_.add("pos_embed", config_.max_positions, d)
                   : -1;
  row_embed_ = params_.add("row_embed", config_.max_table_rows, d);
  for (int i = 0; i < config_.depth; ++i) {
    const std::string p = "layer" + std::to_string(i) + ".";
    LayerIdx idx;
    idx.wq = params_.add(p + "attn.wq", d, d);
    idx.bq = params_.add(p + "attn.bq", 1, d);
    idx.wk = params_.add(p + "attn.wk", d, d);
    idx.bk = params_.add(p + "attn.bk", 1, d);
    idx.wv = params_.add(p + "attn.wv", d, d);
    idx.bv = params_.add(p + "attn.bv", 1, d);
    idx.wo = params_.add(p + "attn.wo", d, d);
    idx.bo = params_.add(p + "attn.bo", 1, d);
    idx.n1g = params_.add(p + "norm1.gamma", 1, d);
    idx.n1b = params_.add(p + "norm1.beta", 1, d);
    idx.n2g = params_.add(p + "norm2.gamma", 1, d);
    idx.n2b = params_.add(p + "norm2.beta", 1, d);
    idx.w1 = params_.add(p + "ff.w1", d, f);
    idx.b1 = params_.add(p + "ff.b1", 1, f);
    idx.w2 = params_.add(p + "ff.w2", f, d);
    idx.b2 = params_.add(p + "ff.b2", 1, d);
    layers_.push_back(idx);
  }
  if (config_.pre_norm) {
    final_g_ = params_.add("final_norm.gamma", 1, d);
    final_b_ = params_.add("final_norm.beta", 1, d);
  }
  if (config_.per_objective_heads) {
    dec_lc_w_ = params_.add("decoder_lc.weight", d, config_.input_dim);
    dec_lc_b_ = params_.add("decoder_lc.bias", 1, config_.input_dim);
    dec_tc_w_ = params_.add("decoder_tc.weight", d, config_.input_dim);
    dec_tc_b_ = params_.add("decoder_tc.bias", 1, config_.input_dim);
    dec_uicd_w_ = params_.add("decoder_uicd.weight", d, config_.input_dim);
    dec_uicd_b_ = params_.add("decoder_uicd.bias", 1, config_.input_dim);
  } else {
    dec_shared_w_ = params_.add("decoder.weight", d, config_.input_dim);
    dec_shared_b_ = params_.add("decoder.bias", 1, config_.input_dim);
  }

  // Truncated-normal weights, unit norm gains, zero biases; one stream in
  // registration order keeps initialization reproducible.
  Rng rng(derive_seed(init_seed, "init"));
  for (int i = 0; i < params_.size(); ++i) {
    ParamTensor& p = params_.at(i);
    const bool is_gain = p.name.find("gamma") != std::string::npos;
    const bool is_bias = p.name.find(".b") != std::string::npos ||
                         p.name.find("beta") != std::string::npos;
    if (is_gain) {
      p.value.setOnes();
    } else if (is_bias) {
      p.value.setZero();
    } else {
      for (Eigen::Index r = 0; r < p.value.rows(); ++r)
        for (Eigen::Index c = 0; c < p.value.cols(); ++c) p.value(r, c) = rng.trunc_normal(0.02);
    }
  }

  if (config_.positional == EncoderConfig::Positional::kSinusoidal)
    positional_ = sinusoidal_positions(config_.max_positions, d);
}

int EncoderModel::decoder_index(DecoderHead head) const {
  if (!config_.per_objective_heads) return dec_shared_w_;
  switch (head) {
    case DecoderHead::kLc:
      return dec_lc_w_;
    case DecoderHead::kTc:
      return dec_tc_w_;
    case DecoderHead::kUicd:
      return dec_uicd_w_;
    case DecoderHead::kShared:
      break;
  }
  throw ConfigError("per-objective decoding requires an explicit head");
}

Eigen::MatrixXd EncoderModel::embed(const TokenBatch& batch) const {
  if (batch.inputs.cols() != config_.input_dim)
    throw DataError("batch has " + std::to_string(batch.inputs.cols()) +
                    " channels but the model expects " + std::to_string(config_.input_dim));
  const auto N = batch.inputs.rows();
  Eigen::MatrixXd tokens(N, config_.embed_dim);
  tokens.noalias() = batch.inputs * params_.at(input_w_).value;
  tokens.rowwise() += params_.at(input_b_).value.row(0);
  // Masked positions carry the mask embedding; their input values are
  // discarded entirely.
  for (Eigen::Index i = 0; i < N; ++i)
    if (batch.masked[static_cast<std::size_t>(i)]) tokens.row(i) = params_.at(mask_token_).value.row(0);

  const Eigen::MatrixXd& pos = config_.positional == EncoderConfig::Positional::kLearned
                                   ? params_.at(pos_embed_).value
                                   : positional_;
  for (Eigen::Index i = 0; i < N; ++i) {
    const int t = batch.positions[static_cast<std::size_t>(i)];
    if (t < 0 || t >= config_.max_positions)
      throw ConfigError("position " + std::to_string(t) + " exceeds positional capacity " +
                        std::to_string(config_.max_positions));
    tokens.row(i) += pos.row(t);
    const int r = batch.rows[static_cast<std::size_t>(i)];
    if (r >= 0) {
      if (r >= config_.max_table_rows)
        throw ConfigError("table row " + std::to_string(r) + " exceeds row capacity " +
                          std::to_string(config_.max_table_rows));
      tokens.row(i) += params_.at(row_embed_).value.row(r);
    }
  }
  if (!tokens.allFinite()) throw NumericError("non-finite activation in token embedding");
  return tokens;
}

void EncoderModel::embed_backward(const TokenBatch& batch, const Eigen::MatrixXd& d_embedded) {
  Eigen::MatrixXd d_proj = d_embedded;
  ParamTensor& mask_token = params_.at(mask_token_);
  for (Eigen::Index i = 0; i < d_proj.rows(); ++i) {
    if (batch.masked[static_cast<std::size_t>(i)]) {
      mask_token.grad.row(0) += d_embedded.row(i);
      d_proj.row(i).setZero();  // no gradient into the input projection
    }
  }
  params_.at(input_w_).grad.noalias() += batch.inputs.transpose() * d_proj;
  params_.at(input_b_).grad.row(0) += d_proj.colwise().sum();

  if (pos_embed_ >= 0) {
    ParamTensor& pos = params_.at(pos_embed_);
    for (Eigen::Index i = 0; i < d_embedded.rows(); ++i)
      pos.grad.row(batch.positions[static_cast<std::size_t>(i)]) += d_embedded.row(i);
  }
  ParamTensor& row_embed = params_.at(row_embed_);
  for (Eigen::Index i = 0; i < d_embedded.rows(); ++i) {
    const int r = batch.rows[static_cast<std::size_t>(i)];
    if (r >= 0) row_embed.grad.row(r) += d_embedded.row(i);
  }
}

Eigen::MatrixXd EncoderModel::run_layers(const TokenBatch& batch, Eigen::MatrixXd tokens,
                                         bool train, Rng* dropout_rng, ForwardTrace* trace) const {
  const bool use_dropout = train && config_.dropout > 0.0;
  if (use_dropout && !dropout_rng) throw ConfigError("training forward needs a dropout generator");
  if (trace) {
    trace->layers.assign(static_cast<std::size_t>(config_.depth), LayerTrace{});
    trace->train = train;
  }
  const int num_seqs = batch.sequences();

  Eigen::MatrixXd h = std::move(tokens);
  for (int li = 0; li < config_.depth; ++li) {
    const LayerIdx& idx = layers_[static_cast<std::size_t>(li)];
    LayerTrace local;
    LayerTrace* lt = trace ? &trace->layers[static_cast<std::size_t>(li)] : &local;

    // Attention sublayer.
    Eigen::MatrixXd attn_in = config_.pre_norm
                                  ? layer_norm(h, params_.at(idx.n1g).value, params_.at(idx.n1b).value,
                                               &lt->norm1)
                                  : h;
    Eigen::MatrixXd q = (attn_in * params_.at(idx.wq).value).rowwise() + params_.at(idx.bq).value.row(0);
    Eigen::MatrixXd k = (attn_in * params_.at(idx.wk).value).rowwise() + params_.at(idx.bk).value.row(0);
    Eigen::MatrixXd v = (attn_in * params_.at(idx.wv).value).rowwise() + params_.at(idx.bv).value.row(0);
    Eigen::MatrixXd attn_concat(h.rows(), h.cols());
#pragma omp parallel for schedule(static)
    for (int s = 0; s < num_seqs; ++s) {
      const int off = batch.seq_offsets[static_cast<std::size_t>(s)];
      const int len = batch.seq_lengths[static_cast<std::size_t>(s)];
      attn_concat.middleRows(off, len) =
          detail::attention(q.middleRows(off, len), k.middleRows(off, len), v.middleRows(off, len),
                            config_.heads);
    }
    Eigen::MatrixXd proj = (attn_concat * params_.at(idx.wo).value).rowwise() +
                           params_.at(idx.bo).value.row(0);
    if (use_dropout) {
      lt->drop1 = dropout_mask(proj.rows(), proj.cols(), config_.dropout, *dropout_rng);
      proj = proj.cwiseProduct(lt->drop1);
    }

    Eigen::MatrixXd x1;
    if (config_.pre_norm) {
      x1 = h + proj;
    } else {
      const Eigen::MatrixXd a = h + proj;
      x1 = layer_norm(a, params_.at(idx.n1g).value, params_.at(idx.n1b).value, &lt->norm1);
    }

    // Feed-forward sublayer.
    Eigen::MatrixXd ff_in = config_.pre_norm
                                ? layer_norm(x1, params_.at(idx.n2g).value,
                                             params_.at(idx.n2b).value, &lt->norm2)
                                : x1;
    Eigen::MatrixXd z = (ff_in * params_.at(idx.w1).value).rowwise() + params_.at(idx.b1).value.row(0);
    Eigen::MatrixXd act = z.unaryExpr(&gelu_scalar);
    Eigen::MatrixXd f2 = (act * params_.at(idx.w2).value).rowwise() + params_.at(idx.b2).value.row(0);
    if (use_dropout) {
      lt->drop2 = dropout_mask(f2.rows(), f2.cols(), config_.dropout, *dropout_rng);
      f2 = f2.cwiseProduct(lt->drop2);
    }

    Eigen::MatrixXd out;
    if (config_.pre_norm) {
      out = x1 + f2;
    } else {
      const Eigen::MatrixXd b = x1 + f2;
      out = layer_norm(b, params_.at(idx.n2g).value, params_.at(idx.n2b).value, &lt->norm2);
    }
    if (!out.allFinite())
      throw NumericError("non-finite activation in encoder layer " + std::to_string(li));

    lt->attn_in = std::move(attn_in);
    lt->q = std::move(q);
    lt->k = std::move(k);
    lt->v = std::move(v);
    lt->attn_concat = std::move(attn_concat);
    lt->ff_in = std::move(ff_in);
    lt->ff_pre = std::move(z);
    lt->ff_act = std::move(act);
    h = std::move(out);
  }

  if (config_.pre_norm) {
    h = layer_norm(h, params_.at(final_g_).value, params_.at(final_b_).value,
                   trace ? &trace->final_norm : nullptr);
    if (!h.allFinite()) throw NumericError("non-finite activation in final norm");
  }
  return h;
}

Eigen::MatrixXd EncoderModel::encode_batch(const TokenBatch& batch, bool train, Rng* dropout_rng,
                                           ForwardTrace* trace) const {
  Eigen::MatrixXd hidden = run_layers(batch, embed(batch), train, dropout_rng, trace);
  if (trace) trace->hidden = hidden;
  return hidden;
}

Eigen::MatrixXd EncoderModel::forward(const TokenBatch& batch, DecoderHead head, bool train,
                                      Rng* dropout_rng, ForwardTrace* trace) const {
  return decode(encode_batch(batch, train, dropout_rng, trace), head);
}

Eigen::MatrixXd EncoderModel::decode(const Eigen::MatrixXd& hidden, DecoderHead head) const {
  const int wi = decoder_index(head);
  Eigen::MatrixXd out = (hidden * params_.at(wi).value).rowwise() + params_.at(wi + 1).value.row(0);
  if (!out.allFinite()) throw NumericError("non-finite activation in decoder");
  return out;
}

namespace {

// dY flows back through y = gamma .* normalized + beta.
Eigen::MatrixXd layer_norm_backward(const LayerNormTrace& tr, const Eigen::MatrixXd& gamma,
                                    const Eigen::MatrixXd& d_out, Eigen::MatrixXd& d_gamma,
                                    Eigen::MatrixXd& d_beta) {
  d_gamma.row(0) += (d_out.cwiseProduct(tr.normalized)).colwise().sum();
  d_beta.row(0) += d_out.colwise().sum();
  const Eigen::MatrixXd d_hat = (d_out.array().rowwise() * gamma.row(0).array()).matrix();
  const Eigen::VectorXd m1 = d_hat.rowwise().mean();
  const Eigen::VectorXd m2 = d_hat.cwiseProduct(tr.normalized).rowwise().mean();
  Eigen::MatrixXd dx =
      (d_hat.colwise() - m1) - (tr.normalized.array().colwise() * m2.array()).matrix();
  return (dx.array().colwise() * tr.inv_std.array()).matrix();
}

}  // namespace

Eigen::MatrixXd EncoderModel::layers_backward(const TokenBatch& batch, const ForwardTrace& trace,
                                              Eigen::MatrixXd d_hidden) {
  const int num_seqs = batch.sequences();
  Eigen::MatrixXd d = std::move(d_hidden);
  if (config_.pre_norm)
    d = layer_norm_backward(trace.final_norm, params_.at(final_g_).value, d,
                            params_.at(final_g_).grad, params_.at(final_b_).grad);

  for (int li = config_.depth - 1; li >= 0; --li) {
    const LayerIdx& idx = layers_[static_cast<std::size_t>(li)];
    const LayerTrace& lt = trace.layers[static_cast<std::size_t>(li)];

    // Feed-forward sublayer.
    Eigen::MatrixXd dx1, d_f2;
    if (config_.pre_norm) {
      dx1 = d;
      d_f2 = std::move(d);
    } else {
      Eigen::MatrixXd db = layer_norm_backward(lt.norm2, params_.at(idx.n2g).value, d,
                                               params_.at(idx.n2g).grad, params_.at(idx.n2b).grad);
      dx1 = db;
      d_f2 = std::move(db);
    }
    if (lt.drop2.size()) d_f2 = d_f2.cwiseProduct(lt.drop2);
    params_.at(idx.w2).grad.noalias() += lt.ff_act.transpose() * d_f2;
    params_.at(idx.b2).grad.row(0) += d_f2.colwise().sum();
    Eigen::MatrixXd d_act = d_f2 * params_.at(idx.w2).value.transpose();
    Eigen::MatrixXd d_z = d_act.cwiseProduct(lt.ff_pre.unaryExpr(&gelu_prime_scalar));
    params_.at(idx.w1).grad.noalias() += lt.ff_in.transpose() * d_z;
    params_.at(idx.b1).grad.row(0) += d_z.colwise().sum();
    Eigen::MatrixXd d_ff_in = d_z * params_.at(idx.w1).value.transpose();

    Eigen::MatrixXd dx0, d_proj;
    if (config_.pre_norm) {
      dx1 += layer_norm_backward(lt.norm2, params_.at(idx.n2g).value, d_ff_in,
                                 params_.at(idx.n2g).grad, params_.at(idx.n2b).grad);
      dx0 = dx1;
      d_proj = std::move(dx1);
    } else {
      dx1 += d_ff_in;
      Eigen::MatrixXd da = layer_norm_backward(lt.norm1, params_.at(idx.n1g).value, dx1,
                                               params_.at(idx.n1g).grad, params_.at(idx.n1b).grad);
      dx0 = da;
      d_proj = std::move(da);
    }
    if (lt.drop1.size()) d_proj = d_proj.cwiseProduct(lt.drop1);

    // Attention sublayer.
    params_.at(idx.wo).grad.noalias() += lt.attn_concat.transpose() * d_proj;
    params_.at(idx.bo).grad.row(0) += d_proj.colwise().sum();
    Eigen::MatrixXd d_attn = d_proj * params_.at(idx.wo).value.transpose();

    Eigen::MatrixXd dq(d_attn.rows(), d_attn.cols());
    Eigen::MatrixXd dk(d_attn.rows(), d_attn.cols());
    Eigen::MatrixXd dv(d_attn.rows(), d_attn.cols());
    const Eigen::Index dk_dim = config_.embed_dim / config_.heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dk_dim));
#pragma omp parallel for schedule(static)
    for (int s = 0; s < num_seqs; ++s) {
      const int off = batch.seq_offsets[static_cast<std::size_t>(s)];
      const int len = batch.seq_lengths[static_cast<std::size_t>(s)];
      for (int h = 0; h < config_.heads; ++h) {
        const auto qh = lt.q.block(off, h * dk_dim, len, dk_dim);
        const auto kh = lt.k.block(off, h * dk_dim, len, dk_dim);
        const auto vh = lt.v.block(off, h * dk_dim, len, dk_dim);
        const auto d_oh = d_attn.block(off, h * dk_dim, len, dk_dim);
        const Eigen::MatrixXd probs = detail::softmax_rows(qh * kh.transpose() * scale);
        const Eigen::MatrixXd d_probs = d_oh * vh.transpose();
        dv.block(off, h * dk_dim, len, dk_dim).noalias() = probs.transpose() * d_oh;
        const Eigen::VectorXd row_dot = d_probs.cwiseProduct(probs).rowwise().sum();
        const Eigen::MatrixXd d_scores =
            probs.cwiseProduct((d_probs.colwise() - row_dot));
        dq.block(off, h * dk_dim, len, dk_dim).noalias() = d_scores * kh * scale;
        dk.block(off, h * dk_dim, len, dk_dim).noalias() = d_scores.transpose() * qh * scale;
      }
    }

    params_.at(idx.wq).grad.noalias() += lt.attn_in.transpose() * dq;
    params_.at(idx.bq).grad.row(0) += dq.colwise().sum();
    params_.at(idx.wk).grad.noalias() += lt.attn_in.transpose() * dk;
    params_.at(idx.bk).grad.row(0) += dk.colwise().sum();
    params_.at(idx.wv).grad.noalias() += lt.attn_in.transpose() * dv;
    params_.at(idx.bv).grad.row(0) += dv.colwise().sum();
    Eigen::MatrixXd d_attn_in = dq * params_.at(idx.wq).value.transpose();
    d_attn_in.noalias() += dk * params_.at(idx.wk).value.transpose();
    d_attn_in.noalias() += dv * params_.at(idx.wv).value.transpose();

    if (config_.pre_norm) {
      dx0 += layer_norm_backward(lt.norm1, params_.at(idx.n1g).value, d_attn_in,
                                 params_.at(idx.n1g).grad, params_.at(idx.n1b).grad);
    } else {
      dx0 += d_attn_in;
    }
    d = std::move(dx0);
  }
  return d;
}

void EncoderModel::backward(const TokenBatch& batch, const ForwardTrace& trace,
                            const Eigen::MatrixXd& d_output, DecoderHead head) {
  const int wi = decoder_index(head);
  params_.at(wi).grad.noalias() += trace.hidden.transpose() * d_output;
  params_.at(wi + 1).grad.row(0) += d_output.colwise().sum();
  Eigen::MatrixXd d_hidden = d_output * params_.at(wi).value.transpose();
  embed_backward(batch, layers_backward(batch, trace, std::move(d_hidden)));
}

Eigen::MatrixXd EncoderModel::embed_window(const Eigen::MatrixXd& window,
                                           const TimeMask* mask) const {
  std::vector<Window> storage(1);
  storage[0].values = window;
  const std::vector<const Window*> windows = {&storage[0]};
  std::vector<const TimeMask*> masks;
  if (mask) masks.push_back(mask);
  return embed(make_window_batch(windows, masks));
}

Eigen::MatrixXd EncoderModel::embed_table(const std::vector<const Window*>& batch,
                                          const SupportQueryTable& table) const {
  return embed(make_table_batch(batch, table));
}

Eigen::MatrixXd EncoderModel::encode(const Eigen::MatrixXd& tokens) const {
  TokenBatch batch;
  batch.inputs.resize(tokens.rows(), config_.input_dim);  // unused by run_layers
  batch.inputs.setZero();
  batch.masked.assign(static_cast<std::size_t>(tokens.rows()), 0);
  batch.positions.assign(static_cast<std::size_t>(tokens.rows()), 0);
  batch.rows.assign(static_cast<std::size_t>(tokens.rows()), -1);
  batch.seq_offsets.push_back(0);
  batch.seq_lengths.push_back(static_cast<int>(tokens.rows()));
  return run_layers(batch, tokens, false, nullptr, nullptr);
}

}  // namespace tsfm
