#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tsfm/masking.hpp"
#include "tsfm/rng.hpp"

namespace tsfm {

struct EncoderConfig {
  int input_dim = 8;    // D, feature channels
  int embed_dim = 128;  // d, must be divisible by heads
  int depth = 8;
  int heads = 4;
  double dropout = 0.1;
  int ff_mult = 2;
  bool pre_norm = true;
  enum class Positional { kSinusoidal, kLearned };
  Positional positional = Positional::kSinusoidal;
  int max_positions = 256;    // positional capacity (table length)
  int max_table_rows = 16;    // row-embedding capacity
  bool per_objective_heads = false;

  void validate() const;  // throws ConfigError
};

// Selects the output head; with shared heads (default) the choice is ignored.
enum class DecoderHead { kShared, kLc, kTc, kUicd };

struct ParamTensor {
  std::string name;
  Eigen::MatrixXd value;
  Eigen::MatrixXd grad;
  Eigen::MatrixXd adam_m;
  Eigen::MatrixXd adam_v;
};

// Named parameters in fixed registration order; the order defines the
// serialization and initialization stream.
class ParameterStore {
 public:
  int add(const std::string& name, Eigen::Index rows, Eigen::Index cols);
  ParamTensor& at(int i) { return params_[static_cast<std::size_t>(i)]; }
  const ParamTensor& at(int i) const { return params_[static_cast<std::size_t>(i)]; }
  int size() const { return static_cast<int>(params_.size()); }
  int index_of(const std::string& name) const;  // -1 when absent
  long scalar_count() const;
  void zero_grads();
  double grad_norm() const;   // global L2 norm over all gradients
  bool values_finite() const;
  std::uint64_t value_hash() const;

 private:
  std::vector<ParamTensor> params_;
  std::map<std::string, int> index_;
};

// Flattened token batch: one row per token, sequences stored back to back.
// `positions` index the positional table, `rows` the table row embedding
// (-1 outside tables), `masked` marks tokens replaced by the mask embedding.
struct TokenBatch {
  Eigen::MatrixXd inputs;  // N x D
  std::vector<std::uint8_t> masked;
  std::vector<int> positions;
  std::vector<int> rows;
  std::vector<int> seq_offsets;
  std::vector<int> seq_lengths;

  int total() const { return static_cast<int>(inputs.rows()); }
  int sequences() const { return static_cast<int>(seq_offsets.size()); }
};

// One sequence per window; masks are optional (nullptr entries allowed).
TokenBatch make_window_batch(const std::vector<const Window*>& windows,
                             const std::vector<const TimeMask*>& masks);

// The whole table is a single sequence of row_count * T tokens.
TokenBatch make_table_batch(const std::vector<const Window*>& batch,
                            const SupportQueryTable& table);

struct LayerNormTrace {
  Eigen::MatrixXd normalized;  // (x - mean) * inv_std, per token
  Eigen::VectorXd inv_std;
};

struct LayerTrace {
  LayerNormTrace norm1, norm2;
  Eigen::MatrixXd attn_in;      // input to the QKV projections
  Eigen::MatrixXd q, k, v;      // projected, heads side by side
  Eigen::MatrixXd attn_concat;  // per-head outputs, pre output-projection
  Eigen::MatrixXd drop1, drop2; // dropout multipliers; empty when inactive
  Eigen::MatrixXd ff_in;        // input to the feed-forward
  Eigen::MatrixXd ff_pre;       // pre-activation
  Eigen::MatrixXd ff_act;       // gelu output
};

struct ForwardTrace {
  std::vector<LayerTrace> layers;
  LayerNormTrace final_norm;
  Eigen::MatrixXd hidden;  // encoder output fed to the decoder
  bool train = false;
};

namespace detail {
// Numerically stable row-wise softmax.
Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& scores);
// Scaled dot-product attention over one sequence, heads side by side in the
// column dimension: softmax(q_h k_h^T / sqrt(d_k)) v_h per head.
Eigen::MatrixXd attention(const Eigen::MatrixXd& q, const Eigen::MatrixXd& k,
                          const Eigen::MatrixXd& v, int heads);
}  // namespace detail

// Bidirectional pre/post-norm transformer encoder over masked token
// sequences, with explicit backward passes accumulating into ParameterStore
// gradients.
class EncoderModel {
 public:
  EncoderModel(const EncoderConfig& config, std::uint64_t init_seed);

  const EncoderConfig& config() const { return config_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }
  long parameter_count() const { return params_.scalar_count(); }
  std::uint64_t parameter_hash() const { return params_.value_hash(); }

  // Single-sequence ops (no dropout).  embed_window substitutes the mask
  // embedding at masked positions, so masked input values never influence
  // the result.
  Eigen::MatrixXd embed_window(const Eigen::MatrixXd& window, const TimeMask* mask) const;
  Eigen::MatrixXd embed_table(const std::vector<const Window*>& batch,
                              const SupportQueryTable& table) const;
  Eigen::MatrixXd encode(const Eigen::MatrixXd& tokens) const;
  Eigen::MatrixXd decode(const Eigen::MatrixXd& hidden, DecoderHead head = DecoderHead::kShared) const;

  // Batched paths.  `trace` is required for backward; dropout draws from
  // `dropout_rng` in token order when train is set.
  Eigen::MatrixXd encode_batch(const TokenBatch& batch, bool train, Rng* dropout_rng,
                               ForwardTrace* trace) const;
  Eigen::MatrixXd forward(const TokenBatch& batch, DecoderHead head, bool train, Rng* dropout_rng,
                          ForwardTrace* trace) const;
  // Accumulates parameter gradients for d(loss)/d(decoder output).
  void backward(const TokenBatch& batch, const ForwardTrace& trace,
                const Eigen::MatrixXd& d_output, DecoderHead head);

 private:
  Eigen::MatrixXd embed(const TokenBatch& batch) const;
  void embed_backward(const TokenBatch& batch, const Eigen::MatrixXd& d_embedded);
  Eigen::MatrixXd run_layers(const TokenBatch& batch, Eigen::MatrixXd tokens, bool train,
                             Rng* dropout_rng, ForwardTrace* trace) const;
  Eigen::MatrixXd layers_backward(const TokenBatch& batch, const ForwardTrace& trace,
                                  Eigen::MatrixXd d_hidden);
  int decoder_index(DecoderHead head) const;  // index of the weight tensor

  EncoderConfig config_;
  ParameterStore params_;
  Eigen::MatrixXd positional_;  // sinusoidal table, unused for learned
  // Cached parameter indices in registration order.
  int input_w_, input_b_, mask_token_, pos_embed_, row_embed_;
  struct LayerIdx {
    int wq, bq, wk, bk, wv, bv, wo, bo;
    int n1g, n1b, n2g, n2b;
    int w1, b1, w2, b2;
  };
  std::vector<LayerIdx> layers_;
  int final_g_ = -1, final_b_ = -1;
  int dec_shared_w_ = -1, dec_shared_b_ = -1;
  int dec_lc_w_ = -1, dec_lc_b_ = -1, dec_tc_w_ = -1, dec_tc_b_ = -1;
  int dec_uicd_w_ = -1, dec_uicd_b_ = -1;
};

// Sinusoidal positional table: sin/cos pairs with geometric wavelengths.
Eigen::MatrixXd sinusoidal_positions(int length, int dim);

}  // namespace tsfm
