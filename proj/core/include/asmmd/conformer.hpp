#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "asmmd/autodiff.hpp"
#include "asmmd/rng.hpp"
#include "asmmd/splitbn.hpp"
#include "asmmd/tensor.hpp"

namespace asmmd {

struct BackboneConfig {
  std::int64_t n_channels = 5;
  std::int64_t n_samples = 141;
  std::int64_t d_model = 40;
  std::int64_t n_heads = 10;
  std::int64_t n_layers = 3;
  std::int64_t ffn_mult = 4;
  double dropout = 0.1;
  std::int64_t temporal_kernel = 25;
  std::int64_t n_temporal_filters = 40;
  std::int64_t pool_window = 75;
  std::int64_t pool_stride = 15;
  std::int64_t n_classes = 2;

  /// Per-head width of the attention projections (queries/keys/values are
  /// d_model -> n_heads*head_dim). Scores scale by 1/sqrt(head_dim).
  std::int64_t head_dim = 40;
  /// 0 = single linear head; > 0 inserts a GELU hidden layer of this width.
  std::int64_t head_hidden = 0;
  /// Collapse the pooled tokens to one token before the encoder.
  bool single_token_front_end = false;
  bool use_positional_encoding = true;

  double bn_momentum = 0.1;
  double bn_eps = 1e-5;
  double ln_eps = 1e-5;

  /// n_samples - temporal_kernel + 1 (valid convolution).
  std::int64_t conv_frames() const;
  /// Tokens after average pooling (before any single-token collapse).
  std::int64_t pooled_tokens() const;
  /// Sequence length seen by the encoder.
  std::int64_t token_count() const;

  void validate() const;
};

/// Convolution-attention classifier over 5-channel epochs with two Split-BN
/// layers in the front end. Logits come back as a graph node so losses can
/// backpropagate into the parameters.
class Model {
 public:
  /// Deterministic Glorot-uniform build. pooled_bn selects single-buffer
  /// batch norm for the baselines.
  static Model build(const BackboneConfig& cfg, std::uint64_t seed,
                     bool pooled_bn = false);

  /// x: (batch, n_channels, n_samples). Selects the domain's BN buffers,
  /// then runs the front end and encoder. rng feeds dropout in train mode
  /// only.
  Value forward(const Tensor& x, Domain domain, Mode mode, Rng& rng);

  std::vector<Value> parameters() const;
  const std::vector<std::pair<std::string, Value>>& named_parameters() const {
    return named_;
  }
  std::int64_t parameter_count() const;

  const BackboneConfig& config() const { return cfg_; }
  bool pooled_bn() const { return pooled_bn_; }
  SplitBatchNorm& bn1() { return *bn1_; }
  SplitBatchNorm& bn2() { return *bn2_; }

  struct Snapshot {
    std::vector<Tensor> params;
    std::vector<Tensor> buffers;
  };
  Snapshot snapshot() const;
  void restore(const Snapshot& snap);

  void save_checkpoint(const std::string& path) const;
  static Model load_checkpoint(const std::string& path);

 private:
  Model() = default;

  Value encoder_block(std::size_t layer, const Value& h, std::int64_t batch,
                      Mode mode, Rng& rng);
  std::vector<std::pair<std::string, Tensor*>> buffer_slots() const;

  struct EncoderLayer {
    Value ln1_g, ln1_b;
    Value wq, bq, wk, bk, wv, bv, wo, bo;
    Value ln2_g, ln2_b;
    Value w1, b1, w2, b2;
  };

  BackboneConfig cfg_;
  bool pooled_bn_ = false;
  Value conv1_w, conv1_b;
  std::shared_ptr<SplitBatchNorm> bn1_;
  Value conv2_w, conv2_b;
  std::shared_ptr<SplitBatchNorm> bn2_;
  Value proj_w, proj_b;
  Tensor pos_encoding_;
  std::vector<EncoderLayer> layers_;
  Value head_w, head_b;
  Value head2_w, head2_b;
  std::vector<std::pair<std::string, Value>> named_;
};

}  // namespace asmmd
