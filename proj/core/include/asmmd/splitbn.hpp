#pragma once

#include "asmmd/autodiff.hpp"

namespace asmmd {

enum class Domain : int { source = 0, target = 1 };

inline const char* domain_name(Domain d) {
  return d == Domain::source ? "S" : "T";
}

/// Batch normalization with shared trainable scale/shift and one running
/// mean/variance buffer set per domain. Selecting a domain routes every
/// subsequent forward to that domain's buffers; because the buffer sets are
/// distinct storage, switching domains is equivalent to a snapshot/restore
/// of a single-buffer layer without the copies.
///
/// Statistics pool the batch and time axes per feature: input is (N, F) or
/// (N, T, F) with features on the last axis. Normalization uses the biased
/// batch variance; the running update uses the unbiased variance.
///
/// In pooled mode (the no-split ablation and the baselines) both domains
/// share buffer set 0 and the layer behaves as standard batch norm.
class SplitBatchNorm {
 public:
  SplitBatchNorm() = default;
  explicit SplitBatchNorm(std::int64_t n_features, double momentum = 0.1,
                          double eps = 1e-5, bool pooled = false);

  void use_domain(Domain d) { active_ = d; }
  Domain active_domain() const { return active_; }

  /// Batch-statistics normalization; updates the active buffers as
  /// running <- (1 - momentum) * running + momentum * batch_stat.
  Value forward_train(const Value& x);
  /// Running-statistics normalization; pure.
  Value forward_eval(const Value& x) const;
  Value forward(const Value& x, Mode mode) {
    return mode == Mode::train ? forward_train(x) : forward_eval(x);
  }

  Value& gamma() { return gamma_; }
  Value& beta() { return beta_; }
  const Tensor& running_mean(Domain d) const { return rm_[buffer_slot(d)]; }
  const Tensor& running_var(Domain d) const { return rv_[buffer_slot(d)]; }
  Tensor& mutable_running_mean(Domain d) { return rm_[buffer_slot(d)]; }
  Tensor& mutable_running_var(Domain d) { return rv_[buffer_slot(d)]; }

  std::int64_t n_features() const { return f_; }
  double momentum() const { return momentum_; }
  double eps() const { return eps_; }
  bool pooled() const { return pooled_; }

 private:
  int buffer_slot(Domain d) const {
    return pooled_ ? 0 : static_cast<int>(d);
  }
  int active_slot() const { return buffer_slot(active_); }
  void check_input(const Tensor& x, std::int64_t* rows) const;

  std::int64_t f_ = 0;
  double momentum_ = 0.1;
  double eps_ = 1e-5;
  bool pooled_ = false;
  Domain active_ = Domain::source;
  Value gamma_, beta_;
  Tensor rm_[2], rv_[2];
};

}  // namespace asmmd
