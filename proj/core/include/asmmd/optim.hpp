#pragma once

#include <cstdint>
#include <vector>

#include "asmmd/autodiff.hpp"
#include "asmmd/tensor.hpp"

namespace asmmd {

struct AdamaxConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 1e-4;
  double eps = 1e-8;
};

/// Adamax with decoupled-from-nothing L2: the weight-decay term is added to
/// the raw gradient before the moment updates (classic L2 regularization).
///
///   g = grad + weight_decay * param
///   m = beta1 * m + (1 - beta1) * g
///   u = max(beta2 * u, |g|)
///   param -= lr / (1 - beta1^t) * m / (u + eps)
class Adamax {
 public:
  explicit Adamax(std::vector<Value> params, AdamaxConfig cfg = {});

  /// One update with the given (already scheduled) learning rate.
  /// Throws NumericError naming the offending parameter on non-finite
  /// gradients.
  void step(double lr);

  void zero_grad();

  std::int64_t steps_taken() const { return t_; }
  const AdamaxConfig& config() const { return cfg_; }

 private:
  std::vector<Value> params_;
  std::vector<Tensor> m_;
  std::vector<Tensor> u_;
  AdamaxConfig cfg_;
  std::int64_t t_ = 0;
};

}  // namespace asmmd
